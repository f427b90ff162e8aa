#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "epps/simulate.hpp"
#include "epps/twins.hpp"
#include "support.hpp"

using namespace epps;
using namespace epps::twins;
using Catch::Approx;

namespace {

constexpr double kC = 0.299792458;  // um/fs

struct Line {
  double nm;
  double amplitude;
  double tau_ps;
};

// Noise-free cube: every line contributes amplitude * exp(-t/tau) counts per
// bin, modulated by the interferometer transmission at its wavelength.
InterferogramCube synthetic_cube(const TwinsSpec& spec, std::vector<double> positions, const std::vector<Line>& lines,
                                 std::size_t n_bins = 64, std::int64_t bin_ps = 16) {
  InterferogramCube c;
  c.positions_um = std::move(positions);
  c.metadata.twins = spec;
  for (double x : c.positions_um) {
    tcspc::Histogram h;
    h.bin_width_ps = bin_ps;
    h.counts.assign(n_bins, 0);
    for (std::size_t t = 0; t < n_bins; ++t) {
      double v = 0;
      for (const auto& l : lines)
        v += l.amplitude * std::exp(-static_cast<double>(t * bin_ps) / l.tau_ps) * transmission(l.nm, x, spec);
      h.counts[t] = static_cast<std::uint64_t>(std::llround(v));
    }
    c.histograms.push_back(std::move(h));
  }
  return c;
}

Calibration exact_calibration(const TwinsSpec& spec) {
  Calibration cal;
  cal.delay_per_um = spec.delay_per_um;
  cal.x_zero_um = spec.x_zero_um;
  return cal;
}

std::vector<double> spectrum(const TimeFrequencyMap& m) {
  std::vector<double> s(m.wavelength_nm.size(), 0.0);
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t t = 0; t < m.time_ps.size(); ++t) s[i] += m.at(i, t);
  return s;
}

// Local maximum of s nearest to the wavelength `nm`.
std::size_t peak_near(const TimeFrequencyMap& m, const std::vector<double>& s, double nm) {
  std::size_t best = 0;
  for (std::size_t i = 1; i + 1 < s.size(); ++i)
    if (s[i] >= s[i - 1] && s[i] >= s[i + 1] &&
        (best == 0 || std::abs(m.wavelength_nm[i] - nm) < std::abs(m.wavelength_nm[best] - nm)))
      best = i;
  return best;
}

}  // namespace

TEST_CASE("transmission: bright and dark fringes, range check") {
  TwinsSpec spec;
  CHECK(transmission(800.0, 0.0, spec) == Approx(0.5 * 0.5 * 1.9));
  const double p = spec.fringe_period_um(800.0);
  CHECK(transmission(800.0, 0.5 * p, spec) == Approx(0.5 * 0.5 * 0.1));
  CHECK(transmission(800.0, 3.0 * p, spec) == Approx(0.5 * 0.5 * 1.9));
  spec.visibility = 0.0;
  CHECK(transmission(800.0, 0.37 * p, spec) == Approx(0.25));
  CHECK_THROWS_AS(transmission(800.0, 2500.0, spec), DomainError);

  testing::Gen g(31);
  TwinsSpec s2;
  for (int i = 0; i < 200; ++i) {
    const double t = transmission(g.uniform(500.0, 1200.0), g.uniform(-2000.0, 2000.0), s2);
    CHECK(t >= 0.5 * 0.5 * 0.1 - 1e-15);
    CHECK(t <= 0.5 * 0.5 * 1.9 + 1e-15);
  }
}

TEST_CASE("fringe period and Nyquist spacing") {
  TwinsSpec spec;
  CHECK(spec.fringe_period_um(800.0) == Approx(0.8 / (kC * 0.1)).epsilon(0).margin(1e-6));
  CHECK(spec.fringe_period_um(800.0) == Approx(26.685127).margin(1e-6));
  CHECK(spec.nyquist_spacing_um(800.0) == Approx(0.5 * spec.fringe_period_um(800.0)));
  spec.delay_per_um = -0.2;
  CHECK(spec.fringe_period_um(800.0) == Approx(0.8 / (kC * 0.2)).margin(1e-6));
}

TEST_CASE("calibration recovers the delay scale and zero path difference") {
  testing::Gen g(32);
  for (int trial = 0; trial < 20; ++trial) {
    TwinsSpec spec;
    spec.delay_per_um = g.uniform(0.05, 0.2);
    spec.x_zero_um = g.uniform(-300.0, 300.0);
    const double nm = g.uniform(700.0, 900.0);
    const double step = 0.4 * spec.nyquist_spacing_um(nm);
    std::vector<double> x, y;
    // Gaussian envelope so that the zero path difference is a visible maximum.
    const double env = 80.0 * spec.fringe_period_um(nm);
    for (int i = 0; i < 400; ++i) {
      x.push_back(-200.0 * step + i * step);
      const double d = x.back() - spec.x_zero_um;
      y.push_back(1000.0 * (1.0 + std::exp(-0.5 * d * d / (env * env)) *
                                      std::cos(2 * std::numbers::pi * d / spec.fringe_period_um(nm))));
    }
    const auto cal = calibrate_delay(x, y, nm);
    CHECK(cal.delay_per_um == Approx(spec.delay_per_um).epsilon(1e-3));
    CHECK(cal.fringe_period_um == Approx(spec.fringe_period_um(nm)).epsilon(1e-3));
    // The envelope spans about 80 fringes, so the maximum is located to
    // within one fringe.
    CHECK(std::abs(cal.x_zero_um - spec.x_zero_um) <= spec.fringe_period_um(nm));
    CHECK(cal.snr > 3.0);
  }
}

TEST_CASE("calibration: doubling the wavelength doubles the fringe period") {
  TwinsSpec spec;
  std::vector<double> x, y1, y2;
  for (int i = 0; i < 512; ++i) {
    x.push_back(-1000.0 + 4.0 * i);
    y1.push_back(100 + 50 * std::cos(2 * std::numbers::pi * x.back() / spec.fringe_period_um(800.0)));
    y2.push_back(100 + 50 * std::cos(2 * std::numbers::pi * x.back() / spec.fringe_period_um(1600.0)));
  }
  const auto a = calibrate_delay(x, y1, 800.0), b = calibrate_delay(x, y2, 1600.0);
  CHECK(b.fringe_period_um / a.fringe_period_um == Approx(2.0).epsilon(1e-4));
  CHECK(a.delay_per_um == Approx(b.delay_per_um).epsilon(1e-4));
}

TEST_CASE("calibration failures") {
  std::vector<double> x, y;
  for (int i = 0; i < 64; ++i) {
    x.push_back(i * 1.0);
    y.push_back(10 + std::cos(2 * std::numbers::pi * i / 20.0));  // about 3 fringes
  }
  CHECK_THROWS_AS(calibrate_delay(x, y, 800.0), CalibrationError);

  std::mt19937_64 rng(33);
  std::normal_distribution<double> n01;
  std::vector<double> xn, yn;
  for (int i = 0; i < 512; ++i) {
    xn.push_back(i * 1.0);
    yn.push_back(100 + n01(rng));
  }
  CHECK_THROWS_AS(calibrate_delay(xn, yn, 800.0), CalibrationError);
  CHECK_THROWS_AS(calibrate_delay(std::vector<double>{0, 1, 2}, std::vector<double>{1, 2}, 800.0), DomainError);
}

TEST_CASE("cube interferogram and integrated decay are sums over the other axis") {
  TwinsSpec spec;
  std::vector<double> x;
  for (int i = 0; i < 32; ++i) x.push_back(-100.0 + 5.0 * i);
  const auto c = synthetic_cube(spec, x, {{800.0, 1e4, 500.0}});
  const auto y = c.interferogram();
  const auto integ = c.integrated_histogram();
  for (std::size_t i = 0; i < x.size(); ++i) {
    double s = 0;
    for (auto v : c.histograms[i].counts) s += static_cast<double>(v);
    CHECK(y[i] == s);
  }
  for (std::size_t t = 0; t < c.n_bins(); ++t) {
    std::uint64_t s = 0;
    for (const auto& h : c.histograms) s += h.counts[t];
    CHECK(integ.counts[t] == s);
  }
}

TEST_CASE("map round trip: two lines come back at their wavelengths with their weights") {
  TwinsSpec spec;
  std::vector<double> x;
  const double step = 0.9 * spec.nyquist_spacing_um(700.0);
  for (int i = 0; i < 256; ++i) x.push_back(-128 * step + i * step);
  const std::vector<Line> lines{{810.0, 3e4, 1510.0}, {900.0, 6e4, 790.0}};
  const auto c = synthetic_cube(spec, x, lines);
  const auto m = reconstruct_map(c, exact_calibration(spec));
  const auto s = spectrum(m);

  std::vector<double> area;
  for (const auto& l : lines) {
    const std::size_t k = peak_near(m, s, l.nm);
    const double bin = std::abs(m.wavelength_nm[k + 1] - m.wavelength_nm[k - 1]);
    CHECK(std::abs(m.wavelength_nm[k] - l.nm) <= bin);
    // Area over the line: frequency bins are uniform, so a plain sum.
    double a = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (std::abs(m.wavelength_nm[i] - l.nm) < 20.0) a += s[i];
    area.push_back(a);
  }
  double truth[2];
  for (int j = 0; j < 2; ++j) {
    truth[j] = 0;
    for (std::size_t t = 0; t < c.n_bins(); ++t) truth[j] += lines[j].amplitude * std::exp(-(16.0 * t) / lines[j].tau_ps);
  }
  CHECK(area[1] / area[0] == Approx(truth[1] / truth[0]).epsilon(0.05));
}

TEST_CASE("map magnitudes obey Parseval's identity") {
  TwinsSpec spec;
  std::vector<double> x;
  for (int i = 0; i < 100; ++i) x.push_back(-500.0 + 10.0 * i);
  const auto c = synthetic_cube(spec, x, {{820.0, 5e3, 1000.0}, {950.0, 2e3, 300.0}}, 8);
  MapOptions opt{4, 0.0, 1e300};  // keep every bin 1..M/2
  const auto m = reconstruct_map(c, exact_calibration(spec), Apodization::none, true, opt);
  const std::size_t M = m.fft_size;
  REQUIRE(m.wavelength_nm.size() == M / 2);
  for (std::size_t t = 0; t < c.n_bins(); ++t) {
    double mean = 0, e_time = 0;
    for (const auto& h : c.histograms) mean += static_cast<double>(h.counts[t]);
    mean /= static_cast<double>(x.size());
    for (const auto& h : c.histograms) e_time += std::pow(static_cast<double>(h.counts[t]) - mean, 2);
    // Ascending wavelength: index 0 is k = M/2 (counted once), the rest twice.
    double e_freq = std::pow(m.at(0, t), 2);
    for (std::size_t i = 1; i < m.wavelength_nm.size(); ++i) e_freq += 2.0 * std::pow(m.at(i, t), 2);
    CHECK(e_freq / static_cast<double>(M) == Approx(e_time).epsilon(1e-9));
  }
}

TEST_CASE("time rebinning commutes with reconstruction for a single species") {
  TwinsSpec spec;
  std::vector<double> x;
  for (int i = 0; i < 128; ++i) x.push_back(-640.0 + 10.0 * i);
  const auto c = synthetic_cube(spec, x, {{850.0, 1e6, 800.0}}, 64, 4);
  const auto cal = exact_calibration(spec);
  const auto coarse = reconstruct_map(rebin(c, 4), cal);
  const auto fine = reconstruct_map(c, cal);
  REQUIRE(coarse.time_ps.size() == 16);
  double peak = 0;
  for (double v : coarse.intensity) peak = std::max(peak, v);
  for (std::size_t i = 0; i < fine.wavelength_nm.size(); ++i)
    for (std::size_t t = 0; t < 16; ++t) {
      double sum = 0;
      for (std::size_t k = 0; k < 4; ++k) sum += fine.at(i, 4 * t + k);
      CHECK(std::abs(coarse.at(i, t) - sum) < 1e-4 * peak);
    }
}

TEST_CASE("doubling the scan length halves the line width") {
  TwinsSpec spec;
  const auto width = [&](int n) {
    std::vector<double> x;
    for (int i = 0; i < n; ++i) x.push_back(-5.0 * n + 10.0 * i);
    const auto m = reconstruct_map(synthetic_cube(spec, x, {{850.0, 1e5, 1e9}}, 1), exact_calibration(spec));
    // Width in frequency-bin units; bins per 1/N stay fixed because the FFT
    // length scales with N.
    std::vector<double> s = spectrum(m), k(s.size());
    for (std::size_t i = 0; i < k.size(); ++i) k[i] = 1.0 / m.wavelength_nm[i];
    return *fwhm(k, s);
  };
  CHECK(width(256) / width(128) == Approx(0.5).epsilon(0.05));
}

TEST_CASE("an all-zero cube gives an all-zero map") {
  TwinsSpec spec;
  std::vector<double> x;
  for (int i = 0; i < 64; ++i) x.push_back(i * 5.0);
  const auto c = synthetic_cube(spec, x, {}, 10);
  const auto m = reconstruct_map(c, exact_calibration(spec));
  for (double v : m.intensity) CHECK(v == 0.0);
}

TEST_CASE("map argument checks") {
  TwinsSpec spec;
  std::vector<double> x{0, 5, 10, 16};
  auto c = synthetic_cube(spec, x, {{800, 10, 100}}, 4);
  CHECK_THROWS_AS(reconstruct_map(c, exact_calibration(spec)), DomainError);
  c.positions_um = {0, 5, 10, 15};
  CHECK_THROWS_AS(reconstruct_map(c, Calibration{}), DomainError);
  CHECK_THROWS_AS(reconstruct_map(c, exact_calibration(spec), Apodization::hann, true, {8, 5000.0, 6000.0}),
                  DomainError);
  c.histograms.pop_back();
  CHECK_THROWS_AS(reconstruct_map(c, exact_calibration(spec)), DomainError);
}

TEST_CASE("undersampled scans are rejected with the required spacing") {
  TwinsSpec spec;
  const double limit = spec.nyquist_spacing_um(700.0);
  const auto pos = sim::scan_positions(0.0, 1.5 * limit, 16);
  CHECK_THROWS_WITH(sim::check_nyquist(spec, pos, 700.0), Catch::Matchers::ContainsSubstring("required spacing"));
  CHECK_NOTHROW(sim::check_nyquist(spec, sim::scan_positions(0.0, limit, 16), 700.0));
}

TEST_CASE("simulated cube of a narrow emitter reconstructs at its wavelength") {
  sim::SourceModel src;
  src.pump.pair_rate_hz = 2e5;
  sim::SampleModel smp;
  smp.species.push_back({1.0, 1.0, 850.0, 5.0, 1.0});
  TwinsSpec spec;
  const auto pos = sim::scan_positions(-640.0, 10.0, 128);
  sim::RunConfig run;
  run.duration_s = 0.02;
  run.seed = 34;
  run.topology = sim::Topology::fluorescence;
  const auto cube = sim::acquire_cube(src, smp, sim::DetectorModel::ideal(), sim::DetectorModel::ideal(), spec, pos,
                                      run, {0, 1, 100, 10'000});
  const auto m = reconstruct_map(cube, exact_calibration(spec));
  const auto s = spectrum(m);
  const std::size_t k = argmax(s);
  CHECK(m.wavelength_nm[k] == Approx(850.0).margin(std::abs(m.wavelength_nm[k + 1] - m.wavelength_nm[k - 1])));
}
