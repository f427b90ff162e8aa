#pragma once

// Birefringent common-path interferometer (TWINS) in front of the
// fluorescence detector. The wedge position sets the delay between two
// replicas, which makes detection a wavelength-dependent Bernoulli
// acceptance. Interferogram cubes (position x arrival-time histogram) are
// Fourier transformed along position into time-resolved spectra.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "epps/error.hpp"
#include "epps/fft.hpp"
#include "epps/numeric.hpp"
#include "epps/tcspc.hpp"

namespace epps::twins {

struct TwinsSpec {
  double delay_per_um = 0.1;  // replica group delay per wedge translation, fs/um
  double position_min_um = -2000.0;
  double position_max_um = 2000.0;
  double x_zero_um = 0.0;  // zero path difference
  double visibility = 0.9;
  double insertion_loss = 0.5;  // transmission multiplier

  std::vector<std::string> violations(std::string_view path) const {
    std::vector<std::string> v;
    const std::string p(path);
    if (!(delay_per_um != 0.0) || !std::isfinite(delay_per_um))
      v.push_back(p + ".delay_per_um: must be nonzero");
    if (!(position_max_um > position_min_um))
      v.push_back(p + ".position range: max must exceed min");
    if (!(visibility >= 0.0 && visibility <= 1.0))
      v.push_back(p + ".visibility: must lie in [0, 1]");
    if (!(insertion_loss > 0.0 && insertion_loss <= 1.0))
      v.push_back(p + ".insertion_loss: must lie in (0, 1]");
    return v;
  }

  void validate(std::string_view path = "twins") const {
    if (auto v = violations(path); !v.empty()) throw ConfigError(std::move(v));
  }

  double delay_fs(double position_um) const { return delay_per_um * (position_um - x_zero_um); }

  // Largest position step that still samples `shortest_nm` above Nyquist.
  double nyquist_spacing_um(double shortest_nm) const {
    return shortest_nm * 1e-3 / (2.0 * kSpeedOfLightUmPerFs * std::abs(delay_per_um));
  }

  // Fringe period in wedge position for a monochromatic input.
  double fringe_period_um(double wavelength_nm) const {
    return wavelength_nm * 1e-3 / (kSpeedOfLightUmPerFs * std::abs(delay_per_um));
  }
};

// Probability that a photon of the given wavelength passes the
// interferometer at wedge position x.
inline double transmission(double emission_nm, double position_um, const TwinsSpec& spec) {
  if (position_um < spec.position_min_um || position_um > spec.position_max_um)
    throw DomainError("twins: position outside the scan range");
  const double path_um = kSpeedOfLightUmPerFs * spec.delay_fs(position_um);
  const double phase = 2.0 * std::numbers::pi * path_um / (emission_nm * 1e-3);
  return spec.insertion_loss * 0.5 * (1.0 + spec.visibility * std::cos(phase));
}

// Throws unless positions are strictly increasing and uniformly spaced
// (relative tolerance 1e-6 of the step). Returns the step.
inline double uniform_step(std::span<const double> positions) {
  if (positions.size() < 2) throw DomainError("twins: need at least two positions");
  const double step = (positions.back() - positions.front()) / static_cast<double>(positions.size() - 1);
  if (!(step > 0.0)) throw DomainError("twins: positions must be strictly increasing");
  for (std::size_t i = 1; i < positions.size(); ++i) {
    if (std::abs(positions[i] - positions[i - 1] - step) > 1e-6 * step)
      throw DomainError("twins: positions are not uniformly spaced (resampling is not supported)");
  }
  return step;
}

struct CubeMetadata {
  TwinsSpec twins;
  double per_position_duration_s = 0.0;
  std::uint64_t seed = 0;
};

struct InterferogramCube {
  std::vector<double> positions_um;
  std::vector<tcspc::Histogram> histograms;  // one per position, shared bin axis
  CubeMetadata metadata;

  std::size_t n_bins() const { return histograms.empty() ? 0 : histograms.front().size(); }
  std::int64_t bin_width_ps() const { return histograms.empty() ? 0 : histograms.front().bin_width_ps; }

  void check() const {
    if (positions_um.size() != histograms.size())
      throw DomainError("twins: cube has mismatched position and histogram counts");
    uniform_step(positions_um);
    for (const auto& h : histograms) {
      if (h.bin_width_ps != histograms.front().bin_width_ps || h.size() != n_bins() ||
          h.t0_ps != histograms.front().t0_ps)
        throw DomainError("twins: cube histograms do not share a bin axis");
    }
  }

  // Counts summed over arrival time at every position.
  std::vector<double> interferogram() const {
    std::vector<double> y;
    y.reserve(histograms.size());
    for (const auto& h : histograms) y.push_back(h.total());
    return y;
  }

  // Sum over positions: the wavelength-integrated decay.
  tcspc::Histogram integrated_histogram() const {
    tcspc::Histogram out = histograms.at(0);
    for (std::size_t i = 1; i < histograms.size(); ++i) {
      for (std::size_t b = 0; b < out.size(); ++b) out.counts[b] += histograms[i].counts[b];
      out.n_starts += histograms[i].n_starts;
    }
    return out;
  }
};

// Merges `factor` adjacent arrival-time bins at every position.
inline InterferogramCube rebin(const InterferogramCube& cube, std::size_t factor) {
  cube.check();
  InterferogramCube out{cube.positions_um, {}, cube.metadata};
  out.histograms.reserve(cube.histograms.size());
  for (const auto& h : cube.histograms) out.histograms.push_back(tcspc::rebin(h, factor));
  return out;
}

struct Calibration {
  double delay_per_um = 0.0;  // fs/um, magnitude
  double x_zero_um = 0.0;
  double fringe_period_um = 0.0;
  double fringes = 0.0;
  double snr = 0.0;
};

namespace detail {
// Least-squares amplitude of a sinusoid of frequency f (cycles/um) in y.
struct SineFit {
  double a = 0.0, b = 0.0;  // y ~ a cos + b sin
  double power = 0.0;
};

inline SineFit fit_sine(std::span<const double> x, std::span<const double> y, double f) {
  double cc = 0, ss = 0, cs = 0, yc = 0, ys = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double ph = 2.0 * std::numbers::pi * f * x[i];
    const double c = std::cos(ph), s = std::sin(ph);
    cc += c * c;
    ss += s * s;
    cs += c * s;
    yc += y[i] * c;
    ys += y[i] * s;
  }
  const double det = cc * ss - cs * cs;
  SineFit r;
  if (std::abs(det) < 1e-300) return r;
  r.a = (yc * ss - ys * cs) / det;
  r.b = (ys * cc - yc * cs) / det;
  r.power = r.a * yc + r.b * ys;
  return r;
}
}  // namespace detail

// Fringe-frequency calibration from an interferogram of a monochromatic
// reference. The coarse frequency comes from a zero-padded spectrum; it is
// then refined by maximizing the explained variance of a sinusoid fit.
inline Calibration calibrate_delay(std::span<const double> positions_um,
                                   std::span<const double> interferogram, double known_nm) {
  if (positions_um.size() != interferogram.size())
    throw DomainError("twins: positions and interferogram differ in length");
  const double dx = uniform_step(positions_um);
  const std::size_t n = positions_um.size();
  if (n < 8) throw CalibrationError("twins: calibration failed: too few positions");

  double mean = 0.0;
  for (double v : interferogram) mean += v;
  mean /= static_cast<double>(n);
  std::vector<double> ac(n), xs(n);
  for (std::size_t i = 0; i < n; ++i) {
    ac[i] = interferogram[i] - mean;
    xs[i] = positions_um[i] - positions_um[0];
  }

  const std::size_t m = next_pow2(16 * n);
  RealFft fft(m);
  std::vector<double> win(n);
  for (std::size_t i = 0; i < n; ++i)
    win[i] = ac[i] * (0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                           static_cast<double>(n - 1)));
  const auto mag = fft.magnitude(win);
  std::size_t kpk = 1;
  for (std::size_t k = 2; k < mag.size(); ++k)
    if (mag[k] > mag[kpk]) kpk = k;
  const double df = 1.0 / (static_cast<double>(m) * dx);
  double lo = std::max(0.5 * df, (static_cast<double>(kpk) - 2.0) * df);
  double hi = (static_cast<double>(kpk) + 2.0) * df;

  // Golden-section maximization of the explained variance.
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = hi - g * (hi - lo), d = lo + g * (hi - lo);
  double pc = detail::fit_sine(xs, ac, c).power, pd = detail::fit_sine(xs, ac, d).power;
  for (int it = 0; it < 200 && (hi - lo) > 1e-13 * hi; ++it) {
    if (pc > pd) {
      hi = d;
      d = c;
      pd = pc;
      c = hi - g * (hi - lo);
      pc = detail::fit_sine(xs, ac, c).power;
    } else {
      lo = c;
      c = d;
      pc = pd;
      d = lo + g * (hi - lo);
      pd = detail::fit_sine(xs, ac, d).power;
    }
  }
  const double f = 0.5 * (lo + hi);
  const auto fit = detail::fit_sine(xs, ac, f);

  Calibration cal;
  cal.fringe_period_um = 1.0 / f;
  cal.fringes = f * (positions_um.back() - positions_um.front());
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ph = 2.0 * std::numbers::pi * f * xs[i];
    const double r = ac[i] - fit.a * std::cos(ph) - fit.b * std::sin(ph);
    ss += r * r;
  }
  const double amp = std::hypot(fit.a, fit.b);
  const double rms = std::sqrt(ss / static_cast<double>(n));
  cal.snr = rms > 0.0 ? amp / rms : std::numeric_limits<double>::infinity();
  if (cal.fringes < 10.0) {
    std::ostringstream os;
    os << "twins: calibration failed: only " << cal.fringes << " fringes in the scan (need >= 10)";
    throw CalibrationError(os.str());
  }
  if (cal.snr < 3.0) {
    std::ostringstream os;
    os << "twins: calibration failed: fringe SNR " << cal.snr << " < 3";
    throw CalibrationError(os.str());
  }
  cal.delay_per_um = known_nm * 1e-3 * f / kSpeedOfLightUmPerFs;

  // Zero delay at the maximum of the fringe envelope (analytic signal).
  std::vector<std::complex<double>> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = ac[i];
  complex_fft(z, FFTW_FORWARD);
  for (std::size_t k = 1; k < n; ++k) {
    if (2 * k < n) z[k] *= 2.0;
    else if (2 * k > n) z[k] = 0.0;
  }
  complex_fft(z, FFTW_BACKWARD);
  std::size_t ipk = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (std::abs(z[i]) > std::abs(z[ipk])) ipk = i;
  cal.x_zero_um = positions_um[ipk];
  return cal;
}

inline Calibration calibrate_delay(const InterferogramCube& reference, double known_nm) {
  reference.check();
  const auto y = reference.interferogram();
  return calibrate_delay(reference.positions_um, y, known_nm);
}

struct TimeFrequencyMap {
  std::vector<double> wavelength_nm;  // strictly increasing
  std::vector<double> time_ps;        // bin left edges, strictly increasing
  std::vector<double> intensity;      // [wavelength][time], row-major
  std::size_t fft_size = 0;
  std::size_t n_positions = 0;

  double at(std::size_t il, std::size_t it) const { return intensity[il * time_ps.size() + it]; }
  double& at(std::size_t il, std::size_t it) { return intensity[il * time_ps.size() + it]; }
};

enum class Apodization { none, hann };

struct MapOptions {
  std::size_t zero_pad_factor = 8;  // FFT length >= factor * positions, power of two
  double wavelength_min_nm = 650.0;
  double wavelength_max_nm = 1100.0;
};

// Fourier transform of the cube along position at every arrival-time bin.
// Per time bin: subtract the position mean (dc_removal), apodize, transform,
// keep the positive-frequency magnitude and map optical frequency
// nu = k / (M * dtau) onto wavelength c / nu.
inline TimeFrequencyMap reconstruct_map(const InterferogramCube& cube, const Calibration& cal,
                                        Apodization apodization = Apodization::hann,
                                        bool dc_removal = true, const MapOptions& opt = {}) {
  cube.check();
  if (!(std::abs(cal.delay_per_um) > 0.0)) throw DomainError("twins: calibration has zero delay_per_um");
  const std::size_t n = cube.positions_um.size();
  const std::size_t nt = cube.n_bins();
  const double dx = uniform_step(cube.positions_um);
  const double dtau_fs = std::abs(cal.delay_per_um) * dx;
  const std::size_t m = next_pow2(std::max<std::size_t>(opt.zero_pad_factor, 1) * n);

  std::vector<std::size_t> ks;  // frequency bins kept, ascending wavelength
  TimeFrequencyMap map;
  map.fft_size = m;
  map.n_positions = n;
  for (std::size_t k = m / 2; k >= 1; --k) {
    const double nu = static_cast<double>(k) / (static_cast<double>(m) * dtau_fs);
    const double lam = kSpeedOfLightNmPerFs / nu;
    if (lam >= opt.wavelength_min_nm && lam <= opt.wavelength_max_nm) {
      ks.push_back(k);
      map.wavelength_nm.push_back(lam);
    }
  }
  if (ks.empty()) throw DomainError("twins: wavelength window contains no frequency bins");
  for (std::size_t t = 0; t < nt; ++t)
    map.time_ps.push_back(static_cast<double>(cube.histograms[0].bin_left_ps(t)));
  map.intensity.assign(ks.size() * nt, 0.0);

  std::vector<double> win(n, 1.0);
  if (apodization == Apodization::hann && n > 1) {
    for (std::size_t i = 0; i < n; ++i)
      win[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                    static_cast<double>(n - 1));
  }

  RealFft fft(m);
  std::vector<double> col(n);
  for (std::size_t t = 0; t < nt; ++t) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = static_cast<double>(cube.histograms[i].counts[t]);
      mean += col[i];
    }
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = ((dc_removal ? col[i] - mean : col[i])) * win[i];
    const auto mag = fft.magnitude(col);
    for (std::size_t j = 0; j < ks.size(); ++j) map.at(j, t) = mag[ks[j]];
  }
  return map;
}

}  // namespace epps::twins
