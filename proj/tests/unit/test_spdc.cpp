#include <catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>

#include "epps/spdc.hpp"
#include "support.hpp"

using namespace epps;
using namespace epps::spdc;
using Catch::Approx;

namespace {

// Direct evaluation of the KTP z-axis dispersion and thermo-optic
// polynomials with the coefficients typed in from the published tables.
double oracle_index(double l_um, double T) {
  const double l2 = l_um * l_um;
  const double n0 = std::sqrt(2.12725 + 1.18431 / (1 - 0.0514852 / l2) + 0.6603 / (1 - 100.00507 / l2) -
                              0.00968956 * l2);
  const double a[] = {9.9587e-6, 9.9228e-6, -8.9603e-6, 4.1010e-6};
  const double b[] = {-1.1882e-8, 10.459e-8, -9.8136e-8, 3.1481e-8};
  double n1 = 0, n2 = 0;
  for (int m = 0; m < 4; ++m) {
    n1 += a[m] / std::pow(l_um, m);
    n2 += b[m] / std::pow(l_um, m);
  }
  return n0 + n1 * (T - 25) + n2 * (T - 25) * (T - 25);
}

std::vector<double> grid() { return default_signal_grid(PumpSpec{}, 650.0, 0.01); }

}  // namespace

TEST_CASE("bundled sellmeier data file matches the built-in table") {
  std::ifstream f(std::string(EPPS_DATA_DIR) + "/sellmeier_ktp_z.txt");
  REQUIRE(f);
  const std::string text{std::istreambuf_iterator<char>(f), {}};
  CHECK(text == kBuiltinSellmeierText);
  const auto t = parse_sellmeier_table(text);
  CHECK(t.id == "ktp-z");
  CHECK(t.wavelength_min_um == 0.38);
  CHECK(t.temperature_max_C == 200.0);
}

TEST_CASE("sellmeier table parser rejects malformed input") {
  CHECK_THROWS_AS(parse_sellmeier_table("version 2\nid x\nend\n"), Error);
  CHECK_THROWS_AS(parse_sellmeier_table("version 1\nid x\nbogus 1\nend\n"), Error);
  CHECK_THROWS_AS(parse_sellmeier_table("version 1\nid x\n"), Error);
  CHECK_THROWS_AS(sellmeier_table("no-such-id"), Error);
}

TEST_CASE("refractive index: physical range, determinism and oracle") {
  const double n = refractive_index(826.0, 25.0, "ktp-z");
  CHECK(n > 1.5);
  CHECK(n < 2.1);
  CHECK(refractive_index(826.0, 25.0 + 0.0, "ktp-z") == n);

  // Frozen from the oracle above.
  CHECK(refractive_index(826.0, 56.0, "ktp-z") == Approx(1.843641352643543).epsilon(0).margin(1e-9));
  CHECK(refractive_index(826.0, 56.0, "ktp-z") == Approx(oracle_index(0.826, 56.0)).epsilon(0).margin(1e-9));

  testing::Gen g(11);
  for (int i = 0; i < 200; ++i) {
    const double l = g.uniform(400.0, 3500.0), T = g.uniform(0.0, 200.0);
    CHECK(refractive_index(l, T, "ktp-z") == Approx(oracle_index(l * 1e-3, T)).epsilon(0).margin(1e-9));
  }
}

TEST_CASE("refractive index outside the validity window names the window") {
  CHECK_THROWS_AS(refractive_index(300.0, 25.0, "ktp-z"), ValidityError);
  CHECK_THROWS_AS(refractive_index(826.0, 250.0, "ktp-z"), ValidityError);
  CHECK_THROWS_WITH(refractive_index(4000.0, 25.0, "ktp-z"), Catch::Matchers::ContainsSubstring("[380, 3600] nm"));
}

TEST_CASE("phase mismatch: degeneracy, exchange symmetry and domain") {
  const PumpSpec pump;
  const CrystalSpec c;
  CHECK_THROWS_AS(phase_mismatch(pump, 413.0, c), DomainError);
  CHECK_THROWS_AS(phase_mismatch(pump, 300.0, c), DomainError);

  testing::Gen g(12);
  for (int i = 0; i < 200; ++i) {
    CrystalSpec ci = c;
    ci.temperature_C = g.uniform(0.0, 200.0);
    const double s = g.uniform(700.0, 826.0);
    const double idler = conjugate_wavelength_nm(413.0, s);
    const double a = phase_mismatch(pump, s, ci), b = phase_mismatch(pump, idler, ci);
    CHECK(a == Approx(b).epsilon(1e-12).margin(1e-12));
  }
}

TEST_CASE("tuning: the pairing near an 860 nm idler has an 800 nm signal") {
  // The absolute temperature of this pairing depends on the dispersion data;
  // the pairing itself is the checked claim.
  std::vector<double> temps;
  for (int t = 20; t <= 200; ++t) temps.push_back(t);
  const auto pts = tuning_curve(PumpSpec{}, CrystalSpec{}, temps);
  const TuningPoint* best = nullptr;
  for (const auto& p : pts)
    if (p.phase_matched() && (!best || std::abs(*p.idler_nm - 860) < std::abs(*best->idler_nm - 860))) best = &p;
  REQUIRE(best);
  CHECK(std::abs(*best->idler_nm - 860.0) < 5.0);
  CHECK(*best->signal_nm == Approx(800.0).margin(15.0));

  // Near degeneracy at 56 C with this coefficient set.
  const auto at56 = tuning_curve(PumpSpec{}, CrystalSpec{}, std::vector<double>{56.0});
  REQUIRE(at56[0].phase_matched());
  CHECK(*at56[0].signal_nm == Approx(820.0).margin(1.0));
}

TEST_CASE("tuning: coverage, energy conservation, ordering and root consistency") {
  std::vector<double> temps;
  for (int t = 20; t <= 200; ++t) temps.push_back(t);
  const PumpSpec pump;
  const auto pts = tuning_curve(pump, CrystalSpec{}, temps);
  REQUIRE(pts.size() == temps.size());
  double lo = 1e9, hi = 0;
  std::size_t unmatched = 0;
  for (const auto& p : pts) {
    if (!p.phase_matched()) {
      ++unmatched;
      CHECK_FALSE(p.idler_nm.has_value());
      continue;
    }
    const double s = *p.signal_nm, i = *p.idler_nm;
    CHECK(s <= i);
    CHECK(std::abs(1 / s + 1 / i - 1 / pump.wavelength_nm) * pump.wavelength_nm < 1e-12);
    CrystalSpec c;
    c.temperature_C = p.temperature_C;
    CHECK(std::abs(phase_mismatch(pump, s, c)) < 1e-8);
    lo = std::min(lo, s);
    hi = std::max(hi, i);
  }
  CHECK(lo <= 685.0);
  CHECK(hi >= 1085.0);
  // Below the degeneracy temperature there is no root: flagged, not thrown.
  CHECK(unmatched > 0);
  CHECK_FALSE(pts.front().phase_matched());
}

TEST_CASE("tuning rejects an empty list and out-of-window temperatures") {
  CHECK_THROWS_AS(tuning_curve(PumpSpec{}, CrystalSpec{}, std::vector<double>{}), DomainError);
  CHECK_THROWS_AS(tuning_curve(PumpSpec{}, CrystalSpec{}, std::vector<double>{250.0}), ValidityError);
}

TEST_CASE("JSD: normalized, maximal at the root, zero at the first sinc null") {
  const PumpSpec pump;
  const CrystalSpec c;
  const auto g = grid();
  const auto j = joint_spectral_density(pump, c, g);
  double sum = 0;
  for (double v : j.density) {
    CHECK(v >= 0.0);
    sum += v;
  }
  CHECK(sum == Approx(1.0).margin(1e-9));
  const double root = *phase_matched_signal_nm(pump, c);
  CHECK(j.peak_nm() == Approx(root).margin(0.02));
  for (std::size_t i = 0; i < g.size(); ++i)
    CHECK(std::abs(1 / g[i] + 1 / j.idler_nm(i) - 1 / pump.wavelength_nm) * pump.wavelength_nm < 1e-12);

  // First null below the root: |dk| L / 2 = pi.
  const double half_l = 0.5 * c.length_mm * 1e3;
  const auto f = [&](double s) { return std::abs(phase_mismatch(pump, s, c)) * half_l - std::numbers::pi; };
  double a = root - 10.0, b = root - 1e-6;
  for (int it = 0; it < 200; ++it) {
    const double m = 0.5 * (a + b);
    (f(m) > 0 ? a : b) = m;
  }
  const auto single = joint_spectral_density(pump, c, std::vector<double>{root, a});
  CHECK(single.density[1] < 1e-12);
}

TEST_CASE("JSD: broadband singles spectrum near degeneracy") {
  const auto j = joint_spectral_density(PumpSpec{}, CrystalSpec{}, grid());
  double pk = 0;
  for (double v : j.density) pk = std::max(pk, v);
  double lower = 0;
  for (std::size_t i = 0; i < j.signal_nm.size(); ++i)
    if (j.density[i] >= 0.5 * pk) {
      lower = j.signal_nm[i];
      break;
    }
  // Signal and idler branches together: from the lower half-maximum to its
  // conjugate.
  const double width = conjugate_wavelength_nm(413.0, lower) - lower;
  CHECK(width > 10.0);
  CHECK(width < 100.0);
  REQUIRE(j.entanglement_time_fs() == std::nullopt);  // unresolved on the signal-side grid alone
}

TEST_CASE("JSD: grid without support raises empty-support") {
  // Sidelobes decay only as 1/x^2, so a grid without support must sit on
  // sinc nulls: |dk| L / 2 = m pi for m = 1, 2.
  const PumpSpec pump;
  const CrystalSpec c;
  const double root = *phase_matched_signal_nm(pump, c);
  const double half_l = 0.5 * c.length_mm * 1e3;
  std::vector<double> nulls;
  for (const int m : {1, 2}) {
    const auto f = [&](double s) { return std::abs(phase_mismatch(pump, s, c)) * half_l - m * std::numbers::pi; };
    double a = root - 20.0, b = root - 1e-6;
    REQUIRE(f(a) > 0);
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (a + b);
      (f(mid) > 0 ? a : b) = mid;
    }
    nulls.push_back(a);
  }
  REQUIRE(nulls[0] > nulls[1]);
  CHECK_THROWS_AS(joint_spectral_density(pump, c, nulls), EmptySupportError);
  nulls.push_back(0.5 * (nulls[0] + nulls[1]));  // a sidelobe maximum restores support
  CHECK_NOTHROW(joint_spectral_density(pump, c, nulls));
  CHECK_THROWS_AS(joint_spectral_density(pump, c, std::vector<double>{}), DomainError);
}

TEST_CASE("herald conditioning: 860/10 filter selects a narrow band near 800 nm") {
  const auto j = joint_spectral_density(PumpSpec{}, CrystalSpec{}, grid());
  const auto h = herald_conditioned_spectrum(j, FilterSpec{860.0, 10.0});
  CHECK(h.peak_nm() == Approx(800.0).margin(5.0));
  REQUIRE(h.fwhm_nm());
  CHECK(*h.fwhm_nm() == Approx(10.0).margin(3.0));
  double sum = 0;
  for (double v : h.density) sum += v;
  CHECK(sum == Approx(1.0).margin(1e-9));
  REQUIRE(h.entanglement_time_fs());
  CHECK(*h.entanglement_time_fs() > 0.0);
}

TEST_CASE("herald conditioning: filter shifts move the peak by the conjugate amount") {
  const auto j = joint_spectral_density(PumpSpec{}, CrystalSpec{}, grid());
  const double p0 = herald_conditioned_spectrum(j, FilterSpec{860.0, 10.0}).peak_nm();
  for (const double d : {-10.0, 5.0, 10.0}) {
    const double p = herald_conditioned_spectrum(j, FilterSpec{860.0 + d, 10.0}).peak_nm();
    const double expect = conjugate_wavelength_nm(413.0, 860.0 + d) - conjugate_wavelength_nm(413.0, 860.0);
    CHECK(p - p0 == Approx(expect).margin(2.0));
  }
}

TEST_CASE("herald conditioning: all-pass identity, narrowing and zero overlap") {
  const auto j = joint_spectral_density(PumpSpec{}, CrystalSpec{}, grid());
  const auto wide = herald_conditioned_spectrum(j, FilterSpec{860.0, 1e7, FilterShape::tophat});
  for (std::size_t i = 0; i < j.density.size(); i += 97) CHECK(wide.density[i] == Approx(j.density[i]).epsilon(1e-9));

  const auto narrow = herald_conditioned_spectrum(j, FilterSpec{860.0, 10.0});
  double pk = 0;
  for (double v : j.density) pk = std::max(pk, v);
  double lower = 0;
  for (std::size_t i = 0; i < j.signal_nm.size(); ++i)
    if (j.density[i] >= 0.5 * pk) {
      lower = j.signal_nm[i];
      break;
    }
  REQUIRE(narrow.fwhm_nm());
  CHECK(*narrow.fwhm_nm() <= conjugate_wavelength_nm(413.0, lower) - lower);

  CHECK_THROWS_AS(herald_conditioned_spectrum(j, FilterSpec{1500.0, 1.0, FilterShape::tophat}), EmptySupportError);
  CHECK_THROWS_AS(herald_conditioned_spectrum(j, FilterSpec{860.0, 0.0}), DomainError);
}

TEST_CASE("property: every emitted pair conserves energy") {
  testing::Gen g(13);
  for (int i = 0; i < 500; ++i) {
    const double p = g.uniform(380.0, 500.0);
    const double s = g.uniform(p * 1.01, 2 * p);
    const double idler = conjugate_wavelength_nm(p, s);
    CHECK(std::abs(1 / s + 1 / idler - 1 / p) * p < 1e-12);
  }
}
