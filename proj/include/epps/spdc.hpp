#pragma once

// Quasi-phase-matched SPDC kinematics for a CW-pumped, periodically poled
// crystal: dispersion tables, phase mismatch, tuning curves and the
// one-dimensional joint spectral density along the signal axis.

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "epps/error.hpp"
#include "epps/numeric.hpp"

namespace epps::spdc {

// Bundled copy of data/sellmeier_ktp_z.txt. The test suite checks that the
// two stay byte-identical.
inline constexpr std::string_view kBuiltinSellmeierText = R"(# epps sellmeier table, format version 1
#
# n^2(l) = A + B / (1 - C / l^2) + D / (1 - E / l^2) - F * l^2      (l in um)
# n(l, T) = n(l) + n1(l) (T - Tref) + n2(l) (T - Tref)^2
# n1, n2 = sum_m a_m / l^m, m = 0..3
#
# KTP, z axis (e-polarized, type-0 pump/signal/idler).
# Room-temperature dispersion: Fradkin et al., Appl. Phys. Lett. 74, 914 (1999).
# Thermo-optic correction: Emanueli & Arie, Appl. Opt. 42, 6661 (2003).
version 1
id ktp-z
dispersion 2.12725 1.18431 5.14852e-2 0.6603 100.00507 9.68956e-3
thermal_ref_C 25
thermal_n1 9.9587e-6 9.9228e-6 -8.9603e-6 4.1010e-6
thermal_n2 -1.1882e-8 10.459e-8 -9.8136e-8 3.1481e-8
wavelength_um 0.38 3.6
temperature_C 0 200
end
)";

struct SellmeierTable {
  std::string id;
  std::array<double, 6> dispersion{};  // A B C D E F
  double thermal_ref_C = 25.0;
  std::array<double, 4> thermal_n1{};
  std::array<double, 4> thermal_n2{};
  double wavelength_min_um = 0.0;
  double wavelength_max_um = 0.0;
  double temperature_min_C = 0.0;
  double temperature_max_C = 0.0;

  // Index without range checks; callers go through refractive_index().
  double index(double wavelength_um, double temperature_C) const {
    const double l2 = wavelength_um * wavelength_um;
    const auto& d = dispersion;
    const double n2 = d[0] + d[1] / (1.0 - d[2] / l2) + d[3] / (1.0 - d[4] / l2) - d[5] * l2;
    const double dt = temperature_C - thermal_ref_C;
    double n1c = 0.0, n2c = 0.0, inv = 1.0;
    for (int m = 0; m < 4; ++m) {
      n1c += thermal_n1[m] * inv;
      n2c += thermal_n2[m] * inv;
      inv /= wavelength_um;
    }
    return std::sqrt(n2) + n1c * dt + n2c * dt * dt;
  }

  void check_window(double wavelength_um, double temperature_C) const {
    if (!(wavelength_um >= wavelength_min_um && wavelength_um <= wavelength_max_um)) {
      std::ostringstream os;
      os << "spdc: wavelength " << wavelength_um * 1e3 << " nm outside validity window ["
         << wavelength_min_um * 1e3 << ", " << wavelength_max_um * 1e3 << "] nm of sellmeier set '"
         << id << "'";
      throw ValidityError(os.str());
    }
    if (!(temperature_C >= temperature_min_C && temperature_C <= temperature_max_C)) {
      std::ostringstream os;
      os << "spdc: temperature " << temperature_C << " C outside validity window ["
         << temperature_min_C << ", " << temperature_max_C << "] C of sellmeier set '" << id
         << "'";
      throw ValidityError(os.str());
    }
  }
};

inline SellmeierTable parse_sellmeier_table(std::string_view text) {
  SellmeierTable t;
  std::istringstream in{std::string(text)};
  std::string line;
  bool have_version = false, have_end = false;
  const auto read_n = [](std::istringstream& ls, double* out, int n, const std::string& key) {
    for (int i = 0; i < n; ++i) {
      if (!(ls >> out[i])) throw Error("spdc: sellmeier table: key '" + key + "' needs " +
                                       std::to_string(n) + " numbers");
    }
  };
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "version") {
      int v = 0;
      ls >> v;
      if (v != 1) throw Error("spdc: sellmeier table: unsupported version " + std::to_string(v));
      have_version = true;
    } else if (key == "id") {
      ls >> t.id;
    } else if (key == "dispersion") {
      read_n(ls, t.dispersion.data(), 6, key);
    } else if (key == "thermal_ref_C") {
      read_n(ls, &t.thermal_ref_C, 1, key);
    } else if (key == "thermal_n1") {
      read_n(ls, t.thermal_n1.data(), 4, key);
    } else if (key == "thermal_n2") {
      read_n(ls, t.thermal_n2.data(), 4, key);
    } else if (key == "wavelength_um") {
      read_n(ls, &t.wavelength_min_um, 1, key);
      read_n(ls, &t.wavelength_max_um, 1, key);
    } else if (key == "temperature_C") {
      read_n(ls, &t.temperature_min_C, 1, key);
      read_n(ls, &t.temperature_max_C, 1, key);
    } else if (key == "end") {
      have_end = true;
      break;
    } else {
      throw Error("spdc: sellmeier table: unknown key '" + key + "'");
    }
  }
  if (!have_version || !have_end || t.id.empty())
    throw Error("spdc: sellmeier table: missing version, id or end marker");
  return t;
}

inline const SellmeierTable& sellmeier_table(std::string_view id) {
  static const std::map<std::string, SellmeierTable, std::less<>> tables = [] {
    std::map<std::string, SellmeierTable, std::less<>> m;
    auto t = parse_sellmeier_table(kBuiltinSellmeierText);
    m.emplace(t.id, std::move(t));
    return m;
  }();
  const auto it = tables.find(id);
  if (it == tables.end()) throw Error("spdc: unknown sellmeier_id '" + std::string(id) + "'");
  return it->second;
}

inline double refractive_index(double wavelength_nm, double temperature_C,
                               std::string_view sellmeier_id = "ktp-z") {
  const auto& t = sellmeier_table(sellmeier_id);
  const double um = wavelength_nm * 1e-3;
  t.check_window(um, temperature_C);
  return t.index(um, temperature_C);
}

struct CrystalSpec {
  double poling_period_um = 3.675;
  double length_mm = 30.0;
  double temperature_C = 56.0;
  std::string sellmeier_id = "ktp-z";

  void validate() const {
    if (!(poling_period_um > 0.0)) throw DomainError("spdc: poling_period_um must be > 0");
    if (!(length_mm > 0.0)) throw DomainError("spdc: length_mm must be > 0");
    const auto& t = sellmeier_table(sellmeier_id);
    t.check_window(t.wavelength_min_um, temperature_C);
  }
};

struct PumpSpec {
  double wavelength_nm = 413.0;
  double pair_rate_hz = 2e5;

  void validate() const {
    if (!(wavelength_nm > 0.0)) throw DomainError("spdc: pump wavelength_nm must be > 0");
    if (!(pair_rate_hz >= 0.0)) throw DomainError("spdc: pair_rate_hz must be >= 0");
  }
};

enum class FilterShape { gaussian, tophat };

struct FilterSpec {
  double center_nm = 860.0;
  double fwhm_nm = 10.0;
  FilterShape shape = FilterShape::gaussian;

  // Peak-normalized transmission.
  double transmission(double wavelength_nm) const {
    const double d = wavelength_nm - center_nm;
    if (shape == FilterShape::tophat) return std::abs(d) <= 0.5 * fwhm_nm ? 1.0 : 0.0;
    const double sigma = fwhm_nm / kFwhmPerSigma;
    return std::exp(-0.5 * d * d / (sigma * sigma));
  }
};

// Energy conservation for a CW pump: 1/ls + 1/li = 1/lp.
inline double conjugate_wavelength_nm(double pump_nm, double wavelength_nm) {
  if (!(wavelength_nm > pump_nm))
    throw DomainError("spdc: down-converted wavelength must exceed the pump wavelength");
  return 1.0 / (1.0 / pump_nm - 1.0 / wavelength_nm);
}

// Type-0 quasi-phase-matching mismatch dk = kp - ks - ki - 2pi/period in
// rad/um, idler fixed by energy conservation.
inline double phase_mismatch(const PumpSpec& pump, double signal_nm, const CrystalSpec& crystal) {
  if (!(signal_nm > pump.wavelength_nm))
    throw DomainError("spdc: signal wavelength must exceed the pump wavelength");
  const auto& t = sellmeier_table(crystal.sellmeier_id);
  const double lp = pump.wavelength_nm * 1e-3;
  const double ls = signal_nm * 1e-3;
  const double li = conjugate_wavelength_nm(pump.wavelength_nm, signal_nm) * 1e-3;
  t.check_window(lp, crystal.temperature_C);
  t.check_window(ls, crystal.temperature_C);
  t.check_window(li, crystal.temperature_C);
  const double T = crystal.temperature_C;
  const double kp = t.index(lp, T) / lp;
  const double ks = t.index(ls, T) / ls;
  const double ki = t.index(li, T) / li;
  return 2.0 * std::numbers::pi * (kp - (ks + ki) - 1.0 / crystal.poling_period_um);
}

struct TuningPoint {
  double temperature_C = 0.0;
  std::optional<double> signal_nm;  // nullopt: no phase matching at this temperature
  std::optional<double> idler_nm;

  bool phase_matched() const { return signal_nm.has_value(); }
};

// Shortest signal wavelength whose idler stays inside the dispersion window.
inline double min_signal_nm(const PumpSpec& pump, const SellmeierTable& t) {
  const double lo_idler = 1.0 / (1.0 / pump.wavelength_nm - 1.0 / (t.wavelength_max_um * 1e3));
  return std::max(lo_idler, t.wavelength_min_um * 1e3);
}

// Signal-side root of dk = 0 at the crystal temperature (signal <= idler).
// The bracket is scanned from degeneracy outward at 1 nm and refined by
// bisection until the bracket collapses to machine precision.
inline std::optional<double> phase_matched_signal_nm(const PumpSpec& pump,
                                                     const CrystalSpec& crystal) {
  const auto& t = sellmeier_table(crystal.sellmeier_id);
  const double degenerate = 2.0 * pump.wavelength_nm;
  const double lo_limit = min_signal_nm(pump, t);
  const auto f = [&](double s) { return phase_mismatch(pump, s, crystal); };

  double b = degenerate;
  double fb = f(b);
  if (fb == 0.0) return b;
  for (double a = degenerate - 1.0; a > lo_limit; a -= 1.0) {
    const double fa = f(a);
    if (fa == 0.0) return a;
    if ((fa < 0.0) != (fb < 0.0)) {
      double lo = a, hi = b, flo = fa;
      for (int it = 0; it < 200 && hi - lo > 1e-13 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        if (fm == 0.0) return mid;
        if ((fm < 0.0) == (flo < 0.0)) {
          lo = mid;
          flo = fm;
        } else {
          hi = mid;
        }
      }
      return 0.5 * (lo + hi);
    }
    b = a;
    fb = fa;
  }
  return std::nullopt;
}

inline std::vector<TuningPoint> tuning_curve(const PumpSpec& pump, const CrystalSpec& crystal_template,
                                             std::span<const double> temperatures) {
  if (temperatures.empty()) throw DomainError("spdc: tuning_curve needs at least one temperature");
  pump.validate();
  std::vector<TuningPoint> out;
  out.reserve(temperatures.size());
  for (const double T : temperatures) {
    CrystalSpec c = crystal_template;
    c.temperature_C = T;
    c.validate();
    TuningPoint p{T, std::nullopt, std::nullopt};
    if (const auto s = phase_matched_signal_nm(pump, c)) {
      p.signal_nm = *s;
      p.idler_nm = conjugate_wavelength_nm(pump.wavelength_nm, *s);
    }
    out.push_back(p);
  }
  return out;
}

// One-dimensional JSD along the signal axis (CW pump: the idler is fixed by
// energy conservation at every grid point).
struct JointSpectralDensity {
  double pump_nm = 0.0;
  std::vector<double> signal_nm;
  std::vector<double> density;  // normalized to unit sum

  double idler_nm(std::size_t i) const { return conjugate_wavelength_nm(pump_nm, signal_nm[i]); }
  double peak_nm() const { return peak_position(signal_nm, density); }
  std::optional<double> fwhm_nm() const { return fwhm(signal_nm, density); }
  double mean_nm() const { return centroid(signal_nm, density); }

  // Coherence (entanglement) time estimate 1/dnu from the FWHM bandwidth,
  // in femtoseconds. nullopt when the width is not resolved on the grid.
  std::optional<double> entanglement_time_fs() const {
    const auto w = fwhm_nm();
    if (!w) return std::nullopt;
    const double lc = peak_nm();
    const double dnu = kSpeedOfLightNmPerFs * (*w) / (lc * lc);
    return 1.0 / dnu;
  }
};

namespace detail {
inline void normalize_or_throw(std::vector<double>& w, double support_floor, const char* what) {
  double sum = 0.0, peak = 0.0;
  for (double v : w) {
    sum += v;
    peak = std::max(peak, v);
  }
  if (!(peak >= support_floor) || !(sum > 0.0))
    throw EmptySupportError(std::string("spdc: ") + what);
  for (double& v : w) v /= sum;
}
}  // namespace detail

inline JointSpectralDensity joint_spectral_density(const PumpSpec& pump, const CrystalSpec& crystal,
                                                   std::span<const double> grid_nm) {
  if (grid_nm.empty()) throw DomainError("spdc: empty JSD grid");
  pump.validate();
  crystal.validate();
  JointSpectralDensity j;
  j.pump_nm = pump.wavelength_nm;
  j.signal_nm.assign(grid_nm.begin(), grid_nm.end());
  j.density.resize(grid_nm.size());
  const double half_length_um = 0.5 * crystal.length_mm * 1e3;
  for (std::size_t i = 0; i < grid_nm.size(); ++i) {
    const double s = sinc(phase_mismatch(pump, grid_nm[i], crystal) * half_length_um);
    j.density[i] = s * s;
  }
  // sinc^2 peaks at 1, so the support threshold is absolute.
  detail::normalize_or_throw(j.density, 1e-12, "JSD grid excludes the phase-matched support");
  return j;
}

inline JointSpectralDensity herald_conditioned_spectrum(const JointSpectralDensity& jsd,
                                                        const FilterSpec& herald_filter) {
  if (!(herald_filter.fwhm_nm > 0.0)) throw DomainError("spdc: herald filter fwhm_nm must be > 0");
  JointSpectralDensity out = jsd;
  double in_peak = 0.0;
  for (double v : jsd.density) in_peak = std::max(in_peak, v);
  for (std::size_t i = 0; i < out.density.size(); ++i)
    out.density[i] *= herald_filter.transmission(jsd.idler_nm(i));
  detail::normalize_or_throw(out.density, 1e-12 * in_peak,
                             "herald filter has no overlap with the idler image of the JSD");
  return out;
}

// Default signal-side grid: from the shortest usable signal wavelength to
// degeneracy.
inline std::vector<double> default_signal_grid(const PumpSpec& pump, double lo_nm = 650.0,
                                               double step_nm = 0.01) {
  return linspace_step(lo_nm, 2.0 * pump.wavelength_nm, step_nm);
}

}  // namespace epps::spdc
