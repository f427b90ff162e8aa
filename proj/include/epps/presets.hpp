#pragma once

// Baked experiments. Each preset runs its simulations and analyses, writes
// every artifact plus manifest.json under the output directory and returns a
// summary of the numbers it measured.

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "epps/config.hpp"
#include "epps/error.hpp"
#include "epps/fit.hpp"
#include "epps/io.hpp"
#include "epps/pipeline.hpp"
#include "epps/rng.hpp"

namespace epps::presets {

namespace fs = std::filesystem;

struct PresetInfo {
  std::string_view name;
  std::string_view description;
};

inline constexpr std::array<PresetInfo, 8> kPresets{{
    {"fig2b-tuning", "phase-matching tuning curve from 20 to 200 C"},
    {"fig2c-g2", "heralded HBT g2 at three pair rates"},
    {"fig2d-irf", "signal-idler IRF, mpd/mpd and mpd/excelitas"},
    {"fig3-two-dyes", "single-dye decays and a two-dye time-frequency map"},
    {"fig4-lh2", "LH2-like emitter (1.13 ns) through the interferometer"},
    {"fig4-membrane-open", "membrane with open reaction centres (101 ps)"},
    {"fig4-membrane-closed", "membrane with closed reaction centres (248 ps)"},
    {"fig5-integration-sweep", "LH2-like decays acquired for 50, 10, 2 and 0.6 s"},
}};

inline bool is_preset(std::string_view name) {
  for (const auto& p : kPresets)
    if (p.name == name) return true;
  return false;
}

// Coincidences per IRF measurement.
inline constexpr double kIrfCoincidences = 1e6;

namespace detail {

// Collects artifacts written under one directory.
class Output {
 public:
  explicit Output(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  const fs::path& dir() const { return dir_; }
  const std::vector<fs::path>& files() const { return files_; }

  void text(const std::string& name, std::string_view s) {
    io::write_text(dir_ / name, s);
    files_.emplace_back(name);
  }
  void json(const std::string& name, const Json& j) { text(name, j.dump(2) + "\n"); }
  void events(const std::string& name, const EventStream& s, const Json& config) {
    write_event_file(dir_ / name, s);
    files_.emplace_back(name);
    const auto side = io::sidecar_path(fs::path(name));
    json(side.string(), io::event_sidecar(s, config));
  }
  void cube(const std::string& name, const twins::InterferogramCube& c, const twins::Calibration& cal) {
    for (const auto& f : io::write_cube(dir_ / name, c, cal)) files_.push_back(fs::path(name) / f);
  }

 private:
  fs::path dir_;
  std::vector<fs::path> files_;
};

inline sim::DetectorModel delayed(sim::DetectorModel d) {
  d.cable_delay_ps = 5000.0;
  return d;
}

// Source at the reference conditions: 56 C crystal, 860/10 nm herald filter,
// 2e5 heralded pairs per second.
inline ExperimentConfig base(std::uint64_t seed, std::string_view signal_preset = "mpd") {
  ExperimentConfig c;
  c.source.pump.pair_rate_hz = 2e5;
  c.herald = {"mpd", sim::DetectorModel::mpd()};
  c.signal = {std::string(signal_preset), delayed(sim::DetectorModel::preset(signal_preset))};
  c.run.seed = seed;
  return c;
}

inline EmitterSpecies species(double weight, double tau_ns, double center_nm, double fwhm_nm, double qy) {
  return {weight, tau_ns, center_nm, fwhm_nm, qy};
}

// LH2-like emitters: radiative rate fixed, so the quantum yield scales with
// the effective lifetime. 0.32 at 1.14 ns gives about 6.5e3 detected
// photons per second with mpd detectors at 2e5 pairs/s.
inline double lh_quantum_yield(double tau_ns) { return 0.32 * tau_ns / 1.14; }

template <class Count>
Json fit_and_report(Output& out, const std::string& name, const tcspc::BasicHistogram<Count>& h,
                    const tcspc::Histogram& irf, const std::string& irf_name, std::size_t n,
                    const fit::FitOptions& opt) {
  const auto r = fit::fit_decay(h, irf, n, opt);
  auto rep = io::fit_report(r, h, irf_name);
  out.json(name, rep);
  return rep;
}

inline Json irf_summary(const tcspc::Histogram& h) {
  return {{"fwhm_ps", tcspc::fwhm_ps(h, 2)},
          {"peak_ps", tcspc::peak_time_ps(h, 2)},
          {"coincidences", h.total()},
          {"n_starts", h.n_starts}};
}

inline Json config_echo(const ExperimentConfig& c) { return to_json(c); }

// ---- individual presets ----------------------------------------------------

inline Json tuning(Output& out, std::uint64_t, Json& config) {
  const ExperimentConfig c;
  std::vector<double> temps;
  for (int t = 20; t <= 200; ++t) temps.push_back(t);
  const auto pts = spdc::tuning_curve(c.source.pump, c.source.crystal, temps);
  out.text("tuning.csv", io::tuning_csv(pts));
  config = {{"source", config_echo(c)["source"]}, {"temperatures_C", {{"min", 20}, {"max", 200}, {"step", 1}}}};

  double lo = INFINITY, hi = -INFINITY, best = INFINITY;
  Json at860 = nullptr;
  std::size_t matched = 0;
  for (const auto& p : pts) {
    if (!p.phase_matched()) continue;
    ++matched;
    lo = std::min(lo, *p.signal_nm);
    hi = std::max(hi, *p.idler_nm);
    if (std::abs(*p.idler_nm - 860.0) < best) {
      best = std::abs(*p.idler_nm - 860.0);
      at860 = {{"temperature_C", p.temperature_C}, {"signal_nm", *p.signal_nm}, {"idler_nm", *p.idler_nm}};
    }
  }
  return {{"points", pts.size()},
          {"phase_matched", matched},
          {"coverage_nm", {lo, hi}},
          {"idler_nearest_860", at860}};
}

inline Json g2(Output& out, std::uint64_t seed, Json& config) {
  struct Level {
    double rate_hz, duration_s;
  };
  const std::array<Level, 3> levels{{{2e5, 10.0}, {2e6, 2.0}, {1e7, 1.0}}};
  Json runs = Json::array(), cfgs = Json::array();
  for (std::size_t i = 0; i < levels.size(); ++i) {
    auto c = base(derive_seed(seed, 0x62, i));
    c.signal.model.cable_delay_ps = 0.0;  // both HBT arms share the herald's time origin
    c.source.pump.pair_rate_hz = levels[i].rate_hz;
    c.run.duration_s = levels[i].duration_s;
    c.run.topology = sim::Topology::hbt;
    c.analysis.g2_window_ps = 5'000;
    c.analysis.g2_max_delay_ps = 400'000;
    c.analysis.g2_step_ps = 5'000;
    cfgs.push_back(config_echo(c));

    const auto s = pipeline::simulate(c);
    const auto g = pipeline::g2(c, s);
    const std::string name = "g2_rate" + io::fmt(static_cast<long long>(levels[i].rate_hz)) + ".csv";
    out.text(name, io::g2_csv(g));

    // Plateau: delays where each arm window clears the herald's dead time.
    double num = 0.0, den = 0.0;
    std::size_t zero = 0;
    for (std::size_t k = 0; k < g.delay_ps.size(); ++k) {
      if (g.delay_ps[k] == 0) zero = k;
      if (std::abs(g.delay_ps[k]) >= 200'000 && g.n_ht[k] > 0 && g.n_hr[k] > 0) {
        num += static_cast<double>(g.n_htr[k]);
        den += static_cast<double>(g.n_ht[k]) * static_cast<double>(g.n_hr[k]) / static_cast<double>(g.n_herald);
      }
    }
    runs.push_back({{"pair_rate_hz", levels[i].rate_hz},
                    {"duration_s", levels[i].duration_s},
                    {"rate_times_window", levels[i].rate_hz * 5e-9},
                    {"csv", name},
                    {"n_herald", g.n_herald},
                    {"g2_zero", g.g2[zero]},
                    {"g2_zero_err", g.err[zero]},
                    {"n_htr_zero", g.n_htr[zero]},
                    {"plateau_g2", den > 0.0 ? num / den : std::nan("")},
                    {"plateau_err", den > 0.0 ? std::sqrt(num) / den : std::nan("")},
                    {"plateau_min_delay_ps", 200'000}});
  }
  config = {{"runs", cfgs}};
  return {{"runs", runs}};
}

inline Json irf(Output& out, std::uint64_t seed, Json& config) {
  Json res = Json::object(), cfgs = Json::object();
  for (const std::string sig : {"mpd", "excelitas"}) {
    auto c = base(derive_seed(seed, 0x1F, sig == "mpd" ? 0 : 1), sig);
    c.run.duration_s = pipeline::irf_duration_s(c, kIrfCoincidences);
    cfgs[sig] = config_echo(c);
    EventStream s;
    const auto h = pipeline::measure_irf(c, kIrfCoincidences, &s);
    if (sig == "mpd") out.events("irf_mpd_mpd.epps", s, cfgs[sig]);
    out.text("irf_mpd_" + sig + ".csv", io::histogram_csv(h));
    res["mpd_" + sig] = irf_summary(h);
    res["mpd_" + sig]["expected_fwhm_ps"] =
        std::hypot(c.herald.model.jitter_fwhm_ps, c.signal.model.jitter_fwhm_ps);
  }
  config = cfgs;
  return res;
}

// Fluorescence through the interferometer: calibrate, acquire, reconstruct.
struct MapRun {
  twins::Calibration cal;
  twins::InterferogramCube cube;
  twins::TimeFrequencyMap map;
  tcspc::Histogram irf;         // full resolution
  tcspc::Histogram irf_coarse;  // on the map's time axis
};

inline MapRun map_run(Output& out, const ExperimentConfig& c, const std::string& prefix) {
  MapRun m;
  m.irf = pipeline::measure_irf(c, kIrfCoincidences);
  out.text(prefix + "irf.csv", io::histogram_csv(m.irf));
  m.cal = pipeline::calibrate(c, 0.5).calibration;
  m.cube = pipeline::acquire(c);
  out.cube(prefix + "cube", m.cube, m.cal);
  m.map = pipeline::map(c, m.cube, m.cal);
  out.text(prefix + "map.csv", io::map_csv(m.map));
  m.irf_coarse = tcspc::rebin(m.irf, c.analysis.map_time_rebin);
  return m;
}

inline Json calibration_json(const twins::Calibration& cal) {
  return {{"delay_per_um", cal.delay_per_um},
          {"x_zero_um", cal.x_zero_um},
          {"fringe_period_um", cal.fringe_period_um},
          {"fringes", cal.fringes},
          {"snr", cal.snr}};
}

// Decay at `nm` (band `width_nm`) refitted against the coarse IRF.
inline Json slice_fit(Output& out, const MapRun& m, double nm, double width_nm, const std::string& name,
                      const fit::FitOptions& opt) {
  const auto prof = fit::slice_map(m.map, fit::SliceAxis::wavelength, nm, width_nm);
  const auto h = fit::profile_histogram(prof);
  out.text(name + ".csv", io::histogram_csv(h));
  auto rep = fit_and_report(out, name + "_fit.json", h, m.irf_coarse, "irf.csv rebinned to the map axis", 1, opt);
  rep["slice_nm"] = nm;
  rep["slice_width_nm"] = width_nm;
  return rep;
}

// Spectrum integrated over [peak - 1 ns, peak + span].
inline fit::Profile integrated_spectrum(const MapRun& m, double span_ps) {
  const double t_peak = tcspc::peak_time_ps(m.irf, 2);
  const double lo = std::max(m.map.time_ps.front(), t_peak - 1000.0);
  const double hi = std::min(m.map.time_ps.back(), t_peak + span_ps);
  return fit::slice_map(m.map, fit::SliceAxis::time, 0.5 * (lo + hi), hi - lo);
}

inline double nearest_peak(const std::vector<double>& peaks, double nominal, double tol) {
  double best = nominal, d = tol;
  for (const double p : peaks)
    if (std::abs(p - nominal) <= d) {
      d = std::abs(p - nominal);
      best = p;
    }
  return best;
}

inline Json two_dyes(Output& out, std::uint64_t seed, Json& config) {
  const auto dye_800cw = species(1.0, 1.51, 810.0, 40.0, 0.11);
  const auto dye_ir143 = species(1.0, 0.79, 900.0, 60.0, 0.11);
  Json res, cfgs;

  // Single dyes: 30 s each, mpd on both arms.
  auto fast = base(derive_seed(seed, 0xD1), "mpd");
  const auto irf_fast = pipeline::measure_irf(fast, kIrfCoincidences);
  out.text("irf_mpd_mpd.csv", io::histogram_csv(irf_fast));
  res["irf_mpd_mpd"] = irf_summary(irf_fast);
  const std::array<std::pair<std::string, EmitterSpecies>, 2> dyes{{{"800cw", dye_800cw}, {"ir143", dye_ir143}}};
  for (std::size_t i = 0; i < dyes.size(); ++i) {
    auto c = base(derive_seed(seed, 0xD2, i), "mpd");
    c.sample = SampleModel{{dyes[i].second}, 0.5};
    c.run.topology = sim::Topology::fluorescence;
    c.run.duration_s = 30.0;
    cfgs["dye_" + dyes[i].first] = config_echo(c);
    const auto s = pipeline::simulate(c);
    const auto h = pipeline::histogram(c, s);
    out.text("dye_" + dyes[i].first + ".csv", io::histogram_csv(h));
    auto rep = fit_and_report(out, "dye_" + dyes[i].first + "_fit.json", h, irf_fast, "irf_mpd_mpd.csv", 1,
                              pipeline::fit_options(c));
    rep["generator_lifetime_ns"] = dyes[i].second.lifetime_ns;
    rep["counts"] = h.total();
    res["dye_" + dyes[i].first] = rep;
  }

  // Mixture 1:2 through the interferometer; excelitas on the signal arm.
  auto mix = base(derive_seed(seed, 0xD3), "excelitas");
  auto w2 = dye_ir143;
  w2.weight = 2.0;
  mix.sample = SampleModel{{dye_800cw, w2}, 0.5};
  mix.run.topology = sim::Topology::fluorescence;
  mix.twins = TwinsConfig{};
  mix.twins->scan.per_position_duration_s = 10.0;
  cfgs["mixture"] = config_echo(mix);
  const auto m = map_run(out, mix, "mixture_");
  res["mixture_calibration"] = calibration_json(m.cal);
  res["irf_mpd_excelitas"] = irf_summary(m.irf);
  res["mixture_counts"] = m.cube.integrated_histogram().total();

  const auto spec = integrated_spectrum(m, 8000.0);
  out.text("mixture_spectrum.csv", io::profile_csv(spec));
  const auto peaks = pipeline::spectral_peaks_nm(spec, 750.0, 1000.0);
  res["mixture_peaks_nm"] = peaks;

  const auto opt = pipeline::fit_options(mix);
  const double p1 = nearest_peak(peaks, 810.0, 25.0), p2 = nearest_peak(peaks, 900.0, 25.0);
  res["slice_810"] = slice_fit(out, m, p1, 20.0, "mixture_decay_810", opt);
  res["slice_810"]["generator_lifetime_ns"] = 1.51;
  res["slice_900"] = slice_fit(out, m, p2, 20.0, "mixture_decay_900", opt);
  res["slice_900"]["generator_lifetime_ns"] = 0.79;

  const double t_peak = tcspc::peak_time_ps(m.irf, 2);
  Json cents = Json::object();
  for (const double dt : {500.0, 2000.0}) {
    const auto sp = fit::slice_map(m.map, fit::SliceAxis::time, t_peak + dt, 200.0);
    const std::string key = dt < 1000.0 ? "0.5ns" : "2ns";
    out.text("mixture_spectrum_" + key + ".csv", io::profile_csv(sp));
    cents[key] = pipeline::spectral_centroid_nm(sp, 750.0, 1000.0);
  }
  res["centroid_nm"] = cents;
  res["irf_peak_ps"] = t_peak;
  config = cfgs;
  return res;
}

// TWINS map of one membrane or LH2 sample, with the wavelength-integrated
// decay fitted against the IRF.
inline Json light_harvesting(Output& out, std::uint64_t seed, Json& config, std::vector<EmitterSpecies> sp,
                             std::optional<double> slice_nm) {
  auto c = base(seed, "excelitas");
  c.sample = SampleModel{std::move(sp), 0.5};
  c.run.topology = sim::Topology::fluorescence;
  c.twins = TwinsConfig{};
  c.twins->scan.per_position_duration_s = 5.0;
  config = config_echo(c);
  const auto m = map_run(out, c, "");
  Json res;
  res["calibration"] = calibration_json(m.cal);
  res["irf"] = irf_summary(m.irf);

  const auto integrated = m.cube.integrated_histogram();
  out.text("integrated_decay.csv", io::histogram_csv(integrated));
  res["integrated_fit"] =
      fit_and_report(out, "integrated_fit.json", integrated, m.irf, "irf.csv", 1, pipeline::fit_options(c));
  res["integrated_fit"]["generator_lifetime_ns"] = c.sample->species.front().lifetime_ns;
  res["counts"] = integrated.total();

  const auto spec = integrated_spectrum(m, 3000.0 + 5000.0 * c.sample->species.front().lifetime_ns);
  out.text("spectrum.csv", io::profile_csv(spec));
  res["spectrum_centroid_nm"] = pipeline::spectral_centroid_nm(spec, 750.0, 1000.0);
  res["spectrum_peaks_nm"] = pipeline::spectral_peaks_nm(spec, 750.0, 1000.0);
  if (slice_nm) {
    res["slice"] = slice_fit(out, m, *slice_nm, 20.0, "decay_" + io::fmt(static_cast<int>(*slice_nm)),
                             pipeline::fit_options(c));
    res["slice"]["generator_lifetime_ns"] = c.sample->species.front().lifetime_ns;
  }
  return res;
}

inline Json integration_sweep(Output& out, std::uint64_t seed, Json& config) {
  const double tau = 1.14;
  auto irf_cfg = base(derive_seed(seed, 0x5F), "mpd");
  const auto irf = pipeline::measure_irf(irf_cfg, kIrfCoincidences);
  out.text("irf.csv", io::histogram_csv(irf));
  Json res, cfgs;
  res["irf"] = irf_summary(irf);
  Json runs = Json::array();
  const std::array<double, 4> durations{50.0, 10.0, 2.0, 0.6};
  for (std::size_t i = 0; i < durations.size(); ++i) {
    auto c = base(derive_seed(seed, 0x5E, i), "mpd");
    c.sample = SampleModel{{species(1.0, tau, 860.0, 35.0, lh_quantum_yield(tau))}, 0.5};
    c.run.topology = sim::Topology::fluorescence;
    c.run.duration_s = durations[i];
    const std::string name = "decay_" + io::fmt(durations[i]) + "s";
    cfgs[name] = config_echo(c);
    const auto s = pipeline::simulate(c);
    const auto h = pipeline::histogram(c, s);
    out.text(name + ".csv", io::histogram_csv(h));
    auto rep = fit_and_report(out, name + "_fit.json", h, irf, "irf.csv", 1, pipeline::fit_options(c));
    rep["duration_s"] = durations[i];
    rep["counts"] = h.total();
    rep["count_rate_hz"] = h.total() / durations[i];
    rep["generator_lifetime_ns"] = tau;
    runs.push_back(rep);
  }
  res["runs"] = runs;
  config = cfgs;
  return res;
}

}  // namespace detail

// Runs preset `name`, writing into `out_dir`. Returns the summary that is
// also stored in summary.json and in the manifest.
inline Json run_preset(std::string_view name, std::uint64_t seed, const fs::path& out_dir) {
  if (!is_preset(name)) {
    std::string known;
    for (const auto& p : kPresets) known += (known.empty() ? "" : ", ") + std::string(p.name);
    throw ConfigError("preset: unknown name '" + std::string(name) + "' (known: " + known + ")");
  }
  detail::Output out(out_dir);
  Json config;
  Json summary;
  if (name == "fig2b-tuning") summary = detail::tuning(out, seed, config);
  else if (name == "fig2c-g2") summary = detail::g2(out, seed, config);
  else if (name == "fig2d-irf") summary = detail::irf(out, seed, config);
  else if (name == "fig3-two-dyes") summary = detail::two_dyes(out, seed, config);
  else if (name == "fig4-lh2")
    summary = detail::light_harvesting(out, seed, config,
                                       {detail::species(1.0, 1.13, 860.0, 35.0, detail::lh_quantum_yield(1.13))},
                                       860.0);
  else if (name == "fig4-membrane-open")
    summary = detail::light_harvesting(
        out, seed, config,
        {detail::species(1.0, 0.101, 860.0, 35.0, detail::lh_quantum_yield(0.101)),
         detail::species(0.2, 0.101, 885.0, 40.0, detail::lh_quantum_yield(0.101))},
        std::nullopt);
  else if (name == "fig4-membrane-closed")
    summary = detail::light_harvesting(
        out, seed, config,
        {detail::species(1.0, 0.248, 860.0, 35.0, detail::lh_quantum_yield(0.248)),
         detail::species(1.5, 0.248, 885.0, 40.0, detail::lh_quantum_yield(0.248))},
        std::nullopt);
  else summary = detail::integration_sweep(out, seed, config);

  summary = Json{{"preset", name}, {"seed", seed}, {"results", summary}};
  out.json("summary.json", summary);
  io::write_manifest(out.dir(), "preset " + std::string(name), config, seed, out.files(), summary);
  return summary;
}

}  // namespace epps::presets
