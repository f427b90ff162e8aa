// epps command-line driver. Exit status: 0 success, 1 runtime error,
// 2 configuration or usage error.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "epps/config.hpp"
#include "epps/error.hpp"
#include "epps/fit.hpp"
#include "epps/io.hpp"
#include "epps/pipeline.hpp"
#include "epps/presets.hpp"

namespace fs = std::filesystem;
using namespace epps;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

ExperimentConfig read_config(const std::string& path) {
  return load_config(path.empty() ? std::string() : io::read_text(path));
}

struct Common {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Common& c, bool with_config = true) {
  if (with_config) sub->add_option("--config", c.config, "experiment configuration (JSON); defaults when absent");
  sub->add_option("--out", c.out, "output directory")->capture_default_str();
}

ExperimentConfig configured(const Common& c) {
  auto cfg = read_config(c.config);
  if (c.seed) cfg.run.seed = *c.seed;
  return cfg;
}

void finish(const fs::path& dir, const std::string& command, const Json& config, std::uint64_t seed,
            const std::vector<fs::path>& files, const Json& summary) {
  io::write_manifest(dir, command, config, seed, files, summary);
  std::cout << summary.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"epps: heralded-photon fluorescence lifetime and spectrum simulator"};
  app.require_subcommand(1);

  // simulate
  Common sim_opt;
  auto* simulate = app.add_subcommand("simulate", "simulate an event stream from a configuration");
  add_common(simulate, sim_opt);
  simulate->add_option("--seed", sim_opt.seed, "override run.seed");

  // histogram
  Common hist_opt;
  std::string hist_events;
  auto* histogram = app.add_subcommand("histogram", "start-stop histogram of an event file");
  add_common(histogram, hist_opt);
  histogram->add_option("--events", hist_events, "event file (.epps)")->required();

  // g2
  Common g2_opt;
  std::string g2_events;
  auto* g2 = app.add_subcommand("g2", "heralded g2 of an HBT event file");
  add_common(g2, g2_opt);
  g2->add_option("--events", g2_events, "event file from an hbt run")->required();

  // irf
  Common irf_opt;
  double irf_coinc = presets::kIrfCoincidences;
  auto* irf = app.add_subcommand("irf", "simulate and histogram an IRF run");
  add_common(irf, irf_opt);
  irf->add_option("--seed", irf_opt.seed, "override run.seed");
  irf->add_option("--coincidences", irf_coinc, "expected herald-signal coincidences")->capture_default_str();

  // ft-map
  Common map_opt;
  std::string map_cube;
  double calib_s = 0.5;
  auto* ftmap = app.add_subcommand("ft-map", "acquire (or load) an interferogram cube and reconstruct the map");
  add_common(ftmap, map_opt);
  ftmap->add_option("--seed", map_opt.seed, "override run.seed");
  ftmap->add_option("--cube", map_cube, "existing cube directory with a stored calibration");
  ftmap->add_option("--calibration-seconds", calib_s, "per-position time of the reference scan")
      ->capture_default_str();

  // fit
  Common fit_opt;
  std::string fit_hist, fit_irf;
  std::size_t fit_n = 1;
  std::uint64_t fit_seed = 0;
  std::size_t fit_starts = 4;
  auto* fitc = app.add_subcommand("fit", "IRF-reconvolution lifetime fit of a histogram CSV");
  add_common(fitc, fit_opt, false);
  fitc->add_option("--hist", fit_hist, "histogram CSV (bin_left_ps,counts)")->required();
  fitc->add_option("--irf", fit_irf, "IRF histogram CSV on the same bin axis")->required();
  fitc->add_option("--n", fit_n, "number of exponential components")->capture_default_str();
  fitc->add_option("--seed", fit_seed, "multistart seed")->capture_default_str();
  fitc->add_option("--starts", fit_starts, "multistart initializations")->capture_default_str();

  // tuning-curve
  Common tc_opt;
  double tmin = 20.0, tmax = 200.0, tstep = 1.0;
  auto* tuning = app.add_subcommand("tuning-curve", "phase-matched signal/idler versus crystal temperature");
  add_common(tuning, tc_opt);
  tuning->add_option("--tmin", tmin, "first temperature (C)")->capture_default_str();
  tuning->add_option("--tmax", tmax, "last temperature (C)")->capture_default_str();
  tuning->add_option("--tstep", tstep, "temperature step (C)")->capture_default_str();

  // preset
  Common pre_opt;
  std::string pre_name;
  std::uint64_t pre_seed = 1;
  auto* preset = app.add_subcommand("preset", "run a baked experiment");
  add_common(preset, pre_opt, false);
  std::string names;
  for (const auto& p : presets::kPresets) names += "\n  " + std::string(p.name) + ": " + std::string(p.description);
  preset->add_option("name", pre_name, "preset name:" + names)->required();
  preset->add_option("--seed", pre_seed, "run seed")->capture_default_str();

  // verify
  std::string verify_dir;
  auto* verify = app.add_subcommand("verify", "re-hash the artifacts listed in a manifest");
  verify->add_option("dir", verify_dir, "output directory containing manifest.json")->required();

  // validate
  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "check a configuration and print it fully defaulted");
  validate->add_option("config", validate_path, "configuration file (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*simulate) {
      const auto cfg = configured(sim_opt);
      const fs::path dir = sim_opt.out;
      const auto s = pipeline::simulate(cfg);
      const auto cj = to_json(cfg);
      fs::create_directories(dir);
      write_event_file(dir / "events.epps", s);
      io::write_text(dir / "events.json", io::event_sidecar(s, cj).dump(2) + "\n");
      Json summary = {{"events", s.events.size()},
                      {"duration_ps", s.duration_ps},
                      {"channel_count", s.channel_count},
                      {"empty_warning", s.empty_warning}};
      if (s.empty_warning) std::cerr << "warning: no photon sources configured; the stream is empty\n";
      finish(dir, "simulate", cj, cfg.run.seed, {"events.epps", "events.json"}, summary);
    } else if (*histogram) {
      const auto cfg = configured(hist_opt);
      const fs::path dir = hist_opt.out;
      const auto s = io::load_events(hist_events);
      const auto h = pipeline::histogram(cfg, s);
      io::write_text(dir / "histogram.csv", io::histogram_csv(h));
      Json summary = {{"n_starts", h.n_starts}, {"counts", h.total()}, {"empty", h.empty}};
      if (h.total() > 0) {
        summary["fwhm_ps"] = tcspc::fwhm_ps(h, 2);
        summary["peak_ps"] = tcspc::peak_time_ps(h, 2);
      }
      finish(dir, "histogram", to_json(cfg), cfg.run.seed, {"histogram.csv"}, summary);
    } else if (*g2) {
      const auto cfg = configured(g2_opt);
      const fs::path dir = g2_opt.out;
      const auto s = io::load_events(g2_events);
      const auto g = pipeline::g2(cfg, s);
      io::write_text(dir / "g2.csv", io::g2_csv(g));
      std::size_t zero = 0;
      for (std::size_t k = 0; k < g.delay_ps.size(); ++k)
        if (g.delay_ps[k] == 0) zero = k;
      Json summary = {{"n_herald", g.n_herald},
                      {"normalization", g.normalization},
                      {"g2_zero", g.g2[zero]},
                      {"g2_zero_err", g.err[zero]}};
      finish(dir, "g2", to_json(cfg), cfg.run.seed, {"g2.csv"}, summary);
    } else if (*irf) {
      auto cfg = configured(irf_opt);
      const fs::path dir = irf_opt.out;
      cfg.run.duration_s = pipeline::irf_duration_s(cfg, irf_coinc);
      EventStream s;
      const auto h = pipeline::measure_irf(cfg, irf_coinc, &s);
      const auto cj = to_json(cfg);
      fs::create_directories(dir);
      write_event_file(dir / "irf.epps", s);
      io::write_text(dir / "irf.json", io::event_sidecar(s, cj).dump(2) + "\n");
      io::write_text(dir / "irf.csv", io::histogram_csv(h));
      Json summary = {{"coincidences", h.total()},
                      {"fwhm_ps", tcspc::fwhm_ps(h, 2)},
                      {"peak_ps", tcspc::peak_time_ps(h, 2)},
                      {"expected_fwhm_ps", std::hypot(cfg.herald.model.jitter_fwhm_ps, cfg.signal.model.jitter_fwhm_ps)}};
      finish(dir, "irf", cj, cfg.run.seed, {"irf.epps", "irf.json", "irf.csv"}, summary);
    } else if (*ftmap) {
      const auto cfg = configured(map_opt);
      const fs::path dir = map_opt.out;
      twins::InterferogramCube cube;
      twins::Calibration cal;
      std::vector<fs::path> files;
      if (!map_cube.empty()) {
        cube = io::read_cube(map_cube);
        const auto j = Json::parse(io::read_text(fs::path(map_cube) / "cube.json"));
        if (j.at("calibration").is_null()) throw ConfigError("ft-map: cube.json has no calibration");
        const auto& c = j["calibration"];
        cal = {c.at("delay_per_um").get<double>(), c.at("x_zero_um").get<double>(),
               c.at("fringe_period_um").get<double>(), c.at("fringes").get<double>(), c.at("snr").get<double>()};
      } else {
        if (!cfg.twins) throw ConfigError("twins: ft-map needs a twins section in the configuration");
        cal = pipeline::calibrate(cfg, calib_s).calibration;
        cube = pipeline::acquire(cfg);
        for (const auto& f : io::write_cube(dir / "cube", cube, cal)) files.push_back(fs::path("cube") / f);
      }
      const auto m = pipeline::map(cfg, cube, cal);
      io::write_text(dir / "map.csv", io::map_csv(m));
      files.emplace_back("map.csv");
      Json summary = {{"positions", cube.positions_um.size()},
                      {"wavelengths", m.wavelength_nm.size()},
                      {"time_bins", m.time_ps.size()},
                      {"fft_size", m.fft_size},
                      {"delay_per_um", cal.delay_per_um},
                      {"x_zero_um", cal.x_zero_um}};
      finish(dir, "ft-map", to_json(cfg), cfg.run.seed, files, summary);
    } else if (*fitc) {
      const fs::path dir = fit_opt.out;
      const auto h = io::read_histogram_csv(fit_hist);
      const auto irf_h = io::read_histogram_csv(fit_irf);
      fit::FitOptions o;
      o.seed = fit_seed;
      o.n_starts = fit_starts;
      const auto r = fit::fit_decay(h, irf_h, fit_n, o);
      const auto rep = io::fit_report(r, h, fs::path(fit_irf).filename().string());
      io::write_text(dir / "fit.json", rep.dump(2) + "\n");
      const Json cj = {{"hist", fit_hist}, {"irf", fit_irf}, {"n", fit_n}, {"starts", fit_starts}};
      finish(dir, "fit", cj, fit_seed, {"fit.json"}, rep);
    } else if (*tuning) {
      const auto cfg = configured(tc_opt);
      const fs::path dir = tc_opt.out;
      if (!(tstep > 0.0) || !(tmax >= tmin)) throw ConfigError("tuning-curve: need tstep > 0 and tmax >= tmin");
      std::vector<double> temps;
      for (double t = tmin; t <= tmax + 1e-9 * tstep; t += tstep) temps.push_back(t);
      const auto pts = spdc::tuning_curve(cfg.source.pump, cfg.source.crystal, temps);
      io::write_text(dir / "tuning.csv", io::tuning_csv(pts));
      std::size_t matched = 0;
      for (const auto& p : pts) matched += p.phase_matched();
      Json summary = {{"points", pts.size()}, {"phase_matched", matched}};
      const Json cj = {{"source", to_json(cfg)["source"]}, {"tmin", tmin}, {"tmax", tmax}, {"tstep", tstep}};
      finish(dir, "tuning-curve", cj, cfg.run.seed, {"tuning.csv"}, summary);
    } else if (*preset) {
      const auto summary = presets::run_preset(pre_name, pre_seed, pre_opt.out);
      std::cout << summary.dump(2) << "\n";
    } else if (*verify) {
      const auto problems = io::verify_manifest(verify_dir);
      if (!problems.empty()) {
        for (const auto& p : problems) std::cerr << "verify: " << p << "\n";
        return kExitRuntime;
      }
      std::cout << "verify: all artifacts match\n";
    } else if (*validate) {
      const auto r = validate_config(io::read_text(validate_path));
      if (!r.config) {
        for (const auto& v : r.violations) std::cerr << v << "\n";
        return kExitConfig;
      }
      std::cout << to_json(*r.config).dump(2) << "\n";
    }
  } catch (const ConfigError& e) {
    for (const auto& v : e.violations()) std::cerr << "config error: " << v << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return EXIT_SUCCESS;
}
