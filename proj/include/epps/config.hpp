#pragma once

// Experiment configuration: one JSON document with explicit units in key
// names. Every field has a default, so an empty document is a valid
// configuration. Loading collects every violation (unknown keys, wrong types,
// out-of-range values, cross-field constraints) with its field path.

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "epps/detector.hpp"
#include "epps/error.hpp"
#include "epps/sample.hpp"
#include "epps/simulate.hpp"
#include "epps/spdc.hpp"
#include "epps/tcspc.hpp"
#include "epps/twins.hpp"

namespace epps {

using Json = nlohmann::ordered_json;
using sim::EmitterSpecies;
using sim::SampleModel;

struct DetectorConfig {
  std::string preset = "mpd";
  sim::DetectorModel model = sim::DetectorModel::mpd();
};

struct ScanConfig {
  double first_um = -1000.0;
  double step_um = 10.0;
  std::size_t count = 201;
  double per_position_duration_s = 1.0;

  std::vector<double> positions() const { return sim::scan_positions(first_um, step_um, count); }
};

struct TwinsConfig {
  twins::TwinsSpec spec;
  ScanConfig scan;
};

struct AnalysisConfig {
  std::int64_t bin_width_ps = 4;
  std::int64_t window_ps = 50'000;
  tcspc::StopMode stop_mode = tcspc::StopMode::first_stop;
  std::int64_t coincidence_window_ps = 2'000;
  std::int64_t g2_window_ps = 5'000;
  std::int64_t g2_max_delay_ps = 300'000;
  std::int64_t g2_step_ps = 5'000;
  std::size_t fit_components = 1;
  std::uint64_t fit_seed = 0;
  std::size_t fit_starts = 4;
  std::size_t fit_rebin = 1;
  twins::Apodization map_apodization = twins::Apodization::hann;
  bool map_dc_removal = true;
  std::size_t map_zero_pad_factor = 8;
  double map_wavelength_min_nm = 650.0;
  double map_wavelength_max_nm = 1100.0;
  std::size_t map_time_rebin = 25;
};

struct ExperimentConfig {
  sim::SourceModel source;
  std::optional<SampleModel> sample;
  DetectorConfig herald;
  DetectorConfig signal{"mpd", [] {
                          auto d = sim::DetectorModel::mpd();
                          d.cable_delay_ps = 5000.0;
                          return d;
                        }()};
  std::optional<TwinsConfig> twins;
  sim::RunConfig run;
  AnalysisConfig analysis;

  std::optional<twins::TwinsSpec> twins_spec() const {
    return twins ? std::optional<twins::TwinsSpec>(twins->spec) : std::nullopt;
  }
};

namespace detail {

// Reads members of one JSON object, recording type errors and unknown keys.
class ObjectReader {
 public:
  ObjectReader(const Json* obj, std::string path, std::vector<std::string>& errors)
      : obj_(obj), path_(std::move(path)), errors_(errors) {
    if (obj_ && !obj_->is_object()) {
      errors_.push_back(path_ + ": expected an object");
      obj_ = nullptr;
    }
  }

  std::string path(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  const Json* child(std::string_view key) {
    seen_.insert(std::string(key));
    if (!obj_) return nullptr;
    const auto it = obj_->find(std::string(key));
    if (it == obj_->end()) return nullptr;
    return &*it;
  }

  void number(std::string_view key, double& out) {
    if (const Json* v = child(key)) {
      if (v->is_number()) out = v->get<double>();
      else errors_.push_back(path(key) + ": expected a number");
    }
  }

  void optional_number(std::string_view key, std::optional<double>& out) {
    if (const Json* v = child(key)) {
      if (v->is_null()) out.reset();
      else if (v->is_number()) out = v->get<double>();
      else errors_.push_back(path(key) + ": expected a number or null");
    }
  }

  template <class Int>
  void integer(std::string_view key, Int& out) {
    if (const Json* v = child(key)) {
      if (!v->is_number_integer()) {
        errors_.push_back(path(key) + ": expected an integer");
      } else if (std::is_unsigned_v<Int> && v->is_number_integer() && !v->is_number_unsigned()) {
        errors_.push_back(path(key) + ": must be >= 0");
      } else {
        out = v->get<Int>();
      }
    }
  }

  void boolean(std::string_view key, bool& out) {
    if (const Json* v = child(key)) {
      if (v->is_boolean()) out = v->get<bool>();
      else errors_.push_back(path(key) + ": expected true or false");
    }
  }

  void string(std::string_view key, std::string& out) {
    if (const Json* v = child(key)) {
      if (v->is_string()) out = v->get<std::string>();
      else errors_.push_back(path(key) + ": expected a string");
    }
  }

  // Enum given as one of `names`; returns the index chosen, or nullopt.
  std::optional<std::size_t> choice(std::string_view key, std::initializer_list<std::string_view> names) {
    const Json* v = child(key);
    if (!v) return std::nullopt;
    std::string list;
    for (const auto n : names) list += (list.empty() ? "" : ", ") + std::string(n);
    if (!v->is_string()) {
      errors_.push_back(path(key) + ": expected one of " + list);
      return std::nullopt;
    }
    const auto s = v->get<std::string>();
    std::size_t i = 0;
    for (const auto n : names) {
      if (s == n) return i;
      ++i;
    }
    errors_.push_back(path(key) + ": '" + s + "' is not one of " + list);
    return std::nullopt;
  }

  void finish() {
    if (!obj_) return;
    for (const auto& [k, v] : obj_->items())
      if (!seen_.count(k)) errors_.push_back(path(k) + ": unknown key");
  }

 private:
  const Json* obj_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

inline void read_detector(const Json* j, const std::string& path, DetectorConfig& d,
                          std::vector<std::string>& err) {
  ObjectReader r(j, path, err);
  if (const auto i = r.choice("preset", {"mpd", "excelitas", "ideal"})) {
    static const char* names[] = {"mpd", "excelitas", "ideal"};
    d.preset = names[*i];
    const double cable = d.model.cable_delay_ps;
    d.model = sim::DetectorModel::preset(d.preset);
    d.model.cable_delay_ps = cable;
  }
  r.number("efficiency", d.model.efficiency);
  r.number("jitter_fwhm_ps", d.model.jitter_fwhm_ps);
  r.number("dead_time_ns", d.model.dead_time_ns);
  r.number("dark_rate_hz", d.model.dark_rate_hz);
  r.number("cable_delay_ps", d.model.cable_delay_ps);
  r.finish();
  for (auto& v : d.model.violations(path)) err.push_back(std::move(v));
}

inline void read_source(const Json* j, sim::SourceModel& s, std::vector<std::string>& err) {
  ObjectReader r(j, "source", err);
  r.number("pump_wavelength_nm", s.pump.wavelength_nm);
  r.number("pair_rate_hz", s.pump.pair_rate_hz);
  r.number("grid_min_nm", s.grid_min_nm);
  r.number("grid_step_nm", s.grid_step_nm);
  {
    ObjectReader c(r.child("crystal"), "source.crystal", err);
    c.number("poling_period_um", s.crystal.poling_period_um);
    c.number("length_mm", s.crystal.length_mm);
    c.number("temperature_C", s.crystal.temperature_C);
    c.string("sellmeier_id", s.crystal.sellmeier_id);
    c.finish();
  }
  if (const Json* f = r.child("herald_filter"); f && f->is_null()) {
    s.herald_filter.reset();
  } else if (f) {
    spdc::FilterSpec fs;
    ObjectReader c(f, "source.herald_filter", err);
    c.number("center_nm", fs.center_nm);
    c.number("fwhm_nm", fs.fwhm_nm);
    if (const auto i = c.choice("shape", {"gaussian", "tophat"}))
      fs.shape = *i == 0 ? spdc::FilterShape::gaussian : spdc::FilterShape::tophat;
    c.finish();
    s.herald_filter = fs;
  }
  r.finish();

  if (!(s.pump.wavelength_nm > 0.0)) err.push_back("source.pump_wavelength_nm: must be > 0");
  if (!(s.pump.pair_rate_hz >= 0.0)) err.push_back("source.pair_rate_hz: must be >= 0");
  if (!(s.grid_step_nm > 0.0)) err.push_back("source.grid_step_nm: must be > 0");
  if (!(s.grid_min_nm > s.pump.wavelength_nm && s.grid_min_nm < 2.0 * s.pump.wavelength_nm))
    err.push_back("source.grid_min_nm: must lie between the pump wavelength and twice the pump wavelength");
  if (!(s.crystal.poling_period_um > 0.0)) err.push_back("source.crystal.poling_period_um: must be > 0");
  if (!(s.crystal.length_mm > 0.0)) err.push_back("source.crystal.length_mm: must be > 0");
  try {
    const auto& t = spdc::sellmeier_table(s.crystal.sellmeier_id);
    if (!(s.crystal.temperature_C >= t.temperature_min_C && s.crystal.temperature_C <= t.temperature_max_C))
      err.push_back("source.crystal.temperature_C: must lie in [" + std::to_string(t.temperature_min_C) +
                    ", " + std::to_string(t.temperature_max_C) + "] for sellmeier set '" +
                    s.crystal.sellmeier_id + "'");
  } catch (const Error&) {
    err.push_back("source.crystal.sellmeier_id: unknown coefficient set '" + s.crystal.sellmeier_id + "'");
  }
  if (s.herald_filter && !(s.herald_filter->fwhm_nm > 0.0))
    err.push_back("source.herald_filter.fwhm_nm: must be > 0");
}

inline void read_sample(const Json* j, std::optional<SampleModel>& out, std::vector<std::string>& err) {
  if (!j || j->is_null()) {
    out.reset();
    return;
  }
  SampleModel s;
  s.species.clear();
  ObjectReader r(j, "sample", err);
  r.number("absorption_prob", s.absorption_prob);
  if (const Json* sp = r.child("species")) {
    if (!sp->is_array()) {
      err.push_back("sample.species: expected an array");
    } else {
      for (std::size_t i = 0; i < sp->size(); ++i) {
        EmitterSpecies e;
        ObjectReader c(&(*sp)[i], "sample.species[" + std::to_string(i) + "]", err);
        c.number("weight", e.weight);
        c.number("lifetime_ns", e.lifetime_ns);
        c.number("emission_center_nm", e.emission_center_nm);
        c.number("emission_fwhm_nm", e.emission_fwhm_nm);
        c.number("quantum_yield", e.quantum_yield);
        c.finish();
        s.species.push_back(e);
      }
    }
  }
  r.finish();
  for (auto& v : s.violations("sample")) err.push_back(std::move(v));
  out = std::move(s);
}

inline void read_twins(const Json* j, std::optional<TwinsConfig>& out, std::vector<std::string>& err) {
  if (!j || j->is_null()) {
    out.reset();
    return;
  }
  TwinsConfig t;
  ObjectReader r(j, "twins", err);
  r.number("delay_per_um", t.spec.delay_per_um);
  r.number("position_min_um", t.spec.position_min_um);
  r.number("position_max_um", t.spec.position_max_um);
  r.number("x_zero_um", t.spec.x_zero_um);
  r.number("visibility", t.spec.visibility);
  r.number("insertion_loss", t.spec.insertion_loss);
  {
    ObjectReader c(r.child("scan"), "twins.scan", err);
    c.number("first_um", t.scan.first_um);
    c.number("step_um", t.scan.step_um);
    c.integer("count", t.scan.count);
    c.number("per_position_duration_s", t.scan.per_position_duration_s);
    c.finish();
  }
  r.finish();
  for (auto& v : t.spec.violations("twins")) err.push_back(std::move(v));
  if (t.scan.count < 2) err.push_back("twins.scan.count: need at least 2 positions");
  if (!(t.scan.step_um > 0.0)) err.push_back("twins.scan.step_um: must be > 0");
  if (!(t.scan.per_position_duration_s > 0.0))
    err.push_back("twins.scan.per_position_duration_s: must be > 0");
  const double last = t.scan.first_um + t.scan.step_um * static_cast<double>(t.scan.count > 0 ? t.scan.count - 1 : 0);
  if (t.scan.first_um < t.spec.position_min_um || last > t.spec.position_max_um)
    err.push_back("twins.scan: positions [" + std::to_string(t.scan.first_um) + ", " + std::to_string(last) +
                  "] um leave the wedge range [" + std::to_string(t.spec.position_min_um) + ", " +
                  std::to_string(t.spec.position_max_um) + "] um");
  out = t;
}

inline void read_run(const Json* j, sim::RunConfig& run, std::vector<std::string>& err) {
  ObjectReader r(j, "run", err);
  r.number("duration_s", run.duration_s);
  r.integer("seed", run.seed);
  if (const auto i = r.choice("topology", {"irf", "hbt", "fluorescence"}))
    run.topology = static_cast<sim::Topology>(*i);
  r.optional_number("twins_position_um", run.twins_position_um);
  r.number("chunk_duration_s", run.chunk_duration_s);
  r.finish();
  if (!(run.duration_s > 0.0)) err.push_back("run.duration_s: must be > 0");
  if (!(run.chunk_duration_s > 0.0)) err.push_back("run.chunk_duration_s: must be > 0");
}

inline void read_analysis(const Json* j, AnalysisConfig& a, std::vector<std::string>& err) {
  ObjectReader r(j, "analysis", err);
  r.integer("bin_width_ps", a.bin_width_ps);
  r.integer("window_ps", a.window_ps);
  if (const auto i = r.choice("stop_mode", {"first_stop", "all_stops"}))
    a.stop_mode = *i == 0 ? tcspc::StopMode::first_stop : tcspc::StopMode::all_stops;
  r.integer("coincidence_window_ps", a.coincidence_window_ps);
  r.integer("g2_window_ps", a.g2_window_ps);
  r.integer("g2_max_delay_ps", a.g2_max_delay_ps);
  r.integer("g2_step_ps", a.g2_step_ps);
  r.integer("fit_components", a.fit_components);
  r.integer("fit_seed", a.fit_seed);
  r.integer("fit_starts", a.fit_starts);
  r.integer("fit_rebin", a.fit_rebin);
  if (const auto i = r.choice("map_apodization", {"none", "hann"}))
    a.map_apodization = *i == 0 ? twins::Apodization::none : twins::Apodization::hann;
  r.boolean("map_dc_removal", a.map_dc_removal);
  r.integer("map_zero_pad_factor", a.map_zero_pad_factor);
  r.number("map_wavelength_min_nm", a.map_wavelength_min_nm);
  r.number("map_wavelength_max_nm", a.map_wavelength_max_nm);
  r.integer("map_time_rebin", a.map_time_rebin);
  r.finish();

  if (a.bin_width_ps <= 0) err.push_back("analysis.bin_width_ps: must be > 0");
  else if (a.window_ps <= 0 || a.window_ps % a.bin_width_ps != 0)
    err.push_back("analysis.window_ps: must be a positive multiple of analysis.bin_width_ps");
  if (a.coincidence_window_ps <= 0) err.push_back("analysis.coincidence_window_ps: must be > 0");
  if (a.g2_window_ps <= 0) err.push_back("analysis.g2_window_ps: must be > 0");
  if (a.g2_step_ps <= 0) err.push_back("analysis.g2_step_ps: must be > 0");
  if (a.g2_max_delay_ps < 0) err.push_back("analysis.g2_max_delay_ps: must be >= 0");
  if (a.fit_components < 1) err.push_back("analysis.fit_components: must be >= 1");
  if (a.fit_starts < 1) err.push_back("analysis.fit_starts: must be >= 1");
  if (a.fit_rebin < 1) err.push_back("analysis.fit_rebin: must be >= 1");
  if (a.map_zero_pad_factor < 1) err.push_back("analysis.map_zero_pad_factor: must be >= 1");
  if (a.map_time_rebin < 1) err.push_back("analysis.map_time_rebin: must be >= 1");
  if (!(a.map_wavelength_max_nm > a.map_wavelength_min_nm && a.map_wavelength_min_nm > 0.0))
    err.push_back("analysis.map_wavelength_min_nm: must be > 0 and below map_wavelength_max_nm");
}

}  // namespace detail

struct ConfigResult {
  std::optional<ExperimentConfig> config;
  std::vector<std::string> violations;
};

// Parses and validates a configuration document. Returns either the fully
// defaulted configuration or every violation found.
inline ConfigResult validate_config(std::string_view text) {
  ConfigResult res;
  auto& err = res.violations;
  ExperimentConfig cfg;

  Json root = Json::object();
  if (text.find_first_not_of(" \t\r\n") != std::string_view::npos) {
    try {
      root = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      err.push_back(std::string("(document): not valid JSON: ") + e.what());
      return res;
    }
  }
  if (!root.is_object()) {
    err.push_back("(document): expected a JSON object");
    return res;
  }

  detail::ObjectReader r(&root, "", err);
  detail::read_source(r.child("source"), cfg.source, err);
  detail::read_sample(r.child("sample"), cfg.sample, err);
  {
    detail::ObjectReader d(r.child("detectors"), "detectors", err);
    detail::read_detector(d.child("herald"), "detectors.herald", cfg.herald, err);
    detail::read_detector(d.child("signal"), "detectors.signal", cfg.signal, err);
    d.finish();
  }
  detail::read_twins(r.child("twins"), cfg.twins, err);
  detail::read_run(r.child("run"), cfg.run, err);
  detail::read_analysis(r.child("analysis"), cfg.analysis, err);
  r.finish();

  // Cross-field constraints.
  if (cfg.run.topology == sim::Topology::fluorescence && !cfg.sample)
    err.push_back("sample: required for run.topology 'fluorescence'");
  if (cfg.run.topology != sim::Topology::fluorescence && cfg.sample)
    err.push_back(std::string("sample: not allowed for run.topology '") + sim::to_string(cfg.run.topology) + "'");
  if (cfg.run.twins_position_um) {
    if (!cfg.twins) {
      err.push_back("run.twins_position_um: requires a twins section");
    } else if (*cfg.run.twins_position_um < cfg.twins->spec.position_min_um ||
               *cfg.run.twins_position_um > cfg.twins->spec.position_max_um) {
      err.push_back("run.twins_position_um: outside the wedge range");
    }
  }

  // Nyquist needs a valid source spectrum and sample.
  if (cfg.twins && err.empty()) {
    try {
      const auto spectrum = cfg.source.signal_spectrum();
      const double shortest = sim::shortest_detected_nm(cfg.sample, spectrum);
      const double limit = cfg.twins->spec.nyquist_spacing_um(shortest);
      if (cfg.twins->scan.step_um > limit)
        err.push_back("twins.scan.step_um: spacing " + std::to_string(cfg.twins->scan.step_um) +
                      " um violates Nyquist for " + std::to_string(shortest) +
                      " nm; required spacing <= " + std::to_string(limit) + " um");
    } catch (const Error& e) {
      err.push_back(std::string("source: ") + e.what());
    }
  }

  if (err.empty()) res.config = std::move(cfg);
  return res;
}

inline ExperimentConfig load_config(std::string_view text) {
  auto r = validate_config(text);
  if (!r.config) throw ConfigError(std::move(r.violations));
  return std::move(*r.config);
}

// Full configuration as JSON, every default spelled out. Reloading the
// output yields the same configuration.
inline Json to_json(const ExperimentConfig& c) {
  Json j;
  const auto& s = c.source;
  j["source"] = {{"pump_wavelength_nm", s.pump.wavelength_nm},
                 {"pair_rate_hz", s.pump.pair_rate_hz},
                 {"crystal",
                  {{"poling_period_um", s.crystal.poling_period_um},
                   {"length_mm", s.crystal.length_mm},
                   {"temperature_C", s.crystal.temperature_C},
                   {"sellmeier_id", s.crystal.sellmeier_id}}},
                 {"herald_filter", nullptr},
                 {"grid_min_nm", s.grid_min_nm},
                 {"grid_step_nm", s.grid_step_nm}};
  if (s.herald_filter)
    j["source"]["herald_filter"] = {
        {"center_nm", s.herald_filter->center_nm},
        {"fwhm_nm", s.herald_filter->fwhm_nm},
        {"shape", s.herald_filter->shape == spdc::FilterShape::gaussian ? "gaussian" : "tophat"}};

  j["sample"] = nullptr;
  if (c.sample) {
    Json sp = Json::array();
    for (const auto& e : c.sample->species)
      sp.push_back({{"weight", e.weight},
                    {"lifetime_ns", e.lifetime_ns},
                    {"emission_center_nm", e.emission_center_nm},
                    {"emission_fwhm_nm", e.emission_fwhm_nm},
                    {"quantum_yield", e.quantum_yield}});
    j["sample"] = {{"absorption_prob", c.sample->absorption_prob}, {"species", sp}};
  }

  const auto det = [](const DetectorConfig& d) {
    return Json{{"preset", d.preset},
                {"efficiency", d.model.efficiency},
                {"jitter_fwhm_ps", d.model.jitter_fwhm_ps},
                {"dead_time_ns", d.model.dead_time_ns},
                {"dark_rate_hz", d.model.dark_rate_hz},
                {"cable_delay_ps", d.model.cable_delay_ps}};
  };
  j["detectors"] = {{"herald", det(c.herald)}, {"signal", det(c.signal)}};

  j["twins"] = nullptr;
  if (c.twins) {
    const auto& t = *c.twins;
    j["twins"] = {{"delay_per_um", t.spec.delay_per_um},
                  {"position_min_um", t.spec.position_min_um},
                  {"position_max_um", t.spec.position_max_um},
                  {"x_zero_um", t.spec.x_zero_um},
                  {"visibility", t.spec.visibility},
                  {"insertion_loss", t.spec.insertion_loss},
                  {"scan",
                   {{"first_um", t.scan.first_um},
                    {"step_um", t.scan.step_um},
                    {"count", t.scan.count},
                    {"per_position_duration_s", t.scan.per_position_duration_s}}}};
  }

  j["run"] = {{"duration_s", c.run.duration_s},
              {"seed", c.run.seed},
              {"topology", sim::to_string(c.run.topology)},
              {"twins_position_um", nullptr},
              {"chunk_duration_s", c.run.chunk_duration_s}};
  if (c.run.twins_position_um) j["run"]["twins_position_um"] = *c.run.twins_position_um;

  const auto& a = c.analysis;
  j["analysis"] = {{"bin_width_ps", a.bin_width_ps},
                   {"window_ps", a.window_ps},
                   {"stop_mode", a.stop_mode == tcspc::StopMode::first_stop ? "first_stop" : "all_stops"},
                   {"coincidence_window_ps", a.coincidence_window_ps},
                   {"g2_window_ps", a.g2_window_ps},
                   {"g2_max_delay_ps", a.g2_max_delay_ps},
                   {"g2_step_ps", a.g2_step_ps},
                   {"fit_components", a.fit_components},
                   {"fit_seed", a.fit_seed},
                   {"fit_starts", a.fit_starts},
                   {"fit_rebin", a.fit_rebin},
                   {"map_apodization", a.map_apodization == twins::Apodization::hann ? "hann" : "none"},
                   {"map_dc_removal", a.map_dc_removal},
                   {"map_zero_pad_factor", a.map_zero_pad_factor},
                   {"map_wavelength_min_nm", a.map_wavelength_min_nm},
                   {"map_wavelength_max_nm", a.map_wavelength_max_nm},
                   {"map_time_rebin", a.map_time_rebin}};
  return j;
}

}  // namespace epps
