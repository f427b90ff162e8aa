#pragma once

// File formats: CSV tables, event-file sidecars, interferogram cube
// directories and run manifests with SHA-256 artifact hashes.

#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "epps/config.hpp"
#include "epps/error.hpp"
#include "epps/events.hpp"
#include "epps/fit.hpp"
#include "epps/spdc.hpp"
#include "epps/tcspc.hpp"
#include "epps/twins.hpp"

namespace epps::io {

namespace fs = std::filesystem;

// Shortest representation that round-trips; "nan" for NaN.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::array<char, 32> buf{};
  const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return {buf.data(), r.ptr};
}

template <class Int>
  requires std::is_integral_v<Int>
std::string fmt(Int v) {
  std::array<char, 24> buf{};
  const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return {buf.data(), r.ptr};
}

inline std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw Error("io: cannot open " + p.string());
  return {std::istreambuf_iterator<char>(f), {}};
}

inline void write_text(const fs::path& p, std::string_view text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error("io: cannot open " + p.string() + " for writing");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw Error("io: write failed for " + p.string());
}

inline std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
    throw Error("io: SHA-256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xf]);
  }
  return out;
}

inline std::string sha256_file(const fs::path& p) { return sha256_hex(read_text(p)); }

// ---- CSV -------------------------------------------------------------------

namespace detail {
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text, std::string_view header,
                                                       const std::string& what) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line != header) throw Error("io: " + what + ": expected header '" + std::string(header) + "'");
      continue;
    }
    std::vector<std::string> cells;
    std::size_t pos = 0;
    for (;;) {
      const auto comma = line.find(',', pos);
      cells.push_back(line.substr(pos, comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    rows.push_back(std::move(cells));
  }
  if (first) throw Error("io: " + what + ": empty file");
  return rows;
}

inline double to_double(const std::string& s, const std::string& what) {
  if (s == "nan") return std::nan("");
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw Error("io: " + what + ": cannot parse number '" + s + "'");
  return v;
}
}  // namespace detail

template <class Count>
std::string histogram_csv(const tcspc::BasicHistogram<Count>& h) {
  std::string out = "bin_left_ps,counts\n";
  for (std::size_t i = 0; i < h.size(); ++i) {
    out += fmt(h.bin_left_ps(i));
    out += ',';
    out += fmt(h.counts[i]);
    out += '\n';
  }
  return out;
}

// Histogram from `bin_left_ps,counts`. Counts may be non-integer (model or
// map-slice data). Bins must be uniform integer picoseconds.
inline tcspc::BasicHistogram<double> parse_histogram_csv(std::string_view text, const std::string& what) {
  const auto rows = detail::parse_csv(text, "bin_left_ps,counts", what);
  if (rows.size() < 2) throw Error("io: " + what + ": need at least two bins");
  tcspc::BasicHistogram<double> h;
  std::vector<double> left;
  for (const auto& r : rows) {
    if (r.size() != 2) throw Error("io: " + what + ": expected 2 columns");
    left.push_back(detail::to_double(r[0], what));
    const double c = detail::to_double(r[1], what);
    if (!(c >= 0.0)) throw Error("io: " + what + ": counts must be >= 0");
    h.counts.push_back(c);
  }
  h.t0_ps = std::llround(left[0]);
  h.bin_width_ps = std::llround(left[1] - left[0]);
  if (h.bin_width_ps <= 0) throw Error("io: " + what + ": bins must increase");
  for (std::size_t i = 0; i < left.size(); ++i)
    if (std::llround(left[i]) != h.bin_left_ps(i)) throw Error("io: " + what + ": bins are not uniform");
  return h;
}

inline tcspc::BasicHistogram<double> read_histogram_csv(const fs::path& p) {
  return parse_histogram_csv(read_text(p), p.string());
}

inline std::string g2_csv(const tcspc::G2Curve& g) {
  std::string out = "delay_ps,g2,err\n";
  for (std::size_t i = 0; i < g.delay_ps.size(); ++i)
    out += fmt(g.delay_ps[i]) + "," + fmt(g.g2[i]) + "," + fmt(g.err[i]) + "\n";
  return out;
}

inline std::string map_csv(const twins::TimeFrequencyMap& m) {
  std::string out = "wavelength_nm,time_ps,intensity\n";
  for (std::size_t l = 0; l < m.wavelength_nm.size(); ++l)
    for (std::size_t t = 0; t < m.time_ps.size(); ++t)
      out += fmt(m.wavelength_nm[l]) + "," + fmt(m.time_ps[t]) + "," + fmt(m.at(l, t)) + "\n";
  return out;
}

inline std::string tuning_csv(const std::vector<spdc::TuningPoint>& pts) {
  std::string out = "T_C,lambda_signal_nm,lambda_idler_nm\n";
  for (const auto& p : pts)
    out += fmt(p.temperature_C) + "," + fmt(p.signal_nm.value_or(std::nan(""))) + "," +
           fmt(p.idler_nm.value_or(std::nan(""))) + "\n";
  return out;
}

inline std::string profile_csv(const fit::Profile& p) {
  std::string out = p.cut == fit::SliceAxis::wavelength ? "time_ps,intensity\n" : "wavelength_nm,intensity\n";
  for (std::size_t i = 0; i < p.axis.size(); ++i) out += fmt(p.axis[i]) + "," + fmt(p.values[i]) + "\n";
  return out;
}

// ---- events ----------------------------------------------------------------

inline Json event_sidecar(const EventStream& s, const Json& config) {
  return {{"format", "EPPS binary event file"},
          {"version", kEventFileVersion},
          {"channel_count", s.channel_count},
          {"n_events", s.events.size()},
          {"duration_ps", s.duration_ps},
          {"empty_warning", s.empty_warning},
          {"config", config}};
}

inline fs::path sidecar_path(const fs::path& events) {
  fs::path p = events;
  p.replace_extension(".json");
  return p;
}

// Reads an event file; the duration comes from the sidecar when present.
inline EventStream load_events(const fs::path& p) {
  auto s = read_event_file(p);
  const auto side = sidecar_path(p);
  if (fs::exists(side)) {
    const auto j = Json::parse(read_text(side));
    if (j.contains("duration_ps")) s.duration_ps = j["duration_ps"].get<std::int64_t>();
    if (j.contains("empty_warning")) s.empty_warning = j["empty_warning"].get<bool>();
  }
  return s;
}

// ---- cubes -----------------------------------------------------------------

inline std::string position_file_name(std::size_t i) {
  std::string n = fmt(i);
  return "position_" + std::string(n.size() < 4 ? 4 - n.size() : 0, '0') + n + ".csv";
}

inline Json twins_json(const twins::TwinsSpec& t) {
  return {{"delay_per_um", t.delay_per_um},   {"position_min_um", t.position_min_um},
          {"position_max_um", t.position_max_um}, {"x_zero_um", t.x_zero_um},
          {"visibility", t.visibility},        {"insertion_loss", t.insertion_loss}};
}

// Writes one histogram CSV per position plus cube.json. Returns the files
// written, relative to `dir`.
inline std::vector<fs::path> write_cube(const fs::path& dir, const twins::InterferogramCube& cube,
                                        const std::optional<twins::Calibration>& cal = std::nullopt) {
  cube.check();
  fs::create_directories(dir);
  std::vector<fs::path> files;
  Json pos = Json::array();
  for (std::size_t i = 0; i < cube.positions_um.size(); ++i) {
    const auto name = position_file_name(i);
    write_text(dir / name, histogram_csv(cube.histograms[i]));
    files.emplace_back(name);
    pos.push_back({{"position_um", cube.positions_um[i]},
                   {"file", name},
                   {"n_starts", cube.histograms[i].n_starts}});
  }
  Json j = {{"format", "EPPS interferogram cube"},
            {"version", 1},
            {"bin_width_ps", cube.bin_width_ps()},
            {"t0_ps", cube.histograms.front().t0_ps},
            {"n_bins", cube.n_bins()},
            {"positions", pos},
            {"twins", twins_json(cube.metadata.twins)},
            {"per_position_duration_s", cube.metadata.per_position_duration_s},
            {"seed", cube.metadata.seed},
            {"calibration", nullptr}};
  if (cal)
    j["calibration"] = {{"delay_per_um", cal->delay_per_um},
                        {"x_zero_um", cal->x_zero_um},
                        {"fringe_period_um", cal->fringe_period_um},
                        {"fringes", cal->fringes},
                        {"snr", cal->snr}};
  write_text(dir / "cube.json", j.dump(2) + "\n");
  files.emplace_back("cube.json");
  return files;
}

inline twins::InterferogramCube read_cube(const fs::path& dir) {
  const auto j = Json::parse(read_text(dir / "cube.json"));
  twins::InterferogramCube cube;
  const auto& t = j.at("twins");
  cube.metadata.twins = {t.at("delay_per_um").get<double>(), t.at("position_min_um").get<double>(),
                         t.at("position_max_um").get<double>(), t.at("x_zero_um").get<double>(),
                         t.at("visibility").get<double>(), t.at("insertion_loss").get<double>()};
  cube.metadata.per_position_duration_s = j.at("per_position_duration_s").get<double>();
  cube.metadata.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& p : j.at("positions")) {
    cube.positions_um.push_back(p.at("position_um").get<double>());
    const auto h = read_histogram_csv(dir / p.at("file").get<std::string>());
    tcspc::Histogram hist{h.bin_width_ps, h.t0_ps, {}, p.at("n_starts").get<std::uint64_t>(), false};
    for (const double c : h.counts) hist.counts.push_back(static_cast<std::uint64_t>(std::llround(c)));
    cube.histograms.push_back(std::move(hist));
  }
  cube.check();
  return cube;
}

// ---- fit report ------------------------------------------------------------

template <class Count>
Json fit_report(const fit::FitResult& r, const tcspc::BasicHistogram<Count>& hist, const std::string& irf_source) {
  Json comps = Json::array();
  const auto fr = r.amplitude_fractions();
  for (std::size_t k = 0; k < r.model.components.size(); ++k) {
    comps.push_back({{"lifetime_ns", r.model.components[k].lifetime_ns},
                     {"lifetime_err_ns", r.lifetime_error_ns(k)},
                     {"amplitude", r.model.components[k].amplitude},
                     {"amplitude_err", r.amplitude_error(k)},
                     {"amplitude_fraction", fr[k]}});
  }
  Json cov = Json::array();
  for (Eigen::Index i = 0; i < r.covariance.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < r.covariance.cols(); ++j) row.push_back(r.covariance(i, j));
    cov.push_back(row);
  }
  return {{"components", comps},
          {"background_per_bin", r.model.background},
          {"background_err", r.background_error()},
          {"t_shift_ps", r.model.t_shift_ps},
          {"reduced_chi2", r.reduced_chi2},
          {"deviance", r.deviance},
          {"n_bins_used", r.n_bins_used},
          {"fit_range",
           {{"first_bin", r.first_bin},
            {"last_bin", r.last_bin},
            {"start_ps", hist.bin_left_ps(r.first_bin)},
            {"end_ps", hist.bin_left_ps(r.last_bin) + hist.bin_width_ps}}},
          {"conventions",
           {{"fit_range", "from 2x IRF FWHM before the histogram peak to the last bin with >= 1 count"},
            {"background", "constant per-bin offset fitted jointly, constrained >= 0"},
            {"errors", "statistical only, from the observed information matrix"},
            {"objective", "Poisson deviance; reduced chi2 uses Pearson weights"}}},
          {"irf_source", irf_source},
          {"irf_fwhm_ps", r.irf_fwhm_ps},
          {"requested_components", r.requested_components},
          {"merged", r.merged},
          {"parameter_names", r.parameter_names},
          {"covariance", cov}};
}

// ---- manifest --------------------------------------------------------------

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::array<char, 32> buf{};
  std::strftime(buf.data(), buf.size(), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf.data();
}

// Hashes every artifact (paths relative to `dir`) and writes manifest.json.
// The creation time lives in its own field so the rest is reproducible.
inline Json write_manifest(const fs::path& dir, const std::string& command, const Json& config,
                           std::uint64_t seed, const std::vector<fs::path>& artifacts,
                           const Json& summary = nullptr) {
  Json arts = Json::array();
  for (const auto& a : artifacts) {
    const auto text = read_text(dir / a);
    arts.push_back({{"path", a.generic_string()}, {"sha256", sha256_hex(text)}, {"bytes", text.size()}});
  }
  Json m = {{"tool", "epps"},
            {"command", command},
            {"seed", seed},
            {"config", config},
            {"artifacts", arts},
            {"summary", summary},
            {"created_utc", utc_timestamp()}};
  write_text(dir / "manifest.json", m.dump(2) + "\n");
  return m;
}

// Problems found when re-hashing the artifacts listed in a manifest; empty
// when everything matches.
inline std::vector<std::string> verify_manifest(const fs::path& dir) {
  std::vector<std::string> problems;
  const auto m = Json::parse(read_text(dir / "manifest.json"));
  for (const auto& a : m.at("artifacts")) {
    const auto rel = a.at("path").get<std::string>();
    const auto p = dir / rel;
    if (!fs::exists(p)) {
      problems.push_back(rel + ": missing");
      continue;
    }
    if (sha256_file(p) != a.at("sha256").get<std::string>()) problems.push_back(rel + ": hash mismatch");
  }
  return problems;
}

}  // namespace epps::io
