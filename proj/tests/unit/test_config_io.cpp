#include <catch_amalgamated.hpp>

#include <algorithm>
#include <string>

#include "epps/config.hpp"
#include "epps/io.hpp"
#include "epps/pipeline.hpp"
#include "support.hpp"

using namespace epps;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

bool any_contains(const std::vector<std::string>& v, const std::string& needle) {
  return std::any_of(v.begin(), v.end(), [&](const auto& s) { return s.find(needle) != std::string::npos; });
}

}  // namespace

TEST_CASE("an empty document is a complete default configuration") {
  for (const char* text : {"", "{}", "  \n"}) {
    const auto c = load_config(text);
    CHECK(c.source.pump.wavelength_nm == 413.0);
    CHECK(c.source.pump.pair_rate_hz == 2e5);
    CHECK(c.source.crystal.temperature_C == 56.0);
    CHECK(c.herald.preset == "mpd");
    CHECK(c.signal.model.cable_delay_ps == 5000.0);
    CHECK(c.run.topology == sim::Topology::irf);
    CHECK(c.analysis.bin_width_ps == 4);
    CHECK(c.analysis.window_ps == 50'000);
    CHECK_FALSE(c.sample.has_value());
    CHECK_FALSE(c.twins.has_value());
  }
}

TEST_CASE("out-of-range detector efficiency names the field") {
  const auto r = validate_config(R"({"detectors": {"signal": {"efficiency": 1.2}}})");
  REQUIRE_FALSE(r.config);
  REQUIRE(r.violations.size() == 1);
  CHECK_THAT(r.violations[0], ContainsSubstring("detectors.signal.efficiency"));
  CHECK_THROWS_AS(load_config(R"({"detectors": {"signal": {"efficiency": 1.2}}})"), ConfigError);
}

TEST_CASE("unknown keys and wrong types are rejected with their paths") {
  const auto r = validate_config(R"({"sourc": {}, "run": {"seed": -3, "duraton_s": 1},
                                     "analysis": {"bin_width_ps": 2.5, "stop_mode": "last"}})");
  REQUIRE_FALSE(r.config);
  CHECK(any_contains(r.violations, "sourc: unknown key"));
  CHECK(any_contains(r.violations, "run.duraton_s: unknown key"));
  CHECK(any_contains(r.violations, "run.seed: must be >= 0"));
  CHECK(any_contains(r.violations, "analysis.bin_width_ps: expected an integer"));
  CHECK(any_contains(r.violations, "analysis.stop_mode: 'last' is not one of"));
  CHECK(any_contains(validate_config("[1]").violations, "expected a JSON object"));
  CHECK(any_contains(validate_config("{").violations, "not valid JSON"));
}

TEST_CASE("every violation is collected, not just the first") {
  const auto r = validate_config(R"({
    "source": {"pair_rate_hz": -1, "crystal": {"temperature_C": 500}},
    "detectors": {"herald": {"dead_time_ns": -1}, "signal": {"efficiency": 2}},
    "run": {"duration_s": 0},
    "analysis": {"window_ps": 50001}})");
  REQUIRE_FALSE(r.config);
  CHECK(r.violations.size() >= 6);
  for (const char* f : {"source.pair_rate_hz", "source.crystal.temperature_C", "detectors.herald.dead_time_ns",
                        "detectors.signal.efficiency", "run.duration_s", "analysis.window_ps"})
    CHECK(any_contains(r.violations, f));
  try {
    load_config(R"({"run": {"duration_s": 0}, "analysis": {"fit_starts": 0}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.violations().size() == 2);
  }
}

TEST_CASE("cross-field constraints: topology, sample and wedge position") {
  CHECK(any_contains(validate_config(R"({"run": {"topology": "fluorescence"}})").violations, "sample: required"));
  CHECK(any_contains(validate_config(R"({"sample": {"species": [{}]}})").violations, "sample: not allowed"));
  CHECK(any_contains(validate_config(R"({"run": {"twins_position_um": 3}})").violations, "requires a twins section"));
  CHECK(any_contains(validate_config(R"({"sample": {"species": []}, "run": {"topology": "fluorescence"}})").violations,
                     "sample.species: must not be empty"));
}

TEST_CASE("an undersampled interferometer scan states the required spacing") {
  const auto r = validate_config(R"({"twins": {"scan": {"step_um": 30, "count": 50}}})");
  REQUIRE_FALSE(r.config);
  REQUIRE(r.violations.size() == 1);
  CHECK_THAT(r.violations[0], ContainsSubstring("twins.scan.step_um"));
  CHECK_THAT(r.violations[0], ContainsSubstring("required spacing <="));
  CHECK(validate_config(R"({"twins": {"scan": {"step_um": 10}}})").config.has_value());
  CHECK(any_contains(validate_config(R"({"twins": {"scan": {"first_um": -3000}}})").violations,
                     "leave the wedge range"));
}

TEST_CASE("to_json round trip reproduces the configuration") {
  const char* text = R"({
    "source": {"pair_rate_hz": 1e6, "herald_filter": {"center_nm": 865, "fwhm_nm": 8, "shape": "tophat"}},
    "sample": {"absorption_prob": 0.5, "species": [{"weight": 1, "lifetime_ns": 1.51, "quantum_yield": 0.11},
                                                   {"weight": 2, "lifetime_ns": 0.79, "emission_center_nm": 900}]},
    "detectors": {"signal": {"preset": "excelitas", "dark_rate_hz": 10}},
    "twins": {"visibility": 0.8, "scan": {"count": 64}},
    "run": {"topology": "fluorescence", "seed": 99, "twins_position_um": 10},
    "analysis": {"bin_width_ps": 8, "window_ps": 40000, "map_apodization": "none", "map_dc_removal": false}})";
  const auto a = load_config(text);
  const auto ja = to_json(a);
  const auto b = load_config(ja.dump());
  CHECK(to_json(b) == ja);
  CHECK(b.signal.preset == "excelitas");
  CHECK(b.signal.model.cable_delay_ps == 5000.0);
  CHECK(b.signal.model.dark_rate_hz == 10.0);
  CHECK(b.source.herald_filter->shape == spdc::FilterShape::tophat);
  CHECK(b.sample->species.size() == 2);
  CHECK(*b.run.twins_position_um == 10.0);

  const auto d = to_json(load_config("{}"));
  CHECK(to_json(load_config(d.dump())) == d);
  CHECK(d["sample"].is_null());
  CHECK(d["twins"].is_null());
}

TEST_CASE("histogram CSV round trip, including fractional counts") {
  testing::ScratchDir dir("csv");
  tcspc::Histogram h;
  h.bin_width_ps = 16;
  h.t0_ps = -32;
  h.counts = {0, 5, 123456789012ULL, 7};
  io::write_text(dir / "h.csv", io::histogram_csv(h));
  const auto r = io::read_histogram_csv(dir / "h.csv");
  CHECK(r.bin_width_ps == 16);
  CHECK(r.t0_ps == -32);
  CHECK(r.counts == std::vector<double>{0, 5, 123456789012.0, 7});

  const auto d = testing::gaussian_irf(4, 50, 100.0, 30.0, 1234.5);
  const auto rd = io::parse_histogram_csv(io::histogram_csv(d), "d");
  CHECK(rd.counts == d.counts);  // shortest round-trip formatting

  CHECK_THROWS_AS(io::parse_histogram_csv("t,c\n0,1\n4,2\n", "x"), Error);
  CHECK_THROWS_AS(io::parse_histogram_csv("bin_left_ps,counts\n0,1\n4,2\n12,3\n", "x"), Error);
  CHECK_THROWS_AS(io::parse_histogram_csv("bin_left_ps,counts\n0,1\n4,-2\n", "x"), Error);
  CHECK_THROWS_AS(io::parse_histogram_csv("bin_left_ps,counts\n0,1\n4,abc\n", "x"), Error);
}

TEST_CASE("cube directory round trip") {
  testing::ScratchDir dir("cube");
  twins::InterferogramCube c;
  c.metadata.twins.visibility = 0.7;
  c.metadata.per_position_duration_s = 0.5;
  c.metadata.seed = 77;
  for (int i = 0; i < 5; ++i) {
    c.positions_um.push_back(-20.0 + 10.0 * i);
    tcspc::Histogram h;
    h.bin_width_ps = 8;
    h.n_starts = 1000 + i;
    for (int b = 0; b < 6; ++b) h.counts.push_back(static_cast<std::uint64_t>(i * 10 + b));
    c.histograms.push_back(h);
  }
  const auto files = io::write_cube(dir.path(), c, twins::Calibration{0.1, 0.0, 26.7, 15.0, 8.0});
  CHECK(files.size() == 6);
  CHECK(files.front() == "position_0000.csv");
  const auto r = io::read_cube(dir.path());
  CHECK(r.positions_um == c.positions_um);
  REQUIRE(r.histograms.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(r.histograms[i].counts == c.histograms[i].counts);
    CHECK(r.histograms[i].n_starts == c.histograms[i].n_starts);
  }
  CHECK(r.metadata.twins.visibility == 0.7);
  CHECK(r.metadata.seed == 77);
  const auto j = Json::parse(io::read_text(dir / "cube.json"));
  CHECK(j["calibration"]["delay_per_um"] == 0.1);
}

TEST_CASE("manifest hashes detect edited and missing artifacts") {
  testing::ScratchDir dir("manifest");
  io::write_text(dir / "a.csv", "x\n1\n");
  io::write_text(dir / "sub/b.txt", "hello");
  const auto m = io::write_manifest(dir.path(), "test", Json::object(), 5, {"a.csv", "sub/b.txt"});
  CHECK(m["artifacts"][1]["sha256"] == "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
  CHECK(m["artifacts"][1]["bytes"] == 5);
  CHECK(io::verify_manifest(dir.path()).empty());
  io::write_text(dir / "a.csv", "x\n2\n");
  const auto p = io::verify_manifest(dir.path());
  REQUIRE(p.size() == 1);
  CHECK_THAT(p[0], ContainsSubstring("a.csv: hash mismatch"));
  std::filesystem::remove(dir / "sub/b.txt");
  CHECK(io::verify_manifest(dir.path()).size() == 2);
}

TEST_CASE("event file and sidecar round trip") {
  testing::ScratchDir dir("ev");
  auto cfg = load_config(R"({"run": {"duration_s": 0.01, "seed": 3}})");
  const auto s = pipeline::simulate(cfg);
  write_event_file(dir / "e.epps", s);
  io::write_text(io::sidecar_path(dir / "e.epps"), io::event_sidecar(s, to_json(cfg)).dump(2));
  CHECK(io::sidecar_path(dir / "e.epps").filename() == "e.json");
  const auto r = io::load_events(dir / "e.epps");
  CHECK(r.events == s.events);
  CHECK(r.duration_ps == s.duration_ps);
  CHECK(r.channel_count == 2);
  CHECK(r.empty_warning == s.empty_warning);
}

TEST_CASE("number formatting is shortest round-trip") {
  CHECK(io::fmt(0.1) == "0.1");
  CHECK(io::fmt(1e-20) == "1e-20");
  CHECK(io::fmt(std::nan("")) == "nan");
  CHECK(io::fmt(std::int64_t{-42}) == "-42");
  CHECK(io::position_file_name(12) == "position_0012.csv");
  CHECK(io::position_file_name(12345) == "position_12345.csv");
}

TEST_CASE("every shipped sample configuration validates") {
  const auto dir = std::filesystem::path(EPPS_DATA_DIR).parent_path() / "configs";
  std::size_t n = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() != ".json") continue;
    INFO(e.path().string());
    const auto r = validate_config(io::read_text(e.path()));
    CHECK(r.violations.empty());
    ++n;
  }
  CHECK(n >= 4);
}
