#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cstdlib>
#include <string>
#include <sys/wait.h>

#include "epps/config.hpp"
#include "epps/fit.hpp"
#include "epps/io.hpp"
#include "support.hpp"

using namespace epps;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

struct Run {
  int status;
  std::string out, err;
};

// Runs the CLI with stdout and stderr captured into `dir`.
Run cli(const testing::ScratchDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + EPPS_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                          err.string() + "\"";
  const int raw = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(raw));
  return {WEXITSTATUS(raw), io::read_text(out), io::read_text(err)};
}

std::string q(const std::filesystem::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_CASE("usage errors and invalid configurations exit with status 2") {
  testing::ScratchDir dir("cli_usage");
  CHECK(cli(dir, "").status == 2);
  CHECK(cli(dir, "no-such-command").status == 2);
  CHECK(cli(dir, "fit --hist").status == 2);

  io::write_text(dir / "bad.json", R"({"detectors": {"signal": {"efficiency": 1.2}}, "bogus": 1})");
  const auto v = cli(dir, "validate " + q(dir / "bad.json"));
  CHECK(v.status == 2);
  CHECK_THAT(v.err, ContainsSubstring("detectors.signal.efficiency"));
  CHECK_THAT(v.err, ContainsSubstring("bogus: unknown key"));

  const auto s = cli(dir, "simulate --config " + q(dir / "bad.json") + " --out " + q(dir / "o"));
  CHECK(s.status == 2);
  CHECK_FALSE(std::filesystem::exists(dir / "o" / "manifest.json"));

  const auto m = cli(dir, "ft-map --out " + q(dir / "m"));
  CHECK(m.status == 2);
  CHECK_THAT(m.err, ContainsSubstring("twins"));
}

TEST_CASE("runtime failures exit with status 1") {
  testing::ScratchDir dir("cli_runtime");
  const auto r = cli(dir, "histogram --events " + q(dir / "missing.epps") + " --out " + q(dir / "o"));
  CHECK(r.status == 1);
  CHECK_THAT(r.err, ContainsSubstring("error:"));
}

TEST_CASE("validate prints the fully defaulted configuration") {
  testing::ScratchDir dir("cli_validate");
  io::write_text(dir / "c.json", R"({"run": {"seed": 11}})");
  const auto r = cli(dir, "validate " + q(dir / "c.json"));
  REQUIRE(r.status == 0);
  const auto j = Json::parse(r.out);
  CHECK(j == to_json(load_config(R"({"run": {"seed": 11}})")));
}

TEST_CASE("tuning-curve writes a CSV with a manifest") {
  testing::ScratchDir dir("cli_tuning");
  const auto r = cli(dir, "tuning-curve --tmin 40 --tmax 80 --tstep 10 --out " + q(dir / "o"));
  REQUIRE(r.status == 0);
  const auto text = io::read_text(dir / "o" / "tuning.csv");
  CHECK(text.rfind("T_C,lambda_signal_nm,lambda_idler_nm\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 6);
  CHECK(Json::parse(r.out)["points"] == 5);
  CHECK(io::verify_manifest(dir / "o").empty());
}

TEST_CASE("fit recovers a noiseless lifetime from CSV inputs") {
  testing::ScratchDir dir("cli_fit");
  const auto irf = testing::gaussian_irf(4, 2500, 2000.0, 260.0);
  fit::DecayModel truth;
  truth.components = {{5e4, 1.51}};
  truth.background = 2.0;
  tcspc::BasicHistogram<double> data;
  data.bin_width_ps = 4;
  data.counts = fit::convolve_model(truth, irf);
  io::write_text(dir / "irf.csv", io::histogram_csv(irf));
  io::write_text(dir / "hist.csv", io::histogram_csv(data));
  const auto r = cli(dir, "fit --hist " + q(dir / "hist.csv") + " --irf " + q(dir / "irf.csv") + " --n 1 --out " +
                              q(dir / "o"));
  REQUIRE(r.status == 0);
  const auto rep = Json::parse(io::read_text(dir / "o" / "fit.json"));
  CHECK(rep["components"][0]["lifetime_ns"].get<double>() == Approx(1.51).epsilon(1e-4));

  // Mismatched bin widths are a runtime error, not a crash.
  io::write_text(dir / "irf8.csv", io::histogram_csv(testing::gaussian_irf(8, 100, 400.0, 260.0)));
  CHECK(cli(dir, "fit --hist " + q(dir / "hist.csv") + " --irf " + q(dir / "irf8.csv") + " --out " + q(dir / "p"))
            .status == 1);
}

TEST_CASE("simulate is byte-identical across reruns and verify detects edits") {
  testing::ScratchDir dir("cli_sim");
  io::write_text(dir / "c.json", R"({"run": {"duration_s": 0.02, "seed": 5}})");
  const auto base = "simulate --config " + q(dir / "c.json") + " --out ";
  REQUIRE(cli(dir, base + q(dir / "a")).status == 0);
  REQUIRE(cli(dir, base + q(dir / "b")).status == 0);
  for (const char* f : {"events.epps", "events.json"})
    CHECK(io::sha256_hex(io::read_text(dir / "a" / f)) == io::sha256_hex(io::read_text(dir / "b" / f)));
  REQUIRE(cli(dir, base + q(dir / "c") + " --seed 6").status == 0);
  CHECK(io::read_text(dir / "a" / "events.epps") != io::read_text(dir / "c" / "events.epps"));

  CHECK(cli(dir, "verify " + q(dir / "a")).status == 0);
  const auto h = cli(dir, "histogram --events " + q(dir / "a" / "events.epps") + " --out " + q(dir / "h"));
  REQUIRE(h.status == 0);
  CHECK(Json::parse(h.out)["counts"].get<double>() > 0);

  auto bytes = io::read_text(dir / "a" / "events.epps");
  bytes.back() = static_cast<char>(bytes.back() ^ 1);
  io::write_text(dir / "a" / "events.epps", bytes);
  const auto v = cli(dir, "verify " + q(dir / "a"));
  CHECK(v.status == 1);
  CHECK_THAT(v.err, ContainsSubstring("events.epps: hash mismatch"));
}
