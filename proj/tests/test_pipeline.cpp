#include <doctest.h>

#include <fstream>

#include "dsre/pipeline.hpp"
#include "dsre/util.hpp"
#include "support.hpp"

using namespace dsre;
using nlohmann::json;

namespace {

json control_config() {
  return json::parse(R"({
    "format_version": 1,
    "environment": {"d": 2, "N": 16, "seed": 1,
                    "s": {"kind": "constant", "value": 1.0},
                    "h": {"kind": "constant", "value": 0.0}},
    "simulation": {"times": [200, 400], "n_walks": 5000, "seed": 3},
    "diagnostics": {"ks_threshold": 0.03},
    "heat_kernel": {"times": [0.1, 0.3, 0.6, 1, 1.5, 2, 3, 4, 5, 6, 7, 8]}
  })");
}

json random_config() {
  json c = control_config();
  c["environment"]["h"] = {{"kind", "iid_uniform"}, {"lo", -1.0}, {"hi", 1.0}};
  c["environment"]["seed"] = 7;
  return c;
}

RunResult run_in(const test::ScratchDir& dir, const std::string& sub, const json& cfg, int threads = 1,
                 std::optional<std::uint64_t> seed = std::nullopt) {
  RunOptions o;
  o.output_dir = dir.path();
  o.threads = threads;
  o.seed = seed;
  return run_experiment(cfg, sub, o);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("control pipeline end to end") {
  test::ScratchDir dir("ctl");
  const RunResult r = run_in(dir, "full", control_config(), 2);
  INFO(r.message);
  REQUIRE(r.exit_code == 0);
  const json& m = r.manifest;
  const auto sigma2 = m["results"]["sigma2"];
  CHECK(sigma2[0][0].get<double>() == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(sigma2[1][1].get<double>() == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(sigma2[0][1].get<double>() == 0.0);
  CHECK(m.contains("env_hash"));
  CHECK(m.contains("config_hash"));
  CHECK(m["verdicts"].size() >= 8);
  for (const auto& v : m["verdicts"]) CHECK(v["pass"].get<bool>());

  // The manifest inventory matches the files on disk.
  const json disk = json::parse(slurp(dir.path() / "manifest.json"));
  CHECK(disk["files"] == m["files"]);
  for (const std::string f : {"env.json", "env.f64", "corrector.f64", "heat_kernel.csv", "samples.csv", "clt.json",
                              "nash.csv", "entropy_production.csv", "sublinearity.csv"}) {
    bool listed = false;
    for (const auto& e : m["files"]) {
      if (e["path"] == f) {
        listed = true;
        CHECK(e["fnv1a64"].get<std::string>() == hex64(file_hash(dir.path() / f)));
        CHECK(e["bytes"].get<std::uintmax_t>() == std::filesystem::file_size(dir.path() / f));
      }
    }
    CHECK_MESSAGE(listed, f);
  }
}

TEST_CASE("configuration errors exit with code 2") {
  test::ScratchDir dir("bad");
  SUBCASE("too few walks for the CLT") {
    json c = control_config();
    c["simulation"]["n_walks"] = 10;
    const RunResult r = run_in(dir, "verify-clt", c);
    CHECK(r.exit_code == 2);
    CHECK(r.message.find("n_walks") != std::string::npos);
    CHECK(std::filesystem::exists(dir.path() / "manifest.json"));
  }
  SUBCASE("unknown key") {
    json c = control_config();
    c["environment"]["colour"] = "blue";
    const RunResult r = run_in(dir, "gen-env", c);
    INFO(r.message);
    CHECK(r.exit_code == 2);
    CHECK(r.message.find("$.environment") != std::string::npos);
  }
  SUBCASE("format version") {
    json c = control_config();
    c["format_version"] = 2;
    CHECK(run_in(dir, "gen-env", c).exit_code == 2);
  }
  SUBCASE("unknown subcommand") { CHECK(run_in(dir, "teleport", control_config()).exit_code == 2); }
  SUBCASE("missing config file") {
    CHECK(run_experiment(dir.path() / "nope.json", "gen-env", RunOptions{}).exit_code == 2);
  }
}

TEST_CASE("stale dumps are refused") {
  test::ScratchDir dir("stale");
  const RunResult first = run_in(dir, "gen-env", random_config());
  INFO(first.message);
  REQUIRE(first.exit_code == 0);
  const RunResult r = run_in(dir, "solve-corrector", random_config(), 1, 99);
  CHECK(r.exit_code == 2);
  CHECK(r.message.find("stale") != std::string::npos);
}

TEST_CASE("outputs are reproducible and independent of the thread count") {
  test::ScratchDir a("det_a"), b("det_b");
  const json cfg = random_config();
  REQUIRE(run_in(a, "simulate", cfg, 1).exit_code == 0);
  REQUIRE(run_in(b, "simulate", cfg, 4).exit_code == 0);
  for (const std::string f : {"env.f64", "corrector.f64", "samples.csv"}) {
    CHECK_MESSAGE(file_hash(a.path() / f) == file_hash(b.path() / f), f);
  }

  // Stages can be run one at a time against existing dumps.
  test::ScratchDir c("det_c");
  REQUIRE(run_in(c, "gen-env", cfg).exit_code == 0);
  REQUIRE(run_in(c, "solve-corrector", cfg).exit_code == 0);
  REQUIRE(run_in(c, "simulate", cfg, 2).exit_code == 0);
  CHECK(file_hash(a.path() / "samples.csv") == file_hash(c.path() / "samples.csv"));
}

TEST_CASE("seed override changes the environment only") {
  test::ScratchDir a("seed_a"), b("seed_b");
  const RunResult ra = run_in(a, "gen-env", random_config());
  const RunResult rb = run_in(b, "gen-env", random_config(), 1, 8);
  CHECK(ra.manifest["env_hash"] != rb.manifest["env_hash"]);
  CHECK(rb.manifest["environment_seed"] == 8);
}
