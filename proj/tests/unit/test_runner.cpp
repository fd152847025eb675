#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kolmo/runner.hpp"

using namespace kolmo;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("kolmo_runner_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream os(p);
  os << j.dump(2);
}

int cli(const std::string& args, const fs::path& log = {}) {
  std::string cmd = std::string(KOLMO_CLI_PATH) + " " + args;
  cmd += log.empty() ? " > /dev/null 2>&1" : " > " + log.string() + " 2>&1";
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++n;
    fs::path other = b / e.path().filename();
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) return false;
  }
  std::size_t m = std::distance(fs::directory_iterator(b), fs::directory_iterator{});
  return n == m && n > 0;
}

json small_config() {
  return json::parse(R"J({
    "operator": {"family": "ou"},
    "grid": {"ladder": [[41, 0.02], [61, 0.01]]},
    "box": {"L": 4.0, "samples": 200},
    "data": ["exp(-x1^2)"],
    "checks": ["check_ellipticity", "check_hyp22", "max_principle_check", "compose_check"],
    "compose": {"n": 41, "dt": 0.05},
    "seed": 3
  })J");
}

}  // namespace

TEST_CASE("preset listing") {
  auto ps = list_presets();
  auto find = [&](const std::string& f) -> const PresetInfo* {
    for (const auto& p : ps)
      if (p.family == f) return &p;
    return nullptr;
  };
  REQUIRE(find("ex71i"));
  REQUIRE(find("ex72"));
  CHECK(std::find(find("ex71i")->constraints.begin(), find("ex71i")->constraints.end(), "p>2r>=0") !=
        find("ex71i")->constraints.end());
  CHECK(std::find(find("ex72")->constraints.begin(), find("ex72")->constraints.end(), "k+s<p+1") !=
        find("ex72")->constraints.end());
  CHECK(find("heat")->constraints.empty());
  CHECK(find("ou")->constraints.empty());
  auto log = scratch("presets.txt");
  CHECK(cli("presets", log) == 0);
  std::string text = slurp(log);
  CHECK(text.find("p>2r>=0") != std::string::npos);
  CHECK(text.find("k+s<p+1") != std::string::npos);
  fs::remove(log);
}

TEST_CASE("schema violations are rejected before any computation") {
  json j = small_config();
  j["checks"].push_back("weighted_gradient_check");
  CHECK_THROWS_AS(RunConfig::parse(j), ConfigError);
  j["weight"] = {{"identity", true}};
  CHECK_NOTHROW(RunConfig::parse(j));

  json bad = small_config();
  bad["surprise"] = 1;
  CHECK_THROWS_AS(RunConfig::parse(bad), ConfigError);
  bad = small_config();
  bad["box"]["width"] = 3;
  CHECK_THROWS_AS(RunConfig::parse(bad), ConfigError);
  bad = small_config();
  bad["checks"].push_back("gradient");
  CHECK_THROWS_AS(RunConfig::parse(bad), ConfigError);
  bad = small_config();
  bad.erase("data");
  CHECK_THROWS_AS(RunConfig::parse(bad), ConfigError);
  bad = small_config();
  bad["operator"] = {{"family", "ou"}, {"params", {{"theta", 1.0}, {"nope", 2}}}};
  CHECK_THROWS_AS(RunConfig::parse(bad), ConfigError);
  bad = small_config();
  bad["checks"] = {"nash_check"};
  CHECK_THROWS_AS(RunConfig::parse(bad), ConfigError);

  auto dir = scratch("schema");
  fs::create_directories(dir);
  json w = small_config();
  w["checks"].push_back("weighted_gradient_check");
  w["output"] = (dir / "out").string();
  write_json(dir / "cfg.json", w);
  CHECK(cli("run " + (dir / "cfg.json").string()) == 2);
  CHECK_FALSE(fs::exists(dir / "out"));
  CHECK(cli("run " + (dir / "missing.json").string()) == 2);
  CHECK(cli("frobnicate") == 2);
  fs::remove_all(dir);
}

TEST_CASE("prerequisites are added and checks run in stage order") {
  json j = small_config();
  j["checks"] = {"max_principle_check", "compose_check", "check_ellipticity"};
  auto c = RunConfig::parse(j);
  CHECK(c.checks == std::vector<std::string>{"check_ellipticity", "check_hyp22", "compose_check",
                                             "max_principle_check"});
  CHECK(check_stage("nash_check") == "fbsde");
  CHECK(runnable_checks().size() == 18);
}

TEST_CASE("explicit operators") {
  json j = json::parse(R"J({
    "operator": {"explicit": {"d": 1, "m": 2, "Q": [["1"]], "b": ["-x1"], "C": [[-1, 0], [0, -2]]}},
    "checks": ["check_ellipticity"]
  })J");
  CHECK_NOTHROW(RunConfig::parse(j));
  j["operator"]["explicit"]["C"] = json::parse("[[-1, 0.5], [0, -2]]");
  CHECK_THROWS_AS(RunConfig::parse(j), ConfigError);
  j["operator"]["explicit"]["C"] = json::parse("[[-1, 0], [0, -2]]");
  j["checks"] = {"check_family_params"};
  CHECK_THROWS_AS(RunConfig::parse(j), ConfigError);
}

TEST_CASE("config hash ignores key order and the output directory") {
  json a = json::parse(R"({"b": 1, "a": [1, 2]})");
  json b = json::parse(R"({"a": [1, 2], "b": 1})");
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a) != config_hash(json::parse(R"({"a": [2, 1], "b": 1})")));
  CHECK(hash_hex(0xcbf29ce484222325ull) == "cbf29ce484222325");
  json c = small_config();
  c["output"] = "x";
  json d = small_config();
  d["output"] = "y";
  CHECK(RunConfig::parse(c).config == RunConfig::parse(d).config);
}

TEST_CASE("repeated runs and report reruns are byte-identical") {
  auto dir = scratch("determinism");
  fs::create_directories(dir);
  write_json(dir / "cfg.json", small_config());
  CHECK(cli("run " + (dir / "cfg.json").string() + " -o " + (dir / "a").string()) == 0);
  CHECK(cli("run " + (dir / "cfg.json").string() + " -o " + (dir / "b").string()) == 0);
  CHECK(same_tree(dir / "a", dir / "b"));
  CHECK(cli("run " + (dir / "a" / "summary.json").string() + " -o " + (dir / "c").string()) == 0);
  CHECK(same_tree(dir / "a", dir / "c"));

  json s = json::parse(slurp(dir / "a" / "summary.json"));
  CHECK(s["seed"] == 3);
  CHECK(s["config_hash"] == hash_hex(config_hash(small_config())));
  CHECK(s["verdict"] == "PASS");
  CHECK(s.contains("version"));
  s["config"]["seed"] = 4;
  write_json(dir / "tampered.json", s);
  CHECK(cli("run " + (dir / "tampered.json").string() + " -o " + (dir / "d").string()) == 2);

  CHECK(cli("audit " + (dir / "cfg.json").string() + " -o " + (dir / "e").string()) == 0);
  json au = json::parse(slurp(dir / "e" / "audit.json"));
  CHECK(au["results"].size() == 2);
  for (const auto& r : au["results"]) CHECK(r["stage"] == "audit");
  fs::remove_all(dir);
}

TEST_CASE("module failures exit 1 and name the stage") {
  auto dir = scratch("failure");
  fs::create_directories(dir);
  json j = json::parse(R"J({
    "operator": {"family": "ou"},
    "diffusion": {"d": 1, "m": 1, "b": ["-x1"], "G": [[1]], "g": ["tanh(x1)"], "t_hi": 0.5},
    "nonlinearity": {"exprs": ["0.5*tanh(z11)"], "growth_c": 0.5, "holder_alpha": 1.0},
    "semilinear": {"T": 0.5, "dt": 0.05, "n": 61, "max_iter": 1},
    "checks": ["mild_solve"]
  })J");
  write_json(dir / "cfg.json", j);
  CHECK(cli("run " + (dir / "cfg.json").string() + " -o " + (dir / "out").string(), dir / "log.txt") == 1);
  CHECK(slurp(dir / "log.txt").find("stage semilinear (mild_solve)") != std::string::npos);

  j["semilinear"]["max_iter"] = 50;
  write_json(dir / "cfg.json", j);
  CHECK(cli("run " + (dir / "cfg.json").string() + " -o " + (dir / "out").string()) == 0);
  CHECK(fs::exists(dir / "out" / "picard.csv"));
  CHECK(fs::exists(dir / "out" / "u_t0.csv"));
  fs::remove_all(dir);
}

TEST_CASE("bundled ex71ii config passes end to end") {
  auto dir = scratch("ex71ii");
  CHECK(cli("run " + std::string(KOLMO_SOURCE_DIR) + "/configs/ex71ii_full.run -o " + dir.string()) == 0);
  json s = json::parse(slurp(dir / "summary.json"));
  CHECK(s["verdict"] == "PASS");
  CHECK(s["results"].size() == 11);
  CHECK(fs::exists(dir / "estimates.csv"));
  CHECK(fs::exists(dir / "compactness.csv"));
  fs::remove_all(dir);
}
