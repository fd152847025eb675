#include <CLI11.hpp>
#include <iostream>

#include "kolmo/runner.hpp"

namespace {

int execute(const std::string& path, const std::string& out, bool audit_only) {
  try {
    kolmo::RunConfig cfg = kolmo::RunConfig::parse(kolmo::load_config(path));
    if (!out.empty()) cfg.output = out;
    if (cfg.output.empty()) cfg.output = "kolmo_out";
    auto res = kolmo::run_config(cfg, audit_only);
    for (const auto& c : res.checks) std::cout << c.verdict << "  " << c.stage << "  " << c.check << '\n';
    std::cout << (res.ok ? "PASS" : "FAIL") << "  report in " << cfg.output << '\n';
    return res.ok ? 0 : 1;
  } catch (const kolmo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const kolmo::StageError& e) {
    std::cerr << "error in " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kolmogorov system checks"};
  app.require_subcommand(1);

  std::string config, out;
  auto* run = app.add_subcommand("run", "Run the checks listed in a config (or a stored summary.json)");
  run->add_option("config", config, "JSON config")->required();
  run->add_option("-o,--out", out, "Output directory (overrides the config)");
  auto* audit = app.add_subcommand("audit", "Run only the audit stage of a config");
  audit->add_option("config", config, "JSON config")->required();
  audit->add_option("-o,--out", out, "Output directory (overrides the config)");
  bool as_json = false;
  auto* presets = app.add_subcommand("presets", "List operator families and their parameter constraints");
  presets->add_flag("--json", as_json, "Print as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*run) return execute(config, out, false);
  if (*audit) return execute(config, out, true);
  if (as_json) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& p : kolmo::list_presets())
      j.push_back({{"family", p.family}, {"constraints", p.constraints}, {"defaults", p.defaults}});
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << kolmo::presets_table();
  }
  return 0;
}
