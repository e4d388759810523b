#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lrb/config.hpp"
#include "lrb/driver.hpp"
#include "lrb/errors.hpp"
#include "lrb/selfcheck.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string out;
};

lrb::ExperimentConfig load_config(const std::string& path, const Overrides& ov) {
  auto cfg = lrb::ExperimentConfig::from_file(path);
  if (ov.seed) cfg.seed = *ov.seed;
  if (!ov.mode.empty()) cfg.mode = ov.mode;
  if (!ov.out.empty()) cfg.output_dir = ov.out;
  cfg.validate();
  return cfg;
}

int do_run(const std::string& config_path, const Overrides& ov) {
  const auto cfg = load_config(config_path, ov);
  const auto mode = lrb::parse_mode(cfg.mode);
  const auto artifacts = lrb::run_experiment(cfg, *mode, cfg.output_dir);
  std::cout << "mode " << cfg.mode << ": accuracy " << artifacts.report.mean_accuracy
            << ", a_ece " << artifacts.report.a_ece << ", w_ece " << artifacts.report.w_ece
            << " (worst client " << artifacts.report.worst_client << ")\n";
  std::cout << "artifacts written to " << cfg.output_dir << "\n";
  return kExitOk;
}

int do_selfcheck(const std::string& kind, std::uint64_t seed) {
  lrb::CheckResult result;
  if (kind == "grad") {
    result = lrb::grad_selfcheck(5, 1e-5, lrb::RngStream(seed));
    std::cout << "grad: max relative error " << result.worst << "\n";
  } else if (kind == "kl") {
    result = lrb::kl_selfcheck(10, 1000000, lrb::RngStream(seed));
    std::cout << "kl: worst z-score " << result.worst << "\n";
  } else if (kind == "ensemble") {
    result = lrb::ensemble_selfcheck(lrb::RngStream(seed));
    std::cout << "ensemble: max |tiled - loop| " << result.worst << "\n";
  } else {
    std::cerr << "selfcheck: kind must be grad, kl, or ensemble; got '" << kind << "'\n";
    return kExitConfig;
  }
  if (!result.passed) {
    std::cerr << "selfcheck " << kind << " FAILED: " << result.detail << "\n";
    return kExitCheckFailed;
  }
  std::cout << "selfcheck " << kind << " passed\n";
  return kExitOk;
}

int do_compare(const std::string& config_path, const std::vector<std::string>& modes,
               const Overrides& ov) {
  if (modes.empty()) throw lrb::ConfigError("compare: modes list is empty");
  const auto cfg = load_config(config_path, ov);
  const auto rows = lrb::compare_modes(cfg, modes, cfg.output_dir);
  std::cout << lrb::compare_table_text(rows);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Personalized federated learning with low-rank Bayesian masks"};
  app.require_subcommand(1);

  Overrides ov;
  std::string config_path;
  std::string selfcheck_kind;
  std::uint64_t selfcheck_seed = 0;
  std::vector<std::string> modes;

  auto* run_cmd = app.add_subcommand("run", "Run one training experiment from a config file");
  run_cmd->add_option("--config", config_path, "JSON config path")->required();
  run_cmd->add_option("--seed", ov.seed, "Override the config seed");
  run_cmd->add_option("--mode", ov.mode, "Override the config mode");
  run_cmd->add_option("--out", ov.out, "Override the output directory");

  auto* check_cmd = app.add_subcommand("selfcheck", "Run a built-in numerical oracle");
  check_cmd->add_option("kind", selfcheck_kind, "grad | kl | ensemble")->required();
  check_cmd->add_option("--seed", selfcheck_seed, "Oracle seed");

  auto* compare_cmd =
      app.add_subcommand("compare", "Run several modes on identical data and partitions");
  compare_cmd->add_option("--config", config_path, "JSON config path")->required();
  compare_cmd->add_option("--modes", modes, "Comma-separated mode list")->delimiter(',');
  compare_cmd->add_option("--seed", ov.seed, "Override the config seed");
  compare_cmd->add_option("--out", ov.out, "Override the output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return do_run(config_path, ov);
    if (check_cmd->parsed()) return do_selfcheck(selfcheck_kind, selfcheck_seed);
    if (compare_cmd->parsed()) return do_compare(config_path, modes, ov);
  } catch (const lrb::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const lrb::Error& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
