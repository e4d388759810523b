#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lrb/config.hpp"
#include "lrb/runtime.hpp"

namespace lrb {

/// Everything a training run needs, built deterministically from the config
/// seed. The mode only changes model masking flags and mask construction, so
/// different modes under one seed see identical data, partitions, and
/// initial weights.
struct ExperimentSetup {
  std::vector<LayerSpec> specs;
  SharedModel initial;
  std::vector<ClientState> clients;
  TrainingSchedule sched;
  Dataset new_client_pool;  // empty unless the config reserves one
};

ExperimentSetup build_setup(const ExperimentConfig& cfg, Mode mode);

struct NewClientResult {
  double alpha = 0.0;
  CalibrationReport report;
};

struct RunArtifacts {
  Mode mode = Mode::kLrBpfl;
  CalibrationReport report;
  std::vector<RoundRecord> log;
  std::vector<std::vector<std::size_t>> final_ranks;  // per client, per masked layer
  std::vector<NewClientResult> new_clients;
};

/// Train, evaluate, and (when `out_dir` is non-empty) write the round log,
/// calibration report, reliability CSVs, and rank table.
RunArtifacts run_experiment(const ExperimentConfig& cfg, Mode mode,
                            const std::filesystem::path& out_dir);

struct CompareRow {
  std::string mode;
  double accuracy = 0.0;
  double a_ece = 0.0;
  double w_ece = 0.0;
};

/// Same seed and partitions for every mode; returns one row per mode.
std::vector<CompareRow> compare_modes(const ExperimentConfig& cfg,
                                      const std::vector<std::string>& modes,
                                      const std::filesystem::path& out_dir);

std::string compare_table_text(const std::vector<CompareRow>& rows);
std::string compare_table_json(const std::vector<CompareRow>& rows);

}  // namespace lrb
