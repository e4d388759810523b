#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lrb/runtime.hpp"

namespace lrb {

struct DatasetConfig {
  std::string kind = "synthetic";  // "synthetic" | "csv"
  int num_classes = 10;
  std::size_t dim = 16;
  std::size_t per_class = 200;
  double spread = 0.8;
  std::string path;  // csv only
};

struct PartitionConfig {
  std::string kind = "labels_per_client";  // "labels_per_client" | "dirichlet"
  int labels_per_client = 2;
  double alpha = 0.5;
  std::size_t clients = 50;
  double train_fraction = 0.75;
  double subsample_fraction = 1.0;
};

struct ModelConfig {
  std::vector<std::size_t> hidden = {32};
  // Indices into the layer chain (hidden layers then the output layer).
  // Empty means every layer is masked.
  std::vector<std::size_t> masked_layers;
};

struct NewClientConfig {
  std::size_t count = 0;
  std::vector<double> alphas;
  double data_fraction = 0.2;  // share of samples held out for new clients
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  PartitionConfig partition;
  ModelConfig model;
  TrainingSchedule schedule;
  std::string mode = "lr_bpfl";
  std::string output_dir = "out";
  std::size_t num_bins = 10;
  std::optional<NewClientConfig> new_clients;

  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig from_file(const std::string& path);
  std::string to_json_text() const;

  /// Field-level validation; throws ConfigError naming the offending field.
  void validate() const;
};

}  // namespace lrb
