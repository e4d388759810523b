#include "lrb/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lrb/errors.hpp"

namespace lrb {

namespace {

using nlohmann::json;

[[noreturn]] void bad_field(const std::string& path, const std::string& what) {
  throw ConfigError(path + ": " + what);
}

void check_keys(const json& j, const std::string& path, const std::set<std::string>& known) {
  if (!j.is_object()) bad_field(path, "expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) bad_field(path + "." + key, "unknown field");
  }
}

template <typename T>
T fetch(const json& j, const std::string& path, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    bad_field(path + "." + key, "wrong type");
  }
}

DatasetConfig parse_dataset(const json& j, const std::string& path) {
  check_keys(j, path, {"kind", "num_classes", "dim", "per_class", "spread", "path"});
  DatasetConfig cfg;
  cfg.kind = fetch<std::string>(j, path, "kind", cfg.kind);
  cfg.num_classes = fetch<int>(j, path, "num_classes", cfg.num_classes);
  cfg.dim = fetch<std::size_t>(j, path, "dim", cfg.dim);
  cfg.per_class = fetch<std::size_t>(j, path, "per_class", cfg.per_class);
  cfg.spread = fetch<double>(j, path, "spread", cfg.spread);
  cfg.path = fetch<std::string>(j, path, "path", cfg.path);
  return cfg;
}

PartitionConfig parse_partition(const json& j, const std::string& path) {
  check_keys(j, path,
             {"kind", "labels_per_client", "alpha", "clients", "train_fraction",
              "subsample_fraction"});
  PartitionConfig cfg;
  cfg.kind = fetch<std::string>(j, path, "kind", cfg.kind);
  cfg.labels_per_client = fetch<int>(j, path, "labels_per_client", cfg.labels_per_client);
  cfg.alpha = fetch<double>(j, path, "alpha", cfg.alpha);
  cfg.clients = fetch<std::size_t>(j, path, "clients", cfg.clients);
  cfg.train_fraction = fetch<double>(j, path, "train_fraction", cfg.train_fraction);
  cfg.subsample_fraction =
      fetch<double>(j, path, "subsample_fraction", cfg.subsample_fraction);
  return cfg;
}

ModelConfig parse_model(const json& j, const std::string& path) {
  check_keys(j, path, {"hidden", "masked_layers"});
  ModelConfig cfg;
  cfg.hidden = fetch<std::vector<std::size_t>>(j, path, "hidden", cfg.hidden);
  cfg.masked_layers =
      fetch<std::vector<std::size_t>>(j, path, "masked_layers", cfg.masked_layers);
  return cfg;
}

TrainingSchedule parse_schedule(const json& j, const std::string& path) {
  check_keys(j, path,
             {"rounds", "fraction", "local_mask_steps", "w_steps", "eta_w", "eta_mask",
              "eta_gamma", "eta_fedavg", "batch_size", "threshold", "r_max", "ensemble",
              "prior_var", "l2_weight", "gamma_init", "reinit_std", "eval_every"});
  TrainingSchedule s;
  s.rounds = fetch<std::size_t>(j, path, "rounds", s.rounds);
  s.fraction = fetch<double>(j, path, "fraction", s.fraction);
  s.local_mask_steps = fetch<std::size_t>(j, path, "local_mask_steps", s.local_mask_steps);
  s.w_steps = fetch<std::size_t>(j, path, "w_steps", s.w_steps);
  s.eta_w = fetch<double>(j, path, "eta_w", s.eta_w);
  s.eta_mask = fetch<double>(j, path, "eta_mask", s.eta_mask);
  s.eta_gamma = fetch<double>(j, path, "eta_gamma", s.eta_gamma);
  s.eta_fedavg = fetch<double>(j, path, "eta_fedavg", s.eta_fedavg);
  s.batch_size = fetch<std::size_t>(j, path, "batch_size", s.batch_size);
  s.threshold = fetch<double>(j, path, "threshold", s.threshold);
  s.r_max = fetch<std::size_t>(j, path, "r_max", s.r_max);
  s.ensemble = fetch<std::size_t>(j, path, "ensemble", s.ensemble);
  s.prior_var = fetch<double>(j, path, "prior_var", s.prior_var);
  s.l2_weight = fetch<double>(j, path, "l2_weight", s.l2_weight);
  s.gamma_init = fetch<double>(j, path, "gamma_init", s.gamma_init);
  s.reinit_std = fetch<double>(j, path, "reinit_std", s.reinit_std);
  s.eval_every = fetch<std::size_t>(j, path, "eval_every", s.eval_every);
  return s;
}

NewClientConfig parse_new_clients(const json& j, const std::string& path) {
  check_keys(j, path, {"count", "alphas", "data_fraction"});
  NewClientConfig cfg;
  cfg.count = fetch<std::size_t>(j, path, "count", cfg.count);
  cfg.alphas = fetch<std::vector<double>>(j, path, "alphas", cfg.alphas);
  cfg.data_fraction = fetch<double>(j, path, "data_fraction", cfg.data_fraction);
  return cfg;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(j, "config",
             {"seed", "dataset", "partition", "model", "schedule", "mode", "output_dir",
              "num_bins", "new_clients", "eval_every"});
  ExperimentConfig cfg;
  cfg.seed = fetch<std::uint64_t>(j, "config", "seed", cfg.seed);
  if (j.contains("dataset")) cfg.dataset = parse_dataset(j["dataset"], "dataset");
  if (j.contains("partition")) cfg.partition = parse_partition(j["partition"], "partition");
  if (j.contains("model")) cfg.model = parse_model(j["model"], "model");
  if (j.contains("schedule")) cfg.schedule = parse_schedule(j["schedule"], "schedule");
  if (j.contains("eval_every")) {
    cfg.schedule.eval_every = fetch<std::size_t>(j, "config", "eval_every", 10);
  }
  cfg.mode = fetch<std::string>(j, "config", "mode", cfg.mode);
  cfg.output_dir = fetch<std::string>(j, "config", "output_dir", cfg.output_dir);
  cfg.num_bins = fetch<std::size_t>(j, "config", "num_bins", cfg.num_bins);
  if (j.contains("new_clients") && !j["new_clients"].is_null()) {
    cfg.new_clients = parse_new_clients(j["new_clients"], "new_clients");
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string ExperimentConfig::to_json_text() const {
  json j;
  j["seed"] = seed;
  j["dataset"] = {{"kind", dataset.kind},     {"num_classes", dataset.num_classes},
                  {"dim", dataset.dim},       {"per_class", dataset.per_class},
                  {"spread", dataset.spread}, {"path", dataset.path}};
  j["partition"] = {{"kind", partition.kind},
                    {"labels_per_client", partition.labels_per_client},
                    {"alpha", partition.alpha},
                    {"clients", partition.clients},
                    {"train_fraction", partition.train_fraction},
                    {"subsample_fraction", partition.subsample_fraction}};
  j["model"] = {{"hidden", model.hidden}, {"masked_layers", model.masked_layers}};
  j["schedule"] = {{"rounds", schedule.rounds},
                   {"fraction", schedule.fraction},
                   {"local_mask_steps", schedule.local_mask_steps},
                   {"w_steps", schedule.w_steps},
                   {"eta_w", schedule.eta_w},
                   {"eta_mask", schedule.eta_mask},
                   {"eta_gamma", schedule.eta_gamma},
                   {"eta_fedavg", schedule.eta_fedavg},
                   {"batch_size", schedule.batch_size},
                   {"threshold", schedule.threshold},
                   {"r_max", schedule.r_max},
                   {"ensemble", schedule.ensemble},
                   {"prior_var", schedule.prior_var},
                   {"l2_weight", schedule.l2_weight},
                   {"gamma_init", schedule.gamma_init},
                   {"reinit_std", schedule.reinit_std},
                   {"eval_every", schedule.eval_every}};
  j["mode"] = mode;
  j["output_dir"] = output_dir;
  j["num_bins"] = num_bins;
  if (new_clients) {
    j["new_clients"] = {{"count", new_clients->count},
                        {"alphas", new_clients->alphas},
                        {"data_fraction", new_clients->data_fraction}};
  }
  return j.dump(2);
}

void ExperimentConfig::validate() const {
  if (dataset.kind != "synthetic" && dataset.kind != "csv") {
    bad_field("dataset.kind", "must be 'synthetic' or 'csv', got '" + dataset.kind + "'");
  }
  if (dataset.kind == "synthetic") {
    if (dataset.num_classes < 2) bad_field("dataset.num_classes", "must be >= 2");
    if (dataset.dim < 1) bad_field("dataset.dim", "must be >= 1");
    if (dataset.per_class < 1) bad_field("dataset.per_class", "must be >= 1");
    if (dataset.spread <= 0.0) bad_field("dataset.spread", "must be positive");
  } else {
    if (dataset.path.empty()) bad_field("dataset.path", "required for csv datasets");
    if (!std::filesystem::exists(dataset.path)) {
      bad_field("dataset.path", "file does not exist: " + dataset.path);
    }
  }
  if (partition.kind != "labels_per_client" && partition.kind != "dirichlet") {
    bad_field("partition.kind",
              "must be 'labels_per_client' or 'dirichlet', got '" + partition.kind + "'");
  }
  if (partition.clients < 1) bad_field("partition.clients", "must be >= 1");
  if (partition.kind == "labels_per_client" && partition.labels_per_client < 1) {
    bad_field("partition.labels_per_client", "must be >= 1");
  }
  if (partition.kind == "dirichlet" && partition.alpha <= 0.0) {
    bad_field("partition.alpha", "must be positive");
  }
  if (!(partition.train_fraction > 0.0 && partition.train_fraction < 1.0)) {
    bad_field("partition.train_fraction", "must be in (0, 1)");
  }
  if (!(partition.subsample_fraction > 0.0 && partition.subsample_fraction <= 1.0)) {
    bad_field("partition.subsample_fraction", "must be in (0, 1]");
  }
  for (auto h : model.hidden) {
    if (h < 1) bad_field("model.hidden", "layer widths must be >= 1");
  }
  const std::size_t num_layers = model.hidden.size() + 1;
  for (auto m : model.masked_layers) {
    if (m >= num_layers) {
      bad_field("model.masked_layers",
                "index " + std::to_string(m) + " out of range for " +
                    std::to_string(num_layers) + " layers");
    }
  }
  if (!parse_mode(mode)) {
    bad_field("mode", "must be one of lr_bpfl, lr_bpfl_joint, lr_bpfl_no_ars, fedavg; got '" +
                          mode + "'");
  }
  if (num_bins < 1) bad_field("num_bins", "must be >= 1");
  if (new_clients) {
    if (new_clients->count < 1) bad_field("new_clients.count", "must be >= 1");
    if (new_clients->alphas.empty()) bad_field("new_clients.alphas", "must be non-empty");
    for (double a : new_clients->alphas) {
      if (a <= 0.0) bad_field("new_clients.alphas", "entries must be positive");
    }
    if (!(new_clients->data_fraction > 0.0 && new_clients->data_fraction < 1.0)) {
      bad_field("new_clients.data_fraction", "must be in (0, 1)");
    }
  }
  schedule.validate();
  const double sampled = schedule.fraction * static_cast<double>(partition.clients);
  if (sampled < 1.0) {
    bad_field("schedule.fraction", "fraction * clients = " + std::to_string(sampled) +
                                       " selects no one per round");
  }
}

}  // namespace lrb
