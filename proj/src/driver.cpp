#include "lrb/driver.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "lrb/data.hpp"
#include "lrb/errors.hpp"
#include "lrb/report_io.hpp"

namespace lrb {

namespace {

Dataset build_dataset(const ExperimentConfig& cfg, RngStream& rng) {
  if (cfg.dataset.kind == "csv") {
    return load_csv(cfg.dataset.path).dataset;
  }
  RngStream data_rng = rng.child("synth");
  return synth_clusters(cfg.dataset.num_classes, cfg.dataset.dim, cfg.dataset.per_class,
                        cfg.dataset.spread, data_rng);
}

std::vector<LayerSpec> build_specs(const ExperimentConfig& cfg, std::size_t input_dim,
                                   int num_classes, bool any_masked) {
  std::vector<std::size_t> dims;
  dims.push_back(input_dim);
  for (auto h : cfg.model.hidden) dims.push_back(h);
  dims.push_back(static_cast<std::size_t>(num_classes));

  const std::size_t num_layers = dims.size() - 1;
  std::vector<bool> masked(num_layers, cfg.model.masked_layers.empty());
  for (auto idx : cfg.model.masked_layers) masked[idx] = true;

  std::vector<LayerSpec> specs;
  for (std::size_t l = 0; l < num_layers; ++l) {
    LayerSpec spec;
    spec.in_dim = dims[l];
    spec.out_dim = dims[l + 1];
    spec.activation = (l + 1 == num_layers) ? Activation::kIdentity : Activation::kRelu;
    spec.masked = any_masked && masked[l];
    specs.push_back(spec);
  }
  return specs;
}

std::vector<IndexList> partition_dataset(const Dataset& ds, const PartitionConfig& cfg,
                                         RngStream& rng) {
  RngStream part_rng = rng.child("partition");
  if (cfg.kind == "dirichlet") {
    return dirichlet_partition(ds, cfg.clients, cfg.alpha, part_rng);
  }
  return label_shard_partition(ds, cfg.clients, cfg.labels_per_client, part_rng);
}

ClientData make_client_data(const Dataset& ds, const IndexList& shard,
                            const PartitionConfig& cfg, RngStream rng) {
  const auto split =
      split_and_subsample(ds, shard, cfg.train_fraction, cfg.subsample_fraction, rng);
  return ClientData{gather(ds, split.train), gather(ds, split.test)};
}

}  // namespace

ExperimentSetup build_setup(const ExperimentConfig& cfg, Mode mode) {
  RngStream root(cfg.seed);
  RngStream data_rng = root.child("data");

  Dataset full = build_dataset(cfg, data_rng);

  Dataset train_pool = std::move(full);
  ExperimentSetup setup;
  if (cfg.new_clients) {
    // Hold out a slice of the data for clients that never train.
    IndexList all(train_pool.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    RngStream hold_rng = data_rng.child("holdout");
    const auto split = split_and_subsample(train_pool, all,
                                           1.0 - cfg.new_clients->data_fraction, 1.0, hold_rng);
    setup.new_client_pool = gather(train_pool, split.test);
    train_pool = gather(train_pool, split.train);
  }

  const bool any_masked = mode != Mode::kFedAvg;
  setup.specs = build_specs(cfg, train_pool.features.cols, train_pool.num_classes, any_masked);
  setup.initial = SharedModel::init(setup.specs, root.child("model_init"));
  setup.sched = cfg.schedule;

  const auto shards = partition_dataset(train_pool, cfg.partition, data_rng);
  RngStream split_rng = data_rng.child("client_split");
  double total_train = 0.0;
  for (std::size_t k = 0; k < shards.size(); ++k) {
    ClientState client;
    client.id = static_cast<int>(k);
    client.data = make_client_data(train_pool, shards[k], cfg.partition, split_rng.child(k));
    client.mask = ClientMask::init(setup.specs, cfg.schedule.r_max, cfg.schedule.prior_var,
                                   cfg.schedule.gamma_init, cfg.schedule.reinit_std,
                                   mode == Mode::kLrBpflNoArs);
    total_train += static_cast<double>(client.data.train.size());
    setup.clients.push_back(std::move(client));
  }
  for (auto& client : setup.clients) {
    client.weight = static_cast<double>(client.data.train.size()) / total_train;
  }
  return setup;
}

namespace {

std::vector<NewClientResult> evaluate_new_clients(const ExperimentConfig& cfg, Mode mode,
                                                  const ExperimentSetup& setup,
                                                  const SharedModel& final_model,
                                                  RngStream rng) {
  std::vector<NewClientResult> results;
  if (!cfg.new_clients || setup.new_client_pool.size() == 0) return results;
  const NewClientConfig& nc = *cfg.new_clients;

  for (std::size_t ai = 0; ai < nc.alphas.size(); ++ai) {
    const double alpha = nc.alphas[ai];
    RngStream alpha_rng = rng.child("alpha", ai);
    const auto shards =
        dirichlet_partition(setup.new_client_pool, nc.count, alpha, alpha_rng);
    std::vector<ClientState> adapted;
    for (std::size_t k = 0; k < shards.size(); ++k) {
      RngStream client_rng = alpha_rng.child("client", k);
      ClientData data = make_client_data(setup.new_client_pool, shards[k], cfg.partition,
                                         client_rng.child("split"));
      adapted.push_back(adapt_new_client(final_model, static_cast<int>(1000 + k),
                                         std::move(data), cfg.schedule, mode,
                                         client_rng.child("adapt")));
    }
    std::vector<ClientReport> reports;
    for (const auto& client : adapted) {
      if (client.data.test.size() == 0) continue;
      RngStream eval_rng = alpha_rng.child("eval", static_cast<std::uint64_t>(client.id));
      Matrix probs;
      if (mode == Mode::kFedAvg) {
        probs = softmax_rows(forward(final_model, MaskSample{}, client.data.test.features));
      } else {
        RngStream predict_rng = eval_rng.child("predict");
        probs = predict_ensemble(final_model, client.mask, client.data.test.features,
                                 cfg.schedule.ensemble, predict_rng);
      }
      const auto ev = evaluate_client(probs, client.data.test.labels);
      ClientReport report;
      report.id = client.id;
      report.accuracy = ev.accuracy;
      report.ece = ece(ev.confidences, ev.correctness, cfg.num_bins);
      report.mce = mce(ev.confidences, ev.correctness, cfg.num_bins);
      report.bins = reliability_bins(ev.confidences, ev.correctness, cfg.num_bins);
      reports.push_back(std::move(report));
    }
    results.push_back({alpha, fleet_report(std::move(reports))});
  }
  return results;
}

std::string ranks_csv(const std::vector<std::vector<std::size_t>>& ranks) {
  std::ostringstream out;
  out << "client_id,layer_index,final_rank\n";
  for (std::size_t k = 0; k < ranks.size(); ++k) {
    for (std::size_t l = 0; l < ranks[k].size(); ++l) {
      out << k << ',' << l << ',' << ranks[k][l] << '\n';
    }
  }
  return out.str();
}

void write_artifacts(const RunArtifacts& artifacts, const ExperimentConfig& cfg,
                     const std::filesystem::path& out_dir) {
  std::ostringstream log;
  for (const auto& record : artifacts.log) log << round_record_to_json(record) << '\n';
  atomic_write(out_dir / "rounds.jsonl", log.str());
  atomic_write(out_dir / "calibration.json", report_to_json(artifacts.report));
  atomic_write(out_dir / "ranks.csv", ranks_csv(artifacts.final_ranks));
  for (const auto& client : artifacts.report.clients) {
    atomic_write(out_dir / ("reliability_client_" + std::to_string(client.id) + ".csv"),
                 reliability_csv(client.bins));
  }
  if (!artifacts.new_clients.empty()) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& nc : artifacts.new_clients) {
      j.push_back({{"alpha", nc.alpha},
                   {"report", nlohmann::json::parse(report_to_json(nc.report))}});
    }
    atomic_write(out_dir / "newclients.json", j.dump(2));
  }
  atomic_write(out_dir / "config.json", cfg.to_json_text());
}

}  // namespace

RunArtifacts run_experiment(const ExperimentConfig& cfg, Mode mode,
                            const std::filesystem::path& out_dir) {
  ExperimentSetup setup = build_setup(cfg, mode);
  RngStream root(cfg.seed);

  RunArtifacts artifacts;
  artifacts.mode = mode;
  TrainResult trained =
      run_training(std::move(setup.initial), std::move(setup.clients), setup.sched, mode,
                   root.child("train"));
  artifacts.log = std::move(trained.log);

  RngStream eval_rng = root.child("final_eval");
  artifacts.report =
      evaluate_fleet(trained.server.model, trained.clients, setup.sched, mode, eval_rng,
                     cfg.num_bins, &artifacts.final_ranks);
  artifacts.new_clients = evaluate_new_clients(cfg, mode, setup, trained.server.model,
                                               root.child("new_clients"));

  if (!out_dir.empty()) write_artifacts(artifacts, cfg, out_dir);
  return artifacts;
}

std::vector<CompareRow> compare_modes(const ExperimentConfig& cfg,
                                      const std::vector<std::string>& modes,
                                      const std::filesystem::path& out_dir) {
  if (modes.empty()) throw ConfigError("compare: modes list is empty");
  std::vector<CompareRow> rows;
  for (const auto& name : modes) {
    const auto mode = parse_mode(name);
    if (!mode) {
      throw ConfigError("compare: mode must be one of lr_bpfl, lr_bpfl_joint, "
                        "lr_bpfl_no_ars, fedavg; got '" +
                        name + "'");
    }
    const std::filesystem::path mode_dir = out_dir.empty() ? out_dir : out_dir / name;
    const auto artifacts = run_experiment(cfg, *mode, mode_dir);
    rows.push_back({name, artifacts.report.mean_accuracy, artifacts.report.a_ece,
                    artifacts.report.w_ece});
  }
  if (!out_dir.empty()) {
    atomic_write(out_dir / "compare.json", compare_table_json(rows));
    atomic_write(out_dir / "compare.txt", compare_table_text(rows));
  }
  return rows;
}

std::string compare_table_text(const std::vector<CompareRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(16) << "mode" << std::right << std::setw(10) << "accuracy"
      << std::setw(10) << "a_ece" << std::setw(10) << "w_ece" << '\n';
  out << std::string(46, '-') << '\n';
  out << std::fixed << std::setprecision(4);
  for (const auto& row : rows) {
    out << std::left << std::setw(16) << row.mode << std::right << std::setw(10)
        << row.accuracy << std::setw(10) << row.a_ece << std::setw(10) << row.w_ece << '\n';
  }
  return out.str();
}

std::string compare_table_json(const std::vector<CompareRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& row : rows) {
    j.push_back({{"mode", row.mode},
                 {"accuracy", row.accuracy},
                 {"a_ece", row.a_ece},
                 {"w_ece", row.w_ece}});
  }
  return j.dump(2);
}

}  // namespace lrb
