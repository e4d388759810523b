#include "lrb/runtime.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "lrb/errors.hpp"

namespace lrb {

std::string mode_name(Mode mode) {
  switch (mode) {
    case Mode::kLrBpfl: return "lr_bpfl";
    case Mode::kLrBpflJoint: return "lr_bpfl_joint";
    case Mode::kLrBpflNoArs: return "lr_bpfl_no_ars";
    case Mode::kFedAvg: return "fedavg";
  }
  return "unknown";
}

std::optional<Mode> parse_mode(const std::string& name) {
  if (name == "lr_bpfl") return Mode::kLrBpfl;
  if (name == "lr_bpfl_joint") return Mode::kLrBpflJoint;
  if (name == "lr_bpfl_no_ars") return Mode::kLrBpflNoArs;
  if (name == "fedavg") return Mode::kFedAvg;
  return std::nullopt;
}

void TrainingSchedule::validate() const {
  if (rounds < 1) throw ConfigError("schedule.rounds: must be >= 1");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("schedule.fraction: must be in (0, 1]");
  }
  if (local_mask_steps < 1) throw ConfigError("schedule.local_mask_steps: must be >= 1");
  if (eta_w <= 0.0) throw ConfigError("schedule.eta_w: must be positive");
  if (eta_mask <= 0.0) throw ConfigError("schedule.eta_mask: must be positive");
  if (eta_gamma <= 0.0) throw ConfigError("schedule.eta_gamma: must be positive");
  if (eta_fedavg <= 0.0) throw ConfigError("schedule.eta_fedavg: must be positive");
  if (batch_size < 1) throw ConfigError("schedule.batch_size: must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("schedule.threshold: must be in (0, 1)");
  }
  if (r_max < 1) throw ConfigError("schedule.r_max: must be >= 1");
  if (ensemble < 1) throw ConfigError("schedule.ensemble: must be >= 1");
  if (prior_var <= 0.0) throw ConfigError("schedule.prior_var: must be positive");
  if (l2_weight < 0.0) throw ConfigError("schedule.l2_weight: must be >= 0");
  if (reinit_std <= 0.0) throw ConfigError("schedule.reinit_std: must be positive");
}

std::vector<std::size_t> sample_clients(std::size_t num_clients, double fraction,
                                        RngStream& rng) {
  if (num_clients == 0) throw ConfigError("sample_clients: no clients");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("sample_clients: fraction must be in (0, 1]");
  }
  const double target = fraction * static_cast<double>(num_clients);
  if (target < 1.0) {
    throw ConfigError("sample_clients: fraction * clients = " + std::to_string(target) +
                      " selects no one");
  }
  std::size_t take = static_cast<std::size_t>(std::llround(target));
  take = std::min(std::max<std::size_t>(take, 1), num_clients);
  auto ids = sample_without_replacement(num_clients, take, rng);
  std::sort(ids.begin(), ids.end());
  return ids;
}

namespace {

Batch draw_minibatch(const Dataset& train, std::size_t batch_size, double dataset_scale,
                     RngStream& rng) {
  const std::size_t n = train.size();
  const std::size_t take = std::min(batch_size, n);
  const auto idx = sample_without_replacement(n, take, rng);
  Batch b;
  b.features = Matrix(take, train.features.cols);
  b.labels.resize(take);
  for (std::size_t i = 0; i < take; ++i) {
    std::copy_n(&train.features.data[idx[i] * train.features.cols], train.features.cols,
                &b.features.data[i * b.features.cols]);
    b.labels[i] = train.labels[idx[i]];
  }
  b.dataset_size = dataset_scale;
  return b;
}

void apply_mask_grads(ClientMask& mask, const Gradients& g, double eta_mask,
                      double eta_gamma) {
  for (std::size_t mi = 0; mi < mask.layers.size(); ++mi) {
    LayerMask& lm = mask.layers[mi];
    const MaskLayerGrads& mg = g.mask[mi];
    for (std::size_t e = 0; e < lm.q.size(); ++e) {
      lm.q.mean[e] -= eta_mask * mg.q_mean.data[e];
      lm.q.raw_scale[e] -= eta_mask * mg.q_raw.data[e];
    }
    for (std::size_t e = 0; e < lm.r.size(); ++e) {
      lm.r.mean[e] -= eta_mask * mg.r_mean.data[e];
      lm.r.raw_scale[e] -= eta_mask * mg.r_raw.data[e];
    }
    if (!mask.gates_fixed) {
      for (std::size_t j = 0; j < lm.r_max; ++j) {
        lm.gating.gamma[j] -= eta_gamma * mg.gamma[j];
      }
    }
  }
}

void apply_model_grads(SharedModel& model, const Gradients& g, double eta) {
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    add_scaled(model.layers[l].weight, g.weight[l], -eta);
    for (std::size_t k = 0; k < model.layers[l].bias.size(); ++k) {
      model.layers[l].bias[k] -= eta * g.bias[l][k];
    }
    ensure_finite(model.layers[l].weight, "sgd step");
  }
}

void prune_mask(ClientMask& mask, double threshold) {
  if (mask.gates_fixed) return;
  for (auto& lm : mask.layers) {
    lm.gating = threshold_prune(std::move(lm.gating), threshold);
  }
}

// T_L gradient steps on the variational parameters and gate logits with the
// shared model frozen. During training the pass ends with threshold pruning;
// the evaluation protocol skips it, since a column pruned immediately before
// prediction would leave the factors no chance to compensate.
double mask_adaptation_pass(ClientState& client, const SharedModel& model,
                            const TrainingSchedule& sched, RngStream& rng,
                            bool prune_after) {
  client.mask.reinitialize_factors(sched.reinit_std);
  double last_loss = 0.0;
  const double scale = static_cast<double>(client.data.train.size());
  for (std::size_t step = 0; step < sched.local_mask_steps; ++step) {
    RngStream batch_rng = rng.child("batch", step);
    RngStream noise_rng = rng.child("noise", step);
    const Batch mb = draw_minibatch(client.data.train, sched.batch_size, scale, batch_rng);
    const Gradients g =
        backward(model, client.mask, mb, sched.ensemble, sched.l2_weight, noise_rng);
    apply_mask_grads(client.mask, g, sched.eta_mask, sched.eta_gamma);
    last_loss = g.value.total;
  }
  if (prune_after) prune_mask(client.mask, sched.threshold);
  return last_loss;
}

}  // namespace

LocalRoundResult client_local_round(ClientState& client, const SharedModel& global,
                                    const TrainingSchedule& sched, Mode mode,
                                    RngStream rng) {
  if (client.data.train.size() == 0) {
    throw DataError("client_local_round: client " + std::to_string(client.id) +
                    " has an empty shard");
  }
  LocalRoundResult out;
  out.model = global;

  if (mode == Mode::kFedAvg) {
    for (std::size_t step = 0; step < sched.local_mask_steps; ++step) {
      RngStream batch_rng = rng.child("batch", step);
      RngStream noise_rng = rng.child("noise", step);
      Batch mb = draw_minibatch(client.data.train, sched.batch_size, 1.0, batch_rng);
      mb.dataset_size = static_cast<double>(mb.labels.size());  // plain mean loss
      const Gradients g = backward(out.model, client.mask, mb, 1, 0.0, noise_rng);
      apply_model_grads(out.model, g, sched.eta_fedavg);
      out.train_loss = g.value.total;
    }
    return out;
  }

  if (mode == Mode::kLrBpflJoint) {
    client.mask.reinitialize_factors(sched.reinit_std);
    const double scale = static_cast<double>(client.data.train.size());
    for (std::size_t step = 0; step < sched.local_mask_steps; ++step) {
      RngStream batch_rng = rng.child("batch", step);
      RngStream noise_rng = rng.child("noise", step);
      const Batch mb = draw_minibatch(client.data.train, sched.batch_size, scale, batch_rng);
      const Gradients g =
          backward(out.model, client.mask, mb, sched.ensemble, sched.l2_weight, noise_rng);
      apply_mask_grads(client.mask, g, sched.eta_mask, sched.eta_gamma);
      apply_model_grads(out.model, g, sched.eta_w);
      out.train_loss = g.value.total;
    }
    prune_mask(client.mask, sched.threshold);
    return out;
  }

  // lr_bpfl and the no-ARS ablation: coordinate descent.
  RngStream mask_rng = rng.child("mask");
  out.train_loss = mask_adaptation_pass(client, global, sched, mask_rng, /*prune_after=*/true);

  const double scale = static_cast<double>(client.data.train.size());
  for (std::size_t step = 0; step < sched.w_steps; ++step) {
    RngStream batch_rng = rng.child("w_batch", step);
    RngStream noise_rng = rng.child("w_noise", step);
    const Batch mb = draw_minibatch(client.data.train, sched.batch_size, scale, batch_rng);
    const Gradients g =
        backward(out.model, client.mask, mb, sched.ensemble, sched.l2_weight, noise_rng);
    apply_model_grads(out.model, g, sched.eta_w);
    out.train_loss = g.value.total;
  }
  return out;
}

SharedModel aggregate(const std::vector<SharedModel>& models,
                      const std::vector<double>& weights) {
  if (models.empty()) throw ConfigError("aggregate: no models");
  if (models.size() != weights.size()) {
    throw ShapeError("aggregate: " + std::to_string(models.size()) + " models vs " +
                     std::to_string(weights.size()) + " weights");
  }
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw ConfigError("aggregate: negative weight");
    total += w;
  }
  if (total <= 0.0) throw ConfigError("aggregate: weights sum to zero");

  SharedModel out = models.front();
  for (auto& layer : out.layers) {
    std::fill(layer.weight.data.begin(), layer.weight.data.end(), 0.0);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
  for (std::size_t m = 0; m < models.size(); ++m) {
    const double w = weights[m] / total;
    if (models[m].layers.size() != out.layers.size()) {
      throw ShapeError("aggregate: model " + std::to_string(m) + " has " +
                       std::to_string(models[m].layers.size()) + " layers, expected " +
                       std::to_string(out.layers.size()));
    }
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
      add_scaled(out.layers[l].weight, models[m].layers[l].weight, w);
      const auto& bias = models[m].layers[l].bias;
      if (bias.size() != out.layers[l].bias.size()) {
        throw ShapeError("aggregate: bias length mismatch in layer " + std::to_string(l));
      }
      for (std::size_t k = 0; k < bias.size(); ++k) out.layers[l].bias[k] += w * bias[k];
    }
  }
  for (const auto& layer : out.layers) ensure_finite(layer.weight, "aggregate");
  return out;
}

namespace {

std::vector<std::vector<std::size_t>> snapshot_ranks(const std::vector<ClientState>& clients) {
  std::vector<std::vector<std::size_t>> ranks(clients.size());
  for (std::size_t k = 0; k < clients.size(); ++k) {
    for (std::size_t mi = 0; mi < clients[k].mask.layers.size(); ++mi) {
      ranks[k].push_back(clients[k].mask.layer_rank(mi));
    }
  }
  return ranks;
}

}  // namespace

TrainResult run_training(SharedModel initial, std::vector<ClientState> clients,
                         const TrainingSchedule& sched, Mode mode, RngStream root,
                         const RoundCallback& on_round) {
  sched.validate();
  if (clients.empty()) throw ConfigError("run_training: no clients");

  TrainResult result;
  result.server = ServerState{0, std::move(initial)};
  result.clients = std::move(clients);

  for (std::size_t t = 0; t < sched.rounds; ++t) {
    RngStream round_rng = root.child("round", t);
    RngStream select_rng = round_rng.child("select");
    const auto sampled = sample_clients(result.clients.size(), sched.fraction, select_rng);

    std::vector<SharedModel> payloads;
    std::vector<double> weights;
    payloads.reserve(sampled.size());
    weights.reserve(sampled.size());
    double loss_sum = 0.0;
    for (auto k : sampled) {
      ClientState& client = result.clients[k];
      try {
        RngStream client_rng = round_rng.child("client", static_cast<std::uint64_t>(client.id));
        LocalRoundResult local =
            client_local_round(client, result.server.model, sched, mode, client_rng);
        loss_sum += local.train_loss;
        payloads.push_back(std::move(local.model));
        weights.push_back(client.weight);
      } catch (const NumericError& e) {
        throw NumericError("round " + std::to_string(t) + ", client " +
                           std::to_string(client.id) + ": " + e.what());
      }
    }
    result.server.model = aggregate(payloads, weights);
    result.server.round = t + 1;

    RoundRecord record;
    record.round = t;
    record.mode = mode_name(mode);
    record.mean_train_loss = loss_sum / static_cast<double>(sampled.size());
    for (auto k : sampled) record.sampled.push_back(result.clients[k].id);
    record.ranks = snapshot_ranks(result.clients);
    const bool last = (t + 1 == sched.rounds);
    if ((sched.eval_every > 0 && (t + 1) % sched.eval_every == 0) || last) {
      RngStream eval_rng = round_rng.child("eval");
      const auto report =
          evaluate_fleet(result.server.model, result.clients, sched, mode, eval_rng);
      record.eval = EvalSummary{report.mean_accuracy, report.a_ece, report.w_ece};
    }
    result.log.push_back(record);
    if (on_round) on_round(result.log.back());
  }
  return result;
}

ClientState adapt_new_client(const SharedModel& final_model, int id, ClientData data,
                             const TrainingSchedule& sched, Mode mode, RngStream rng) {
  if (data.train.size() == 0) {
    throw DataError("adapt_new_client: empty shard for client " + std::to_string(id));
  }
  ClientState client;
  client.id = id;
  client.data = std::move(data);
  client.mask = ClientMask::init(final_model.specs, sched.r_max, sched.prior_var,
                                 sched.gamma_init, sched.reinit_std,
                                 mode == Mode::kLrBpflNoArs);
  client.weight = 0.0;
  if (mode == Mode::kFedAvg) return client;  // nothing to personalize

  client.mask.reinitialize_factors(sched.reinit_std);
  const double scale = static_cast<double>(client.data.train.size());
  for (std::size_t step = 0; step < sched.local_mask_steps; ++step) {
    RngStream batch_rng = rng.child("batch", step);
    RngStream noise_rng = rng.child("noise", step);
    const Batch mb = draw_minibatch(client.data.train, sched.batch_size, scale, batch_rng);
    const Gradients g =
        backward(final_model, client.mask, mb, sched.ensemble, sched.l2_weight, noise_rng);
    apply_mask_grads(client.mask, g, sched.eta_mask, sched.eta_gamma);
  }
  prune_mask(client.mask, sched.threshold);
  return client;
}

ClientReport evaluate_client_state(const SharedModel& model, const ClientState& client,
                                   const TrainingSchedule& sched, Mode mode, RngStream rng,
                                   std::size_t num_bins,
                                   std::vector<std::size_t>* final_ranks) {
  if (client.data.test.size() == 0) {
    throw DataError("evaluate_client_state: client " + std::to_string(client.id) +
                    " has no test samples");
  }
  Matrix probs;
  if (mode == Mode::kFedAvg) {
    probs = softmax_rows(forward(model, MaskSample{}, client.data.test.features));
    if (final_ranks) final_ranks->clear();
  } else {
    ClientState copy = client;
    RngStream adapt_rng = rng.child("adapt");
    mask_adaptation_pass(copy, model, sched, adapt_rng, /*prune_after=*/false);
    RngStream predict_rng = rng.child("predict");
    probs = predict_ensemble(model, copy.mask, client.data.test.features, sched.ensemble,
                             predict_rng);
    if (final_ranks) {
      final_ranks->clear();
      for (std::size_t mi = 0; mi < copy.mask.layers.size(); ++mi) {
        final_ranks->push_back(copy.mask.layer_rank(mi));
      }
    }
  }
  const auto ev = evaluate_client(probs, client.data.test.labels);
  ClientReport report;
  report.id = client.id;
  report.accuracy = ev.accuracy;
  report.ece = ece(ev.confidences, ev.correctness, num_bins);
  report.mce = mce(ev.confidences, ev.correctness, num_bins);
  report.bins = reliability_bins(ev.confidences, ev.correctness, num_bins);
  return report;
}

CalibrationReport evaluate_fleet(const SharedModel& model,
                                 const std::vector<ClientState>& clients,
                                 const TrainingSchedule& sched, Mode mode, RngStream rng,
                                 std::size_t num_bins,
                                 std::vector<std::vector<std::size_t>>* final_ranks) {
  std::vector<ClientReport> reports;
  if (final_ranks) final_ranks->assign(clients.size(), {});
  for (std::size_t k = 0; k < clients.size(); ++k) {
    if (clients[k].data.test.size() == 0) continue;  // nothing to score
    RngStream client_rng = rng.child("client", static_cast<std::uint64_t>(clients[k].id));
    std::vector<std::size_t> ranks;
    reports.push_back(evaluate_client_state(model, clients[k], sched, mode, client_rng,
                                            num_bins, final_ranks ? &ranks : nullptr));
    if (final_ranks) (*final_ranks)[k] = std::move(ranks);
  }
  return fleet_report(std::move(reports));
}

std::string round_record_to_json(const RoundRecord& record) {
  nlohmann::json j;
  j["round"] = record.round;
  j["mode"] = record.mode;
  j["mean_train_loss"] = record.mean_train_loss;
  j["sampled"] = record.sampled;
  j["ranks"] = record.ranks;
  if (record.eval) {
    j["eval"] = {{"mean_accuracy", record.eval->mean_accuracy},
                 {"a_ece", record.eval->a_ece},
                 {"w_ece", record.eval->w_ece}};
  }
  return j.dump();
}

std::string shared_model_payload_json(const SharedModel& model) {
  nlohmann::json j;
  j["layers"] = nlohmann::json::array();
  for (const auto& layer : model.layers) {
    j["layers"].push_back({{"rows", layer.weight.rows},
                           {"cols", layer.weight.cols},
                           {"weight", layer.weight.data},
                           {"bias", layer.bias}});
  }
  return j.dump();
}

SharedModel shared_model_from_payload(const std::string& text,
                                      const std::vector<LayerSpec>& specs) {
  const auto j = nlohmann::json::parse(text);
  SharedModel model;
  model.specs = specs;
  const auto& layers = j.at("layers");
  if (layers.size() != specs.size()) {
    throw ShapeError("payload: " + std::to_string(layers.size()) + " layers, expected " +
                     std::to_string(specs.size()));
  }
  for (std::size_t l = 0; l < specs.size(); ++l) {
    Layer layer;
    layer.weight.rows = layers[l].at("rows").get<std::size_t>();
    layer.weight.cols = layers[l].at("cols").get<std::size_t>();
    layer.weight.data = layers[l].at("weight").get<std::vector<double>>();
    layer.bias = layers[l].at("bias").get<std::vector<double>>();
    if (layer.weight.rows != specs[l].out_dim || layer.weight.cols != specs[l].in_dim ||
        layer.weight.data.size() != layer.weight.rows * layer.weight.cols ||
        layer.bias.size() != specs[l].out_dim) {
      throw ShapeError("payload: layer " + std::to_string(l) + " shape mismatch");
    }
    model.layers.push_back(std::move(layer));
  }
  return model;
}

}  // namespace lrb
