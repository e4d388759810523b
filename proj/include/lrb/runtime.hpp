#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lrb/data.hpp"
#include "lrb/metrics.hpp"
#include "lrb/network.hpp"

namespace lrb {

enum class Mode { kLrBpfl, kLrBpflJoint, kLrBpflNoArs, kFedAvg };

std::string mode_name(Mode mode);
std::optional<Mode> parse_mode(const std::string& name);

struct TrainingSchedule {
  std::size_t rounds = 1000;
  double fraction = 0.2;              // share of clients sampled per round
  std::size_t local_mask_steps = 20;  // T_L; also the fedavg local step count
  std::size_t w_steps = 1;            // shared-model steps per client round
  double eta_w = 0.001;
  double eta_mask = 0.01;
  double eta_gamma = 0.001;
  double eta_fedavg = 0.1;
  std::size_t batch_size = 32;
  double threshold = 0.95;  // gate pruning threshold
  std::size_t r_max = 8;
  std::size_t ensemble = 4;  // Monte Carlo / prediction sample count
  double prior_var = 0.1;
  double l2_weight = 0.1;
  double gamma_init = 3.5;
  double reinit_std = 0.05;
  std::size_t eval_every = 10;  // 0 disables in-training evaluation

  void validate() const;  // throws ConfigError naming the offending field
};

struct ClientData {
  Dataset train;
  Dataset test;
};

struct ClientState {
  int id = 0;
  ClientData data;
  ClientMask mask;
  double weight = 0.0;  // l_k, proportional to local dataset size
};

struct ServerState {
  std::size_t round = 0;
  SharedModel model;
};

/// Uniform subset of round(fraction * num_clients) distinct clients,
/// returned sorted.
std::vector<std::size_t> sample_clients(std::size_t num_clients, double fraction,
                                        RngStream& rng);

struct LocalRoundResult {
  SharedModel model;  // the only payload that travels to the server
  double train_loss = 0.0;
};

/// One client round: factor reinitialization, T_L mask steps with the shared
/// model frozen, shared-model step(s) with the mask frozen, threshold
/// pruning. Ablation modes adjust which pieces run.
LocalRoundResult client_local_round(ClientState& client, const SharedModel& global,
                                    const TrainingSchedule& sched, Mode mode, RngStream rng);

/// Weighted elementwise mean; weights are renormalized over the given subset
/// so sampling a fraction of clients does not shrink the model.
SharedModel aggregate(const std::vector<SharedModel>& models,
                      const std::vector<double>& weights);

struct EvalSummary {
  double mean_accuracy = 0.0;
  double a_ece = 0.0;
  double w_ece = 0.0;
};

struct RoundRecord {
  std::size_t round = 0;
  std::string mode;
  double mean_train_loss = 0.0;
  std::vector<int> sampled;
  std::vector<std::vector<std::size_t>> ranks;  // per client, per masked layer
  std::optional<EvalSummary> eval;
};

std::string round_record_to_json(const RoundRecord& record);

struct TrainResult {
  ServerState server;
  std::vector<ClientState> clients;
  std::vector<RoundRecord> log;
};

using RoundCallback = std::function<void(const RoundRecord&)>;

TrainResult run_training(SharedModel initial, std::vector<ClientState> clients,
                         const TrainingSchedule& sched, Mode mode, RngStream root,
                         const RoundCallback& on_round = nullptr);

/// Personalize the final shared model for a client that never trained:
/// fresh mask, T_L adaptation steps with the model frozen, prune.
ClientState adapt_new_client(const SharedModel& final_model, int id, ClientData data,
                             const TrainingSchedule& sched, Mode mode, RngStream rng);

/// Evaluation protocol: personalized modes re-adapt a copy of the client's
/// mask to the given shared model (mirroring what a participating client
/// does on receipt) and predict with the mask ensemble; fedavg predicts with
/// the shared model directly. `final_ranks`, when given, receives the
/// evaluated mask's per-layer ranks.
ClientReport evaluate_client_state(const SharedModel& model, const ClientState& client,
                                   const TrainingSchedule& sched, Mode mode, RngStream rng,
                                   std::size_t num_bins = 10,
                                   std::vector<std::size_t>* final_ranks = nullptr);

CalibrationReport evaluate_fleet(const SharedModel& model,
                                 const std::vector<ClientState>& clients,
                                 const TrainingSchedule& sched, Mode mode, RngStream rng,
                                 std::size_t num_bins = 10,
                                 std::vector<std::vector<std::size_t>>* final_ranks = nullptr);

/// The client-to-server wire format: shared tensors only.
std::string shared_model_payload_json(const SharedModel& model);
SharedModel shared_model_from_payload(const std::string& text,
                                      const std::vector<LayerSpec>& specs);

}  // namespace lrb
