#pragma once

#include <cstddef>
#include <vector>

#include "lrb/matrix.hpp"
#include "lrb/rng.hpp"
#include "lrb/variational.hpp"

namespace lrb {

enum class Activation { kRelu, kIdentity };

struct LayerSpec {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation activation = Activation::kIdentity;
  bool masked = false;
};

struct Layer {
  Matrix weight;             // out_dim x in_dim
  std::vector<double> bias;  // out_dim
};

/// The deterministic model shared across clients. This is the only state
/// that ever travels to the server.
struct SharedModel {
  std::vector<LayerSpec> specs;
  std::vector<Layer> layers;

  static SharedModel init(std::vector<LayerSpec> specs, RngStream rng);
  std::size_t num_masked() const;
};

/// Variational factors for one masked layer. Factor entries are stored
/// row-major: q entry (j, c) for output j and rank column c lives at
/// j * r_max + c.
struct LayerMask {
  DiagGaussian q;  // out_dim x r_max entries
  DiagGaussian r;  // in_dim x r_max entries
  GatingState gating;
  std::size_t out_dim = 0;
  std::size_t in_dim = 0;
  std::size_t r_max = 0;
};

/// A client's personalized Bayesian correction: one low-rank multiplicative
/// mask per masked layer. Never serialized toward the server.
struct ClientMask {
  std::vector<LayerMask> layers;  // in masked-layer order
  std::vector<int> mask_index;    // per model layer, -1 if unmasked
  double prior_var = 0.1;
  bool gates_fixed = false;  // ablation: lambda pinned at exactly 1, no pruning

  static ClientMask init(const std::vector<LayerSpec>& specs, std::size_t r_max,
                         double prior_var, double gamma_init, double init_std,
                         bool gates_fixed = false);

  /// Gate values for masked layer `mi` (all ones when gates_fixed).
  std::vector<double> gates(std::size_t mi) const;
  /// Unpruned column count for masked layer `mi`; equals r_max when fixed.
  std::size_t layer_rank(std::size_t mi) const;
  /// Reset factor means to the prior mean for the current rank and the
  /// stddev to init_std. Gate logits and pruned flags persist; pruned
  /// columns are left untouched.
  void reinitialize_factors(double init_std);
};

struct LayerMaskNoise {
  Matrix q_noise;  // out_dim x r_max
  Matrix r_noise;  // in_dim x r_max
};
struct MaskNoise {
  std::vector<LayerMaskNoise> layers;
};

MaskNoise sample_mask_noise(const ClientMask& mask, RngStream& rng);
MaskNoise zero_mask_noise(const ClientMask& mask);

/// A realized mask: reparameterized factor draws plus the gate values used.
/// Pruned columns are zero in both draws.
struct LayerMaskSample {
  Matrix q_draw;
  Matrix r_draw;
  std::vector<double> lambda;
};
struct MaskSample {
  std::vector<LayerMaskSample> layers;
};

MaskSample materialize(const ClientMask& mask, const MaskNoise& noise);

/// G = W o (Q diag(lambda) R^T).
Matrix compose_weight(const Matrix& w, const LayerMaskSample& sample);

struct ForwardTrace {
  std::vector<Matrix> inputs;    // activation entering each layer
  std::vector<Matrix> preacts;   // affine outputs before the nonlinearity
  std::vector<Matrix> composed;  // masked layers: the composed G; else empty
};

/// Layer-wise affine + activation; masked layers use the composed weight.
/// `sample.layers` must line up with the model's masked layers.
Matrix forward(const SharedModel& model, const MaskSample& sample, const Matrix& batch,
               ForwardTrace* trace = nullptr);

/// A client's minibatch view. dataset_size carries |D_k| so a minibatch
/// estimate preserves the full-dataset likelihood scale.
struct Batch {
  Matrix features;
  std::vector<int> labels;
  double dataset_size = 0.0;
};

struct FreeEnergyParts {
  double total = 0.0;
  double nll = 0.0;
  double kl = 0.0;
  double l2 = 0.0;
};

/// Monte Carlo free energy: (1/C) sum of dataset-scaled NLL over mask draws,
/// plus closed-form KL over live columns, plus the gate L2 penalty.
FreeEnergyParts free_energy_with_noise(const SharedModel& model, const ClientMask& mask,
                                       const Batch& batch,
                                       const std::vector<MaskNoise>& noises,
                                       double l2_weight);
FreeEnergyParts free_energy(const SharedModel& model, const ClientMask& mask,
                            const Batch& batch, std::size_t n_samples, double l2_weight,
                            RngStream& rng);

struct MaskLayerGrads {
  Matrix q_mean, q_raw;
  Matrix r_mean, r_raw;
  std::vector<double> gamma;
};

struct Gradients {
  FreeEnergyParts value;
  std::vector<Matrix> weight;
  std::vector<std::vector<double>> bias;
  std::vector<MaskLayerGrads> mask;
};

/// Exact gradients of the fixed-noise free-energy estimate for every
/// trainable tensor. Pruned columns receive zero gradient.
Gradients backward_with_noise(const SharedModel& model, const ClientMask& mask,
                              const Batch& batch, const std::vector<MaskNoise>& noises,
                              double l2_weight);
Gradients backward(const SharedModel& model, const ClientMask& mask, const Batch& batch,
                   std::size_t n_samples, double l2_weight, RngStream& rng);

/// Ensemble predictive distribution: softmax probabilities averaged over
/// n_samples mask draws, evaluated in one pass over a C-fold tiled batch.
Matrix predict_ensemble(const SharedModel& model, const ClientMask& mask,
                        const Matrix& batch, std::size_t n_samples, RngStream& rng);

/// Personalization overhead: 2(m+n)r_max factor parameters plus r_max gate
/// logits per masked layer.
std::size_t mask_param_count(const std::vector<LayerSpec>& specs, std::size_t r_max);

}  // namespace lrb
