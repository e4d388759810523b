#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "lrb/rng.hpp"

namespace lrb {

double sigmoid(double x);
double softplus(double x);
/// Inverse of softplus; y must be positive.
double softplus_inv(double y);

/// Factorized Gaussian with mean vector and softplus-parameterized scale.
/// The softplus keeps the standard deviation strictly positive without the
/// blow-up risk of a log-scale parameterization.
struct DiagGaussian {
  std::vector<double> mean;
  std::vector<double> raw_scale;  // std_i = softplus(raw_scale_i)

  DiagGaussian() = default;
  DiagGaussian(std::size_t n, double mean_value, double std_value);

  std::size_t size() const { return mean.size(); }
  double stddev(std::size_t i) const { return softplus(raw_scale[i]); }
};

/// Relaxed binary gates over rank columns. Gate i carries a logit gamma_i;
/// its value is sigmoid(gamma_i) until the column is pruned, after which it
/// is pinned to zero. Pruning is persistent and never touches index 0, so the
/// effective rank stays in [1, r_max] and is non-increasing over training.
struct GatingState {
  std::vector<double> gamma;
  std::vector<std::uint8_t> pruned;

  GatingState() = default;
  GatingState(std::size_t r_max, double gamma_init);

  std::size_t r_max() const { return gamma.size(); }
  /// Number of unpruned columns (>= 1).
  std::size_t active_rank() const;
};

/// lambda_i = sigmoid(gamma_i) for live columns, 0 for pruned ones.
std::vector<double> gate_values(const GatingState& g);

/// Count of live gates at or above the threshold; index 0 always counts.
std::size_t effective_rank(const GatingState& g, double threshold);

/// Marks every live column i >= 1 with sigmoid(gamma_i) < threshold as pruned.
/// Already-pruned columns stay pruned.
GatingState threshold_prune(GatingState g, double threshold);

/// KL(q || p) for factorized Gaussians, in closed form.
double kl_diag_gaussians(const DiagGaussian& q, const DiagGaussian& p);

struct ReparamDraw {
  std::vector<double> value;  // mean + softplus(raw_scale) * noise
  std::vector<double> noise;
};

ReparamDraw reparam_sample(const DiagGaussian& q, RngStream& rng);

/// Prior over one rank column: mean 1/sqrt(r) so the mask is centered on the
/// all-ones matrix, fixed small variance.
DiagGaussian prior_for_rank(std::size_t r, double prior_var, std::size_t n);

}  // namespace lrb
