#include "lrb/variational.hpp"

#include <cmath>
#include <string>

#include "lrb/errors.hpp"

namespace lrb {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double softplus_inv(double y) {
  if (y <= 0.0) throw ConfigError("softplus_inv: argument must be positive");
  // x = log(exp(y) - 1); for large y the direct form overflows
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

DiagGaussian::DiagGaussian(std::size_t n, double mean_value, double std_value)
    : mean(n, mean_value), raw_scale(n, softplus_inv(std_value)) {}

GatingState::GatingState(std::size_t r_max, double gamma_init)
    : gamma(r_max, gamma_init), pruned(r_max, 0) {
  if (r_max == 0) throw ConfigError("GatingState: r_max must be >= 1");
}

std::size_t GatingState::active_rank() const {
  std::size_t n = 0;
  for (auto p : pruned) n += (p == 0);
  return n;
}

std::vector<double> gate_values(const GatingState& g) {
  std::vector<double> lambda(g.gamma.size());
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    lambda[i] = g.pruned[i] ? 0.0 : sigmoid(g.gamma[i]);
  }
  return lambda;
}

std::size_t effective_rank(const GatingState& g, double threshold) {
  std::size_t rank = 1;  // index 0 is never pruned and always counts
  for (std::size_t i = 1; i < g.gamma.size(); ++i) {
    if (!g.pruned[i] && sigmoid(g.gamma[i]) >= threshold) ++rank;
  }
  return rank;
}

GatingState threshold_prune(GatingState g, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("threshold_prune: threshold must be in (0, 1), got " +
                      std::to_string(threshold));
  }
  for (std::size_t i = 1; i < g.gamma.size(); ++i) {
    if (!g.pruned[i] && sigmoid(g.gamma[i]) < threshold) g.pruned[i] = 1;
  }
  return g;
}

double kl_diag_gaussians(const DiagGaussian& q, const DiagGaussian& p) {
  if (q.size() != p.size()) {
    throw ShapeError("kl_diag_gaussians: length mismatch " + std::to_string(q.size()) +
                     " vs " + std::to_string(p.size()));
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double sq = q.stddev(i);
    const double sp = p.stddev(i);
    const double dm = q.mean[i] - p.mean[i];
    kl += std::log(sp / sq) + (sq * sq + dm * dm) / (2.0 * sp * sp) - 0.5;
  }
  if (!std::isfinite(kl)) throw NumericError("kl_diag_gaussians: non-finite result");
  return kl;
}

ReparamDraw reparam_sample(const DiagGaussian& q, RngStream& rng) {
  ReparamDraw d;
  d.noise = rng.normal_vec(q.size());
  d.value.resize(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    d.value[i] = q.mean[i] + q.stddev(i) * d.noise[i];
  }
  return d;
}

DiagGaussian prior_for_rank(std::size_t r, double prior_var, std::size_t n) {
  if (r == 0) throw ConfigError("prior_for_rank: rank must be >= 1");
  if (prior_var <= 0.0) throw ConfigError("prior_for_rank: variance must be positive");
  return DiagGaussian(n, 1.0 / std::sqrt(static_cast<double>(r)), std::sqrt(prior_var));
}

}  // namespace lrb
