#include <cmath>

#include <doctest.h>

#include "lrb/errors.hpp"
#include "lrb/variational.hpp"

using namespace lrb;

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

DiagGaussian random_gaussian(std::size_t dim, RngStream& rng) {
  DiagGaussian g;
  g.mean.resize(dim);
  g.raw_scale.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    g.mean[i] = 4.0 * rng.uniform() - 2.0;
    g.raw_scale[i] = 3.0 * rng.uniform() - 1.5;
  }
  return g;
}

}  // namespace

TEST_SUITE("variational") {

TEST_CASE("gate value at the sigmoid midpoint and the standard init") {
  GatingState g(3, 0.0);
  CHECK(gate_values(g)[0] == 0.5);
  GatingState h(3, 3.5);
  CHECK(gate_values(h)[1] == doctest::Approx(0.97068776924864).epsilon(1e-10));
}

TEST_CASE("pruned gates read zero regardless of gamma") {
  GatingState g(3, 5.0);
  g.pruned[2] = 1;
  const auto lambda = gate_values(g);
  CHECK(lambda[2] == 0.0);
  CHECK(lambda[1] > 0.99);
}

TEST_CASE("effective rank counts thresholded live gates, index 0 always") {
  SUBCASE("all pruned except the first") {
    GatingState g(4, 3.5);
    g.pruned[1] = g.pruned[2] = g.pruned[3] = 1;
    CHECK(effective_rank(g, 0.95) == 1);
  }
  SUBCASE("direct count over mixed gates") {
    GatingState g(5, 0.0);
    g.gamma = {logit(0.97), logit(0.97), logit(0.96), logit(0.3), logit(0.2)};
    CHECK(effective_rank(g, 0.95) == 3);
  }
  SUBCASE("fresh state at the standard init keeps full rank") {
    GatingState g(8, 3.5);
    CHECK(effective_rank(g, 0.95) == 8);
  }
}

TEST_CASE("threshold pruning") {
  SUBCASE("prunes below-threshold gates, never index 0") {
    GatingState g(3, 0.0);
    g.gamma = {logit(0.5), logit(0.97), logit(0.90)};
    const auto pruned = threshold_prune(g, 0.95);
    CHECK(pruned.pruned[0] == 0);
    CHECK(pruned.pruned[1] == 0);
    CHECK(pruned.pruned[2] == 1);
    CHECK(effective_rank(pruned, 0.95) == 2);
  }
  SUBCASE("pruning is persistent even if gamma later grows") {
    GatingState g(2, 0.0);
    auto once = threshold_prune(g, 0.95);
    CHECK(once.pruned[1] == 1);
    once.gamma[1] = 10.0;
    const auto twice = threshold_prune(once, 0.95);
    CHECK(twice.pruned[1] == 1);
    CHECK(gate_values(twice)[1] == 0.0);
  }
  SUBCASE("standard init survives the standard threshold") {
    GatingState g(8, 3.5);
    const auto pruned = threshold_prune(g, 0.95);
    for (auto p : pruned.pruned) CHECK(p == 0);
  }
  SUBCASE("threshold outside (0,1) is a config error") {
    GatingState g(2, 0.0);
    CHECK_THROWS_AS(threshold_prune(g, 0.0), ConfigError);
    CHECK_THROWS_AS(threshold_prune(g, 1.0), ConfigError);
  }
}

TEST_CASE("KL closed form matches hand values") {
  SUBCASE("q = p gives exactly zero") {
    DiagGaussian q(3, 0.7, 0.4);
    CHECK(std::abs(kl_diag_gaussians(q, q)) <= 1e-12);
  }
  SUBCASE("N(1,1) vs N(0,1) is one half") {
    DiagGaussian q(1, 1.0, 1.0), p(1, 0.0, 1.0);
    CHECK(std::abs(kl_diag_gaussians(q, p) - 0.5) <= 1e-12);
  }
  SUBCASE("N(0,4) vs N(0,1)") {
    DiagGaussian q(1, 0.0, 2.0), p(1, 0.0, 1.0);
    CHECK(kl_diag_gaussians(q, p) ==
          doctest::Approx(-std::log(2.0) + 2.0 - 0.5).epsilon(1e-12));
  }
  SUBCASE("length mismatch throws") {
    DiagGaussian q(2, 0.0, 1.0), p(3, 0.0, 1.0);
    CHECK_THROWS_AS(kl_diag_gaussians(q, p), ShapeError);
  }
}

TEST_CASE("KL agrees with a Monte Carlo estimate within 3 standard errors") {
  // E_q[log q - log p] sampled independently of the closed form.
  RngStream rng(31);
  DiagGaussian q(1, 1.0, 1.0), p(1, 0.0, 1.0);
  const std::size_t n = 200000;
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const double z = rng.normal();
    const double x = q.mean[0] + q.stddev(0) * z;
    const double term = -0.5 * z * z + 0.5 * x * x;  // unit scales on both sides
    sum += term;
    sum_sq += term * term;
  }
  const double est = sum / n;
  const double se = std::sqrt((sum_sq / n - est * est) / n);
  CHECK(std::abs(kl_diag_gaussians(q, p) - est) <= 3.0 * se);
}

TEST_CASE("KL is non-negative on random pairs and zero on itself") {
  RngStream rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    RngStream t = rng.child("pair", trial);
    const std::size_t dim = 1 + t.below(6);
    const DiagGaussian q = random_gaussian(dim, t);
    const DiagGaussian p = random_gaussian(dim, t);
    CHECK(kl_diag_gaussians(q, p) >= 0.0);
    CHECK(std::abs(kl_diag_gaussians(q, q)) <= 1e-12);
  }
}

TEST_CASE("gate values are monotone in gamma for live columns") {
  RngStream rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    GatingState g(4, 0.0);
    for (auto& v : g.gamma) v = 6.0 * rng.uniform() - 3.0;
    g.pruned[3] = 1;
    GatingState h = g;
    const std::size_t i = rng.below(3);
    h.gamma[i] += 0.5 + rng.uniform();
    const auto lg = gate_values(g);
    const auto lh = gate_values(h);
    CHECK(lh[i] > lg[i]);
    CHECK(lh[3] == 0.0);
  }
}

TEST_CASE("reparameterized sampling") {
  SUBCASE("degenerate variance collapses to the mean") {
    DiagGaussian q;
    q.mean = {1.0, -2.0, 0.5};
    q.raw_scale = {-40.0, -40.0, -40.0};
    RngStream rng(5);
    const auto draw = reparam_sample(q, rng);
    for (std::size_t i = 0; i < q.size(); ++i) {
      CHECK(std::abs(draw.value[i] - q.mean[i]) <= 1e-15);
    }
  }
  SUBCASE("sample mean satisfies a CLT bound per coordinate") {
    DiagGaussian q;
    q.mean = {0.3, -1.2};
    q.raw_scale = {softplus_inv(0.7), softplus_inv(1.4)};
    RngStream rng(6);
    const std::size_t n = 100000;
    std::vector<double> sums(q.size(), 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      const auto draw = reparam_sample(q, rng);
      for (std::size_t i = 0; i < q.size(); ++i) sums[i] += draw.value[i];
    }
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double bound = 4.0 * q.stddev(i) / std::sqrt(static_cast<double>(n));
      CHECK(std::abs(sums[i] / n - q.mean[i]) <= bound);
    }
  }
  SUBCASE("gradients through the draw match finite differences") {
    // f = sum(value^2) with the noise held fixed
    DiagGaussian q;
    q.mean = {0.4, -0.9};
    q.raw_scale = {0.1, -0.3};
    RngStream rng(8);
    auto draw = reparam_sample(q, rng);
    const auto noise = draw.noise;
    auto value_of = [&](const DiagGaussian& g) {
      double f = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = g.mean[i] + softplus(g.raw_scale[i]) * noise[i];
        f += v * v;
      }
      return f;
    };
    const double h = 1e-6;
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double analytic_mean = 2.0 * draw.value[i];
      const double analytic_raw = 2.0 * draw.value[i] * noise[i] * sigmoid(q.raw_scale[i]);
      DiagGaussian up = q, down = q;
      up.mean[i] += h;
      down.mean[i] -= h;
      double numeric = (value_of(up) - value_of(down)) / (2.0 * h);
      CHECK(std::abs(analytic_mean - numeric) /
                std::max({1.0, std::abs(analytic_mean), std::abs(numeric)}) <=
            1e-5);
      up = q;
      down = q;
      up.raw_scale[i] += h;
      down.raw_scale[i] -= h;
      numeric = (value_of(up) - value_of(down)) / (2.0 * h);
      CHECK(std::abs(analytic_raw - numeric) /
                std::max({1.0, std::abs(analytic_raw), std::abs(numeric)}) <=
            1e-5);
    }
  }
  SUBCASE("reparameterized gradient of E[value^2] w.r.t. mean is unbiased") {
    DiagGaussian q;
    q.mean = {0.8};
    q.raw_scale = {softplus_inv(0.5)};
    RngStream rng(9);
    const std::size_t n = 10000;
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const auto draw = reparam_sample(q, rng);
      const double grad = 2.0 * draw.value[0];  // d(value^2)/d mean
      sum += grad;
      sum_sq += grad * grad;
    }
    const double est = sum / n;
    const double se = std::sqrt((sum_sq / n - est * est) / n);
    CHECK(std::abs(est - 2.0 * q.mean[0]) <= 3.0 * se);
  }
}

TEST_CASE("prior for rank") {
  SUBCASE("rank one centers the mask on all-ones") {
    const auto p = prior_for_rank(1, 0.1, 4);
    for (double m : p.mean) CHECK(m == 1.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
      CHECK(p.stddev(i) * p.stddev(i) == doctest::Approx(0.1).epsilon(1e-12));
    }
  }
  SUBCASE("rank four halves the mean") {
    CHECK(prior_for_rank(4, 0.1, 2).mean[0] == 0.5);
  }
  SUBCASE("rank eight") {
    CHECK(prior_for_rank(8, 0.1, 1).mean[0] ==
          doctest::Approx(0.35355339059327373).epsilon(1e-12));
  }
  SUBCASE("rank zero is rejected") {
    CHECK_THROWS_AS(prior_for_rank(0, 0.1, 1), ConfigError);
  }
}

TEST_CASE("softplus and its inverse round-trip") {
  for (double y : {0.05, 0.3, 1.0, 5.0, 40.0}) {
    CHECK(softplus(softplus_inv(y)) == doctest::Approx(y).epsilon(1e-12));
  }
  CHECK_THROWS_AS(softplus_inv(0.0), ConfigError);
}

}  // TEST_SUITE
