#include "lrb/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "lrb/errors.hpp"
#include "lrb/matrix.hpp"
#include "lrb/network.hpp"
#include "lrb/variational.hpp"

namespace lrb {

namespace {

struct TestNet {
  SharedModel model;
  ClientMask mask;
  Batch batch;
  std::vector<MaskNoise> noises;
};

// Small randomized network; relu preactivations are kept away from the kink
// so central differences stay valid.
TestNet make_test_net(RngStream rng, bool prune_one_column) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    RngStream net_rng = rng.child("attempt", attempt);
    const std::size_t in = 2 + net_rng.below(3);
    const std::size_t hidden = 2 + net_rng.below(3);
    const std::size_t out = 2 + net_rng.below(2);
    const std::size_t r_max = 2;
    const std::size_t batch = 4;

    std::vector<LayerSpec> specs = {
        {in, hidden, Activation::kRelu, true},
        {hidden, out, Activation::kIdentity, true},
    };
    TestNet net;
    net.model = SharedModel::init(specs, net_rng.child("model"));
    RngStream bias_rng = net_rng.child("bias");
    for (auto& layer : net.model.layers) {
      for (auto& b : layer.bias) b = 0.3 * bias_rng.normal();
    }
    net.mask = ClientMask::init(specs, r_max, 0.1, 0.0, 0.05);
    RngStream gamma_rng = net_rng.child("gamma");
    for (auto& lm : net.mask.layers) {
      for (auto& g : lm.gating.gamma) g = 0.5 + 1.5 * gamma_rng.uniform();
    }
    if (prune_one_column) {
      net.mask.layers[0].gating.pruned[1] = 1;
    }

    RngStream data_rng = net_rng.child("data");
    net.batch.features = Matrix(batch, in);
    for (auto& v : net.batch.features.data) v = data_rng.normal();
    net.batch.labels.resize(batch);
    for (auto& l : net.batch.labels) l = static_cast<int>(data_rng.below(out));
    net.batch.dataset_size = static_cast<double>(batch);

    RngStream noise_rng = net_rng.child("noise");
    net.noises.clear();
    for (int c = 0; c < 2; ++c) net.noises.push_back(sample_mask_noise(net.mask, noise_rng));

    // margin check at the kink
    bool ok = true;
    for (const auto& noise : net.noises) {
      ForwardTrace trace;
      forward(net.model, materialize(net.mask, noise), net.batch.features, &trace);
      for (std::size_t l = 0; l < specs.size() && ok; ++l) {
        if (specs[l].activation != Activation::kRelu) continue;
        for (double z : trace.preacts[l].data) {
          if (std::abs(z) < 1e-3) {
            ok = false;
            break;
          }
        }
      }
    }
    if (ok) return net;
  }
}

double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

}  // namespace

CheckResult grad_selfcheck(std::size_t num_nets, double tolerance, RngStream rng) {
  constexpr double kStep = 1e-5;
  constexpr double kL2Weight = 0.1;
  CheckResult result;
  result.passed = true;

  for (std::size_t n = 0; n < num_nets; ++n) {
    TestNet net = make_test_net(rng.child("net", n), n % 3 == 0);
    const Gradients g =
        backward_with_noise(net.model, net.mask, net.batch, net.noises, kL2Weight);

    // All trainable scalars, paired with their analytic gradients.
    std::vector<std::pair<double*, double>> params;
    for (std::size_t l = 0; l < net.model.layers.size(); ++l) {
      auto& layer = net.model.layers[l];
      for (std::size_t i = 0; i < layer.weight.data.size(); ++i) {
        params.emplace_back(&layer.weight.data[i], g.weight[l].data[i]);
      }
      for (std::size_t i = 0; i < layer.bias.size(); ++i) {
        params.emplace_back(&layer.bias[i], g.bias[l][i]);
      }
    }
    for (std::size_t mi = 0; mi < net.mask.layers.size(); ++mi) {
      auto& lm = net.mask.layers[mi];
      const auto& mg = g.mask[mi];
      for (std::size_t e = 0; e < lm.q.size(); ++e) {
        params.emplace_back(&lm.q.mean[e], mg.q_mean.data[e]);
        params.emplace_back(&lm.q.raw_scale[e], mg.q_raw.data[e]);
      }
      for (std::size_t e = 0; e < lm.r.size(); ++e) {
        params.emplace_back(&lm.r.mean[e], mg.r_mean.data[e]);
        params.emplace_back(&lm.r.raw_scale[e], mg.r_raw.data[e]);
      }
      for (std::size_t j = 0; j < lm.r_max; ++j) {
        params.emplace_back(&lm.gating.gamma[j], mg.gamma[j]);
      }
    }

    for (auto& [ptr, analytic] : params) {
      const double saved = *ptr;
      *ptr = saved + kStep;
      const double up =
          free_energy_with_noise(net.model, net.mask, net.batch, net.noises, kL2Weight).total;
      *ptr = saved - kStep;
      const double down =
          free_energy_with_noise(net.model, net.mask, net.batch, net.noises, kL2Weight).total;
      *ptr = saved;
      const double numeric = (up - down) / (2.0 * kStep);
      const double err = rel_err(analytic, numeric);
      if (err > result.worst) {
        result.worst = err;
        result.detail = "net " + std::to_string(n) + ": analytic " + std::to_string(analytic) +
                        " vs finite-difference " + std::to_string(numeric);
      }
    }
  }
  result.passed = result.worst <= tolerance;
  return result;
}

CheckResult kl_selfcheck(std::size_t num_pairs, std::size_t num_samples, RngStream rng) {
  CheckResult result;
  result.passed = true;

  // exact one-dimensional identity
  {
    DiagGaussian q(1, 1.0, 1.0), p(1, 0.0, 1.0);
    const double kl = kl_diag_gaussians(q, p);
    if (std::abs(kl - 0.5) > 1e-12) {
      result.passed = false;
      result.detail = "KL(N(1,1)||N(0,1)) = " + std::to_string(kl) + ", expected 0.5";
      result.worst = std::abs(kl - 0.5);
      return result;
    }
  }

  for (std::size_t pair = 0; pair < num_pairs; ++pair) {
    RngStream pair_rng = rng.child("pair", pair);
    const std::size_t dim = 1 + pair_rng.below(8);
    DiagGaussian q, p;
    q.mean.resize(dim);
    q.raw_scale.resize(dim);
    p.mean.resize(dim);
    p.raw_scale.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      q.mean[i] = 4.0 * pair_rng.uniform() - 2.0;
      q.raw_scale[i] = 3.0 * pair_rng.uniform() - 1.5;
      p.mean[i] = 4.0 * pair_rng.uniform() - 2.0;
      p.raw_scale[i] = 3.0 * pair_rng.uniform() - 1.5;
    }
    const double closed = kl_diag_gaussians(q, p);

    // Monte Carlo over x ~ q of log q(x) - log p(x), evaluated from the
    // densities directly.
    RngStream mc_rng = pair_rng.child("mc");
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t s = 0; s < num_samples; ++s) {
      double term = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        const double sq = q.stddev(i);
        const double sp = p.stddev(i);
        const double z = mc_rng.normal();
        const double x = q.mean[i] + sq * z;
        const double log_q = -std::log(sq) - 0.5 * z * z;
        const double dp = (x - p.mean[i]) / sp;
        const double log_p = -std::log(sp) - 0.5 * dp * dp;
        term += log_q - log_p;
      }
      sum += term;
      sum_sq += term * term;
    }
    const double n = static_cast<double>(num_samples);
    const double estimate = sum / n;
    const double variance = std::max(0.0, sum_sq / n - estimate * estimate);
    const double se = std::sqrt(variance / n);
    const double z_score = se > 0.0 ? std::abs(closed - estimate) / se
                                    : (std::abs(closed - estimate) > 1e-12 ? 1e9 : 0.0);
    if (z_score > result.worst) {
      result.worst = z_score;
      result.detail = "pair " + std::to_string(pair) + ": closed form " +
                      std::to_string(closed) + " vs MC " + std::to_string(estimate) +
                      " (se " + std::to_string(se) + ")";
    }
  }
  result.passed = result.worst <= 3.0;
  return result;
}

CheckResult ensemble_selfcheck(RngStream rng) {
  const std::size_t ensemble = 4;
  std::vector<LayerSpec> specs = {
      {6, 5, Activation::kRelu, true},
      {5, 3, Activation::kIdentity, true},
  };
  SharedModel model = SharedModel::init(specs, rng.child("model"));
  ClientMask mask = ClientMask::init(specs, 3, 0.1, 1.0, 0.2);
  mask.layers[1].gating.pruned[2] = 1;

  RngStream data_rng = rng.child("data");
  Matrix batch(5, 6);
  for (auto& v : batch.data) v = data_rng.normal();

  RngStream tiled_rng = rng.child("draws");
  RngStream loop_rng = rng.child("draws");
  const Matrix tiled = predict_ensemble(model, mask, batch, ensemble, tiled_rng);

  Matrix looped(batch.rows, 3);
  for (std::size_t c = 0; c < ensemble; ++c) {
    const MaskNoise noise = sample_mask_noise(mask, loop_rng);
    const Matrix probs = softmax_rows(forward(model, materialize(mask, noise), batch));
    for (std::size_t i = 0; i < probs.data.size(); ++i) looped.data[i] += probs.data[i];
  }
  for (double& v : looped.data) v /= static_cast<double>(ensemble);

  CheckResult result;
  result.passed = true;
  for (std::size_t i = 0; i < tiled.data.size(); ++i) {
    const double diff = std::abs(tiled.data[i] - looped.data[i]);
    if (diff > result.worst) {
      result.worst = diff;
      result.detail = "entry " + std::to_string(i) + ": tiled " +
                      std::to_string(tiled.data[i]) + " vs loop " +
                      std::to_string(looped.data[i]);
    }
  }
  result.passed = result.worst == 0.0;
  return result;
}

}  // namespace lrb
