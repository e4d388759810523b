#include "lrb/network.hpp"

#include <cmath>
#include <string>

#include "lrb/errors.hpp"

namespace lrb {

namespace {

std::vector<double> colsum(const Matrix& m) {
  std::vector<double> s(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) s[j] += m(i, j);
  return s;
}

// dst rows [row_begin, row_end) = act(src_rows * w^T + bias), sharing the
// exact per-row arithmetic between the plain and the tiled forward paths.
void affine_rows(const Matrix& src, std::size_t row_begin, std::size_t row_end,
                 const Matrix& w, const std::vector<double>& bias, Matrix& dst) {
  for (std::size_t i = row_begin; i < row_end; ++i) {
    const double* arow = &src.data[i * src.cols];
    double* drow = &dst.data[i * dst.cols];
    for (std::size_t k = 0; k < w.rows; ++k) {
      const double* wrow = &w.data[k * w.cols];
      double acc = 0.0;
      for (std::size_t j = 0; j < src.cols; ++j) acc += arow[j] * wrow[j];
      drow[k] = acc + bias[k];
    }
  }
}

Matrix apply_activation(const Matrix& z, Activation act) {
  if (act == Activation::kIdentity) return z;
  Matrix h = z;
  for (double& v : h.data) v = v > 0.0 ? v : 0.0;
  return h;
}

Matrix compose_mask(const LayerMaskSample& s, std::size_t out_dim, std::size_t in_dim) {
  if (s.q_draw.rows != out_dim || s.r_draw.rows != in_dim ||
      s.q_draw.cols != s.r_draw.cols || s.q_draw.cols != s.lambda.size()) {
    throw ShapeError("compose_mask: factor shapes " + s.q_draw.shape_str() + ", " +
                     s.r_draw.shape_str() + " do not fit a " + std::to_string(out_dim) +
                     "x" + std::to_string(in_dim) + " layer");
  }
  Matrix q_scaled = s.q_draw;
  for (std::size_t a = 0; a < q_scaled.rows; ++a)
    for (std::size_t j = 0; j < q_scaled.cols; ++j) q_scaled(a, j) *= s.lambda[j];
  return matmul_bt(q_scaled, s.r_draw);
}

void check_mask_alignment(const SharedModel& model, const MaskSample& sample) {
  if (model.num_masked() != sample.layers.size()) {
    throw ShapeError("forward: model has " + std::to_string(model.num_masked()) +
                     " masked layers but the sample carries " +
                     std::to_string(sample.layers.size()));
  }
}

}  // namespace

SharedModel SharedModel::init(std::vector<LayerSpec> specs, RngStream rng) {
  SharedModel m;
  m.specs = std::move(specs);
  for (const auto& spec : m.specs) {
    if (spec.in_dim == 0 || spec.out_dim == 0) {
      throw ConfigError("SharedModel: layer dimensions must be >= 1");
    }
    Layer layer;
    layer.weight = Matrix(spec.out_dim, spec.in_dim);
    const double stddev = spec.activation == Activation::kRelu
                              ? std::sqrt(2.0 / static_cast<double>(spec.in_dim))
                              : std::sqrt(1.0 / static_cast<double>(spec.in_dim));
    for (double& v : layer.weight.data) v = stddev * rng.normal();
    layer.bias.assign(spec.out_dim, 0.0);
    m.layers.push_back(std::move(layer));
  }
  return m;
}

std::size_t SharedModel::num_masked() const {
  std::size_t n = 0;
  for (const auto& s : specs) n += s.masked;
  return n;
}

ClientMask ClientMask::init(const std::vector<LayerSpec>& specs, std::size_t r_max,
                            double prior_var, double gamma_init, double init_std,
                            bool gates_fixed) {
  if (r_max == 0) throw ConfigError("ClientMask: r_max must be >= 1");
  ClientMask mask;
  mask.prior_var = prior_var;
  mask.gates_fixed = gates_fixed;
  mask.mask_index.assign(specs.size(), -1);
  const double prior_mean = 1.0 / std::sqrt(static_cast<double>(r_max));
  for (std::size_t l = 0; l < specs.size(); ++l) {
    if (!specs[l].masked) continue;
    LayerMask lm;
    lm.out_dim = specs[l].out_dim;
    lm.in_dim = specs[l].in_dim;
    lm.r_max = r_max;
    lm.q = DiagGaussian(lm.out_dim * r_max, prior_mean, init_std);
    lm.r = DiagGaussian(lm.in_dim * r_max, prior_mean, init_std);
    lm.gating = GatingState(r_max, gamma_init);
    mask.mask_index[l] = static_cast<int>(mask.layers.size());
    mask.layers.push_back(std::move(lm));
  }
  return mask;
}

std::vector<double> ClientMask::gates(std::size_t mi) const {
  const LayerMask& lm = layers.at(mi);
  if (gates_fixed) return std::vector<double>(lm.r_max, 1.0);
  return gate_values(lm.gating);
}

std::size_t ClientMask::layer_rank(std::size_t mi) const {
  const LayerMask& lm = layers.at(mi);
  return gates_fixed ? lm.r_max : lm.gating.active_rank();
}

void ClientMask::reinitialize_factors(double init_std) {
  const double raw = softplus_inv(init_std);
  for (std::size_t mi = 0; mi < layers.size(); ++mi) {
    LayerMask& lm = layers[mi];
    const double prior_mean = 1.0 / std::sqrt(static_cast<double>(layer_rank(mi)));
    for (std::size_t j = 0; j < lm.r_max; ++j) {
      if (!gates_fixed && lm.gating.pruned[j]) continue;  // frozen
      for (std::size_t a = 0; a < lm.out_dim; ++a) {
        lm.q.mean[a * lm.r_max + j] = prior_mean;
        lm.q.raw_scale[a * lm.r_max + j] = raw;
      }
      for (std::size_t b = 0; b < lm.in_dim; ++b) {
        lm.r.mean[b * lm.r_max + j] = prior_mean;
        lm.r.raw_scale[b * lm.r_max + j] = raw;
      }
    }
  }
}

MaskNoise sample_mask_noise(const ClientMask& mask, RngStream& rng) {
  MaskNoise noise;
  for (const auto& lm : mask.layers) {
    LayerMaskNoise n;
    n.q_noise = Matrix(lm.out_dim, lm.r_max);
    n.r_noise = Matrix(lm.in_dim, lm.r_max);
    for (double& v : n.q_noise.data) v = rng.normal();
    for (double& v : n.r_noise.data) v = rng.normal();
    noise.layers.push_back(std::move(n));
  }
  return noise;
}

MaskNoise zero_mask_noise(const ClientMask& mask) {
  MaskNoise noise;
  for (const auto& lm : mask.layers) {
    noise.layers.push_back({Matrix(lm.out_dim, lm.r_max), Matrix(lm.in_dim, lm.r_max)});
  }
  return noise;
}

MaskSample materialize(const ClientMask& mask, const MaskNoise& noise) {
  if (noise.layers.size() != mask.layers.size()) {
    throw ShapeError("materialize: noise covers " + std::to_string(noise.layers.size()) +
                     " layers, mask has " + std::to_string(mask.layers.size()));
  }
  MaskSample sample;
  for (std::size_t mi = 0; mi < mask.layers.size(); ++mi) {
    const LayerMask& lm = mask.layers[mi];
    LayerMaskSample ls;
    ls.lambda = mask.gates(mi);
    ls.q_draw = Matrix(lm.out_dim, lm.r_max);
    ls.r_draw = Matrix(lm.in_dim, lm.r_max);
    for (std::size_t a = 0; a < lm.out_dim; ++a) {
      for (std::size_t j = 0; j < lm.r_max; ++j) {
        if (!mask.gates_fixed && lm.gating.pruned[j]) continue;
        const std::size_t e = a * lm.r_max + j;
        ls.q_draw(a, j) = lm.q.mean[e] + lm.q.stddev(e) * noise.layers[mi].q_noise(a, j);
      }
    }
    for (std::size_t b = 0; b < lm.in_dim; ++b) {
      for (std::size_t j = 0; j < lm.r_max; ++j) {
        if (!mask.gates_fixed && lm.gating.pruned[j]) continue;
        const std::size_t e = b * lm.r_max + j;
        ls.r_draw(b, j) = lm.r.mean[e] + lm.r.stddev(e) * noise.layers[mi].r_noise(b, j);
      }
    }
    sample.layers.push_back(std::move(ls));
  }
  return sample;
}

Matrix compose_weight(const Matrix& w, const LayerMaskSample& sample) {
  return hadamard(w, compose_mask(sample, w.rows, w.cols));
}

Matrix forward(const SharedModel& model, const MaskSample& sample, const Matrix& batch,
               ForwardTrace* trace) {
  check_mask_alignment(model, sample);
  if (!model.specs.empty() && batch.cols != model.specs.front().in_dim) {
    throw ShapeError("forward: batch is " + batch.shape_str() + " but the first layer takes " +
                     std::to_string(model.specs.front().in_dim) + " inputs");
  }
  Matrix act = batch;
  std::size_t mi = 0;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const LayerSpec& spec = model.specs[l];
    Matrix composed;
    const Matrix* weight = &model.layers[l].weight;
    if (spec.masked) {
      composed = compose_weight(model.layers[l].weight, sample.layers[mi++]);
      weight = &composed;
    }
    Matrix z(act.rows, spec.out_dim);
    affine_rows(act, 0, act.rows, *weight, model.layers[l].bias, z);
    ensure_finite(z, "forward");
    Matrix h = apply_activation(z, spec.activation);
    if (trace) {
      trace->inputs.push_back(std::move(act));
      trace->preacts.push_back(std::move(z));
      trace->composed.push_back(spec.masked ? std::move(composed) : Matrix());
    }
    act = std::move(h);
  }
  return act;
}

namespace {

void check_batch(const Batch& batch) {
  if (batch.features.rows == 0) throw DataError("free_energy: empty shard");
  if (batch.features.rows != batch.labels.size()) {
    throw ShapeError("batch: " + std::to_string(batch.labels.size()) + " labels for " +
                     batch.features.shape_str() + " features");
  }
}

// KL between the live factor columns and the rank-matched prior, via the
// closed-form diagonal-Gaussian divergence.
double mask_kl_value(const ClientMask& mask, std::size_t mi) {
  const LayerMask& lm = mask.layers[mi];
  const std::size_t rank = mask.layer_rank(mi);
  double kl = 0.0;
  for (std::size_t j = 0; j < lm.r_max; ++j) {
    if (!mask.gates_fixed && lm.gating.pruned[j]) continue;
    DiagGaussian qcol, rcol;
    qcol.mean.reserve(lm.out_dim);
    qcol.raw_scale.reserve(lm.out_dim);
    for (std::size_t a = 0; a < lm.out_dim; ++a) {
      qcol.mean.push_back(lm.q.mean[a * lm.r_max + j]);
      qcol.raw_scale.push_back(lm.q.raw_scale[a * lm.r_max + j]);
    }
    rcol.mean.reserve(lm.in_dim);
    rcol.raw_scale.reserve(lm.in_dim);
    for (std::size_t b = 0; b < lm.in_dim; ++b) {
      rcol.mean.push_back(lm.r.mean[b * lm.r_max + j]);
      rcol.raw_scale.push_back(lm.r.raw_scale[b * lm.r_max + j]);
    }
    kl += kl_diag_gaussians(qcol, prior_for_rank(rank, mask.prior_var, lm.out_dim));
    kl += kl_diag_gaussians(rcol, prior_for_rank(rank, mask.prior_var, lm.in_dim));
  }
  return kl;
}

// d KL / d mean and d KL / d raw_scale for one factor, live columns only.
void mask_kl_grad(const DiagGaussian& factor, const GatingState& gating, bool gates_fixed,
                  std::size_t dim, std::size_t r_max, double prior_mean, double prior_var,
                  Matrix& g_mean, Matrix& g_raw) {
  for (std::size_t a = 0; a < dim; ++a) {
    for (std::size_t j = 0; j < r_max; ++j) {
      if (!gates_fixed && gating.pruned[j]) continue;
      const std::size_t e = a * r_max + j;
      const double sq = factor.stddev(e);
      g_mean(a, j) += (factor.mean[e] - prior_mean) / prior_var;
      g_raw(a, j) += (-1.0 / sq + sq / prior_var) * sigmoid(factor.raw_scale[e]);
    }
  }
}

double gate_l2_value(const ClientMask& mask, std::size_t mi, double l2_weight) {
  if (mask.gates_fixed) return 0.0;
  double acc = 0.0;
  for (double v : mask.gates(mi)) acc += v * v;
  return l2_weight * acc;
}

}  // namespace

FreeEnergyParts free_energy_with_noise(const SharedModel& model, const ClientMask& mask,
                                       const Batch& batch,
                                       const std::vector<MaskNoise>& noises,
                                       double l2_weight) {
  check_batch(batch);
  if (noises.empty()) throw ConfigError("free_energy: need at least one mask sample");
  FreeEnergyParts parts;
  for (const auto& noise : noises) {
    const MaskSample sample = materialize(mask, noise);
    const Matrix logits = forward(model, sample, batch.features);
    const auto ce = softmax_cross_entropy(logits, batch.labels);
    parts.nll += batch.dataset_size * ce.loss / static_cast<double>(noises.size());
  }
  for (std::size_t mi = 0; mi < mask.layers.size(); ++mi) {
    parts.kl += mask_kl_value(mask, mi);
    parts.l2 += gate_l2_value(mask, mi, l2_weight);
  }
  parts.total = parts.nll + parts.kl + parts.l2;
  if (!std::isfinite(parts.total)) throw NumericError("free_energy: non-finite loss");
  return parts;
}

FreeEnergyParts free_energy(const SharedModel& model, const ClientMask& mask,
                            const Batch& batch, std::size_t n_samples, double l2_weight,
                            RngStream& rng) {
  std::vector<MaskNoise> noises;
  noises.reserve(n_samples);
  for (std::size_t c = 0; c < n_samples; ++c) noises.push_back(sample_mask_noise(mask, rng));
  return free_energy_with_noise(model, mask, batch, noises, l2_weight);
}

Gradients backward_with_noise(const SharedModel& model, const ClientMask& mask,
                              const Batch& batch, const std::vector<MaskNoise>& noises,
                              double l2_weight) {
  check_batch(batch);
  if (noises.empty()) throw ConfigError("backward: need at least one mask sample");

  Gradients g;
  g.weight.reserve(model.layers.size());
  g.bias.reserve(model.layers.size());
  for (const auto& layer : model.layers) {
    g.weight.emplace_back(layer.weight.rows, layer.weight.cols);
    g.bias.emplace_back(layer.bias.size(), 0.0);
  }
  for (const auto& lm : mask.layers) {
    MaskLayerGrads mg;
    mg.q_mean = Matrix(lm.out_dim, lm.r_max);
    mg.q_raw = Matrix(lm.out_dim, lm.r_max);
    mg.r_mean = Matrix(lm.in_dim, lm.r_max);
    mg.r_raw = Matrix(lm.in_dim, lm.r_max);
    mg.gamma.assign(lm.r_max, 0.0);
    g.mask.push_back(std::move(mg));
  }

  const double sample_scale = batch.dataset_size / static_cast<double>(noises.size());

  for (const auto& noise : noises) {
    const MaskSample sample = materialize(mask, noise);
    ForwardTrace trace;
    const Matrix logits = forward(model, sample, batch.features, &trace);
    const auto ce = softmax_cross_entropy(logits, batch.labels);
    g.value.nll += batch.dataset_size * ce.loss / static_cast<double>(noises.size());

    Matrix upstream = ce.grad_logits;
    for (double& v : upstream.data) v *= sample_scale;

    std::size_t mi = model.num_masked();
    for (std::size_t l = model.layers.size(); l-- > 0;) {
      const LayerSpec& spec = model.specs[l];
      Matrix dz = std::move(upstream);
      if (spec.activation == Activation::kRelu) {
        const Matrix& z = trace.preacts[l];
        for (std::size_t i = 0; i < dz.data.size(); ++i) {
          if (z.data[i] <= 0.0) dz.data[i] = 0.0;
        }
      }
      const auto db = colsum(dz);
      for (std::size_t k = 0; k < db.size(); ++k) g.bias[l][k] += db[k];

      const Matrix& x = trace.inputs[l];
      const Matrix d_eff = matmul_at(dz, x);  // gradient w.r.t. the effective weight

      const Matrix* weight_for_input = &model.layers[l].weight;
      if (spec.masked) {
        --mi;
        const LayerMaskSample& ls = sample.layers[mi];
        const Matrix m = compose_mask(ls, spec.out_dim, spec.in_dim);
        add_scaled(g.weight[l], hadamard(d_eff, m), 1.0);
        const Matrix dm = hadamard(d_eff, model.layers[l].weight);

        const Matrix t = matmul(dm, ls.r_draw);        // out_dim x r_max
        const Matrix u = matmul_at(dm, ls.q_draw);     // in_dim x r_max
        MaskLayerGrads& mg = g.mask[mi];
        const LayerMask& lm = mask.layers[mi];
        for (std::size_t j = 0; j < lm.r_max; ++j) {
          if (!mask.gates_fixed && lm.gating.pruned[j]) continue;
          const double lam = ls.lambda[j];
          double dlam = 0.0;
          for (std::size_t a = 0; a < lm.out_dim; ++a) {
            const double dq = t(a, j) * lam;
            dlam += ls.q_draw(a, j) * t(a, j);
            const std::size_t e = a * lm.r_max + j;
            mg.q_mean(a, j) += dq;
            mg.q_raw(a, j) += dq * noise.layers[mi].q_noise(a, j) * sigmoid(lm.q.raw_scale[e]);
          }
          for (std::size_t b = 0; b < lm.in_dim; ++b) {
            const double dr = u(b, j) * lam;
            const std::size_t e = b * lm.r_max + j;
            mg.r_mean(b, j) += dr;
            mg.r_raw(b, j) += dr * noise.layers[mi].r_noise(b, j) * sigmoid(lm.r.raw_scale[e]);
          }
          if (!mask.gates_fixed) {
            mg.gamma[j] += dlam * lam * (1.0 - lam);  // sigmoid chain rule
          }
        }
        weight_for_input = &trace.composed[l];
      } else {
        add_scaled(g.weight[l], d_eff, 1.0);
      }

      if (l > 0) upstream = matmul(dz, *weight_for_input);
    }
  }

  // Closed-form KL and gate L2, outside the Monte Carlo average.
  for (std::size_t mi = 0; mi < mask.layers.size(); ++mi) {
    const LayerMask& lm = mask.layers[mi];
    g.value.kl += mask_kl_value(mask, mi);
    const double prior_mean = 1.0 / std::sqrt(static_cast<double>(mask.layer_rank(mi)));
    MaskLayerGrads& mg = g.mask[mi];
    mask_kl_grad(lm.q, lm.gating, mask.gates_fixed, lm.out_dim, lm.r_max, prior_mean,
                 mask.prior_var, mg.q_mean, mg.q_raw);
    mask_kl_grad(lm.r, lm.gating, mask.gates_fixed, lm.in_dim, lm.r_max, prior_mean,
                 mask.prior_var, mg.r_mean, mg.r_raw);

    g.value.l2 += gate_l2_value(mask, mi, l2_weight);
    if (!mask.gates_fixed) {
      const auto lambda = mask.gates(mi);
      for (std::size_t j = 0; j < lm.r_max; ++j) {
        if (lm.gating.pruned[j]) continue;
        mg.gamma[j] += 2.0 * l2_weight * lambda[j] * lambda[j] * (1.0 - lambda[j]);
      }
    }
  }
  g.value.total = g.value.nll + g.value.kl + g.value.l2;
  if (!std::isfinite(g.value.total)) throw NumericError("backward: non-finite loss");
  return g;
}

Gradients backward(const SharedModel& model, const ClientMask& mask, const Batch& batch,
                   std::size_t n_samples, double l2_weight, RngStream& rng) {
  std::vector<MaskNoise> noises;
  noises.reserve(n_samples);
  for (std::size_t c = 0; c < n_samples; ++c) noises.push_back(sample_mask_noise(mask, rng));
  return backward_with_noise(model, mask, batch, noises, l2_weight);
}

Matrix predict_ensemble(const SharedModel& model, const ClientMask& mask,
                        const Matrix& batch, std::size_t n_samples, RngStream& rng) {
  if (n_samples == 0) throw ConfigError("predict_ensemble: ensemble size must be >= 1");
  if (model.num_masked() != mask.layers.size()) {
    throw ShapeError("predict_ensemble: model has " + std::to_string(model.num_masked()) +
                     " masked layers but the mask carries " +
                     std::to_string(mask.layers.size()));
  }
  const std::size_t b = batch.rows;
  const std::size_t replicas = n_samples;

  std::vector<MaskSample> samples;
  samples.reserve(replicas);
  for (std::size_t c = 0; c < replicas; ++c) {
    const MaskNoise noise = sample_mask_noise(mask, rng);
    samples.push_back(materialize(mask, noise));
  }

  // Tile the batch C-fold and push all replicas through each layer in one
  // pass, composing each replica's rank factors for its row block.
  Matrix act(replicas * b, batch.cols);
  for (std::size_t c = 0; c < replicas; ++c) {
    std::copy(batch.data.begin(), batch.data.end(), act.data.begin() + c * batch.size());
  }
  std::size_t mi = 0;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const LayerSpec& spec = model.specs[l];
    Matrix z(act.rows, spec.out_dim);
    if (spec.masked) {
      for (std::size_t c = 0; c < replicas; ++c) {
        const Matrix g = compose_weight(model.layers[l].weight, samples[c].layers[mi]);
        affine_rows(act, c * b, (c + 1) * b, g, model.layers[l].bias, z);
      }
      ++mi;
    } else {
      affine_rows(act, 0, act.rows, model.layers[l].weight, model.layers[l].bias, z);
    }
    ensure_finite(z, "predict_ensemble");
    act = apply_activation(z, spec.activation);
  }

  const Matrix probs = softmax_rows(act);
  Matrix out(b, probs.cols);
  for (std::size_t c = 0; c < replicas; ++c) {
    for (std::size_t i = 0; i < b; ++i) {
      const double* prow = &probs.data[(c * b + i) * probs.cols];
      double* orow = &out.data[i * out.cols];
      for (std::size_t k = 0; k < out.cols; ++k) orow[k] += prow[k];
    }
  }
  for (double& v : out.data) v /= static_cast<double>(replicas);
  return out;
}

std::size_t mask_param_count(const std::vector<LayerSpec>& specs, std::size_t r_max) {
  std::size_t n = 0;
  for (const auto& spec : specs) {
    if (!spec.masked) continue;
    n += 2 * (spec.in_dim + spec.out_dim) * r_max + r_max;
  }
  return n;
}

}  // namespace lrb
