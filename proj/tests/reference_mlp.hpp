#pragma once

// Test-only reference MLP: straightforward loops, kept independent of the
// library forward/backward path it is used to check.

#include <algorithm>
#include <cmath>
#include <vector>

#include "lrb/matrix.hpp"

namespace lrb_test {

struct RefResult {
  double loss = 0.0;
  std::vector<lrb::Matrix> w_grad;
  std::vector<std::vector<double>> b_grad;
};

inline RefResult reference_mlp(const std::vector<lrb::Matrix>& weights,
                               const std::vector<std::vector<double>>& biases,
                               const std::vector<bool>& relu, const lrb::Matrix& x,
                               const std::vector<int>& labels, double scale) {
  using lrb::Matrix;
  const std::size_t batch = x.rows;
  std::vector<Matrix> acts = {x};
  std::vector<Matrix> zs;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const Matrix& w = weights[l];
    const Matrix& in = acts.back();
    Matrix z(batch, w.rows);
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t k = 0; k < w.rows; ++k) {
        double acc = biases[l][k];
        for (std::size_t j = 0; j < w.cols; ++j) acc += in(i, j) * w(k, j);
        z(i, k) = acc;
      }
    }
    zs.push_back(z);
    if (relu[l]) {
      for (double& v : z.data) v = v > 0.0 ? v : 0.0;
    }
    acts.push_back(z);
  }

  RefResult out;
  const Matrix& logits = acts.back();
  Matrix delta(batch, logits.cols);
  for (std::size_t i = 0; i < batch; ++i) {
    double mx = logits(i, 0);
    for (std::size_t c = 1; c < logits.cols; ++c) mx = std::max(mx, logits(i, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols; ++c) sum += std::exp(logits(i, c) - mx);
    const double lse = mx + std::log(sum);
    out.loss += (lse - logits(i, labels[i])) / batch;
    for (std::size_t c = 0; c < logits.cols; ++c) {
      delta(i, c) = std::exp(logits(i, c) - lse) / batch * scale;
    }
    delta(i, labels[i]) -= scale / batch;
  }
  out.loss *= scale;

  for (std::size_t l = weights.size(); l-- > 0;) {
    if (relu[l]) {
      for (std::size_t i = 0; i < delta.data.size(); ++i) {
        if (zs[l].data[i] <= 0.0) delta.data[i] = 0.0;
      }
    }
    Matrix wg(weights[l].rows, weights[l].cols);
    std::vector<double> bg(weights[l].rows, 0.0);
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t k = 0; k < weights[l].rows; ++k) {
        bg[k] += delta(i, k);
        for (std::size_t j = 0; j < weights[l].cols; ++j) {
          wg(k, j) += delta(i, k) * acts[l](i, j);
        }
      }
    }
    out.w_grad.insert(out.w_grad.begin(), wg);
    out.b_grad.insert(out.b_grad.begin(), bg);
    if (l > 0) {
      Matrix next(batch, weights[l].cols);
      for (std::size_t i = 0; i < batch; ++i) {
        for (std::size_t j = 0; j < weights[l].cols; ++j) {
          double acc = 0.0;
          for (std::size_t k = 0; k < weights[l].rows; ++k) {
            acc += delta(i, k) * weights[l](k, j);
          }
          next(i, j) = acc;
        }
      }
      delta = next;
    }
  }
  return out;
}

}  // namespace lrb_test
