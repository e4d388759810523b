#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace lrb {

/// Dense row-major matrix of 64-bit reals. Small enough at desk scale that
/// no blocking or BLAS is warranted.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rs);

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const;
};

Matrix matmul(const Matrix& a, const Matrix& b);
// a * b^T without forming the transpose.
Matrix matmul_bt(const Matrix& a, const Matrix& b);
// a^T * b without forming the transpose.
Matrix matmul_at(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix identity(std::size_t n);

void add_scaled(Matrix& into, const Matrix& g, double scale);  // into += scale * g

struct CrossEntropyResult {
  double loss = 0.0;      // mean over the batch of -log softmax(logits)[label]
  Matrix grad_logits;     // (softmax - onehot) / batch
};

/// Numerically stable softmax cross entropy over logit rows.
CrossEntropyResult softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels);

Matrix softmax_rows(const Matrix& logits);

// Throws NumericError naming `context` if any entry is not finite.
void ensure_finite(const Matrix& m, const char* context);

}  // namespace lrb
