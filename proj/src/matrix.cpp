#include "lrb/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lrb/errors.hpp"

namespace lrb {

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rs) {
  Matrix m;
  m.rows = rs.size();
  m.cols = rs.size() ? rs.begin()->size() : 0;
  m.data.reserve(m.rows * m.cols);
  for (const auto& row : rs) {
    if (row.size() != m.cols) throw ShapeError("from_rows: ragged initializer");
    m.data.insert(m.data.end(), row.begin(), row.end());
  }
  return m;
}

std::string Matrix::shape_str() const {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

namespace {

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
  }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw ShapeError("matmul: inner dimensions disagree, " + a.shape_str() + " x " +
                     b.shape_str());
  }
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < a.cols; ++j) {
      const double aij = a(i, j);
      if (aij == 0.0) continue;
      const double* brow = &b.data[j * b.cols];
      double* crow = &c.data[i * c.cols];
      for (std::size_t k = 0; k < b.cols; ++k) crow[k] += aij * brow[k];
    }
  }
  ensure_finite(c, "matmul");
  return c;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) {
    throw ShapeError("matmul_bt: inner dimensions disagree, " + a.shape_str() + " x " +
                     b.shape_str() + "^T");
  }
  Matrix c(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = &a.data[i * a.cols];
    for (std::size_t k = 0; k < b.rows; ++k) {
      const double* brow = &b.data[k * b.cols];
      double acc = 0.0;
      for (std::size_t j = 0; j < a.cols; ++j) acc += arow[j] * brow[j];
      c(i, k) = acc;
    }
  }
  ensure_finite(c, "matmul_bt");
  return c;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) {
    throw ShapeError("matmul_at: inner dimensions disagree, " + a.shape_str() + "^T x " +
                     b.shape_str());
  }
  Matrix c(a.cols, b.cols);
  for (std::size_t j = 0; j < a.rows; ++j) {
    const double* arow = &a.data[j * a.cols];
    const double* brow = &b.data[j * b.cols];
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aji = arow[i];
      if (aji == 0.0) continue;
      double* crow = &c.data[i * c.cols];
      for (std::size_t k = 0; k < b.cols; ++k) crow[k] += aji * brow[k];
    }
  }
  ensure_finite(c, "matmul_at");
  return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "hadamard");
  Matrix c(a.rows, a.cols);
  for (std::size_t i = 0; i < a.data.size(); ++i) c.data[i] = a.data[i] * b.data[i];
  ensure_finite(c, "hadamard");
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

Matrix identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void add_scaled(Matrix& into, const Matrix& g, double scale) {
  check_same_shape(into, g, "add_scaled");
  for (std::size_t i = 0; i < into.data.size(); ++i) into.data[i] += scale * g.data[i];
}

CrossEntropyResult softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
  if (labels.size() != logits.rows) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(logits.rows) + " logit rows");
  }
  const std::size_t batch = logits.rows;
  const std::size_t classes = logits.cols;
  if (batch == 0) throw DataError("softmax_cross_entropy: empty batch");

  CrossEntropyResult out;
  out.grad_logits = Matrix(batch, classes);
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw DataError("softmax_cross_entropy: label " + std::to_string(label) +
                      " out of range [0, " + std::to_string(classes) + ") at row " +
                      std::to_string(i));
    }
    const double* row = &logits.data[i * classes];
    double mx = row[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(row[c] - mx);
    const double lse = mx + std::log(sum);
    total += lse - row[label];
    double* grow = &out.grad_logits.data[i * classes];
    for (std::size_t c = 0; c < classes; ++c) {
      grow[c] = std::exp(row[c] - lse) / static_cast<double>(batch);
    }
    grow[label] -= 1.0 / static_cast<double>(batch);
  }
  out.loss = total / static_cast<double>(batch);
  if (!std::isfinite(out.loss)) throw NumericError("softmax_cross_entropy: non-finite loss");
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const double* row = &logits.data[i * logits.cols];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < logits.cols; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    double* prow = &p.data[i * p.cols];
    for (std::size_t c = 0; c < logits.cols; ++c) {
      prow[c] = std::exp(row[c] - mx);
      sum += prow[c];
    }
    for (std::size_t c = 0; c < logits.cols; ++c) prow[c] /= sum;
  }
  ensure_finite(p, "softmax_rows");
  return p;
}

void ensure_finite(const Matrix& m, const char* context) {
  for (double v : m.data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(context) + ": non-finite entry in " + m.shape_str() +
                         " result");
    }
  }
}

}  // namespace lrb
