#include <cmath>

#include <doctest.h>

#include "lrb/errors.hpp"
#include "lrb/matrix.hpp"
#include "lrb/rng.hpp"

using namespace lrb;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, RngStream& rng) {
  Matrix m(r, c);
  for (auto& v : m.data) v = rng.normal();
  return m;
}

}  // namespace

TEST_SUITE("matrix") {

TEST_CASE("matmul identity leaves the operand unchanged") {
  const Matrix a = Matrix::from_rows({{1.5, -2.0}, {0.25, 4.0}});
  const Matrix out = matmul(identity(2), a);
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(out.data[i] == a.data[i]);
}

TEST_CASE("matmul hand example") {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  const Matrix b = Matrix::from_rows({{0}, {1}});
  const Matrix c = matmul(a, b);
  CHECK(c.rows == 2);
  CHECK(c.cols == 1);
  CHECK(c(0, 0) == 2.0);
  CHECK(c(1, 0) == 4.0);
}

TEST_CASE("matmul zero annihilates") {
  const Matrix zero(2, 2, 0.0);
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  for (double v : matmul(zero, a).data) CHECK(v == 0.0);
}

TEST_CASE("matmul dimension mismatch names both shapes") {
  const Matrix a(2, 3), b(2, 2);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("2x3"), ShapeError);
}

TEST_CASE("matmul is associative within 1e-9") {
  RngStream rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    RngStream t = rng.child("trial", trial);
    const Matrix a = random_matrix(3, 4, t);
    const Matrix b = random_matrix(4, 5, t);
    const Matrix c = random_matrix(5, 2, t);
    const Matrix left = matmul(matmul(a, b), c);
    const Matrix right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.data.size(); ++i) {
      CHECK(std::abs(left.data[i] - right.data[i]) <= 1e-9);
    }
  }
}

TEST_CASE("transposed products agree with explicit transposes") {
  RngStream rng(7);
  const Matrix a = random_matrix(4, 3, rng);
  const Matrix b = random_matrix(5, 3, rng);
  const Matrix via_bt = matmul_bt(a, b);
  const Matrix direct = matmul(a, transpose(b));
  for (std::size_t i = 0; i < via_bt.data.size(); ++i) {
    CHECK(via_bt.data[i] == doctest::Approx(direct.data[i]).epsilon(1e-12));
  }
  const Matrix c = random_matrix(4, 6, rng);
  const Matrix via_at = matmul_at(a, c);
  const Matrix direct2 = matmul(transpose(a), c);
  for (std::size_t i = 0; i < via_at.data.size(); ++i) {
    CHECK(via_at.data[i] == doctest::Approx(direct2.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("hadamard examples") {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  SUBCASE("ones is the identity") {
    const Matrix out = hadamard(a, Matrix(2, 2, 1.0));
    for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(out.data[i] == a.data[i]);
  }
  SUBCASE("zero annihilates") {
    for (double v : hadamard(a, Matrix(2, 2, 0.0)).data) CHECK(v == 0.0);
  }
  SUBCASE("hand example") {
    const Matrix b = Matrix::from_rows({{2, 0}, {0, 2}});
    const Matrix out = hadamard(a, b);
    CHECK(out(0, 0) == 2.0);
    CHECK(out(0, 1) == 0.0);
    CHECK(out(1, 0) == 0.0);
    CHECK(out(1, 1) == 8.0);
  }
  SUBCASE("shape mismatch throws") {
    CHECK_THROWS_AS(hadamard(a, Matrix(2, 3)), ShapeError);
  }
}

TEST_CASE("cross entropy of uniform logits is log C") {
  for (std::size_t classes : {2u, 3u, 7u}) {
    Matrix logits(4, classes, 0.7);  // any constant row is uniform after softmax
    std::vector<int> labels = {0, 1, 0, static_cast<int>(classes - 1)};
    const auto res = softmax_cross_entropy(logits, labels);
    CHECK(res.loss == doctest::Approx(std::log(static_cast<double>(classes))).epsilon(1e-12));
  }
}

TEST_CASE("cross entropy of confident correct logits is tiny") {
  const Matrix logits = Matrix::from_rows({{10.0, -10.0}});
  const auto res = softmax_cross_entropy(logits, {0});
  // direct evaluation of -log(e^10 / (e^10 + e^-10))
  const double expected = -std::log(std::exp(10.0) / (std::exp(10.0) + std::exp(-10.0)));
  CHECK(std::abs(res.loss - expected) <= 1e-14);
  CHECK(res.loss == doctest::Approx(2.0611536e-9).epsilon(1e-6));
}

TEST_CASE("cross entropy rejects out-of-range labels") {
  Matrix logits(2, 3, 0.0);
  CHECK_THROWS_WITH_AS(softmax_cross_entropy(logits, {0, 3}), doctest::Contains("label 3"),
                       DataError);
  CHECK_THROWS_AS(softmax_cross_entropy(logits, {-1, 0}), DataError);
}

TEST_CASE("cross entropy gradient matches central finite differences") {
  RngStream rng(123);
  Matrix logits = random_matrix(4, 5, rng);
  std::vector<int> labels = {1, 0, 4, 2};
  const auto res = softmax_cross_entropy(logits, labels);
  const double h = 1e-5;
  for (std::size_t i = 0; i < logits.data.size(); ++i) {
    const double saved = logits.data[i];
    logits.data[i] = saved + h;
    const double up = softmax_cross_entropy(logits, labels).loss;
    logits.data[i] = saved - h;
    const double down = softmax_cross_entropy(logits, labels).loss;
    logits.data[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = res.grad_logits.data[i];
    const double rel = std::abs(analytic - numeric) /
                       std::max({1e-8, std::abs(analytic), std::abs(numeric)});
    CHECK(rel <= 1e-6);
  }
}

TEST_CASE("softmax rows sum to one") {
  RngStream rng(5);
  const Matrix logits = random_matrix(6, 4, rng);
  const Matrix p = softmax_rows(logits);
  for (std::size_t i = 0; i < p.rows; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < p.cols; ++j) sum += p(i, j);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

}  // TEST_SUITE
