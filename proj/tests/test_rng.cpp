#include <cmath>
#include <set>

#include <doctest.h>

#include "lrb/errors.hpp"
#include "lrb/rng.hpp"

using namespace lrb;

TEST_SUITE("rng") {

TEST_CASE("identical seed and path reproduce draws exactly") {
  RngStream a = RngStream(99).child("round", 3).child("client", 7);
  RngStream b = RngStream(99).child("round", 3).child("client", 7);
  const auto va = gaussian_draw(a, 64);
  const auto vb = gaussian_draw(b, 64);
  for (std::size_t i = 0; i < va.size(); ++i) CHECK(va[i] == vb[i]);
}

TEST_CASE("different paths decorrelate") {
  RngStream a = RngStream(99).child("client", 1);
  RngStream b = RngStream(99).child("client", 2);
  int same = 0;
  for (int i = 0; i < 64; ++i) same += (a.next_u64() == b.next_u64());
  CHECK(same == 0);
}

TEST_CASE("string and integer labels address distinct streams") {
  RngStream base(1);
  RngStream s = base.child("7");
  RngStream i = base.child(7);
  CHECK(s.next_u64() != i.next_u64());
}

TEST_CASE("uniform stays in [0, 1)") {
  RngStream rng(3);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("gaussian moments match a CLT bound over 1e6 draws") {
  RngStream rng = RngStream(2024).child("moments");
  const std::size_t n = 1000000;
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sum_sq += z * z;
  }
  const double mean = sum / static_cast<double>(n);
  const double var = sum_sq / static_cast<double>(n) - mean * mean;
  CHECK(std::abs(mean) <= 4.0 / std::sqrt(static_cast<double>(n)));
  CHECK(var >= 0.99);
  CHECK(var <= 1.01);
}

TEST_CASE("below respects the bound and rejects zero") {
  RngStream rng(11);
  for (int i = 0; i < 1000; ++i) CHECK(rng.below(7) < 7);
  CHECK_THROWS_AS(rng.below(0), ConfigError);
}

TEST_CASE("sample_without_replacement yields distinct indices") {
  RngStream rng(17);
  const auto picked = sample_without_replacement(50, 10, rng);
  CHECK(picked.size() == 10);
  std::set<std::size_t> unique(picked.begin(), picked.end());
  CHECK(unique.size() == 10);
  for (auto v : picked) CHECK(v < 50);
  CHECK_THROWS_AS(sample_without_replacement(3, 4, rng), ConfigError);
}

}  // TEST_SUITE
