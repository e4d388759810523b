#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace lrb {

/// Splittable counter-style random stream. A stream is identified by a seed
/// and a path of labels (round, client id, draw index, ...); two streams with
/// the same seed and path produce identical draws, and streams on different
/// paths are decorrelated. This keeps per-client, per-round randomness
/// independent of execution order.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  RngStream child(std::uint64_t label) const;
  RngStream child(std::string_view label) const;
  RngStream child(std::string_view label, std::uint64_t index) const;

  std::uint64_t next_u64();
  /// Uniform double in [0, 1).
  double uniform();
  /// Standard normal via Box-Muller (platform-independent, unlike
  /// std::normal_distribution).
  double normal();
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  std::vector<double> normal_vec(std::size_t n);

 private:
  RngStream(std::uint64_t state, bool) : state_(state) {}
  std::uint64_t state_;
};

/// n i.i.d. standard normal variates, deterministic given the stream.
std::vector<double> gaussian_draw(RngStream& rng, std::size_t n);

/// Partial Fisher-Yates: a uniformly random size-k subset of {0,...,n-1},
/// returned in draw order.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, RngStream& rng);

}  // namespace lrb
