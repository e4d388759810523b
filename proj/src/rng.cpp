#include "lrb/rng.hpp"

#include <cmath>
#include <numbers>

#include "lrb/errors.hpp"

namespace lrb {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kChildSalt = 0x53a1d7a13c64cf6fULL;

// splitmix64 finalizer
std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

RngStream::RngStream(std::uint64_t seed) : state_(mix(seed + kGolden)) {}

RngStream RngStream::child(std::uint64_t label) const {
  return RngStream(mix(state_ ^ mix(label + kChildSalt)), true);
}

RngStream RngStream::child(std::string_view label) const {
  return child(fnv1a(label));
}

RngStream RngStream::child(std::string_view label, std::uint64_t index) const {
  return child(fnv1a(label)).child(index);
}

std::uint64_t RngStream::next_u64() {
  state_ += kGolden;
  return mix(state_);
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) throw ConfigError("RngStream::below: n must be positive");
  const std::uint64_t rem = (UINT64_MAX % n + 1) % n;  // 2^64 mod n
  std::uint64_t x = next_u64();
  while (rem != 0 && x >= UINT64_MAX - rem + 1) x = next_u64();
  return x % n;
}

std::vector<double> RngStream::normal_vec(std::size_t n) {
  std::vector<double> out(n);
  for (auto& v : out) v = normal();
  return out;
}

std::vector<double> gaussian_draw(RngStream& rng, std::size_t n) {
  return rng.normal_vec(n);
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, RngStream& rng) {
  if (k > n) throw ConfigError("sample_without_replacement: k > n");
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(pool[i], pool[j]);
    out[i] = pool[i];
  }
  return out;
}

}  // namespace lrb
