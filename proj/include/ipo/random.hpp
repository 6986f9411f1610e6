// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

namespace ipo {

using Vec = std::vector<double>;

/// Seeded generator with platform-independent uniform/normal draws.
///
/// std::normal_distribution and std::uniform_int_distribution are
/// implementation-defined, so draws are built directly from the raw
/// mt19937_64 stream. Copying an Rng copies its full state, which the
/// gradient checks rely on to replay a stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    const auto x = static_cast<unsigned __int128>(engine_()) * n;
    return static_cast<std::size_t>(x >> 64);
  }

  double normal() {
    if (spare_) {
      const double z = *spare_;
      spare_.reset();
      return z;
    }
    // u1 in (0, 1] keeps the log finite.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    return radius * std::cos(angle);
  }

  Vec normal_vector(std::size_t dim) {
    Vec out(dim);
    for (auto& v : out) v = normal();
    return out;
  }

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Substream seed for (root, purpose-tag, index). Every subsystem derives
/// its seeds through here so no two purposes share a stream.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view tag,
                                    std::uint64_t index = 0) {
  std::uint64_t h = detail::splitmix64(root);
  h = detail::splitmix64(h ^ detail::fnv1a(tag));
  return detail::splitmix64(h ^ index);
}

}  // namespace ipo
