#pragma once
/// Counter-based pseudorandom streams and deterministic point sets.
///
/// Every random number is a pure function of (seed, stream, index), so
/// samples can be drawn in any order or in parallel and still replay
/// bit-for-bit.

#include "diffext/core.hpp"

#include <cstdint>

namespace diffext {

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) : key_(splitmix64(splitmix64(seed) ^ (stream * 0xd1342543de82ef95ULL))) {}

  std::uint64_t bits(std::uint64_t index, std::uint64_t lane = 0) const {
    return splitmix64(key_ ^ splitmix64(index * 0x9e3779b97f4a7c15ULL + lane));
  }

  /// Uniform in [0, 1).
  double uniform(std::uint64_t index, std::uint64_t lane = 0) const {
    return static_cast<double>(bits(index, lane) >> 11) * 0x1.0p-53;
  }

  double normal(std::uint64_t index, std::uint64_t lane = 0) const {
    const double u1 = 1.0 - uniform(index, 2 * lane);
    const double u2 = uniform(index, 2 * lane + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  Vec uniform_in(const Vec& lo, const Vec& hi, std::uint64_t index) const {
    Vec x(lo.size());
    for (Eigen::Index k = 0; k < lo.size(); ++k) x(k) = lo(k) + (hi(k) - lo(k)) * uniform(index, static_cast<std::uint64_t>(k));
    return x;
  }

  Vec unit_vector(int n, std::uint64_t index) const {
    for (std::uint64_t attempt = 0;; ++attempt) {
      Vec g(n);
      for (int k = 0; k < n; ++k) g(k) = normal(index, attempt * 64 + static_cast<std::uint64_t>(k));
      const double nrm = g.norm();
      if (nrm > 1e-12) return g / nrm;
    }
  }

 private:
  std::uint64_t key_;
};

/// k-th element of the Halton sequence in base `base`.
inline double radical_inverse(std::uint64_t k, std::uint64_t base) {
  double inv = 1.0 / static_cast<double>(base), f = inv, r = 0.0;
  while (k > 0) {
    r += f * static_cast<double>(k % base);
    k /= base;
    f *= inv;
  }
  return r;
}

inline constexpr std::uint64_t kPrimes[kMaxDim] = {2, 3, 5, 7, 11, 13, 17, 19};

/// Low-discrepancy point of the unit cube mapped into [lo, hi].
inline Vec halton_point(const Vec& lo, const Vec& hi, std::uint64_t k) {
  Vec x(lo.size());
  for (Eigen::Index d = 0; d < lo.size(); ++d) x(d) = lo(d) + (hi(d) - lo(d)) * radical_inverse(k + 1, kPrimes[d]);
  return x;
}

/// Near-uniform deterministic directions on the unit sphere S^{n-1}.
inline std::vector<Vec> sphere_directions(int n, int count) {
  std::vector<Vec> out;
  out.reserve(static_cast<std::size_t>(count));
  if (n == 2) {
    for (int i = 0; i < count; ++i) {
      const double t = 2.0 * std::numbers::pi * (i + 0.5) / count;
      out.push_back(vec({std::cos(t), std::sin(t)}));
    }
  } else if (n == 3) {
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < count; ++i) {
      const double z = 1.0 - 2.0 * (i + 0.5) / count;
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double t = golden * i;
      out.push_back(vec({r * std::cos(t), r * std::sin(t), z}));
    }
  } else {
    CounterRng rng(0x5eed, static_cast<std::uint64_t>(n));
    for (int i = 0; i < count; ++i) out.push_back(rng.unit_vector(n, static_cast<std::uint64_t>(i)));
  }
  return out;
}

/// Typical spacing between neighbouring points of `sphere_directions(n, count)`
/// on the unit sphere.
inline double sphere_spacing(int n, int count) {
  if (n == 2) return 2.0 * std::numbers::pi / count;
  if (n == 3) return std::sqrt(4.0 * std::numbers::pi / count) * 1.5;
  return 2.0 * std::pow(static_cast<double>(count), -1.0 / (n - 1)) * 2.0;
}

inline int default_sphere_count(int n) {
  if (n == 2) return 720;
  if (n == 3) return 4000;
  return 8000;
}

}  // namespace diffext
