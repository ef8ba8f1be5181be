#ifndef TARVIS_RNG_HPP
#define TARVIS_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tarvis/tensor.hpp"

namespace tarvis {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic generator. Distributions are implemented here rather than via
/// <random> adaptors so that sequences are stable across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(splitmix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// [0, 1)
  double uniform() { return double(next_u64() >> 11) * (1.0 / 9007199254740992.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// [0, n)
  Index uniform_int(Index n) {
    if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
    return (Index)(uniform() * double(n)) % n;
  }

  Index uniform_int(Index lo, Index hi_inclusive) {
    return lo + uniform_int(hi_inclusive - lo + 1);
  }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Draws an index with probability proportional to weights[i].
  Index categorical(const std::vector<double>& weights) {
    double total = 0;
    for (double w : weights) {
      if (w < 0) throw std::invalid_argument("categorical: negative weight");
      total += w;
    }
    if (total <= 0) throw std::invalid_argument("categorical: weights sum to zero");
    double u = uniform() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      u -= weights[i];
      if (u < 0) return (Index)i;
    }
    return (Index)weights.size() - 1;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (Index i = (Index)v.size() - 1; i > 0; --i) std::swap(v[(std::size_t)i], v[(std::size_t)uniform_int(i + 1)]);
  }

  /// Sample k distinct indices from [0, n) (k <= n), order randomized.
  std::vector<Index> sample_without_replacement(Index n, Index k) {
    if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
    std::vector<Index> idx((std::size_t)n);
    for (Index i = 0; i < n; ++i) idx[(std::size_t)i] = i;
    for (Index i = 0; i < k; ++i) std::swap(idx[(std::size_t)i], idx[(std::size_t)uniform_int(i, n - 1)]);
    idx.resize((std::size_t)k);
    return idx;
  }

  std::string serialize() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }
  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    if (!is) throw std::runtime_error("rng: failed to restore state");
  }

  /// Independent stream derived from a base seed and a tag.
  static Rng stream(std::uint64_t seed, std::uint64_t tag) {
    return Rng(splitmix64(seed) ^ splitmix64(tag * 0x9e3779b97f4a7c15ULL + 1));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace tarvis

#endif
