#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "tow/errors.hpp"

namespace tow {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

// Deterministic random stream. The distributions are built on the raw
// mt19937_64 output directly (not std::*_distribution) so that draws are
// identical across standard library implementations. Child streams derived
// from the same (seed, name) pair are always the same stream.
class SeedStream {
 public:
  explicit SeedStream(std::uint64_t seed)
      : seed_(seed), gen_(detail::splitmix64(seed)) {}

  SeedStream substream(std::string_view name) const {
    return SeedStream(detail::splitmix64(seed_ ^ detail::fnv1a(name)));
  }

  SeedStream substream(std::uint64_t id) const {
    return SeedStream(detail::splitmix64(seed_ ^ detail::splitmix64(id)));
  }

  std::uint64_t seed() const { return seed_; }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the second draw of each pair is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(two_pi * u2);
    have_spare_ = true;
    return r * std::cos(two_pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n); rejection sampling avoids modulo bias.
  int uniform_int(int n) {
    if (n <= 0) throw ArgumentError("uniform_int: n must be positive");
    const auto un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() -
        std::numeric_limits<std::uint64_t>::max() % un;
    std::uint64_t x = gen_();
    while (x >= limit) x = gen_();
    return static_cast<int>(x % un);
  }

  // Index drawn from an (unnormalized is tolerated) probability vector.
  int categorical(const Eigen::VectorXd& probs) {
    if (probs.size() == 0) throw ArgumentError("categorical: empty probability vector");
    if (probs.minCoeff() < 0.0) throw ArgumentError("categorical: negative probability");
    const double total = probs.sum();
    if (!(total > 0.0)) throw ArgumentError("categorical: probabilities sum to zero");
    const double u = uniform() * total;
    double acc = 0.0;
    for (int i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return static_cast<int>(probs.size()) - 1;
  }

  Eigen::VectorXd normal_vector(int n) {
    Eigen::VectorXd out(n);
    for (int i = 0; i < n; ++i) out[i] = normal();
    return out;
  }

  Eigen::MatrixXd normal_matrix(int rows, int cols) {
    Eigen::MatrixXd out(rows, cols);
    // Row-major fill order keeps draws independent of Eigen's storage order.
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) out(r, c) = normal();
    return out;
  }

  Eigen::VectorXd uniform_vector(int n, double lo, double hi) {
    Eigen::VectorXd out(n);
    for (int i = 0; i < n; ++i) out[i] = uniform(lo, hi);
    return out;
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace tow
