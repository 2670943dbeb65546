#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace spore {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using IntVector = Eigen::VectorXi;
using IntMatrix = Eigen::MatrixXi;

/// Raised when an operation's preconditions on its inputs are violated.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a numerical routine cannot certify its answer (as opposed to
/// returning a negative answer).
class IndeterminateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ArgumentError(msg);
}

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// log of the smallest positive normal double; a density below this would
// underflow to zero in linear space.
inline const double kLogMinNormal = std::log(std::numeric_limits<double>::min());

using Rng = std::mt19937_64;

/// Stable 64-bit mixing (splitmix64 finalizer).
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
  return mix64(seed ^ mix64(v));
}

/// FNV-1a, used to fold string ids into seeds.
constexpr std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline double uniform01(Rng& rng) {
  // 53 random bits -> [0, 1)
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double standard_normal(Rng& rng) {
  // Box-Muller; one value per call keeps the stream position predictable.
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

/// Poisson draw: sequential-search inversion below rate 10, transformed
/// rejection (Hormann's PTRS) above.
/// `exp_neg_rate` must equal exp(-rate); callers drawing many values at one
/// rate pass it precomputed.
inline int sample_poisson(double rate, double exp_neg_rate, Rng& rng) {
  if (!(rate > 0.0)) return 0;
  if (rate < 10.0) {
    const double u = uniform01(rng);
    double p = exp_neg_rate;
    double cdf = p;
    int x = 0;
    while (u >= cdf) {
      ++x;
      p *= rate / x;
      const double next = cdf + p;
      if (next == cdf) break;  // remaining tail below double resolution
      cdf = next;
    }
    return x;
  }
  const double slam = std::sqrt(rate);
  const double loglam = std::log(rate);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double v_r = 0.9277 - 3.6224 / (b - 2.0);
  for (;;) {
    const double u = uniform01(rng) - 0.5;
    const double v = uniform01(rng);
    const double us = 0.5 - std::fabs(u);
    const double k = std::floor((2.0 * a / us + b) * u + rate + 0.43);
    if (us >= 0.07 && v <= v_r) return static_cast<int>(k);
    if (k < 0.0 || (us < 0.013 && v > us)) continue;
    if (std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b) <=
        -rate + k * loglam - std::lgamma(k + 1.0))
      return static_cast<int>(k);
  }
}

inline int sample_poisson(double rate, Rng& rng) {
  return sample_poisson(rate, rate > 0.0 && rate < 10.0 ? std::exp(-rate) : 0.0, rng);
}

/// log(sum(exp(v))) over a range, -inf for an empty or all -inf input.
template <class Range>
double log_sum_exp(const Range& values) {
  double mx = -kInf;
  for (double v : values) mx = std::max(mx, v);
  if (!std::isfinite(mx)) return mx;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

}  // namespace spore
