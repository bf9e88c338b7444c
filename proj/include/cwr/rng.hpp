#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace cwr {

namespace detail {

// splitmix64 finalizer; used to turn (seed, stream) pairs into well-spread
// engine seeds so derived streams are statistically independent.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace detail

// Deterministic random source. All samplers are implemented on top of raw
// mt19937_64 output so that a given (seed, call sequence) produces identical
// draws independent of the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(detail::mix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  // Independent child stream; depends only on the constructor seed and the
  // stream index, never on how much this instance has already been consumed.
  Rng derive(std::uint64_t stream) const {
    return Rng(detail::mix64(seed_ ^ detail::mix64(stream + 1)));
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1]; safe as a log() argument.
  double uniform_pos() {
    return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t uniform_index(std::uint64_t n) {
    // Rejection-free modulo bias is negligible for the n used here (<< 2^32),
    // but keep it exact anyway.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return v % n;
  }

  double exponential(double rate) { return -std::log(uniform_pos()) / rate; }

  // Standard normal via Box-Muller; one spare value is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * kPi * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Marsaglia-Tsang; shape < 1 handled by the boost T = G(shape+1) * U^(1/shape).
  double gamma(double shape, double rate) {
    if (shape < 1.0) {
      const double u = uniform_pos();
      return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform_pos();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) {
        return d * v / rate;
      }
    }
  }

  // Positive stable law with Laplace transform E[exp(-t S)] = exp(-t^alpha),
  // 0 < alpha <= 1, by the Chambers-Mallows-Stuck / Kanter construction.
  // alpha = 1 is the degenerate point mass at 1.
  double positive_stable(double alpha) {
    if (alpha >= 1.0) return 1.0;
    const double u = kPi * uniform_pos();
    const double e = exponential(1.0);
    const double a = std::sin(alpha * u) / std::pow(std::sin(u), 1.0 / alpha);
    const double b = std::sin((1.0 - alpha) * u) / e;
    return a * std::pow(b, (1.0 - alpha) / alpha);
  }

 private:
  static constexpr double kPi = 3.14159265358979323846;

  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace cwr
