#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace ptune {

// Invalid model/prompt/head configuration (shape mismatches included).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input data: corpus files, unalignable spans, bad token ids.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: mismatched lengths, calling an op in the wrong mode.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training aborted (NaN loss); message carries step/lr/grad-norm diagnostics.
struct TrainDiverged : std::runtime_error {
  explicit TrainDiverged(const std::string& msg) : std::runtime_error(msg) {}
};

// Deterministic RNG. Gaussians come from a hand-rolled Box-Muller on top of
// mt19937_64 so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  std::uint64_t next_u64() {
    // splitmix64; small, seedable, reproducible everywhere
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform integer in [0, n)
  std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    if (have_spare_) {
      have_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = 0.0, u2 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 1e-300);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return mean + stddev * r * std::cos(theta);
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a, used for config hashes and name-derived seeds.
inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace ptune
