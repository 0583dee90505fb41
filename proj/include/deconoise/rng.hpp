#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace deconoise {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Deterministic random stream. Every stream is derived from the single user
// seed plus a stream name ("data", "init", "mask", "noise", ...), so each
// component of a run can be reproduced in isolation. The raw draws go through
// explicit transforms rather than std::*_distribution, keeping generated
// values identical across standard libraries.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::string_view name)
      : engine_(detail::splitmix64(seed ^ detail::fnv1a(name))) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    return static_cast<int>(uniform() * static_cast<double>(n));
  }

  // Standard normal via Box-Muller; draws come in pairs.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Poisson draw. Exact product method for small rates; for large rates a
  // rounded normal approximation is used (error is negligible next to the
  // shot noise itself at those intensities).
  long poisson(double rate) {
    if (!(rate > 0.0)) return 0;
    if (rate < 64.0) {
      double limit = std::exp(-rate);
      double prod = 1.0;
      long k = -1;
      do {
        ++k;
        prod *= uniform();
      } while (prod > limit);
      return k;
    }
    double v = rate + std::sqrt(rate) * gaussian();
    return v > 0.0 ? static_cast<long>(std::llround(v)) : 0;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace deconoise
