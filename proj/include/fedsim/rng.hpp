// Seeded, cross-platform random streams. Every stochastic component of the
// simulator draws from an Rng derived here, so runs replay bit-exactly.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace fedsim {

// splitmix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// derive(seed, a, b, ...) gives a seed for an isolated substream. Client
// count and ordering never perturb each other's draws because each stream
// is keyed by (seed, client, round, ...) rather than by draw order.
inline std::uint64_t derive_seed(std::uint64_t seed) { return mix64(seed); }

template <typename... Rest>
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t next, Rest... rest) {
  return derive_seed(mix64(seed ^ mix64(next)), rest...);
}

template <typename... Rest>
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, Rest... rest) {
  return derive_seed(seed, hash_tag(tag), rest...);
}

// mt19937_64 has a standard-mandated sequence; the uniform mappings below
// avoid std::uniform_*_distribution, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1); never returns an endpoint.
  double uniform_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n) via 128-bit multiply; n must be > 0.
  std::uint64_t bounded(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Box-Muller; consumes two draws per pair, caching the second.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u = uniform_open();
    double v = uniform_open();
    double r = std::sqrt(-2.0 * std::log(u));
    double theta = 6.283185307179586476925286766559 * v;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(bounded(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace fedsim
