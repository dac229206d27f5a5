#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace xcap {

// Counter-based splittable random stream. A stream is (key, counter); draws
// mix the pair, so draw k of a stream never depends on how other streams were
// consumed. split(lane) derives an independent child stream, which is how
// per-record / per-epoch generators stay reproducible regardless of
// evaluation order.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed)
      : key_(mix(seed ^ 0x5CA1AB1E0DDBA11ULL)), counter_(0) {}

  RngStream split(std::uint64_t lane) const {
    return RngStream(FromKey{}, mix(key_ ^ mix(lane ^ 0xB5EEDED0C0FFEEULL)));
  }

  std::uint64_t next_u64() { return mix(key_ + kGamma * ++counter_); }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller. Always consumes two draws; no cached
  // spare, so the k-th gaussian is a fixed function of (key, k).
  double next_gaussian() {
    const double u1 = next_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  bool bernoulli(double p) { return next_double() < p; }

  // Uniform integer in [0, n). Lemire reduction; deterministic.
  std::uint32_t next_below(std::uint32_t n) {
    return static_cast<std::uint32_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

 private:
  struct FromKey {};
  RngStream(FromKey, std::uint64_t key) : key_(key), counter_(0) {}

  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z += kGamma;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_;
};

template <typename T>
void shuffle(std::vector<T>& v, RngStream& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::uint32_t j = rng.next_below(static_cast<std::uint32_t>(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace xcap
