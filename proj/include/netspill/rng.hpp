#ifndef NETSPILL_RNG_HPP
#define NETSPILL_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace netspill {

/// SplitMix64 finalizer; used to derive independent seeds.
inline std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// FNV-1a over a label, so substreams can be named.
inline std::uint64_t hash_label(std::string_view label) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed for the substream (label, index) of a master seed. Substreams depend
/// only on these three values, never on scheduling, so results do not change
/// with the number of worker threads.
inline std::uint64_t substream_seed(std::uint64_t seed, std::string_view label,
                                    std::uint64_t index = 0) noexcept {
  return mix64(mix64(seed ^ hash_label(label)) + mix64(index + 1));
}

/// Mersenne-Twister with portable uniform/normal/bounded draws. The standard
/// distributions are implementation-defined; these are not, so seeded output
/// is identical across standard libraries.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::string_view label, std::uint64_t index = 0)
      : engine_(substream_seed(seed, label, index)) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform();
  }

  /// Standard normal via the Marsaglia polar method.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  double normal(double mean, double sd) noexcept { return mean + sd * normal(); }

  /// Unbiased integer in [0, n), n > 0 (Lemire's multiply-shift rejection).
  std::uint64_t below(std::uint64_t n) noexcept {
    unsigned __int128 m = static_cast<unsigned __int128>(engine_()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<unsigned __int128>(engine_()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Fisher-Yates shuffle.
  template <typename Range> void shuffle(Range &r) noexcept {
    const auto n = static_cast<std::uint64_t>(std::size(r));
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      using std::swap;
      swap(r[i - 1], r[j]);
    }
  }

  std::mt19937_64 &engine() noexcept { return engine_; }

private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

} // namespace netspill

#endif // NETSPILL_RNG_HPP
