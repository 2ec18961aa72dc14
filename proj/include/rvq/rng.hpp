#pragma once

#include <cmath>
#include <cstdint>

namespace rvq {

/// Counter-based pseudo-random generator.
///
/// State is a (key, counter) pair; every draw hashes the pair and bumps the
/// counter, so a generator value is a pure function of (key, counter). Streams
/// derived with split() are statistically independent of the parent and of
/// each other, which lets batch items own their own generator regardless of
/// scheduling order.
class Rng {
  public:
    Rng() = default;
    Rng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

    static Rng seeded(std::uint64_t seed) { return Rng(finalize(seed ^ kKeyTag), 0); }

    /// Derive an independent stream identified by `stream` without advancing
    /// this generator.
    Rng split(std::uint64_t stream) const {
        return Rng(finalize(key_ ^ finalize(stream + kSplitTag)), 0);
    }

    std::uint64_t next_u64() {
        std::uint64_t v = finalize(key_ + kGolden * ++counter_);
        return v;
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n), n >= 1. Bias is below 2^-64 via the
    /// fixed-point multiply reduction.
    std::uint64_t uniform_int(std::uint64_t n) {
        unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
        return static_cast<std::uint64_t>(wide >> 64);
    }

    /// Standard normal via Box-Muller. Consumes two draws.
    double gaussian() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

  private:
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
    static constexpr std::uint64_t kKeyTag = 0xD1B54A32D192ED03ull;
    static constexpr std::uint64_t kSplitTag = 0x8CB92BA72F3D8DD7ull;
    static constexpr double kPi = 3.14159265358979323846;

    // splitmix64 finalizer
    static constexpr std::uint64_t finalize(std::uint64_t x) {
        x ^= x >> 30;
        x *= 0xBF58476D1CE4E5B9ull;
        x ^= x >> 27;
        x *= 0x94D049BB133111EBull;
        x ^= x >> 31;
        return x;
    }

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

} // namespace rvq
