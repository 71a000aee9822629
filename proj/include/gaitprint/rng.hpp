#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace gaitprint {

/// splitmix64 finalizer. Used for all seed derivation.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// 64-bit FNV-1a over the bytes of `s`.
std::uint64_t fnv1a64(std::string_view s) noexcept;

/// Substream seed: splitmix64(splitmix64(global) ^ key). Independent keys give
/// independent streams, so adding or removing a participant never shifts
/// another participant's draws.
std::uint64_t mix_seed(std::uint64_t global_seed, std::uint64_t key) noexcept;

/// mix_seed(global_seed, fnv1a64(id)).
std::uint64_t participant_seed(std::uint64_t global_seed, std::string_view id) noexcept;

// Portable generator: the engine is std::mt19937_64 (fully specified by the
// standard); distributions are implemented here because the std ones are not.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform integer in [0, bound). `bound` must be > 0.
    std::uint64_t below(std::uint64_t bound);
    /// Uniform double in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Standard normal via the Marsaglia polar method (no cached spare).
    double normal();
    /// Normal(0, sigma) truncated to [-limit*sigma, limit*sigma] by rejection.
    double truncated_normal(double sigma, double limit);

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace gaitprint
