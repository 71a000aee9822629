#include "gaitprint/rng.hpp"

#include <cmath>

namespace gaitprint {

std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::uint64_t mix_seed(std::uint64_t global_seed, std::uint64_t key) noexcept {
    return splitmix64(splitmix64(global_seed) ^ key);
}

std::uint64_t participant_seed(std::uint64_t global_seed, std::string_view id) noexcept {
    return mix_seed(global_seed, fnv1a64(id));
}

std::uint64_t Rng::below(std::uint64_t bound) {
    // rejection on the top of the range keeps the draw unbiased
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % bound;
}

double Rng::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    double u, v, s;
    do {
        u = 2.0 * uniform() - 1.0;
        v = 2.0 * uniform() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    return u * std::sqrt(-2.0 * std::log(s) / s);
}

double Rng::truncated_normal(double sigma, double limit) {
    if (sigma == 0.0) return 0.0;
    for (;;) {
        double z = normal();
        if (std::abs(z) <= limit) return z * sigma;
    }
}

}  // namespace gaitprint
