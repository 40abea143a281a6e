#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace fbsvi {

/// SplitMix64 finalizer.
inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Per-path seed derived from the master seed and the path index.
inline constexpr std::uint64_t path_seed(std::uint64_t master, std::uint64_t path) {
    return splitmix64(splitmix64(master) ^ splitmix64(path ^ 0xD1B54A32D192ED03ULL));
}

/// Counter-based standard normal stream for one path.
///
/// Variate number `index` is a pure function of (seed, index), so ensembles do
/// not depend on the order in which paths or steps are generated. Variates are
/// produced in Box-Muller pairs (2j, 2j+1); the last pair is cached.
class NormalStream {
public:
    explicit NormalStream(std::uint64_t seed) : seed_(seed) {}

    double operator()(std::uint64_t index) {
        const std::uint64_t pair = index >> 1;
        if (pair != cached_pair_) {
            const std::uint64_t a = splitmix64(seed_ ^ splitmix64(2 * pair));
            const std::uint64_t b = splitmix64(seed_ ^ splitmix64(2 * pair + 1));
            // u1 in (0, 1], u2 in [0, 1)
            const double u1 = static_cast<double>((a >> 11) + 1) * 0x1.0p-53;
            const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
            const double r = std::sqrt(-2.0 * std::log(u1));
            const double th = 2.0 * std::numbers::pi * u2;
            c_ = r * std::cos(th);
            s_ = r * std::sin(th);
            cached_pair_ = pair;
        }
        return (index & 1U) ? s_ : c_;
    }

private:
    std::uint64_t seed_;
    std::uint64_t cached_pair_ = ~std::uint64_t{0};
    double c_ = 0.0;
    double s_ = 0.0;
};

}  // namespace fbsvi

namespace fbsvi {

/// Uniform variate in [0, 1) as a pure function of (seed, index).
inline constexpr double uniform01(std::uint64_t seed, std::uint64_t index) {
    return static_cast<double>(splitmix64(seed ^ splitmix64(index)) >> 11) * 0x1.0p-53;
}

}  // namespace fbsvi
