#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace semirep {

// Deterministic random stream with an explicit normal-variate algorithm.
// std::mt19937_64 supplies the raw 64-bit stream (its output sequence is fully
// specified by the standard); normals use Box-Muller rather than
// std::normal_distribution, whose algorithm is implementation-defined and would
// break bit-reproducibility across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Independent substream for (seed, index): replicate r, bootstrap draw b, ...
    // splitmix64 scrambles the pair so neighboring indices do not yield
    // correlated mt19937_64 seeds.
    static Rng stream(std::uint64_t seed, std::uint64_t index) {
        std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
        x = splitmix64(x);
        x = splitmix64(x);
        return Rng(x);
    }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on (0,1): 53-bit mantissa, never exactly 0 or 1.
    double uniform() {
        return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [lo, hi] inclusive via rejection-free modulo on a wide range;
    // bias is < 2^-32 for the cluster counts used here, but use Lemire-style
    // rejection anyway to keep draws exact.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % span;
        std::uint64_t draw;
        do {
            draw = engine_();
        } while (draw > limit);
        return lo + static_cast<std::int64_t>(draw % span);
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * 3.14159265358979323846 * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    static std::uint64_t splitmix64(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace semirep
