#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace skincnn {

// Splitmix64 generator. Used everywhere randomness is needed so that results
// are identical across platforms and standard libraries; std::*_distribution
// is implementation-defined and would break bit-level reproducibility.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    // Derive an independent stream, e.g. Rng(seed).derive(epoch) or
    // Rng(seed).derive(split_id, image_index).
    Rng derive(std::uint64_t a) const
    {
        Rng r(state_);
        r.state_ ^= mix(a + 0x9e3779b97f4a7c15ULL);
        r.next_u64();
        return r;
    }
    Rng derive(std::uint64_t a, std::uint64_t b) const { return derive(a).derive(b); }

    std::uint64_t next_u64()
    {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    // Uniform in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller, no cached spare so the draw count per
    // call site is fixed.
    double normal()
    {
        double u1 = 0.0;
        while (u1 <= 1e-300)
            u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    template <typename It>
    void shuffle(It first, It last)
    {
        auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            auto j = below(i);
            std::swap(first[i - 1], first[j]);
        }
    }

private:
    static std::uint64_t mix(std::uint64_t z)
    {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
};

// Deterministic per-pixel hash, for speckle style noise in the synthetic
// generator. Returns a value in [0, 1).
inline double hash01(std::uint64_t salt, std::uint64_t x, std::uint64_t y)
{
    std::uint64_t z = salt ^ (x * 0x9e3779b97f4a7c15ULL) ^ (y * 0xc2b2ae3d27d4eb4fULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return double(z >> 11) * 0x1.0p-53;
}

} // namespace skincnn
