#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace aima {

// SplitMix64 stream. Used everywhere instead of <random> distributions so that
// identical seeds give identical bytes on any platform/toolchain.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0,1)
    double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n), n >= 1
    std::uint64_t next_below(std::uint64_t n) {
        // multiply-shift; bias is negligible for the ranges used here
        return std::uint64_t((__uint128_t(next_u64()) * n) >> 64);
    }

    // uniform integer in [lo, hi] inclusive
    std::int64_t next_int(std::int64_t lo, std::int64_t hi) {
        return lo + std::int64_t(next_below(std::uint64_t(hi - lo + 1)));
    }

    // standard normal via Box-Muller
    double next_normal() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = std::size_t(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // derive an independent stream (e.g. per scene, per worker)
    Rng fork(std::uint64_t salt) {
        Rng r(state_ ^ (0xd1342543de82ef95ULL * (salt + 1)));
        r.next_u64();
        return r;
    }

private:
    std::uint64_t state_;
};

}  // namespace aima
