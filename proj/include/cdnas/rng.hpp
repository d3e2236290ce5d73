#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace cdnas {

// Deterministic, platform-independent generator (splitmix64). Every stochastic
// component takes one of these explicitly; nothing reads global state, so any
// run is reproducible from its seed alone.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0,1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform integer in [0,n)
    uint64_t uniform_int(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    // standard normal via Box-Muller; stateless across calls
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Independent child stream. Mixing the stream id through the output
    // function keeps sibling streams uncorrelated, and adding a new consumer
    // never shifts the values an existing one sees.
    Rng split(uint64_t stream) const {
        Rng probe(state_ ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
        return Rng(probe.next_u64());
    }

    uint64_t state() const { return state_; }

private:
    uint64_t state_;
};

// FNV-1a, used both for seed derivation and config hashing.
inline uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Component seed = f(global seed, component name). Documented contract: the
// stream a component receives depends only on the global seed and its own
// name, never on which other components exist.
inline uint64_t derive_seed(uint64_t global_seed, std::string_view component) {
    Rng mix(global_seed ^ fnv1a(component));
    return mix.next_u64();
}

}  // namespace cdnas
