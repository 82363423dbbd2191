#ifndef NETFENCE_RNG_HPP
#define NETFENCE_RNG_HPP

#include <cstdint>
#include <cmath>

namespace netfence {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Counter-mode generator. Streams derived from (seed, id, tag) are
// independent and reproducible across platforms; no libstdc++
// distribution objects are used anywhere so traces are bit-stable.
class Rng {
public:
    Rng() = default;
    Rng(uint64_t seed, uint64_t stream) {
        state_ = splitmix64(seed ^ splitmix64(stream * 0x9e3779b97f4a7c15ULL + 1));
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return splitmix64(state_);
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

    bool bernoulli(double p) { return uniform() < p; }

    double exponential(double mean) {
        double u = uniform();
        if (u >= 1.0) u = 0.9999999999999999;
        return -mean * std::log1p(-u);
    }

    double pareto(double scale, double shape) {
        double u = uniform();
        if (u >= 1.0) u = 0.9999999999999999;
        return scale / std::pow(1.0 - u, 1.0 / shape);
    }

private:
    uint64_t state_ = 0x853c49e6748fea9bULL;
};

} // namespace netfence

#endif
