#pragma once

#include <cstdint>
#include <cmath>

namespace picl {

// Counter-based stream: draws are a pure hash of (seed, stream, counter),
// so identical (seed, stream) pairs replay identically on any platform.
class RngStream {
public:
    RngStream(uint64_t seed, uint64_t stream)
        : key_(mix(mix(seed ^ 0x8f23ec5c5df84a1full) + mix(stream * 0x9e3779b97f4a7c15ull + 1))),
          seed_(seed), stream_(stream) {}

    uint64_t seed() const { return seed_; }
    uint64_t stream() const { return stream_; }

    // Derived stream, decorrelated from this one.
    RngStream sub(uint64_t id) const { return RngStream(seed_, mix(stream_ + 0x632be59bd9b4e019ull) ^ mix(id)); }

    uint64_t next_u64() { return mix(key_ + (++counter_) * 0x9e3779b97f4a7c15ull); }

    // Uniform in the open interval (0, 1).
    double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double gumbel() { return -std::log(-std::log(uniform())); }

private:
    static uint64_t mix(uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    uint64_t key_;
    uint64_t seed_;
    uint64_t stream_;
    uint64_t counter_ = 0;
};

}  // namespace picl
