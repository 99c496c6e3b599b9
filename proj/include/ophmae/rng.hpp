#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ophmae/errors.hpp"

namespace ophmae {

// Deterministic random source. All distribution logic lives here (rejection
// sampling, Box-Muller) rather than in std:: distributions, whose output is
// implementation-defined; the same seed must reproduce the same stream on
// any platform.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, n), unbiased via rejection
    uint64_t bounded(uint64_t n) {
        if (n == 0) throw InvalidRatio("bounded(0)");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = gen_();
        while (v >= limit) v = gen_();
        return v % n;
    }

    // uniform in [0, 1) with 53-bit resolution
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // standard normal, cacheless Box-Muller (two uniforms per draw)
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // derived independent stream keyed off the constructor seed, e.g. one
    // stream per patient so generation order does not matter
    Rng child(uint64_t index) const {
        return Rng(splitmix64(seed_ ^ splitmix64(index + 0x51ed2701)));
    }

    // partial Fisher-Yates: k distinct indices drawn uniformly from [0, n)
    std::vector<int> sample_without_replacement(int n, int k) {
        if (k < 0 || k > n) throw SubsetTooLarge("requested " + std::to_string(k) + " of " + std::to_string(n));
        std::vector<int> pool(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
        for (int i = 0; i < k; ++i) {
            const int j = i + static_cast<int>(bounded(static_cast<uint64_t>(n - i)));
            std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
        }
        pool.resize(static_cast<size_t>(k));
        return pool;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::string serialize() const {
        std::ostringstream os;
        os << seed_ << ' ' << gen_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        is >> seed_ >> gen_;
        if (!is) throw CheckpointCorrupt("bad rng state string");
    }

    static uint64_t splitmix64(uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

private:
    uint64_t seed_;
    std::mt19937_64 gen_;
};

// round half away from zero, deterministic across platforms
inline int round_half_away(double x) {
    return static_cast<int>(x >= 0.0 ? std::floor(x + 0.5) : std::ceil(x - 0.5));
}

}  // namespace ophmae
