#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>

namespace dmcodec {

// Seeded generator with platform-independent conversions. The standard
// distribution classes are implementation-defined, which would make corpus
// bytes and initial weights differ across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed = 42) : engine_(seed) {}

    // Mixes several integers (seed, step, layer, ...) into one stream.
    static Rng derive(std::initializer_list<uint64_t> parts) {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (uint64_t p : parts) {
            for (int i = 0; i < 8; ++i) {
                h ^= (p >> (8 * i)) & 0xffU;
                h *= 0x100000001b3ULL;
            }
        }
        return Rng(h);
    }

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) { return n == 0 ? 0 : static_cast<uint64_t>(uniform() * static_cast<double>(n)) % n; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace dmcodec
