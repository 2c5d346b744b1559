#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace ssc {

// SplitMix64 stream. Bit-exact across platforms; streams are keyed by
// (seed, purpose[, index]) so independent consumers never share state.
class SplitMix64 {
  public:
    explicit SplitMix64(uint64_t state) : state_(state) {}

    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    static uint64_t fnv1a(std::string_view s) {
        uint64_t h = 0xCBF29CE484222325ull;
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001B3ull;
        }
        return h;
    }

    static SplitMix64 keyed(uint64_t seed, std::string_view purpose, uint64_t index = 0) {
        uint64_t s = mix(seed + 0x9E3779B97F4A7C15ull);
        s = mix(s ^ fnv1a(purpose));
        s = mix(s ^ (index + 0x632BE59BD9B4E019ull));
        return SplitMix64(s);
    }

    uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ull;
        return mix(state_);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; spelled out so the values do not depend on a library's
    // distribution implementation.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive bounds
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(next() % span);
    }

    uint64_t state() const { return state_; }

  private:
    uint64_t state_;
};

}  // namespace ssc
