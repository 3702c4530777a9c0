#pragma once

#include <cstdint>

namespace tssm {

// SplitMix64 step: advances the state and returns the mixed value.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// One-shot mix of a single value.
inline std::uint64_t mix64(std::uint64_t x) {
    return splitmix64(x);
}

// Combine a base seed with a stream index (per-iteration mask seeds etc.).
inline std::uint64_t mix_seeds(std::uint64_t seed, std::uint64_t stream) {
    return mix64(seed ^ mix64(stream));
}

// Deterministic generator built on SplitMix64. Uses only integer ops and
// exact power-of-two scaling, so the stream is identical on every platform.
class DetRng {
public:
    explicit DetRng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1), 24 bits of mantissa
    float next_unit() {
        return static_cast<float>(next_u64() >> 40) * 0x1p-24f;
    }

    float next_uniform(float lo, float hi) {
        return lo + (hi - lo) * next_unit();
    }

    // uniform in [-1, 1)
    float next_sym() { return next_uniform(-1.0f, 1.0f); }

    // uniform integer in [0, n)
    std::uint64_t next_below(std::uint64_t n) {
        return n <= 1 ? 0 : next_u64() % n;
    }

private:
    std::uint64_t state_;
};

}  // namespace tssm
