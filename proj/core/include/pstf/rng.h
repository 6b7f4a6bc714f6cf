// pstf is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <cstdint>

#include "pstf/vecmath.h"

namespace pstf {

/// PCG32 with an explicit stream selector. The state after n draws is a pure
/// function of (seed, stream, n), so every (pixel, frame) pair can own an
/// independent, exactly reproducible sequence regardless of thread scheduling.
class Rng {
public:
    Rng() { seed(0, 0); }
    Rng(uint64_t seedValue, uint64_t stream) { seed(seedValue, stream); }

    void seed(uint64_t seedValue, uint64_t stream) {
        m_inc = (stream << 1u) | 1u;
        m_state = 0u;
        nextUInt32();
        m_state += seedValue;
        nextUInt32();
    }

    uint32_t nextUInt32() {
        uint64_t oldState = m_state;
        m_state = oldState * 6364136223846793005ULL + m_inc;
        uint32_t xorShifted = uint32_t(((oldState >> 18u) ^ oldState) >> 27u);
        uint32_t rot = uint32_t(oldState >> 59u);
        return (xorShifted >> rot) | (xorShifted << ((32u - rot) & 31u));
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double next1D() {
        uint64_t hi = nextUInt32();
        uint64_t lo = nextUInt32();
        return double(((hi << 32) | lo) >> 11) * 0x1p-53;
    }

    Vec2 next2D() {
        double a = next1D();
        double b = next1D();
        return {a, b};
    }

    /// Uniform integer in [0, bound).
    uint32_t nextBounded(uint32_t bound) {
        return uint32_t((uint64_t(nextUInt32()) * bound) >> 32);
    }

private:
    uint64_t m_state = 0;
    uint64_t m_inc = 1;
};

/// SplitMix64 finalizer; used to derive well-spread stream ids from structured
/// inputs like (frame, pixel).
inline uint64_t mixBits(uint64_t v) {
    v ^= v >> 30;
    v *= 0xbf58476d1ce4e5b9ULL;
    v ^= v >> 27;
    v *= 0x94d049bb133111ebULL;
    v ^= v >> 31;
    return v;
}

inline uint64_t streamId(uint64_t frame, uint64_t pixel, uint64_t lane = 0) {
    return mixBits(frame * 0x9e3779b97f4a7c15ULL + pixel * 0x2545f4914f6cdd1dULL + lane);
}

} // namespace pstf
