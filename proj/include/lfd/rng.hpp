#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace lfd {

/// Seedable generator used everywhere randomness is needed.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Every derived quantity (uniform doubles, normals, indices) is
/// computed here rather than through std::*_distribution, whose algorithms are
/// implementation-defined, so a seed reproduces the same stream on any
/// conforming toolchain.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() {
        ++draws_;
        return engine_();
    }

    /// Uniform on [0, 1) with 53 bits of resolution; one draw.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller; two draws, no cached spare.
    double normal();

    /// Uniform integer in [0, n) by rejection; n must be positive.
    std::size_t index(std::size_t n);

    /// Number of engine outputs consumed so far.
    std::uint64_t draws() const noexcept { return draws_; }

private:
    std::mt19937_64 engine_;
    std::uint64_t draws_ = 0;
};

/// SplitMix64 finalizer; derives independent sub-seeds from (seed, stream).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

}  // namespace lfd
