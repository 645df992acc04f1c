#pragma once

#include <array>
#include <cstdint>

namespace kolmoparam {

/// Philox 4x32-10 counter block cipher. Stateless: the caller owns the
/// (key, counter) pair, so any (seed, stream, block) triple maps to the same
/// four words on every platform and thread schedule.
std::array<uint32_t, 4> philox4x32(const std::array<uint32_t, 4>& counter,
                                   const std::array<uint32_t, 2>& key);

/// splitmix64 step, used to decorrelate seeds derived from a base seed and a tag.
uint64_t derive_seed(uint64_t seed, uint64_t tag);

/// One independent random stream identified by (seed, stream index).
/// Draws consume counter blocks in sequence; streams never collide.
class RngStream {
public:
    RngStream(uint64_t seed, uint64_t stream);

    /// Uniform on (0,1), both endpoints excluded.
    double uniform();
    /// Standard normal via Box-Muller on counter outputs.
    double normal();
    /// Gamma(alpha, 1) by Marsaglia-Tsang, valid for any alpha > 0.
    double gamma(double alpha);
    /// Integer uniform on [0, n).
    uint64_t uniform_index(uint64_t n);

    uint64_t raw64();

private:
    void refill();

    std::array<uint32_t, 2> key_;
    std::array<uint32_t, 4> block_;  // words of the current counter block
    uint64_t stream_;
    uint64_t block_index_ = 0;
    int cursor_ = 4;                 // next unread word in block_
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

}  // namespace kolmoparam
