#include "kolmoparam/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace kolmoparam {

namespace {

constexpr uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(uint32_t a, uint32_t b, uint32_t& hi, uint32_t& lo) {
    const uint64_t p = static_cast<uint64_t>(a) * b;
    hi = static_cast<uint32_t>(p >> 32);
    lo = static_cast<uint32_t>(p);
}

}  // namespace

std::array<uint32_t, 4> philox4x32(const std::array<uint32_t, 4>& counter,
                                   const std::array<uint32_t, 2>& key) {
    std::array<uint32_t, 4> x = counter;
    uint32_t k0 = key[0], k1 = key[1];
    for (int round = 0; round < 10; ++round) {
        uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kPhiloxM0, x[0], hi0, lo0);
        mulhilo(kPhiloxM1, x[2], hi1, lo1);
        const std::array<uint32_t, 4> y = {hi1 ^ x[1] ^ k0, lo1, hi0 ^ x[3] ^ k1, lo0};
        x = y;
        k0 += kPhiloxW0;
        k1 += kPhiloxW1;
    }
    return x;
}

uint64_t derive_seed(uint64_t seed, uint64_t tag) {
    uint64_t z = seed + 0x9E3779B97F4A7C15ull * (tag + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

RngStream::RngStream(uint64_t seed, uint64_t stream)
    : key_{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)},
      stream_(stream) {}

void RngStream::refill() {
    const std::array<uint32_t, 4> counter = {
        static_cast<uint32_t>(stream_), static_cast<uint32_t>(stream_ >> 32),
        static_cast<uint32_t>(block_index_), static_cast<uint32_t>(block_index_ >> 32)};
    block_ = philox4x32(counter, key_);
    ++block_index_;
    cursor_ = 0;
}

uint64_t RngStream::raw64() {
    if (cursor_ > 2) refill();
    const uint64_t lo = block_[cursor_];
    const uint64_t hi = block_[cursor_ + 1];
    cursor_ += 2;
    return (hi << 32) | lo;
}

double RngStream::uniform() {
    // 53 mantissa bits, offset by half an ulp so 0 and 1 are excluded.
    return (static_cast<double>(raw64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_normal_ = r * std::sin(a);
    has_cached_normal_ = true;
    return r * std::cos(a);
}

double RngStream::gamma(double alpha) {
    if (!(alpha > 0.0)) throw std::invalid_argument("gamma: alpha must be positive");
    if (alpha < 1.0) {
        // Boost to alpha + 1 and correct with a power of a uniform.
        const double g = gamma(alpha + 1.0);
        return g * std::pow(uniform(), 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

uint64_t RngStream::uniform_index(uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
    // Rejection against the largest multiple of n to keep the draw unbiased.
    const uint64_t limit = n * (UINT64_MAX / n);
    for (;;) {
        const uint64_t r = raw64();
        if (r < limit) return r % n;
    }
}

}  // namespace kolmoparam
