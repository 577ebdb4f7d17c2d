#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace structgp {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
/// Counter mode keeps every seeded trace bit-identical across platforms,
/// which the <random> distributions do not guarantee.
class Philox {
public:
    using result_type = std::uint32_t;

    explicit Philox(std::uint64_t seed = 0, std::uint64_t stream = 0) { reseed(seed, stream); }

    void reseed(std::uint64_t seed, std::uint64_t stream = 0) {
        key_ = {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
        counter_ = {0u, 0u, static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32)};
        buf_pos_ = 4;
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return 0xffffffffu; }

    result_type operator()() {
        if (buf_pos_ == 4) {
            buf_ = block(counter_, key_);
            advance_counter();
            buf_pos_ = 0;
        }
        return buf_[buf_pos_++];
    }

    /// One 10-round Philox4x32 block; exposed for the frozen test vectors.
    static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                              std::array<std::uint32_t, 2> key) {
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * ctr[0];
            const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * ctr[2];
            ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
                   static_cast<std::uint32_t>(p1),
                   static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
                   static_cast<std::uint32_t>(p0)};
            key[0] += 0x9E3779B9u;
            key[1] += 0xBB67AE85u;
        }
        return ctr;
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() {
        const std::uint64_t hi = (*this)();
        const std::uint64_t lo = (*this)();
        return static_cast<double>(((hi << 32) | lo) >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (pinned algorithm, pair cached).
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        cached_ = r * std::sin(theta);
        have_cached_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Gamma(shape, rate) via Marsaglia-Tsang, shape boost below 1.
    double gamma(double shape, double rate) {
        if (shape < 1.0) {
            const double u = uniform();
            return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
        }
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // rejection sampling keeps the draw unbiased
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        for (;;) {
            const std::uint64_t hi = (*this)();
            const std::uint64_t lo = (*this)();
            const std::uint64_t r = (hi << 32) | lo;
            if (r < limit) return r % n;
        }
    }

private:
    void advance_counter() {
        if (++counter_[0] == 0)
            if (++counter_[1] == 0) ++counter_[2];
    }

    std::array<std::uint32_t, 2> key_{};
    std::array<std::uint32_t, 4> counter_{};
    std::array<std::uint32_t, 4> buf_{};
    int buf_pos_ = 4;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

}  // namespace structgp
