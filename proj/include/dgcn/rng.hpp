#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace dgcn {

// Counter-based random stream. Every draw is a pure function of
// (seed, stream, counter), so parallel row workers produce the same
// values regardless of scheduling, and reruns are bit-identical.
namespace rng_detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ (0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2)));
}

}  // namespace rng_detail

class RngStream {
public:
    RngStream() : state_(0) {}
    explicit RngStream(std::uint64_t seed) : state_(rng_detail::splitmix64(seed)) {}

    // Derive an independent child stream, e.g. per (layer, step, vertex).
    RngStream fork(std::uint64_t tag) const {
        RngStream s;
        s.state_ = rng_detail::mix(state_, tag);
        return s;
    }
    RngStream fork(std::uint64_t a, std::uint64_t b) const { return fork(a).fork(b); }
    RngStream fork(std::uint64_t a, std::uint64_t b, std::uint64_t c) const {
        return fork(a).fork(b).fork(c);
    }

    // i-th draw of this stream; does not mutate state.
    std::uint64_t bits(std::uint64_t i) const { return rng_detail::mix(state_, i ^ 0xd1b54a32d192ed03ULL); }

    double uniform(std::uint64_t i) const {
        return static_cast<double>(bits(i) >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n), n >= 1.
    std::uint64_t below(std::uint64_t i, std::uint64_t n) const {
        return static_cast<std::uint64_t>(uniform(i) * static_cast<double>(n));
    }

    double normal(std::uint64_t i) const;

    // k distinct values from [0, n), k <= n. Partial Fisher-Yates over a
    // scratch index vector; order is the sampling order.
    std::vector<int> sample_without_replacement(std::uint64_t i, int n, int k) const;

private:
    std::uint64_t state_;
};

inline double RngStream::normal(std::uint64_t i) const {
    // Box-Muller from two counter draws.
    double u1 = uniform(2 * i);
    double u2 = uniform(2 * i + 1);
    if (u1 < 1e-300) u1 = 1e-300;
    const double two_pi = 6.283185307179586476925286766559;
    double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(two_pi * u2);
}

inline std::vector<int> RngStream::sample_without_replacement(std::uint64_t i, int n, int k) const {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) idx[static_cast<std::size_t>(j)] = j;
    std::vector<int> out(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
        std::uint64_t r = below(i * 0x51ed2701ULL + static_cast<std::uint64_t>(j),
                                static_cast<std::uint64_t>(n - j));
        std::swap(idx[static_cast<std::size_t>(j)], idx[static_cast<std::size_t>(j) + r]);
        out[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j)];
    }
    return out;
}

}  // namespace dgcn
