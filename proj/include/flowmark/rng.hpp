#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace flowmark {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : s) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace detail

// Counter-free deterministic RNG stream. A stream is fully determined by the
// (seed, label) pair it was constructed from and the sequence of draws made
// on it; fork() derives an independent child stream without disturbing the
// parent, so concurrent consumers cannot perturb each other's sequences.
class RngStream {
  public:
    RngStream() : state_(0x853C49E6748FEA9BULL) {}
    RngStream(std::uint64_t seed, std::string_view label) {
        state_ = seed ^ 0xA0761D6478BD642FULL;
        std::uint64_t h = detail::fnv1a(label);
        state_ ^= detail::splitmix64(h);
        (void)detail::splitmix64(state_);
    }

    RngStream fork(std::string_view label) const {
        RngStream child;
        std::uint64_t s = state_ ^ detail::fnv1a(label);
        (void)detail::splitmix64(s);
        child.state_ = s;
        return child;
    }

    RngStream fork(std::uint64_t index) const {
        RngStream child;
        std::uint64_t s = state_ ^ (0x9E3779B97F4A7C15ULL * (index + 1));
        (void)detail::splitmix64(s);
        child.state_ = s;
        return child;
    }

    std::uint64_t next_u64() { return detail::splitmix64(state_); }

    // [0,1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0,n)
    int uniform_int(int n) {
        return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
    }

    bool bernoulli(double p = 0.5) { return uniform() < p; }

    // Box-Muller; draws two uniforms per call, no cached state.
    double gauss() {
        double u1 = 1.0 - uniform();  // (0,1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

  private:
    std::uint64_t state_;
};

}  // namespace flowmark
