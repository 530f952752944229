#pragma once

#include <cmath>
#include <cstdint>

namespace sfsod {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace detail

/// Counter-based generator keyed by (seed, replication, stream).
/// The output sequence is a pure function of the key and the draw counter,
/// so parallel replications are order independent.
class CounterRng {
  public:
    CounterRng(std::uint64_t seed, std::uint64_t replication = 0, std::uint64_t stream = 0) {
        std::uint64_t s = seed;
        const std::uint64_t a = detail::splitmix64(s);
        s = replication ^ 0x6a09e667f3bcc909ULL;
        const std::uint64_t b = detail::splitmix64(s);
        s = stream ^ 0xbb67ae8584caa73bULL;
        const std::uint64_t c = detail::splitmix64(s);
        key_ = a ^ (b * 0x9e3779b97f4a7c15ULL) ^ (c * 0xc2b2ae3d27d4eb4fULL);
    }

    std::uint64_t next_u64() {
        std::uint64_t s = key_ + counter_ * 0x9e3779b97f4a7c15ULL;
        ++counter_;
        return detail::splitmix64(s);
    }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, bound). bound must be positive.
    std::uint64_t uniform_below(std::uint64_t bound) {
        return next_u64() % bound;
    }

    /// Standard normal via Box-Muller; pairs are cached so draws stay keyed
    /// to the counter deterministically.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

  private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace sfsod
