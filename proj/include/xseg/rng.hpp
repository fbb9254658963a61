#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace xseg {

// Deterministic random stream. mt19937_64 output is fully specified by the
// standard; the distribution transforms below are hand-rolled because the
// std:: distributions are implementation-defined and would break cross-platform
// reproducibility.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), n >= 1. Rejection sampling, unbiased.
    std::uint64_t uniform_int(std::uint64_t n);

    // Standard normal via Box-Muller (both values used).
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Derives an independent child seed from a parent seed and up to three stream
// tags. splitmix64-style mixing; same inputs give the same child everywhere.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);

}  // namespace xseg
