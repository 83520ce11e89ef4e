#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace mmica {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seeded generator that can derive independent child streams by tag.
///
/// A run owns one root Rng built from its seed; every consumer (block
/// shuffling, random selection, subsampling, data generation) takes a child
/// via split() so that adding draws in one place never shifts another stream.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(splitmix64(seed)) {}

    Rng split(std::uint64_t tag) const { return Rng(splitmix64(seed_ ^ splitmix64(tag + 1))); }

    std::uint64_t seed() const { return seed_; }

    static constexpr result_type min() { return std::mt19937_64::min(); }
    static constexpr result_type max() { return std::mt19937_64::max(); }
    result_type operator()() { return engine_(); }

    // Uniform on the open interval (0, 1) from the top 53 bits.
    double uniform_open() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1p-53; }

    // Uniform integer in [0, bound) by rejection (no modulo bias).
    std::uint64_t below(std::uint64_t bound) {
        const std::uint64_t limit = max() - max() % bound;
        std::uint64_t r;
        do {
            r = engine_();
        } while (r >= limit);
        return r % bound;
    }

    double normal() { return normal_(engine_); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t k = v.size(); k > 1; --k) {
            std::swap(v[k - 1], v[below(k)]);
        }
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

// Well-known stream tags.
namespace streams {
inline constexpr std::uint64_t blocks = 1;
inline constexpr std::uint64_t selection = 2;
inline constexpr std::uint64_t subsample = 3;
inline constexpr std::uint64_t mixing = 4;
inline constexpr std::uint64_t sources = 5;
} // namespace streams

} // namespace mmica
