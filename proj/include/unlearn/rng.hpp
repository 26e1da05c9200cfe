#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace unlearn {

// Seeded random source. Every stochastic consumer draws from a named
// substream derived from the single root seed, so toggling one module does
// not shift another's stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    double normal() { return normal_(eng_); }
    double uniform() { return uniform_(eng_); }

    // Uniform integer in [0, n).
    std::uint64_t integer(std::uint64_t n) {
        return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(eng_);
    }

    bool bernoulli(double p) { return uniform() < p; }

    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

inline std::uint64_t hash_stream(std::uint64_t root, std::string_view name) {
    // FNV-1a over the name, mixed with the root seed via splitmix64.
    std::uint64_t h = 1469598103934665603ull;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    std::uint64_t z = root + 0x9e3779b97f4a7c15ull + h;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Root RNG: hands out independent, reproducible substreams by name.
class RngPool {
public:
    explicit RngPool(std::uint64_t root_seed) : root_(root_seed) {}

    Rng stream(std::string_view name) const { return Rng(hash_stream(root_, name)); }

    Rng stream(std::string_view name, std::uint64_t index) const {
        return Rng(hash_stream(hash_stream(root_, name), std::to_string(index)));
    }

    std::uint64_t root_seed() const { return root_; }

private:
    std::uint64_t root_;
};

}  // namespace unlearn
