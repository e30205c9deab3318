#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace hatemtl {

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Expands a root seed into an independent stream seed for one (purpose, run, fold).
///
/// seed = mix64(mix64(mix64(root ^ fnv1a(purpose)) ^ (run + 1) * φ) ^ (fold + 1) * φ²)
/// where φ = 0x9E3779B97F4A7C15. Purposes in use: "split", "init", "shuffle",
/// "fusion-init", "fusion-shuffle".
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose,
                          std::uint64_t run = 0, std::uint64_t fold = 0);

/// Portable random stream. The distributions are implemented here instead of
/// using <random>'s, whose outputs differ across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::size_t below(std::size_t n);

    template <typename T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            std::swap(values[i - 1], values[below(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace hatemtl
