#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace pinas {

// Stream derivation: derive_seed(master, name, index) =
//   splitmix64(master ^ fnv1a64(name) ^ splitmix64(index + 1)).
// Each pipeline component draws from its own named stream so stages stay
// reproducible independently of one another.
std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, std::string_view name, std::uint64_t index = 0);

// Deterministic generator. Distributions are implemented here rather than via
// <random> distributions so sequences do not depend on the standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n);
    double normal();
    bool bernoulli(double p) { return uniform() < p; }

    std::string save_state() const;
    void load_state(const std::string& state);

    bool operator==(const Rng& other) const { return engine_ == other.engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace pinas
