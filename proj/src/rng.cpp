#include "pinas/rng.hpp"

#include "pinas/error.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace pinas {

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view name, std::uint64_t index) {
    return splitmix64(master ^ fnv1a64(name) ^ splitmix64(index + 1));
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) throw ContractError("Rng::below requires n > 0");
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do {
        v = engine_();
    } while (v >= limit);
    return v % n;
}

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string Rng::save_state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

void Rng::load_state(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
    if (!is) throw ConfigError("corrupt RNG state");
}

}  // namespace pinas
