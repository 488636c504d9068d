#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "tickcast/common.hpp"

namespace tickcast {

// Deterministic RNG wrapper. Distribution objects are constructed per call so
// no sampling state survives between calls besides the engine itself, which
// keeps replay and checkpoint-resume exact.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    static Rng child(std::uint64_t master, std::uint64_t index) {
        return Rng(derive_seed(master, index));
    }

    std::mt19937_64& engine() { return engine_; }

    // [0, 1)
    double uniform() {
        return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
    }

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }

    // [0, n)
    std::uint64_t uniform_index(std::uint64_t n) {
        return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
    }

    double exponential(double rate) {
        return std::exponential_distribution<double>(rate)(engine_);
    }

    double normal(double mean = 0.0, double sd = 1.0) {
        return std::normal_distribution<double>(mean, sd)(engine_);
    }

    double lognormal(double log_mean, double log_sd) {
        return std::lognormal_distribution<double>(log_mean, log_sd)(engine_);
    }

    long poisson(double lambda) {
        return std::poisson_distribution<long>(lambda)(engine_);
    }

    double gamma(double shape, double scale) {
        return std::gamma_distribution<double>(shape, scale)(engine_);
    }

    std::string serialize_state() const {
        std::ostringstream out;
        out << engine_;
        return out.str();
    }

    void restore_state(const std::string& state) {
        std::istringstream in(state);
        in >> engine_;
        if (!in) throw ParseError("bad rng state string");
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace tickcast
