#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace relight {

// Single source of randomness for a run. All draws (weight init, crops, flips,
// timestep/noise sampling) go through one instance so a run is reproducible from
// its seed and the engine state can be checkpointed mid-run.
//
// normal() uses Box-Muller on two fresh uniforms per draw instead of
// std::normal_distribution, whose draw sequence is implementation-defined.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : engine_(seed) {}

    double uniform() {
        // (0,1]: never 0, so log() below is safe
        return (static_cast<double>(engine_() >> 11) + 1.0) * (1.0 / 9007199254740992.0);
    }

    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Uniform integer in [0, n)
    int64_t index(int64_t n) {
        return static_cast<int64_t>(engine_() % static_cast<uint64_t>(n));
    }

    bool coin() { return (engine_() & 1u) != 0; }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
    }

private:
    std::mt19937_64 engine_;
};

} // namespace relight
