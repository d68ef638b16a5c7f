#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "priorfill/numerics/tensor.hpp"

namespace priorfill {

/// Seeded generator with platform-independent real and integer draws.
/// The standard distributions are implementation-defined, so the
/// conversions are done here.
class Rng {
   public:
    explicit Rng(uint64_t seed = 0) : eng_(seed) {}

    uint64_t next() { return eng_(); }
    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [lo, hi] (inclusive), by rejection.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        if (hi < lo) throw ContractError("uniform_int: empty range");
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<int64_t>(eng_());
        const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t v;
        do v = eng_();
        while (v >= limit);
        return lo + static_cast<int64_t>(v % span);
    }
    bool bernoulli(double p) { return uniform() < p; }
    /// Box-Muller; one draw per call.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1))]);
    }

    std::string state() const {
        std::ostringstream os;
        os << eng_;
        return os.str();
    }
    void set_state(const std::string& s) {
        std::istringstream is(s);
        std::mt19937_64 e;
        is >> e;
        if (is.fail()) throw ConfigError("malformed RNG state");
        eng_ = e;
    }

   private:
    std::mt19937_64 eng_;
};

}  // namespace priorfill
