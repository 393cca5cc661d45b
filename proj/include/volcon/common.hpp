#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace volcon {

// ---------------------------------------------------------------------------
// Error types. The CLI maps these onto exit codes (2 / 3 / 4).
// ---------------------------------------------------------------------------

// Precondition or invariant violation in an API call.
struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Malformed on-disk data (bad magic, truncation, out-of-range value).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem failure.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value encountered during optimisation.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Seeding. splitmix64 is used to derive independent stream seeds from a
// single run seed, so batch composition is a pure function of (seed, step).
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                                 std::uint64_t step = 0) {
    return splitmix64(splitmix64(seed ^ (0xD1B54A32D192ED03ull * (stream + 1))) + step);
}

// ---------------------------------------------------------------------------
// Rng wraps mt19937_64 with fully specified draw procedures (the standard
// pins the engine but not the distributions), so replay is identical across
// standard libraries. Tracks raw draw count for tests that assert how many
// parameter draws an operation consumed.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t raw() {
        ++calls_;
        return engine_();
    }

    // Unbiased integer in [0, n) via rejection.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw ContractError("Rng::below: n must be positive");
        if (n == 1) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = raw();
        while (v >= limit) v = raw();
        return v % n;
    }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(raw() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller; the spare is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    std::uint64_t calls() const { return calls_; }

private:
    std::mt19937_64 engine_;
    std::uint64_t calls_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Round half away from zero; arguments here are always non-negative.
inline long long round_half_up(double x) { return std::llround(x); }

constexpr double kPi = 3.14159265358979323846;

}  // namespace volcon
