#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace odpg {

// Deterministic random stream. Uses the standard-specified mt19937_64
// engine but hand-rolls the real-valued draws, so sequences are identical
// across compilers and platforms. Box-Muller is evaluated without caching
// the spare variate: every normal() consumes exactly two engine steps.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive integer range.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo + 1);
        // Modulo bias is negligible for span << 2^64 and keeps the draw
        // to a single engine step.
        return lo + static_cast<std::int64_t>(engine_() % span);
    }

    double normal() {
        // u1 in (0,1] so the log is finite.
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    // Independent child stream; distinct ids give decorrelated streams.
    Rng fork(std::uint64_t id) const {
        return Rng(mix(mix(state_hash(), 0x9e3779b97f4a7c15ull) ^ mix(id, 0xbf58476d1ce4e5b9ull)));
    }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
    }

    // Stable per-sample seed derivation (splitmix64 finalizer).
    static std::uint64_t mix(std::uint64_t x, std::uint64_t salt = 0) {
        x += 0x9e3779b97f4a7c15ull + salt;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

  private:
    std::uint64_t state_hash() const {
        // Cheap digest of the serialized state; only used for fork().
        std::uint64_t h = 1469598103934665603ull;
        for (char c : serialize()) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ull;
        }
        return h;
    }

    std::mt19937_64 engine_;
};

}  // namespace odpg
