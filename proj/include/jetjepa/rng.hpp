// Deterministic, serializable PRNG. Every random draw in the project goes
// through Rng so that runs are reproducible bit-for-bit from (seed, purpose,
// indices) alone, independent of platform library implementations.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace jetjepa {

inline uint64_t splitmix64(uint64_t& x) {
    x += 0x9E3779B97F4A7C15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// FNV-1a over a byte string; used for config hashes and stream derivation.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xCBF29CE484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

struct RngState {
    std::array<uint64_t, 4> s{};
    // Box-Muller keeps a spare gaussian; it is part of the stream state.
    double gauss_spare = 0.0;
    bool has_spare = false;

    bool operator==(const RngState&) const = default;
};

// xoshiro256** with explicit state, 53-bit doubles and Box-Muller gaussians.
class Rng {
public:
    Rng() : Rng(0) {}

    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& w : state_.s) w = splitmix64(x);
    }

    // Derive an independent stream from (seed, tag, indices...). Stateless
    // derivation keeps training resumable without persisting generator state.
    static Rng derive(uint64_t seed, const char* tag, std::initializer_list<uint64_t> idx = {}) {
        uint64_t h = fnv1a64(&seed, sizeof(seed));
        size_t len = 0;
        while (tag[len] != '\0') ++len;
        h = fnv1a64(tag, len, h);
        for (uint64_t v : idx) h = fnv1a64(&v, sizeof(v), h);
        return Rng(h);
    }

    uint64_t next_u64() {
        auto& s = state_.s;
        const uint64_t result = rotl(s[1] * 5, 7) * 9;
        const uint64_t t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = rotl(s[3], 45);
        return result;
    }

    // Uniform double in [0, 1) with 53 bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), n >= 1. Rejection-free modulo bias is
    // negligible for the n used here but we reject anyway for exactness.
    uint64_t uniform_index(uint64_t n) {
        if (n <= 1) return 0;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    int uniform_int(int lo, int hi) { // inclusive range
        return lo + static_cast<int>(uniform_index(static_cast<uint64_t>(hi - lo + 1)));
    }

    double gaussian() {
        if (state_.has_spare) {
            state_.has_spare = false;
            return state_.gauss_spare;
        }
        const double u1 = 1.0 - uniform(); // (0, 1], keeps log finite
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        state_.gauss_spare = r * std::sin(a);
        state_.has_spare = true;
        return r * std::cos(a);
    }

    double gaussian(double mu, double sigma) { return mu + sigma * gaussian(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    const RngState& state() const { return state_; }
    void set_state(const RngState& s) { state_ = s; }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    RngState state_;
};

} // namespace jetjepa
