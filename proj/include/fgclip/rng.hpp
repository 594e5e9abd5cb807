#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace fgclip {

// Deterministic RNG helpers. std::mt19937_64 output is pinned by the
// standard; std::uniform_*_distribution is not, so sampling is done by hand
// here to keep runs byte-identical across toolchains.
class Rng {
  public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform integer in [0, n).
    uint64_t next_below(uint64_t n) { return n == 0 ? 0 : engine_() % n; }

    // Uniform double in [0, 1).
    double next_real() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform double in [lo, hi).
    double next_real(double lo, double hi) { return lo + (hi - lo) * next_real(); }

    // Standard normal via Box-Muller.
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_real();
        double u2 = next_real();
        if (u1 < 1e-300) u1 = 1e-300;
        const double mag = std::sqrt(-2.0 * std::log(u1));
        spare_ = mag * std::sin(2.0 * M_PI * u2);
        have_spare_ = true;
        return mag * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a, used both for content checksums and for deriving per-record seeds
// from (global seed, image_id) so parallel curation stays deterministic.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t state = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        state ^= p[i];
        state *= 1099511628211ull;
    }
    return state;
}

inline uint64_t derive_seed(uint64_t global_seed, const std::string& key) {
    uint64_t h = fnv1a64(&global_seed, sizeof(global_seed));
    return fnv1a64(key.data(), key.size(), h);
}

}  // namespace fgclip
