#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace mfsgd {

// splitmix64 finalizer; bijective on 64-bit words.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// FNV-1a, used for labeling derivation paths and for file digests.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t tag64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

// Derives an independent stream key from a master seed and a path of tag
// words. Streams are keyed by their full path, so adding replicas or new
// stream kinds never perturbs existing ones.
inline std::uint64_t derive_key(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    std::uint64_t state = master ^ 0x6a09e667f3bcc908ULL;
    std::uint64_t key = splitmix64_next(state);
    for (std::uint64_t word : path) {
        state = key ^ word;
        key = splitmix64_next(state);
    }
    return key;
}

// Seeded stream wrapper around std::mt19937_64. The variate transforms are
// spelled out here (not std::<distribution>) so draw sequences are part of
// this library's contract: identical seed => identical sequence, bitwise.
class Rng {
public:
    explicit Rng(std::uint64_t key) : engine_(key) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Marsaglia polar method; caches the spare deviate.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return u * m;
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mfsgd
