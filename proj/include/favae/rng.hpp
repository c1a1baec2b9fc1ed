#ifndef FAVAE_RNG_HPP
#define FAVAE_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace favae {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// Derive an independent stream seed from a master seed and a role name, so
// e.g. low-branch init and batch shuffling never share a stream.
inline std::uint64_t derive_seed(std::uint64_t master, const std::string& role) {
    return splitmix64(master ^ fnv1a(role));
}

// Deterministic RNG with portable distributions. std::mt19937_64 is fully
// specified by the standard; the gaussian/uniform mappings below are ours, so
// streams are reproducible regardless of the standard library version.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t bits() { return eng_(); }

    // Uniform in [0,1).
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    std::int64_t index(std::int64_t n) {
        return static_cast<std::int64_t>(uniform() * static_cast<double>(n)) % n;
    }

    // Standard normal via Box-Muller; one spare cached per pair.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    template <typename It>
    void shuffle(It first, It last) {
        auto n = last - first;
        for (auto i = n - 1; i > 0; --i) {
            auto j = index(i + 1);
            std::swap(first[i], first[j]);
        }
    }

  private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace favae

#endif
