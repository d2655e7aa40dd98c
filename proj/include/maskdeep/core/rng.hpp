#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace maskdeep {

// xoshiro256++ with splitmix64 seeding. Self-contained so that every stream
// is reproducible bit-for-bit across toolchains; std:: distributions are
// implementation-defined and are not used anywhere.
class Rng {
  public:
    Rng() : Rng(0) {}

    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& w : s_) w = splitmix64(x);
    }

    // Independent substream addressed by a path of words under one seed.
    // Used as substream(seed, {kTagAugment, image_id, epoch, view}) etc.
    static Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
        std::uint64_t h = seed ^ 0x6a09e667f3bcc909ull;
        for (std::uint64_t w : path) {
            h ^= w + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
            std::uint64_t t = h;
            h = splitmix64(t);
        }
        return Rng(h);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n), n >= 1 (rejection sampling)
    std::uint64_t uniform_int(std::uint64_t n) {
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; one fresh pair per call, second value discarded to keep the
    // stream position a pure function of the call count.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    std::array<std::uint64_t, 4> state() const { return s_; }
    void set_state(const std::array<std::uint64_t, 4>& s) { s_ = s; }

  private:
    static std::uint64_t splitmix64(std::uint64_t& x) {
        std::uint64_t z = (x += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<std::uint64_t, 4> s_{};
};

// Stream purpose tags; keep stable, they define reproducibility of runs.
namespace rngtag {
constexpr std::uint64_t kInit = 1;
constexpr std::uint64_t kAugment = 2;
constexpr std::uint64_t kShuffle = 3;
constexpr std::uint64_t kGroups = 4;
constexpr std::uint64_t kProbe = 5;
constexpr std::uint64_t kSynth = 6;
constexpr std::uint64_t kViz = 7;
constexpr std::uint64_t kSubset = 8;
}  // namespace rngtag

}  // namespace maskdeep
