#include "hpl/rng.hpp"

#include <cmath>
#include <numbers>

#include "hpl/errors.hpp"

namespace hpl {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace {

inline std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t fnv1a(std::uint64_t h, std::string_view s) {
    for (unsigned char c : s) {
        h ^= c;
        h *= kFnvPrime;
    }
    // Separator so {"ab","c"} and {"a","bc"} hash differently.
    h ^= 0xff;
    h *= kFnvPrime;
    return h;
}

} // namespace

Rng::Rng(std::uint64_t seed) {
    for (auto& lane : s_) lane = splitmix64(seed);
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

int Rng::uniform_int(int n) {
    if (n <= 0) throw UsageError("uniform_int: n must be positive");
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t bound = ~0ULL - ~0ULL % static_cast<std::uint64_t>(n);
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= bound);
    return static_cast<int>(x % static_cast<std::uint64_t>(n));
}

double Rng::normal() {
    if (have_cached_normal_) {
        have_cached_normal_ = false;
        return cached_normal_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    cached_normal_ = r * std::sin(a);
    have_cached_normal_ = true;
    return r * std::cos(a);
}

int Rng::categorical(const std::vector<double>& probs) {
    if (probs.empty()) throw UsageError("categorical: empty probability vector");
    const double u = uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size() - 1);
}

std::uint64_t derive_seed(std::uint64_t root,
                          std::initializer_list<std::string_view> path) {
    std::uint64_t h = kFnvOffset ^ root;
    for (auto part : path) h = fnv1a(h, part);
    std::uint64_t state = h;
    return splitmix64(state);
}

std::uint64_t derive_seed(std::uint64_t root,
                          const std::vector<std::string>& path) {
    std::uint64_t h = kFnvOffset ^ root;
    for (const auto& part : path) h = fnv1a(h, part);
    std::uint64_t state = h;
    return splitmix64(state);
}

void RunningStats::add(double x) {
    ++n_;
    const double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
}

double RunningStats::variance() const {
    if (n_ < 2) return 0.0;
    return m2_ / static_cast<double>(n_ - 1);
}

} // namespace hpl
