#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

namespace hpl {

/// Deterministic, platform-independent PRNG (xoshiro256**), seeded through
/// splitmix64. Every stochastic routine in the project draws from one of
/// these, derived from a root seed and a named stream path, so that reruns
/// with the same configuration are byte-identical and work units can be
/// processed in any order.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform();

    /// Uniform integer in [0, n).
    int uniform_int(int n);

    /// Standard normal via Box-Muller (caches the second deviate).
    double normal();

    /// Index sampled from an explicit probability vector (CDF walk).
    /// The probabilities are assumed nonnegative; any rounding deficit
    /// falls to the last index.
    int categorical(const std::vector<double>& probs);

private:
    std::uint64_t s_[4];
    bool have_cached_normal_ = false;
    double cached_normal_ = 0.0;
};

/// splitmix64 step; advances `state` and returns the next output.
std::uint64_t splitmix64(std::uint64_t& state);

/// Derives a child seed from a root seed and a path of stream labels,
/// e.g. derive_seed(root, {"prefs.group", task_id, "loser"}).
/// Stable across platforms (FNV-1a over the labels, splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t root,
                          std::initializer_list<std::string_view> path);
std::uint64_t derive_seed(std::uint64_t root,
                          const std::vector<std::string>& path);

/// Streaming mean/variance accumulator (Welford).
class RunningStats {
public:
    void add(double x);
    long long count() const { return n_; }
    double mean() const { return mean_; }
    /// Unbiased sample variance; 0 for fewer than two samples.
    double variance() const;

private:
    long long n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

} // namespace hpl
