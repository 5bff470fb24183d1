#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpl/env.hpp"
#include "hpl/policy.hpp"

namespace hpl {

/// Discount/return context for scoring segments: the discount factor, the
/// per-step reward cap, and an optimal-value table used to bootstrap the
/// score at a segment's end state.
struct ReturnSpec {
    double gamma = 0.9;
    double r_max = 1.0;
    std::vector<double> values;  ///< V* per state id
};

/// One step of the continuing chain dynamics used by the estimator study:
/// identical to the episodic chain except that completing the final
/// sub-task restarts the chain at state 0 instead of terminating, so
/// episodes always run for a fixed number of steps.
std::pair<int, double> continuing_step(const EnvConfig& cfg, int state,
                                       int action);

/// Optimal state values of the continuing dynamics (value iteration to a
/// Bellman residual below 1e-13). The goal row is unreachable and stays 0.
std::vector<double> continuing_values(const EnvConfig& cfg);

/// ReturnSpec whose value table is the continuing-dynamics optimum.
ReturnSpec continuing_return_spec(const EnvConfig& cfg);

/// The default enumerable study MDP: a 4-state, 2-action chain (sub-tasks of
/// length 2 and 1) with shaped completion rewards 0.3 and 1.0.
EnvConfig make_analysis_config(int horizon, double gamma);

/// A fixed-length roll of the continuing dynamics. states has one more
/// entry than steps; states[t] == steps[t].obs.
struct Episode {
    std::vector<int> states;
    std::vector<TrajStep> steps;
};

Episode sample_continuing_episode(const EnvConfig& cfg, const PolicyParams& p,
                                  int horizon, std::uint64_t seed);

/// Discounted return of a segment, bootstrapped with V* at the segment's
/// end state: sum_i gamma^i r_i + gamma^len V*(end).
double discounted_return(std::span<const TrajStep> segment, int end_state,
                         const ReturnSpec& spec);

/// Preference probability sigma(beta * delta) of the winner under the
/// Bradley-Terry law.
double bradley_terry_prob(double delta_star, double beta);

/// Per-pair logistic loss -log sigma(beta * delta), evaluated stably.
double pair_loss_value(double delta, double beta);

enum class Granularity { traj, step, group };
std::string to_string(Granularity g);
Granularity granularity_from_string(const std::string& s);

/// The two policies of the estimator study: winner-side episodes are drawn
/// from theta, loser-side episodes from ref.
struct PolicyPair {
    PolicyParams theta;
    PolicyParams ref;
};

/// ref = uniform policy; theta = ref plus Gaussian logit noise of the given
/// scale (deterministic in the seed).
PolicyPair make_study_policies(const EnvConfig& cfg, double noise_scale,
                               std::uint64_t seed);

/// Exact expected per-unit loss under the pair-sampling distribution of the
/// given granularity, scored with full-information returns (realized rewards
/// to the horizon plus the V* bootstrap at the final state). Computed by
/// weighted enumeration of all fixed-length action paths of both policies.
/// For group granularity, k selects the block positions (0, k, 2k, ...).
/// Throws CapabilityError when the path space exceeds 1e6 per side.
double population_loss(Granularity g, std::optional<int> k,
                       const EnvConfig& mdp, const PolicyPair& policies,
                       const ReturnSpec& spec, double beta);

/// Exact expected per-unit loss of the k-truncated block estimator (blocks
/// scored only over their own k steps plus the V* bootstrap at the block
/// end). The difference to population_loss(group, k, ...) is the exact bias
/// of the group estimator.
double population_trunc_loss(int k, const EnvConfig& mdp,
                             const PolicyPair& policies,
                             const ReturnSpec& spec, double beta);

/// Estimator statistics over repeated datasets.
struct BiasVarResult {
    Granularity granularity = Granularity::traj;
    std::optional<int> k;          ///< group block length; empty otherwise
    double bias_hat = 0.0;         ///< mean empirical loss - population loss
    double var_hat = 0.0;          ///< sample variance across replications
    double population = 0.0;
    int replications = 0;
    int dataset_size = 0;          ///< pairs per replication (N)
    double sigma_hat = 0.0;        ///< pooled per-unit loss variance
    double max_sample_loss = 0.0;  ///< largest single per-unit loss observed

    double stderr_bias() const;
};

/// Draws R datasets of N episode pairs (winner from theta, loser from ref),
/// forms the granularity's empirical loss per dataset, and compares with the
/// exact population loss. traj scores whole episodes; step averages all T
/// suffix pairs; group averages the floor(T/k) non-overlapping k-blocks with
/// truncated scores. The sampled episodes depend only on (seed, replication,
/// pair index), so results for different granularities at the same seed are
/// measured on identical data.
BiasVarResult estimate_bias_variance(Granularity g, std::optional<int> k,
                                     const EnvConfig& mdp,
                                     const PolicyPair& policies,
                                     const ReturnSpec& spec, double beta,
                                     int dataset_size, int replications,
                                     std::uint64_t seed, int workers = 1);

/// Smallest block length whose theoretical bias bound is at most eps:
/// ceil(log_gamma((1-gamma) eps / (2 beta R_max))), clamped to >= 1.
int k_of_epsilon(double eps, double gamma, double beta, double r_max);

struct BoundTriple {
    double bias_bound = 0.0;      ///< (2 beta R_max / (1-gamma)) gamma^k
    double var_ratio_bound = 0.0; ///< k / T
    double l_max = 0.0;           ///< log(1 + exp(2 beta R_max / (1-gamma)))
};

/// Closed-form bound constants; throws UsageError when k > T.
BoundTriple theoretical_bounds(int k, int horizon, double gamma, double beta,
                               double r_max);

/// Grid driver for the estimator study.
struct BiasVarGridConfig {
    std::vector<double> gammas{0.9};
    std::vector<int> horizons{8};
    std::vector<int> ks{1, 2, 4, 8};
    int dataset_size = 64;
    int replications = 400;
    double beta = 0.3;
    double noise_scale = 0.1;
    double var_slack = 0.25;  ///< allowed excess over the k/T variance ratio
    std::uint64_t seed = 0;
    int workers = 1;
};

struct BiasVarRow {
    double gamma = 0.9;
    int horizon = 8;
    double beta = 0.3;
    BiasVarResult result;
    double exact_bias = 0.0;  ///< enumeration; 0 for traj/step by construction
    std::optional<double> bias_bound;      ///< group rows only
    std::optional<double> var_ratio;       ///< var / ((k/T) var_traj)
    std::optional<double> var_ratio_bound; ///< k / T
    bool bias_ok = true;
    bool var_ok = true;
};

struct BiasVarReport {
    BiasVarGridConfig config;
    std::vector<BiasVarRow> rows;
    bool all_ok = true;
};

BiasVarReport run_biasvar_grid(const BiasVarGridConfig& cfg);

/// CSV: granularity,k,N,T,gamma,beta,bias_hat,stderr_bias,var_hat,
/// bound_bias,bound_var_ratio (k and group-only bounds are "na" where not
/// applicable).
std::string biasvar_csv(const BiasVarReport& report);

/// Pass/fail summary of every asserted bound.
nlohmann::json biasvar_verdicts(const BiasVarReport& report);

} // namespace hpl
