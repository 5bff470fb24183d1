#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpl/env.hpp"
#include "hpl/policy.hpp"

namespace hpl {

/// Trajectory-level preference pair: the demonstration against a sampled
/// rollout with a strictly lower outcome.
struct TrajPair {
    std::string task_id;
    std::string instruction;
    Trajectory winner;
    Trajectory loser;
};

/// Step-level preference pair at step t of a demonstration: the expert
/// suffix against a counterfactual that deviates at t and then follows the
/// sampling policy. Both suffixes carry their own observed states.
struct StepPair {
    std::string task_id;
    int t = 0;
    std::vector<TrajStep> prefix;
    std::vector<TrajStep> winner_suffix;
    std::vector<TrajStep> loser_suffix;
};

/// A contiguous action segment plus bookkeeping for reward estimation.
struct ActionGroup {
    std::vector<TrajStep> steps;
    std::optional<Span> span;          ///< step span in the source trajectory
    std::optional<double> r_hat;       ///< Monte-Carlo outcome estimate
    std::string origin = "expert";     ///< "expert" or "sampled"
};

/// Group-level preference pair sharing a common context prefix.
struct GroupPair {
    std::string task_id;
    std::vector<TrajStep> context;
    ActionGroup winner;
    ActionGroup loser;
    std::optional<double> delta_r;  ///< r_hat(winner) - r_hat(loser)
    int length = 0;                 ///< actions per side
};

enum class SegStrategy { fixed_n, fixed_k, uncertainty, semantic };

std::string to_string(SegStrategy s);
SegStrategy seg_strategy_from_string(const std::string& s);

struct Segmentation {
    SegStrategy strategy = SegStrategy::fixed_n;
    std::vector<Span> spans;  ///< contiguous, covering, in order
};

/// Splits a non-empty trajectory into exactly N contiguous spans of
/// near-equal size; when the length is not divisible the earlier spans take
/// the extra step. Requires 1 <= N <= length.
Segmentation segment_fixed_n(const Trajectory& traj, int n);

/// Splits into ceil(length / K) spans of K steps; the final span keeps the
/// remainder. Requires K >= 1.
Segmentation segment_fixed_k(const Trajectory& traj, int k);

/// Starts a new span before every step t >= 1 whose observed state has
/// policy entropy strictly above the threshold; the first span begins at 0.
Segmentation segment_uncertainty(const Trajectory& traj, const PolicyParams& ref,
                                 double entropy_threshold);

/// Nearest-rank percentile (value at index ceil(q*n) of the ascending
/// per-step entropies pooled over all trajectories). Requires q in (0, 1]
/// and at least one step.
double calibrate_entropy_threshold(const std::vector<Trajectory>& trajs,
                                   const PolicyParams& ref, double quantile);

/// External annotator interface. Implementations return the raw response
/// text for a trajectory's action sequence; structural validation happens
/// in segment_semantic.
class SegmenterProvider {
public:
    virtual ~SegmenterProvider() = default;
    virtual std::string segment_raw(const Trajectory& traj) = 0;
    virtual std::string name() const = 0;
};

/// Passes through the trajectory's recorded sub-task boundaries.
class OracleSegmenter : public SegmenterProvider {
public:
    std::string segment_raw(const Trajectory& traj) override;
    std::string name() const override { return "oracle"; }
};

/// POSTs {"actions": [...], "num_actions": n} to an HTTP endpoint and
/// returns the response body. Throws TransportError on network failure.
class HttpSegmenter : public SegmenterProvider {
public:
    explicit HttpSegmenter(std::string endpoint);
    std::string segment_raw(const Trajectory& traj) override;
    std::string name() const override { return "http"; }
    const std::string& endpoint() const { return endpoint_; }

private:
    std::string endpoint_;
};

/// Parses and validates a segmenter response for a trajectory of
/// `num_actions` steps. The response must be a bare JSON array of inclusive
/// [start, end] integer pairs that are contiguous, non-overlapping, start at
/// 0 and end at num_actions - 1. Throws ValidationError (carrying the raw
/// text) otherwise.
std::vector<Span> parse_segmenter_response(const std::string& raw, int num_actions);

/// Segments through an external provider, validating the response.
Segmentation segment_semantic(const Trajectory& traj, SegmenterProvider& provider);

/// Strategy selection for group generation.
struct SegmenterOptions {
    SegStrategy strategy = SegStrategy::semantic;
    int fixed_n = 3;
    int fixed_k = 3;
    /// Entropy threshold; when unset it is calibrated from the expert data
    /// at `quantile`.
    std::optional<double> entropy_threshold;
    double quantile = 0.8;
    /// Provider for the semantic strategy (defaults to the oracle).
    std::shared_ptr<SegmenterProvider> provider;
    /// Fall back to the oracle when the provider's response fails validation
    /// or transport; each event is counted in the manifest.
    bool fallback_to_oracle = true;
};

struct PrefCounters {
    int traj_filtered = 0;        ///< rollouts tied with the demonstration
    int step_skipped = 0;         ///< steps with no alternative action found
    int step_filtered = 0;        ///< counterfactuals that still succeeded
    int loser_short_skips = 0;    ///< sampled loser groups shorter than the span
    int non_positive_delta = 0;   ///< group pairs dropped by the margin filter
    int fallback_events = 0;      ///< segmenter responses replaced by oracle
};

/// One demonstration against one sampled rollout per task; kept only when
/// the rollout's outcome is strictly worse.
std::vector<TrajPair> gen_traj_pairs(const std::vector<Trajectory>& expert,
                                     const PolicyParams& ref, const EnvConfig& cfg,
                                     std::uint64_t seed, PrefCounters* counters = nullptr);

struct StepPairOptions {
    int rejection_budget = 32;  ///< draws before a step is skipped
    /// Additionally require the Monte-Carlo outcome of the winner suffix to
    /// exceed the loser's (M rollouts each) before keeping a pair.
    bool mc_filter = false;
    int mc_samples = 8;
};

std::vector<StepPair> gen_step_pairs(const std::vector<Trajectory>& expert,
                                     const PolicyParams& ref, const EnvConfig& cfg,
                                     std::uint64_t seed, const StepPairOptions& opts = {},
                                     PrefCounters* counters = nullptr);

/// Mean outcome of M policy rollouts from the state reached by replaying
/// context + group. A group that already ends the episode successfully
/// scores 1.0 exactly.
double estimate_group_reward(const EnvConfig& cfg, const PolicyParams& ref,
                             std::span<const TrajStep> context,
                             std::span<const TrajStep> group, int mc_samples,
                             std::uint64_t seed);

/// Segments each demonstration and pairs every expert group against a
/// same-length continuation sampled from ref in the environment; r_hat
/// stays unset until scoring. Ordered by (task_id, span start).
std::vector<GroupPair> gen_group_candidates(const std::vector<Trajectory>& expert,
                                            const PolicyParams& ref,
                                            const EnvConfig& cfg,
                                            const SegmenterOptions& seg,
                                            std::uint64_t seed,
                                            PrefCounters* counters = nullptr);

/// Scores both sides of each candidate with M-sample Monte-Carlo outcome
/// estimates and keeps pairs with a strictly positive margin.
std::vector<GroupPair> mc_score_groups(std::vector<GroupPair> candidates,
                                       const PolicyParams& ref, const EnvConfig& cfg,
                                       int mc_samples, std::uint64_t seed,
                                       PrefCounters* counters = nullptr,
                                       int workers = 1);

/// gen_group_candidates followed by mc_score_groups.
std::vector<GroupPair> gen_group_pairs(const std::vector<Trajectory>& expert,
                                       const PolicyParams& ref, const EnvConfig& cfg,
                                       const SegmenterOptions& seg, int mc_samples,
                                       std::uint64_t seed,
                                       PrefCounters* counters = nullptr,
                                       int workers = 1);

nlohmann::json traj_pair_to_json(const TrajPair& p);
TrajPair traj_pair_from_json(const nlohmann::json& j);
nlohmann::json step_pair_to_json(const StepPair& p);
StepPair step_pair_from_json(const nlohmann::json& j);
nlohmann::json group_pair_to_json(const GroupPair& p);
GroupPair group_pair_from_json(const nlohmann::json& j);

} // namespace hpl
