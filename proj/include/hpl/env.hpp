#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace hpl {

/// One sub-task of a chain task: a name and the exact action sequence that
/// completes it.
struct SubtaskSpec {
    std::string name;
    std::vector<int> actions;
};

/// A chain task instance. An episode is the sub-tasks in order; each
/// requires its action sequence verbatim. A wrong action resets progress to
/// the start of the current sub-task and still consumes a step. States are
/// progress slots (one per required action) plus a final goal state;
/// transitions are deterministic — all stochasticity lives in policies.
struct EnvConfig {
    int num_states = 0;  ///< derived: total required actions + goal state
    int num_actions = 0;
    int horizon = 0;  ///< T: maximum episode length in steps
    double gamma = 0.9;
    double r_max = 1.0;
    /// Tie-breaking policy label; the dynamics are deterministic, so this is
    /// carried through configs untouched.
    std::string tie_break = "deterministic";
    std::vector<SubtaskSpec> subtasks;
    /// Per-step rewards keyed by (state, action); missing entries are 0.
    std::map<std::pair<int, int>, double> step_rewards;

    int num_subtasks() const { return static_cast<int>(subtasks.size()); }
    /// State id of the first slot of sub-task k.
    int subtask_offset(int k) const;
    /// Index of the sub-task owning progress state s.
    int subtask_of_state(int s) const;
    int goal_state() const { return num_states - 1; }
    /// Length of the scripted demonstration (sum of sub-task lengths).
    int expert_length() const;

    /// Throws ConfigError on any inconsistency (empty sub-task, horizon
    /// shorter than the demonstration, rewards outside [0, r_max], ...).
    void validate() const;
};

/// Builds a chain config; num_states is derived and each sub-task-completing
/// transition is rewarded `completion_reward`.
EnvConfig make_chain_config(std::vector<SubtaskSpec> subtasks, int num_actions,
                            int horizon, double gamma = 0.9, double r_max = 1.0,
                            double completion_reward = 1.0);

/// Flat key-value file round-trip ("key = value" lines, '#' comments).
EnvConfig load_env_config(const std::filesystem::path& file);
void save_env_config(const EnvConfig& cfg, const std::filesystem::path& file);
EnvConfig parse_env_config(const std::string& text);
std::string format_env_config(const EnvConfig& cfg);

struct EnvState {
    int state = 0;      ///< progress/goal state id
    int completed = 0;  ///< sub-tasks finished so far
    int steps = 0;      ///< actions consumed
    bool done = false;
};

struct TrajStep {
    int obs = 0;  ///< state id observed before acting
    int action = 0;
    double reward = 0.0;
};

using Span = std::array<int, 2>;  ///< inclusive [start, end] step indices

struct Trajectory {
    std::string task_id;
    std::string instruction;
    std::vector<TrajStep> steps;
    double outcome_reward = 0.0;  ///< completed sub-tasks / K at episode end
    /// Ground-truth sub-task spans over step indices; absent for sampled
    /// rollouts that never completed cleanly segmented work.
    std::optional<std::vector<Span>> subtask_boundaries;
};

/// Initial state. The seed is part of the contract (identical seeds give
/// identical episodes) but the chain dynamics ignore it.
EnvState env_reset(const EnvConfig& cfg, std::uint64_t seed);

struct StepResult {
    EnvState state;
    double reward = 0.0;
};

/// Applies one action. Throws UsageError if the episode is done or the
/// action is out of range.
StepResult env_step(const EnvConfig& cfg, const EnvState& state, int action);

/// Fraction of sub-tasks completed, in [0, 1].
double outcome_of(const EnvConfig& cfg, const EnvState& state);

/// The demonstration: every required action in order. Outcome is 1.0 and
/// subtask_boundaries are the per-sub-task spans.
Trajectory scripted_expert(const EnvConfig& cfg, std::uint64_t seed,
                           const std::string& task_id = "expert");

/// Replays recorded actions from the initial state and returns the resulting
/// state. Throws UsageError if the prefix acts past episode end.
EnvState replay_prefix(const EnvConfig& cfg, std::span<const TrajStep> prefix);
EnvState replay_from(const EnvConfig& cfg, EnvState state,
                     std::span<const TrajStep> steps);

/// Optimal state values of the stationary dynamics (value iteration to a
/// Bellman residual below 1e-12; the goal state is absorbing with value 0).
/// Throws CapabilityError beyond 1e5 states.
std::vector<double> optimal_values(const EnvConfig& cfg);

/// JSON round-trip for trajectories (one object per JSONL line).
nlohmann::json trajectory_to_json(const Trajectory& t);
Trajectory trajectory_from_json(const nlohmann::json& j);

} // namespace hpl
