#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "hpl/env.hpp"

namespace hpl {

/// Tabular softmax policy: one row of action logits per environment state.
struct PolicyParams {
    Eigen::MatrixXd logits;  ///< num_states x num_actions
    std::string tag = "theta";

    int num_states() const { return static_cast<int>(logits.rows()); }
    int num_actions() const { return static_cast<int>(logits.cols()); }
};

PolicyParams make_uniform_policy(int num_states, int num_actions,
                                 const std::string& tag = "theta");

/// Log-softmax of one state's logit row (max-subtracted, finite for finite
/// logits).
Eigen::VectorXd state_log_probs(const PolicyParams& p, int state);
Eigen::VectorXd state_probs(const PolicyParams& p, int state);

double action_logprob(const PolicyParams& p, int state, int action);

/// Joint log-probability of recorded (state, action) steps.
double sequence_logprob(const PolicyParams& p, std::span<const TrajStep> steps);

/// Joint log-probability of a continuation: states are re-derived by
/// replaying `context` in the environment and stepping through `actions`.
/// The context itself is not scored.
double sequence_logprob(const PolicyParams& p, const EnvConfig& cfg,
                        std::span<const TrajStep> context,
                        std::span<const int> actions);

/// Shannon entropy (nats) of the action distribution at a state; clamped to
/// [0, log num_actions].
double state_entropy(const PolicyParams& p, int state);

struct RolloutResult {
    std::vector<TrajStep> steps;
    EnvState final_state;
};

/// Samples up to max_len actions from the policy starting at `start`,
/// stopping early when the episode ends. Deterministic in the seed.
RolloutResult sample_rollout(const PolicyParams& p, const EnvConfig& cfg,
                             EnvState start, int max_len, std::uint64_t seed);

/// Mean over trajectories of the summed per-step negative log-likelihood.
double bc_loss(const PolicyParams& p, const std::vector<Trajectory>& data);

/// Gradient of bc_loss with respect to the logits.
Eigen::MatrixXd bc_gradient(const PolicyParams& p,
                            const std::vector<Trajectory>& data);

/// Full-batch gradient descent on bc_loss from `init`; the returned policy
/// achieves a loss no greater than the initial one (last iterate under a
/// monotonicity guard: the step is halved, at most 30 times, whenever it
/// would increase the loss).
PolicyParams bc_train(const std::vector<Trajectory>& data, PolicyParams init,
                      double learning_rate, int epochs, std::uint64_t seed);

/// Deep copy with tag "ref"; callers treat the result as frozen.
PolicyParams freeze_reference(const PolicyParams& p);

nlohmann::json policy_to_json(const PolicyParams& p);
PolicyParams policy_from_json(const nlohmann::json& j);
void save_policy(const PolicyParams& p, const std::filesystem::path& file);
PolicyParams load_policy(const std::filesystem::path& file);

} // namespace hpl
