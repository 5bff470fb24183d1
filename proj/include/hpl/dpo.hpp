#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "hpl/curriculum.hpp"
#include "hpl/policy.hpp"
#include "hpl/prefgen.hpp"

namespace hpl {

/// The four sequence log-probabilities entering a preference comparison and
/// the derived score delta = (lp_theta_w - lp_ref_w) - (lp_theta_l - lp_ref_l).
struct PairLogits {
    double lp_theta_w = 0.0;
    double lp_ref_w = 0.0;
    double lp_theta_l = 0.0;
    double lp_ref_l = 0.0;

    double delta() const { return (lp_theta_w - lp_ref_w) - (lp_theta_l - lp_ref_l); }
    double margin(double beta) const { return beta * delta(); }
};

PairLogits pair_logits(const PolicyParams& theta, const PolicyParams& ref,
                       std::span<const TrajStep> winner,
                       std::span<const TrajStep> loser);

/// Loss value with its gradient in the policy's logits.
struct LossGrad {
    double loss = 0.0;
    Eigen::MatrixXd grad;
};

/// -log sigmoid(beta * delta) for one winner/loser pair, with gradient
/// -beta * sigmoid(-beta * delta) * (score(winner) - score(loser)) where
/// score is the log-likelihood gradient of the scored steps.
LossGrad dpo_pair_loss(const PolicyParams& theta, const PolicyParams& ref,
                       std::span<const TrajStep> winner,
                       std::span<const TrajStep> loser, double beta);

/// Mean pair loss over each dataset; an empty dataset contributes zero loss
/// and gradient.
LossGrad loss_traj(const PolicyParams& theta, const PolicyParams& ref,
                   const std::vector<TrajPair>& pairs, double beta);
LossGrad loss_step(const PolicyParams& theta, const PolicyParams& ref,
                   const std::vector<StepPair>& pairs, double beta);
LossGrad loss_group(const PolicyParams& theta, const PolicyParams& ref,
                    const std::vector<GroupPair>& pairs, double beta);

struct DpoConfig {
    double beta = 0.3;
    double learning_rate = 0.5;
    /// Full-batch epochs per curriculum phase.
    std::array<int, 3> phase_epochs{20, 20, 20};
    bool include_bc = true;
    bool include_traj = true;
    bool include_step = true;
    bool include_group = true;
    double weight_bc = 1.0;
    double weight_traj = 1.0;
    double weight_step = 1.0;
    double weight_group = 1.0;
    CurriculumMode curriculum = CurriculumMode::staged;
    /// Re-freeze the reference to the current policy at each phase start
    /// (default keeps the single post-cloning reference).
    bool refreeze_per_phase = false;
    /// Verify analytic gradients against central differences on a few
    /// random coordinates before training.
    bool check_gradients = false;
    std::uint64_t seed = 0;

    void validate() const;
};

struct HplDatasets {
    const std::vector<Trajectory>* expert = nullptr;
    const std::vector<TrajPair>* traj = nullptr;
    const std::vector<StepPair>* step = nullptr;
};

/// Composite objective: weighted sum of the cloning loss and the three
/// preference losses (group pairs restricted to the active phase data).
struct HplLoss {
    double total = 0.0;
    double bc = 0.0;
    double traj = 0.0;
    double step = 0.0;
    double group = 0.0;
    Eigen::MatrixXd grad;
};

HplLoss loss_hpl(const PolicyParams& theta, const PolicyParams& ref,
                 const HplDatasets& data, const std::vector<GroupPair>& group_phase,
                 const DpoConfig& cfg);

struct EpochRecord {
    int phase = 0;
    int epoch = 0;  ///< 1-based within the phase
    double loss_total = 0.0;
    double loss_bc = 0.0;
    double loss_traj = 0.0;
    double loss_step = 0.0;
    double loss_group = 0.0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    int coordinates = 0;
    bool passed = true;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::array<std::size_t, 3> phase_group_pairs{0, 0, 0};
    std::array<PolicyParams, 3> phase_snapshots;
    PolicyParams final_params;
    std::optional<GradCheckResult> grad_check;
};

/// Three-phase staged training: full-batch gradient descent on the
/// composite objective, with the group data growing per the curriculum
/// schedule. Deterministic given (inputs, config).
TrainReport train_hpl(const PolicyParams& init, const PolicyParams& ref,
                      const HplDatasets& data, const CurriculumMatrix& matrix,
                      const DpoConfig& cfg);

nlohmann::json train_report_to_json(const TrainReport& r);
/// Epoch table with columns phase,epoch,loss_total,loss_bc,loss_traj,
/// loss_step,loss_group.
std::string train_report_csv(const TrainReport& r);

} // namespace hpl
