#include "hpl/dpo.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "hpl/errors.hpp"
#include "hpl/rng.hpp"

namespace hpl {

namespace {

/// log(1 + exp(x)) without overflow.
double softplus(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

/// sigmoid(x) without overflow.
double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Adds the log-likelihood gradient of the steps, scaled by `scale`.
void add_score(const PolicyParams& theta, std::span<const TrajStep> steps,
               double scale, Eigen::MatrixXd& grad) {
    for (const auto& s : steps) {
        grad.row(s.obs) -= scale * state_probs(theta, s.obs).transpose();
        grad(s.obs, s.action) += scale;
    }
}

} // namespace

PairLogits pair_logits(const PolicyParams& theta, const PolicyParams& ref,
                       std::span<const TrajStep> winner,
                       std::span<const TrajStep> loser) {
    PairLogits p;
    p.lp_theta_w = sequence_logprob(theta, winner);
    p.lp_ref_w = sequence_logprob(ref, winner);
    p.lp_theta_l = sequence_logprob(theta, loser);
    p.lp_ref_l = sequence_logprob(ref, loser);
    return p;
}

LossGrad dpo_pair_loss(const PolicyParams& theta, const PolicyParams& ref,
                       std::span<const TrajStep> winner,
                       std::span<const TrajStep> loser, double beta) {
    if (beta < 0.0) throw UsageError("dpo_pair_loss: beta must be nonnegative");
    const PairLogits lp = pair_logits(theta, ref, winner, loser);
    const double z = lp.margin(beta);
    LossGrad out;
    out.loss = softplus(-z);
    out.grad = Eigen::MatrixXd::Zero(theta.num_states(), theta.num_actions());
    const double w = -beta * sigmoid(-z);
    add_score(theta, winner, w, out.grad);
    add_score(theta, loser, -w, out.grad);
    return out;
}

namespace {

template <typename Pairs, typename WinnerOf, typename LoserOf>
LossGrad mean_pair_loss(const PolicyParams& theta, const PolicyParams& ref,
                        const Pairs& pairs, double beta, WinnerOf winner_of,
                        LoserOf loser_of) {
    LossGrad out;
    out.grad = Eigen::MatrixXd::Zero(theta.num_states(), theta.num_actions());
    if (pairs.empty()) return out;
    for (const auto& p : pairs) {
        LossGrad one = dpo_pair_loss(theta, ref, winner_of(p), loser_of(p), beta);
        out.loss += one.loss;
        out.grad += one.grad;
    }
    const double inv = 1.0 / static_cast<double>(pairs.size());
    out.loss *= inv;
    out.grad *= inv;
    return out;
}

} // namespace

LossGrad loss_traj(const PolicyParams& theta, const PolicyParams& ref,
                   const std::vector<TrajPair>& pairs, double beta) {
    return mean_pair_loss(
        theta, ref, pairs, beta,
        [](const TrajPair& p) { return std::span<const TrajStep>(p.winner.steps); },
        [](const TrajPair& p) { return std::span<const TrajStep>(p.loser.steps); });
}

LossGrad loss_step(const PolicyParams& theta, const PolicyParams& ref,
                   const std::vector<StepPair>& pairs, double beta) {
    return mean_pair_loss(
        theta, ref, pairs, beta,
        [](const StepPair& p) { return std::span<const TrajStep>(p.winner_suffix); },
        [](const StepPair& p) { return std::span<const TrajStep>(p.loser_suffix); });
}

LossGrad loss_group(const PolicyParams& theta, const PolicyParams& ref,
                    const std::vector<GroupPair>& pairs, double beta) {
    return mean_pair_loss(
        theta, ref, pairs, beta,
        [](const GroupPair& p) { return std::span<const TrajStep>(p.winner.steps); },
        [](const GroupPair& p) { return std::span<const TrajStep>(p.loser.steps); });
}

void DpoConfig::validate() const {
    if (beta < 0.0) throw ConfigError("beta must be nonnegative");
    if (learning_rate <= 0.0) throw ConfigError("learning rate must be positive");
    for (int e : phase_epochs)
        if (e < 0) throw ConfigError("phase epochs must be nonnegative");
    if (weight_bc < 0.0 || weight_traj < 0.0 || weight_step < 0.0 || weight_group < 0.0)
        throw ConfigError("loss weights must be nonnegative");
}

HplLoss loss_hpl(const PolicyParams& theta, const PolicyParams& ref,
                 const HplDatasets& data, const std::vector<GroupPair>& group_phase,
                 const DpoConfig& cfg) {
    cfg.validate();
    HplLoss out;
    out.grad = Eigen::MatrixXd::Zero(theta.num_states(), theta.num_actions());
    if (cfg.include_bc && data.expert && !data.expert->empty()) {
        out.bc = bc_loss(theta, *data.expert);
        out.grad += cfg.weight_bc * bc_gradient(theta, *data.expert);
        out.total += cfg.weight_bc * out.bc;
    }
    if (cfg.include_traj && data.traj) {
        LossGrad lg = loss_traj(theta, ref, *data.traj, cfg.beta);
        out.traj = lg.loss;
        out.grad += cfg.weight_traj * lg.grad;
        out.total += cfg.weight_traj * lg.loss;
    }
    if (cfg.include_step && data.step) {
        LossGrad lg = loss_step(theta, ref, *data.step, cfg.beta);
        out.step = lg.loss;
        out.grad += cfg.weight_step * lg.grad;
        out.total += cfg.weight_step * lg.loss;
    }
    if (cfg.include_group) {
        LossGrad lg = loss_group(theta, ref, group_phase, cfg.beta);
        out.group = lg.loss;
        out.grad += cfg.weight_group * lg.grad;
        out.total += cfg.weight_group * lg.loss;
    }
    return out;
}

namespace {

GradCheckResult check_gradients(const PolicyParams& theta, const PolicyParams& ref,
                                const HplDatasets& data,
                                const std::vector<GroupPair>& group_phase,
                                const DpoConfig& cfg) {
    const HplLoss base = loss_hpl(theta, ref, data, group_phase, cfg);
    Rng rng(derive_seed(cfg.seed, {"gradcheck"}));
    const double h = 1e-5;
    GradCheckResult res;
    res.coordinates = 10;
    for (int i = 0; i < res.coordinates; ++i) {
        const int s = rng.uniform_int(theta.num_states());
        const int a = rng.uniform_int(theta.num_actions());
        PolicyParams plus = theta, minus = theta;
        plus.logits(s, a) += h;
        minus.logits(s, a) -= h;
        const double fd = (loss_hpl(plus, ref, data, group_phase, cfg).total -
                           loss_hpl(minus, ref, data, group_phase, cfg).total) /
                          (2.0 * h);
        const double an = base.grad(s, a);
        const double rel =
            std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
        res.max_rel_error = std::max(res.max_rel_error, rel);
    }
    res.passed = res.max_rel_error <= 1e-4;
    return res;
}

} // namespace

TrainReport train_hpl(const PolicyParams& init, const PolicyParams& ref,
                      const HplDatasets& data, const CurriculumMatrix& matrix,
                      const DpoConfig& cfg) {
    cfg.validate();
    TrainReport report;
    PolicyParams theta = init;
    PolicyParams ref_phase = ref;

    if (cfg.check_gradients)
        report.grad_check =
            check_gradients(theta, ref_phase,
                            data, phase_dataset(matrix, 3, cfg.curriculum), cfg);

    for (int phase = 1; phase <= 3; ++phase) {
        if (cfg.refreeze_per_phase && phase > 1) ref_phase = freeze_reference(theta);
        const std::vector<GroupPair> group_phase =
            phase_dataset(matrix, phase, cfg.curriculum);
        report.phase_group_pairs[static_cast<std::size_t>(phase - 1)] =
            group_phase.size();
        const int epochs = cfg.phase_epochs[static_cast<std::size_t>(phase - 1)];
        for (int epoch = 1; epoch <= epochs; ++epoch) {
            const HplLoss l = loss_hpl(theta, ref_phase, data, group_phase, cfg);
            report.epochs.push_back(EpochRecord{phase, epoch, l.total, l.bc, l.traj,
                                                l.step, l.group});
            theta.logits -= cfg.learning_rate * l.grad;
        }
        report.phase_snapshots[static_cast<std::size_t>(phase - 1)] = theta;
    }
    report.final_params = std::move(theta);
    report.final_params.tag = "hpl";
    return report;
}

nlohmann::json train_report_to_json(const TrainReport& r) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : r.epochs)
        epochs.push_back({{"phase", e.phase},
                          {"epoch", e.epoch},
                          {"loss_total", e.loss_total},
                          {"loss_bc", e.loss_bc},
                          {"loss_traj", e.loss_traj},
                          {"loss_step", e.loss_step},
                          {"loss_group", e.loss_group}});
    nlohmann::json j{{"epochs", std::move(epochs)},
                     {"phase_group_pairs", r.phase_group_pairs},
                     {"final_policy", r.final_params.tag}};
    if (r.grad_check)
        j["grad_check"] = {{"max_rel_error", r.grad_check->max_rel_error},
                           {"coordinates", r.grad_check->coordinates},
                           {"passed", r.grad_check->passed}};
    return j;
}

std::string train_report_csv(const TrainReport& r) {
    std::ostringstream out;
    out << "phase,epoch,loss_total,loss_bc,loss_traj,loss_step,loss_group\n";
    char buf[256];
    for (const auto& e : r.epochs) {
        std::snprintf(buf, sizeof buf, "%d,%d,%.12g,%.12g,%.12g,%.12g,%.12g\n", e.phase,
                      e.epoch, e.loss_total, e.loss_bc, e.loss_traj, e.loss_step,
                      e.loss_group);
        out << buf;
    }
    return out.str();
}

} // namespace hpl
