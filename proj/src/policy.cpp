#include "hpl/policy.hpp"

#include <cmath>
#include <fstream>

#include "hpl/errors.hpp"
#include "hpl/rng.hpp"

namespace hpl {

PolicyParams make_uniform_policy(int num_states, int num_actions,
                                 const std::string& tag) {
    if (num_states < 1 || num_actions < 1)
        throw UsageError("policy needs at least one state and one action");
    PolicyParams p;
    p.logits = Eigen::MatrixXd::Zero(num_states, num_actions);
    p.tag = tag;
    return p;
}

namespace {

void check_state(const PolicyParams& p, int state) {
    if (state < 0 || state >= p.num_states())
        throw UsageError("state " + std::to_string(state) + " out of range");
}

} // namespace

Eigen::VectorXd state_log_probs(const PolicyParams& p, int state) {
    check_state(p, state);
    Eigen::VectorXd row = p.logits.row(state).transpose();
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    return row.array() - lse;
}

Eigen::VectorXd state_probs(const PolicyParams& p, int state) {
    return state_log_probs(p, state).array().exp();
}

double action_logprob(const PolicyParams& p, int state, int action) {
    check_state(p, state);
    if (action < 0 || action >= p.num_actions())
        throw UsageError("action " + std::to_string(action) + " out of range");
    return state_log_probs(p, state)(action);
}

double sequence_logprob(const PolicyParams& p, std::span<const TrajStep> steps) {
    double lp = 0.0;
    for (const auto& s : steps) lp += action_logprob(p, s.obs, s.action);
    return lp;
}

double sequence_logprob(const PolicyParams& p, const EnvConfig& cfg,
                        std::span<const TrajStep> context,
                        std::span<const int> actions) {
    EnvState state = replay_prefix(cfg, context);
    double lp = 0.0;
    for (int a : actions) {
        lp += action_logprob(p, state.state, a);
        state = env_step(cfg, state, a).state;
    }
    return lp;
}

double state_entropy(const PolicyParams& p, int state) {
    const Eigen::VectorXd logp = state_log_probs(p, state);
    double h = 0.0;
    for (int a = 0; a < logp.size(); ++a) {
        const double pa = std::exp(logp(a));
        if (pa > 0.0) h -= pa * logp(a);
    }
    const double h_max = std::log(static_cast<double>(p.num_actions()));
    return std::clamp(h, 0.0, h_max);
}

RolloutResult sample_rollout(const PolicyParams& p, const EnvConfig& cfg,
                             EnvState start, int max_len, std::uint64_t seed) {
    if (p.num_states() != cfg.num_states || p.num_actions() != cfg.num_actions)
        throw UsageError("policy shape does not match environment");
    Rng rng(seed);
    RolloutResult out;
    out.final_state = start;
    while (!out.final_state.done &&
           static_cast<int>(out.steps.size()) < max_len) {
        const int s = out.final_state.state;
        const Eigen::VectorXd probs = state_probs(p, s);
        std::vector<double> pv(probs.data(), probs.data() + probs.size());
        const int a = rng.categorical(pv);
        auto [next, reward] = env_step(cfg, out.final_state, a);
        out.steps.push_back(TrajStep{s, a, reward});
        out.final_state = next;
    }
    return out;
}

double bc_loss(const PolicyParams& p, const std::vector<Trajectory>& data) {
    if (data.empty()) throw UsageError("bc_loss: empty dataset");
    double total = 0.0;
    for (const auto& t : data)
        for (const auto& s : t.steps) total -= action_logprob(p, s.obs, s.action);
    return total / static_cast<double>(data.size());
}

Eigen::MatrixXd bc_gradient(const PolicyParams& p,
                            const std::vector<Trajectory>& data) {
    if (data.empty()) throw UsageError("bc_gradient: empty dataset");
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(p.num_states(), p.num_actions());
    for (const auto& t : data) {
        for (const auto& s : t.steps) {
            grad.row(s.obs) += state_probs(p, s.obs).transpose();
            grad(s.obs, s.action) -= 1.0;
        }
    }
    return grad / static_cast<double>(data.size());
}

PolicyParams bc_train(const std::vector<Trajectory>& data, PolicyParams init,
                      double learning_rate, int epochs, std::uint64_t /*seed*/) {
    if (data.empty()) throw UsageError("bc_train: empty dataset");
    if (learning_rate <= 0.0) throw UsageError("bc_train: learning rate must be positive");
    PolicyParams p = std::move(init);
    double loss = bc_loss(p, data);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        const Eigen::MatrixXd grad = bc_gradient(p, data);
        // Monotonicity guard: the fixed step is halved (at most 30 times) in
        // the rare regime where it would increase the full-batch loss.
        double lr = learning_rate;
        for (int tries = 0; tries < 30; ++tries) {
            PolicyParams trial = p;
            trial.logits -= lr * grad;
            const double trial_loss = bc_loss(trial, data);
            if (trial_loss <= loss) {
                p = std::move(trial);
                loss = trial_loss;
                break;
            }
            lr *= 0.5;
        }
    }
    return p;
}

PolicyParams freeze_reference(const PolicyParams& p) {
    PolicyParams ref = p;
    ref.tag = "ref";
    return ref;
}

nlohmann::json policy_to_json(const PolicyParams& p) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(p.logits.size()));
    for (int s = 0; s < p.num_states(); ++s)
        for (int a = 0; a < p.num_actions(); ++a) flat.push_back(p.logits(s, a));
    return nlohmann::json{{"num_states", p.num_states()},
                          {"num_actions", p.num_actions()},
                          {"tag", p.tag},
                          {"logits", std::move(flat)}};
}

PolicyParams policy_from_json(const nlohmann::json& j) {
    PolicyParams p;
    const int ns = j.at("num_states").get<int>();
    const int na = j.at("num_actions").get<int>();
    p.tag = j.at("tag").get<std::string>();
    const auto& flat = j.at("logits");
    if (static_cast<int>(flat.size()) != ns * na)
        throw ConfigError("policy file: logits length does not match shape");
    p.logits.resize(ns, na);
    for (int s = 0; s < ns; ++s)
        for (int a = 0; a < na; ++a) p.logits(s, a) = flat.at(s * na + a).get<double>();
    return p;
}

void save_policy(const PolicyParams& p, const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw IoError("cannot write policy: " + file.string());
    out << policy_to_json(p).dump(2) << "\n";
}

PolicyParams load_policy(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open policy: " + file.string());
    nlohmann::json j;
    in >> j;
    return policy_from_json(j);
}

} // namespace hpl
