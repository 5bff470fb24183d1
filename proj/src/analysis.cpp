#include "hpl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "hpl/errors.hpp"
#include "hpl/parallel.hpp"
#include "hpl/rng.hpp"

namespace hpl {

namespace {

int correct_action(const EnvConfig& cfg, int state) {
    const int k = cfg.subtask_of_state(state);
    const int offset = cfg.subtask_offset(k);
    return cfg.subtasks[static_cast<std::size_t>(k)]
        .actions[static_cast<std::size_t>(state - offset)];
}

double reward_of(const EnvConfig& cfg, int state, int action) {
    const auto it = cfg.step_rewards.find({state, action});
    return it == cfg.step_rewards.end() ? 0.0 : it->second;
}

} // namespace

std::pair<int, double> continuing_step(const EnvConfig& cfg, int state,
                                       int action) {
    if (state < 0 || state >= cfg.goal_state())
        throw UsageError("continuing_step: state out of range");
    if (action < 0 || action >= cfg.num_actions)
        throw UsageError("continuing_step: action out of range");
    int next;
    if (action == correct_action(cfg, state)) {
        next = state + 1;
        if (next == cfg.goal_state()) next = 0;
    } else {
        next = cfg.subtask_offset(cfg.subtask_of_state(state));
    }
    return {next, reward_of(cfg, state, action)};
}

std::vector<double> continuing_values(const EnvConfig& cfg) {
    cfg.validate();
    if (cfg.num_states > 100000)
        throw CapabilityError("continuing_values: too many states");
    const int progress = cfg.goal_state();
    std::vector<double> v(static_cast<std::size_t>(cfg.num_states), 0.0);
    std::vector<double> next(v);
    for (long iter = 0; iter < 100000; ++iter) {
        double residual = 0.0;
        for (int s = 0; s < progress; ++s) {
            double best = -std::numeric_limits<double>::infinity();
            for (int a = 0; a < cfg.num_actions; ++a) {
                const auto [ns, r] = continuing_step(cfg, s, a);
                best = std::max(best,
                                r + cfg.gamma * v[static_cast<std::size_t>(ns)]);
            }
            next[static_cast<std::size_t>(s)] = best;
            residual = std::max(residual,
                                std::abs(best - v[static_cast<std::size_t>(s)]));
        }
        v = next;
        if (residual < 1e-13) return v;
    }
    return v;
}

ReturnSpec continuing_return_spec(const EnvConfig& cfg) {
    return ReturnSpec{cfg.gamma, cfg.r_max, continuing_values(cfg)};
}

EnvConfig make_analysis_config(int horizon, double gamma) {
    EnvConfig cfg = make_chain_config({{"alpha", {0, 1}}, {"beta", {0}}},
                                      /*num_actions=*/2, horizon, gamma,
                                      /*r_max=*/1.0, /*completion_reward=*/0.0);
    cfg.step_rewards[{1, 1}] = 0.3;  // completes the first sub-task
    cfg.step_rewards[{2, 0}] = 1.0;  // completes the second sub-task
    cfg.validate();
    return cfg;
}

Episode sample_continuing_episode(const EnvConfig& cfg, const PolicyParams& p,
                                  int horizon, std::uint64_t seed) {
    if (p.num_states() != cfg.num_states || p.num_actions() != cfg.num_actions)
        throw UsageError("sample_continuing_episode: policy/config shape mismatch");
    if (horizon < 1) throw UsageError("sample_continuing_episode: horizon < 1");
    Rng rng(seed);
    std::vector<std::vector<double>> probs(
        static_cast<std::size_t>(cfg.num_states));
    Episode ep;
    ep.states.reserve(static_cast<std::size_t>(horizon) + 1);
    ep.steps.reserve(static_cast<std::size_t>(horizon));
    int state = 0;
    for (int t = 0; t < horizon; ++t) {
        auto& row = probs[static_cast<std::size_t>(state)];
        if (row.empty()) {
            const Eigen::VectorXd pr = state_probs(p, state);
            row.assign(pr.data(), pr.data() + pr.size());
        }
        const int a = rng.categorical(row);
        const auto [next, r] = continuing_step(cfg, state, a);
        ep.states.push_back(state);
        ep.steps.push_back(TrajStep{state, a, r});
        state = next;
    }
    ep.states.push_back(state);
    return ep;
}

double discounted_return(std::span<const TrajStep> segment, int end_state,
                         const ReturnSpec& spec) {
    if (end_state < 0 || end_state >= static_cast<int>(spec.values.size()))
        throw UsageError("discounted_return: end state outside value table");
    double total = 0.0;
    double disc = 1.0;
    for (const auto& s : segment) {
        total += disc * s.reward;
        disc *= spec.gamma;
    }
    return total + disc * spec.values[static_cast<std::size_t>(end_state)];
}

double bradley_terry_prob(double delta_star, double beta) {
    const double x = beta * delta_star;
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double pair_loss_value(double delta, double beta) {
    const double x = beta * delta;
    // -log sigma(x) = softplus(-x)
    if (x > 0.0) return std::log1p(std::exp(-x));
    return -x + std::log1p(std::exp(x));
}

std::string to_string(Granularity g) {
    switch (g) {
        case Granularity::traj: return "traj";
        case Granularity::step: return "step";
        case Granularity::group: return "group";
    }
    throw UsageError("unknown granularity");
}

Granularity granularity_from_string(const std::string& s) {
    if (s == "traj") return Granularity::traj;
    if (s == "step") return Granularity::step;
    if (s == "group") return Granularity::group;
    throw UsageError("unknown granularity: " + s);
}

PolicyPair make_study_policies(const EnvConfig& cfg, double noise_scale,
                               std::uint64_t seed) {
    PolicyPair pair;
    pair.ref = make_uniform_policy(cfg.num_states, cfg.num_actions, "ref");
    pair.theta = pair.ref;
    pair.theta.tag = "theta";
    Rng rng(derive_seed(seed, {"theta"}));
    for (int s = 0; s < pair.theta.num_states(); ++s)
        for (int a = 0; a < pair.theta.num_actions(); ++a)
            pair.theta.logits(s, a) = noise_scale * rng.normal();
    return pair;
}

namespace {

struct PathSet {
    std::vector<Episode> paths;
    std::vector<double> probs;
};

PathSet enumerate_paths(const EnvConfig& cfg, const PolicyParams& p) {
    const int horizon = cfg.horizon;
    if (std::pow(static_cast<double>(cfg.num_actions), horizon) > 1e6)
        throw CapabilityError(
            "population_loss: path space exceeds 1e6 trajectories");
    PathSet out;
    std::vector<Eigen::VectorXd> prob_rows(
        static_cast<std::size_t>(cfg.num_states));
    for (int s = 0; s < cfg.goal_state(); ++s)
        prob_rows[static_cast<std::size_t>(s)] = state_probs(p, s);

    Episode ep;
    ep.states.assign(static_cast<std::size_t>(horizon) + 1, 0);
    ep.steps.assign(static_cast<std::size_t>(horizon), TrajStep{});
    auto rec = [&](auto&& self, int state, int t, double prob) -> void {
        if (t == horizon) {
            ep.states[static_cast<std::size_t>(horizon)] = state;
            out.paths.push_back(ep);
            out.probs.push_back(prob);
            return;
        }
        for (int a = 0; a < cfg.num_actions; ++a) {
            const auto [next, r] = continuing_step(cfg, state, a);
            ep.states[static_cast<std::size_t>(t)] = state;
            ep.steps[static_cast<std::size_t>(t)] = TrajStep{state, a, r};
            self(self, next, t + 1,
                 prob * prob_rows[static_cast<std::size_t>(state)](a));
        }
    };
    rec(rec, 0, 0, 1.0);
    return out;
}

double full_suffix_score(const Episode& ep, int t, const ReturnSpec& spec) {
    const int horizon = static_cast<int>(ep.steps.size());
    return discounted_return(
        std::span<const TrajStep>(ep.steps).subspan(static_cast<std::size_t>(t)),
        ep.states[static_cast<std::size_t>(horizon)], spec);
}

double block_score(const Episode& ep, int t, int k, const ReturnSpec& spec) {
    return discounted_return(
        std::span<const TrajStep>(ep.steps)
            .subspan(static_cast<std::size_t>(t), static_cast<std::size_t>(k)),
        ep.states[static_cast<std::size_t>(t + k)], spec);
}

std::vector<int> unit_positions(Granularity g, std::optional<int> k,
                                int horizon) {
    std::vector<int> positions;
    switch (g) {
        case Granularity::traj:
            positions = {0};
            break;
        case Granularity::step:
            for (int t = 0; t < horizon; ++t) positions.push_back(t);
            break;
        case Granularity::group: {
            if (!k) throw UsageError("group granularity requires k");
            if (*k < 1 || *k > horizon)
                throw UsageError("k must lie in [1, horizon]");
            for (int b = 0; b * *k + *k <= horizon; ++b)
                positions.push_back(b * *k);
            break;
        }
    }
    return positions;
}

/// Mean over positions of the exact expected pair loss, with a caller-chosen
/// per-position score function.
template <typename ScoreFn>
double exact_expected_loss(const PathSet& winners, const PathSet& losers,
                           const std::vector<int>& positions, double beta,
                           ScoreFn score) {
    double total = 0.0;
    std::vector<double> w_scores(winners.paths.size());
    std::vector<double> l_scores(losers.paths.size());
    for (const int t : positions) {
        for (std::size_t i = 0; i < winners.paths.size(); ++i)
            w_scores[i] = score(winners.paths[i], t);
        for (std::size_t j = 0; j < losers.paths.size(); ++j)
            l_scores[j] = score(losers.paths[j], t);
        double pos_total = 0.0;
        for (std::size_t i = 0; i < winners.paths.size(); ++i) {
            const double pw = winners.probs[i];
            for (std::size_t j = 0; j < losers.paths.size(); ++j)
                pos_total += pw * losers.probs[j] *
                             pair_loss_value(w_scores[i] - l_scores[j], beta);
        }
        total += pos_total;
    }
    return total / static_cast<double>(positions.size());
}

} // namespace

double population_loss(Granularity g, std::optional<int> k,
                       const EnvConfig& mdp, const PolicyPair& policies,
                       const ReturnSpec& spec, double beta) {
    const std::vector<int> positions = unit_positions(g, k, mdp.horizon);
    const PathSet winners = enumerate_paths(mdp, policies.theta);
    const PathSet losers = enumerate_paths(mdp, policies.ref);
    return exact_expected_loss(
        winners, losers, positions, beta,
        [&](const Episode& ep, int t) { return full_suffix_score(ep, t, spec); });
}

double population_trunc_loss(int k, const EnvConfig& mdp,
                             const PolicyPair& policies, const ReturnSpec& spec,
                             double beta) {
    const std::vector<int> positions =
        unit_positions(Granularity::group, k, mdp.horizon);
    const PathSet winners = enumerate_paths(mdp, policies.theta);
    const PathSet losers = enumerate_paths(mdp, policies.ref);
    return exact_expected_loss(
        winners, losers, positions, beta,
        [&](const Episode& ep, int t) { return block_score(ep, t, k, spec); });
}

double BiasVarResult::stderr_bias() const {
    if (replications < 1) return 0.0;
    return std::sqrt(var_hat / static_cast<double>(replications));
}

BiasVarResult estimate_bias_variance(Granularity g, std::optional<int> k,
                                     const EnvConfig& mdp,
                                     const PolicyPair& policies,
                                     const ReturnSpec& spec, double beta,
                                     int dataset_size, int replications,
                                     std::uint64_t seed, int workers) {
    if (dataset_size < 1)
        throw UsageError("estimate_bias_variance: dataset size must be >= 1");
    if (replications < 2)
        throw UsageError("estimate_bias_variance: need at least 2 replications");
    const int horizon = mdp.horizon;
    const std::vector<int> positions = unit_positions(g, k, horizon);
    const double population = population_loss(g, k, mdp, policies, spec, beta);

    const std::size_t reps = static_cast<std::size_t>(replications);
    std::vector<double> rep_mean(reps), rep_sum(reps), rep_sumsq(reps),
        rep_max(reps);
    std::vector<long long> rep_count(reps);

    parallel_for(replications, workers, [&](int r) {
        const std::string rs = std::to_string(r);
        double mean_acc = 0.0, sum = 0.0, sumsq = 0.0, max_loss = 0.0;
        long long count = 0;
        for (int i = 0; i < dataset_size; ++i) {
            const std::string is = std::to_string(i);
            const Episode w = sample_continuing_episode(
                mdp, policies.theta, horizon,
                derive_seed(seed, {"rep", rs, "pair", is, "w"}));
            const Episode l = sample_continuing_episode(
                mdp, policies.ref, horizon,
                derive_seed(seed, {"rep", rs, "pair", is, "l"}));
            double pair_acc = 0.0;
            for (const int t : positions) {
                double loss;
                if (g == Granularity::group)
                    loss = pair_loss_value(
                        block_score(w, t, *k, spec) - block_score(l, t, *k, spec),
                        beta);
                else
                    loss = pair_loss_value(
                        full_suffix_score(w, t, spec) -
                            full_suffix_score(l, t, spec),
                        beta);
                pair_acc += loss;
                sum += loss;
                sumsq += loss * loss;
                max_loss = std::max(max_loss, loss);
                ++count;
            }
            mean_acc += pair_acc / static_cast<double>(positions.size());
        }
        const auto idx = static_cast<std::size_t>(r);
        rep_mean[idx] = mean_acc / static_cast<double>(dataset_size);
        rep_sum[idx] = sum;
        rep_sumsq[idx] = sumsq;
        rep_max[idx] = max_loss;
        rep_count[idx] = count;
    });

    RunningStats stats;
    double sum = 0.0, sumsq = 0.0, max_loss = 0.0;
    long long count = 0;
    for (std::size_t r = 0; r < reps; ++r) {
        stats.add(rep_mean[r]);
        sum += rep_sum[r];
        sumsq += rep_sumsq[r];
        max_loss = std::max(max_loss, rep_max[r]);
        count += rep_count[r];
    }

    BiasVarResult out;
    out.granularity = g;
    if (g == Granularity::group) out.k = k;
    out.population = population;
    out.replications = replications;
    out.dataset_size = dataset_size;
    out.bias_hat = stats.mean() - population;
    out.var_hat = stats.variance();
    out.sigma_hat =
        count > 1 ? (sumsq - sum * sum / static_cast<double>(count)) /
                        static_cast<double>(count - 1)
                  : 0.0;
    out.max_sample_loss = max_loss;
    return out;
}

int k_of_epsilon(double eps, double gamma, double beta, double r_max) {
    if (!(eps > 0.0 && eps < 1.0))
        throw UsageError("k_of_epsilon: eps must lie in (0, 1)");
    if (!(gamma > 0.0 && gamma < 1.0))
        throw UsageError("k_of_epsilon: gamma must lie in (0, 1)");
    if (beta <= 0.0 || r_max <= 0.0)
        throw UsageError("k_of_epsilon: beta and R_max must be positive");
    const double arg = (1.0 - gamma) * eps / (2.0 * beta * r_max);
    if (arg >= 1.0) return 1;
    const double k = std::ceil(std::log(arg) / std::log(gamma));
    return std::max(1, static_cast<int>(k));
}

BoundTriple theoretical_bounds(int k, int horizon, double gamma, double beta,
                               double r_max) {
    if (k < 1) throw UsageError("theoretical_bounds: k must be >= 1");
    if (k > horizon) throw UsageError("theoretical_bounds: k exceeds horizon");
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw UsageError("theoretical_bounds: gamma must lie in [0, 1)");
    BoundTriple b;
    const double scale = 2.0 * beta * r_max / (1.0 - gamma);
    b.bias_bound = scale * std::pow(gamma, k);
    b.var_ratio_bound = static_cast<double>(k) / static_cast<double>(horizon);
    b.l_max = scale > 0.0 ? scale + std::log1p(std::exp(-scale))
                          : std::log1p(std::exp(scale));
    return b;
}

BiasVarReport run_biasvar_grid(const BiasVarGridConfig& cfg) {
    if (cfg.ks.empty()) throw UsageError("biasvar grid: no k values");
    BiasVarReport report;
    report.config = cfg;
    for (const double gamma : cfg.gammas) {
        for (const int horizon : cfg.horizons) {
            const EnvConfig env = make_analysis_config(horizon, gamma);
            const ReturnSpec spec = continuing_return_spec(env);
            const PolicyPair policies =
                make_study_policies(env, cfg.noise_scale, cfg.seed);

            auto estimate = [&](Granularity g, std::optional<int> k) {
                return estimate_bias_variance(g, k, env, policies, spec,
                                              cfg.beta, cfg.dataset_size,
                                              cfg.replications, cfg.seed,
                                              cfg.workers);
            };

            BiasVarRow traj_row;
            traj_row.gamma = gamma;
            traj_row.horizon = horizon;
            traj_row.beta = cfg.beta;
            traj_row.result = estimate(Granularity::traj, std::nullopt);
            traj_row.bias_ok = std::abs(traj_row.result.bias_hat) <=
                               3.0 * traj_row.result.stderr_bias();
            const double var_traj = traj_row.result.var_hat;
            report.rows.push_back(traj_row);

            BiasVarRow step_row = traj_row;
            step_row.result = estimate(Granularity::step, std::nullopt);
            step_row.bias_ok = std::abs(step_row.result.bias_hat) <=
                               3.0 * step_row.result.stderr_bias();
            report.rows.push_back(step_row);

            for (const int k : cfg.ks) {
                if (k > horizon) continue;
                BiasVarRow row;
                row.gamma = gamma;
                row.horizon = horizon;
                row.beta = cfg.beta;
                row.result = estimate(Granularity::group, k);
                const BoundTriple bounds =
                    theoretical_bounds(k, horizon, gamma, cfg.beta, env.r_max);
                row.bias_bound = bounds.bias_bound;
                row.var_ratio_bound = bounds.var_ratio_bound;
                row.exact_bias =
                    population_trunc_loss(k, env, policies, spec, cfg.beta) -
                    row.result.population;
                row.bias_ok = std::abs(row.result.bias_hat) <=
                              bounds.bias_bound + 3.0 * row.result.stderr_bias();
                if (var_traj > 0.0) {
                    row.var_ratio =
                        row.result.var_hat / (bounds.var_ratio_bound * var_traj);
                    row.var_ok = *row.var_ratio <= 1.0 + cfg.var_slack;
                } else {
                    row.var_ok = row.result.var_hat == 0.0;
                }
                report.rows.push_back(row);
            }
        }
    }
    for (const auto& row : report.rows)
        report.all_ok = report.all_ok && row.bias_ok && row.var_ok;
    return report;
}

std::string biasvar_csv(const BiasVarReport& report) {
    std::ostringstream out;
    out << "granularity,k,N,T,gamma,beta,bias_hat,stderr_bias,var_hat,"
           "bound_bias,bound_var_ratio\n";
    char buf[512];
    for (const auto& row : report.rows) {
        const BiasVarResult& r = row.result;
        const std::string k_str = r.k ? std::to_string(*r.k) : "na";
        std::string bound_bias = "na", bound_ratio = "na";
        if (row.bias_bound) {
            std::snprintf(buf, sizeof buf, "%.12g", *row.bias_bound);
            bound_bias = buf;
        }
        if (row.var_ratio_bound) {
            std::snprintf(buf, sizeof buf, "%.12g", *row.var_ratio_bound);
            bound_ratio = buf;
        }
        std::snprintf(buf, sizeof buf, "%s,%s,%d,%d,%.12g,%.12g,%.12g,%.12g,%.12g,",
                      to_string(r.granularity).c_str(), k_str.c_str(),
                      r.dataset_size, row.horizon, row.gamma, row.beta,
                      r.bias_hat, r.stderr_bias(), r.var_hat);
        out << buf << bound_bias << ',' << bound_ratio << '\n';
    }
    return out.str();
}

nlohmann::json biasvar_verdicts(const BiasVarReport& report) {
    nlohmann::json checks = nlohmann::json::array();
    for (const auto& row : report.rows) {
        const BiasVarResult& r = row.result;
        nlohmann::json base{{"granularity", to_string(r.granularity)},
                            {"gamma", row.gamma},
                            {"T", row.horizon}};
        if (r.k) base["k"] = *r.k;
        if (r.granularity == Granularity::group) {
            nlohmann::json bias = base;
            bias["check"] = "bias_envelope";
            bias["value"] = std::abs(r.bias_hat);
            bias["bound"] = *row.bias_bound + 3.0 * r.stderr_bias();
            bias["exact_bias"] = row.exact_bias;
            bias["pass"] = row.bias_ok;
            checks.push_back(std::move(bias));
            nlohmann::json var = base;
            var["check"] = "var_ratio";
            var["value"] = row.var_ratio ? nlohmann::json(*row.var_ratio)
                                         : nlohmann::json();
            var["bound"] = 1.0 + report.config.var_slack;
            var["pass"] = row.var_ok;
            checks.push_back(std::move(var));
        } else {
            nlohmann::json bias = base;
            bias["check"] = "bias_within_3se";
            bias["value"] = r.bias_hat;
            bias["bound"] = 3.0 * r.stderr_bias();
            bias["pass"] = row.bias_ok;
            checks.push_back(std::move(bias));
        }
    }
    return nlohmann::json{
        {"all_ok", report.all_ok},
        {"config",
         {{"gammas", report.config.gammas},
          {"horizons", report.config.horizons},
          {"ks", report.config.ks},
          {"N", report.config.dataset_size},
          {"R", report.config.replications},
          {"beta", report.config.beta},
          {"noise_scale", report.config.noise_scale},
          {"var_slack", report.config.var_slack},
          {"seed", report.config.seed}}},
        {"checks", std::move(checks)}};
}

} // namespace hpl
