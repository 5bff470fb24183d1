#include "hpl/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hpl/errors.hpp"

namespace hpl {

int EnvConfig::subtask_offset(int k) const {
    int off = 0;
    for (int i = 0; i < k; ++i) off += static_cast<int>(subtasks[i].actions.size());
    return off;
}

int EnvConfig::subtask_of_state(int s) const {
    int off = 0;
    for (int k = 0; k < num_subtasks(); ++k) {
        off += static_cast<int>(subtasks[k].actions.size());
        if (s < off) return k;
    }
    throw UsageError("subtask_of_state: not a progress state: " + std::to_string(s));
}

int EnvConfig::expert_length() const {
    int n = 0;
    for (const auto& st : subtasks) n += static_cast<int>(st.actions.size());
    return n;
}

void EnvConfig::validate() const {
    if (subtasks.empty()) throw ConfigError("config needs at least one sub-task");
    for (const auto& st : subtasks) {
        if (st.actions.empty())
            throw ConfigError("sub-task '" + st.name + "' has an empty action sequence");
        for (int a : st.actions)
            if (a < 0 || a >= num_actions)
                throw ConfigError("sub-task '" + st.name + "' uses out-of-range action " +
                                  std::to_string(a));
    }
    if (num_actions < 1) throw ConfigError("num_actions must be positive");
    if (num_states != expert_length() + 1)
        throw ConfigError("num_states must equal total required actions + 1 (goal)");
    if (horizon < expert_length())
        throw ConfigError("horizon " + std::to_string(horizon) +
                          " is shorter than the demonstration (" +
                          std::to_string(expert_length()) + " steps)");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
    if (!(r_max > 0.0)) throw ConfigError("r_max must be positive");
    for (const auto& [key, r] : step_rewards) {
        const auto [s, a] = key;
        if (s < 0 || s >= num_states - 1)
            throw ConfigError("reward entry on non-progress state " + std::to_string(s));
        if (a < 0 || a >= num_actions)
            throw ConfigError("reward entry with out-of-range action " + std::to_string(a));
        if (r < 0.0 || r > r_max)
            throw ConfigError("reward outside [0, r_max]: " + std::to_string(r));
    }
}

EnvConfig make_chain_config(std::vector<SubtaskSpec> subtasks, int num_actions,
                            int horizon, double gamma, double r_max,
                            double completion_reward) {
    EnvConfig cfg;
    cfg.subtasks = std::move(subtasks);
    cfg.num_actions = num_actions;
    cfg.horizon = horizon;
    cfg.gamma = gamma;
    cfg.r_max = r_max;
    cfg.num_states = cfg.expert_length() + 1;
    if (completion_reward != 0.0) {
        for (int k = 0; k < cfg.num_subtasks(); ++k) {
            const auto& acts = cfg.subtasks[k].actions;
            if (acts.empty()) continue;  // validate() rejects this shape below
            const int last_state = cfg.subtask_offset(k) + static_cast<int>(acts.size()) - 1;
            cfg.step_rewards[{last_state, acts.back()}] = completion_reward;
        }
    }
    cfg.validate();
    return cfg;
}

EnvState env_reset(const EnvConfig& cfg, std::uint64_t /*seed*/) {
    cfg.validate();
    return EnvState{0, 0, 0, false};
}

StepResult env_step(const EnvConfig& cfg, const EnvState& state, int action) {
    if (state.done) throw UsageError("env_step: episode is already done");
    if (action < 0 || action >= cfg.num_actions)
        throw UsageError("env_step: action " + std::to_string(action) + " out of range");

    const int k = cfg.subtask_of_state(state.state);
    const auto& seq = cfg.subtasks[k].actions;
    const int offset = cfg.subtask_offset(k);
    const int pos = state.state - offset;

    double reward = 0.0;
    if (auto it = cfg.step_rewards.find({state.state, action}); it != cfg.step_rewards.end())
        reward = it->second;

    EnvState next = state;
    next.steps = state.steps + 1;
    if (action == seq[pos]) {
        next.state = state.state + 1;
        if (pos + 1 == static_cast<int>(seq.size())) {
            next.completed = state.completed + 1;
            if (next.completed == cfg.num_subtasks()) {
                next.state = cfg.goal_state();
                next.done = true;
            }
        }
    } else {
        next.state = offset;  // lose all progress within the current sub-task
    }
    if (next.steps >= cfg.horizon) next.done = true;
    return StepResult{next, reward};
}

double outcome_of(const EnvConfig& cfg, const EnvState& state) {
    return static_cast<double>(state.completed) / static_cast<double>(cfg.num_subtasks());
}

namespace {

std::string make_instruction(const EnvConfig& cfg) {
    std::string s = "complete";
    for (const auto& st : cfg.subtasks) s += " " + st.name;
    return s;
}

} // namespace

Trajectory scripted_expert(const EnvConfig& cfg, std::uint64_t seed,
                           const std::string& task_id) {
    EnvState state = env_reset(cfg, seed);
    Trajectory traj;
    traj.task_id = task_id;
    traj.instruction = make_instruction(cfg);
    std::vector<Span> spans;
    int step_idx = 0;
    for (const auto& st : cfg.subtasks) {
        const int start = step_idx;
        for (int a : st.actions) {
            auto [next, reward] = env_step(cfg, state, a);
            traj.steps.push_back(TrajStep{state.state, a, reward});
            state = next;
            ++step_idx;
        }
        spans.push_back(Span{start, step_idx - 1});
    }
    traj.outcome_reward = outcome_of(cfg, state);
    traj.subtask_boundaries = std::move(spans);
    return traj;
}

EnvState replay_from(const EnvConfig& cfg, EnvState state,
                     std::span<const TrajStep> steps) {
    for (const auto& s : steps) state = env_step(cfg, state, s.action).state;
    return state;
}

EnvState replay_prefix(const EnvConfig& cfg, std::span<const TrajStep> prefix) {
    return replay_from(cfg, env_reset(cfg, 0), prefix);
}

std::vector<double> optimal_values(const EnvConfig& cfg) {
    cfg.validate();
    if (cfg.num_states > 100000)
        throw CapabilityError("optimal_values: state space too large to solve exactly");

    // Deterministic successor/reward tables over progress states.
    const int n = cfg.num_states;
    std::vector<double> v(n, 0.0), next_v(n, 0.0);
    for (int sweep = 0; sweep < 1000000; ++sweep) {
        double residual = 0.0;
        for (int s = 0; s < n - 1; ++s) {
            const int k = cfg.subtask_of_state(s);
            const auto& seq = cfg.subtasks[k].actions;
            const int offset = cfg.subtask_offset(k);
            const int pos = s - offset;
            double best = -std::numeric_limits<double>::infinity();
            for (int a = 0; a < cfg.num_actions; ++a) {
                int ns;
                if (a == seq[pos]) {
                    ns = (pos + 1 == static_cast<int>(seq.size()) &&
                          k + 1 == cfg.num_subtasks())
                             ? cfg.goal_state()
                             : s + 1;
                } else {
                    ns = offset;
                }
                double r = 0.0;
                if (auto it = cfg.step_rewards.find({s, a}); it != cfg.step_rewards.end())
                    r = it->second;
                best = std::max(best, r + cfg.gamma * v[ns]);
            }
            next_v[s] = best;
            residual = std::max(residual, std::abs(next_v[s] - v[s]));
        }
        v.swap(next_v);
        if (residual < 1e-13) break;
    }
    return v;
}

// ---------------------------------------------------------------------------
// Flat key-value config format
// ---------------------------------------------------------------------------

namespace {

std::string fmt_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace

EnvConfig parse_env_config(const std::string& text) {
    EnvConfig cfg;
    double completion_reward = 0.0;
    std::optional<int> declared_states;
    std::vector<std::tuple<int, int, double>> reward_lines;

    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("env config line " + std::to_string(lineno) +
                              ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "num_states") declared_states = std::stoi(value);
            else if (key == "num_actions") cfg.num_actions = std::stoi(value);
            else if (key == "horizon") cfg.horizon = std::stoi(value);
            else if (key == "gamma") cfg.gamma = std::stod(value);
            else if (key == "r_max") cfg.r_max = std::stod(value);
            else if (key == "tie_break") cfg.tie_break = value;
            else if (key == "completion_reward") completion_reward = std::stod(value);
            else if (key == "subtask") {
                std::istringstream vs(value);
                SubtaskSpec st;
                vs >> st.name;
                int a;
                while (vs >> a) st.actions.push_back(a);
                if (st.name.empty())
                    throw ConfigError("subtask line needs a name");
                cfg.subtasks.push_back(std::move(st));
            } else if (key == "reward") {
                std::istringstream vs(value);
                int s, a;
                double r;
                if (!(vs >> s >> a >> r))
                    throw ConfigError("reward line needs 'state action value'");
                reward_lines.emplace_back(s, a, r);
            } else {
                throw ConfigError("unknown env config key '" + key + "'");
            }
        } catch (const std::invalid_argument&) {
            throw ConfigError("env config line " + std::to_string(lineno) +
                              ": bad value '" + value + "'");
        }
    }

    cfg.num_states = cfg.expert_length() + 1;
    if (declared_states && *declared_states != cfg.num_states)
        throw ConfigError("declared num_states " + std::to_string(*declared_states) +
                          " does not match derived " + std::to_string(cfg.num_states));
    if (completion_reward != 0.0) {
        for (int k = 0; k < cfg.num_subtasks(); ++k) {
            const auto& acts = cfg.subtasks[k].actions;
            if (acts.empty()) continue;  // validate() rejects this shape below
            const int last_state = cfg.subtask_offset(k) + static_cast<int>(acts.size()) - 1;
            cfg.step_rewards[{last_state, acts.back()}] = completion_reward;
        }
    }
    for (const auto& [s, a, r] : reward_lines) cfg.step_rewards[{s, a}] = r;
    cfg.validate();
    return cfg;
}

std::string format_env_config(const EnvConfig& cfg) {
    std::ostringstream out;
    out << "num_states = " << cfg.num_states << "\n";
    out << "num_actions = " << cfg.num_actions << "\n";
    out << "horizon = " << cfg.horizon << "\n";
    out << "gamma = " << fmt_double(cfg.gamma) << "\n";
    out << "r_max = " << fmt_double(cfg.r_max) << "\n";
    out << "tie_break = " << cfg.tie_break << "\n";
    for (const auto& st : cfg.subtasks) {
        out << "subtask = " << st.name;
        for (int a : st.actions) out << " " << a;
        out << "\n";
    }
    for (const auto& [key, r] : cfg.step_rewards)
        out << "reward = " << key.first << " " << key.second << " " << fmt_double(r) << "\n";
    return out.str();
}

EnvConfig load_env_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open env config: " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_env_config(ss.str());
}

void save_env_config(const EnvConfig& cfg, const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw IoError("cannot write env config: " + file.string());
    out << format_env_config(cfg);
}

// ---------------------------------------------------------------------------
// Trajectory JSON
// ---------------------------------------------------------------------------

nlohmann::json trajectory_to_json(const Trajectory& t) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : t.steps)
        steps.push_back({{"obs", s.obs}, {"action", s.action}, {"reward", s.reward}});
    nlohmann::json j{{"task_id", t.task_id},
                     {"instruction", t.instruction},
                     {"steps", std::move(steps)},
                     {"outcome_reward", t.outcome_reward}};
    if (t.subtask_boundaries) {
        nlohmann::json spans = nlohmann::json::array();
        for (const auto& sp : *t.subtask_boundaries) spans.push_back({sp[0], sp[1]});
        j["subtask_boundaries"] = std::move(spans);
    }
    return j;
}

Trajectory trajectory_from_json(const nlohmann::json& j) {
    Trajectory t;
    t.task_id = j.at("task_id").get<std::string>();
    t.instruction = j.at("instruction").get<std::string>();
    for (const auto& s : j.at("steps"))
        t.steps.push_back(TrajStep{s.at("obs").get<int>(), s.at("action").get<int>(),
                                   s.at("reward").get<double>()});
    t.outcome_reward = j.at("outcome_reward").get<double>();
    if (j.contains("subtask_boundaries")) {
        std::vector<Span> spans;
        for (const auto& sp : j.at("subtask_boundaries"))
            spans.push_back(Span{sp.at(0).get<int>(), sp.at(1).get<int>()});
        t.subtask_boundaries = std::move(spans);
    }
    return t;
}

} // namespace hpl
