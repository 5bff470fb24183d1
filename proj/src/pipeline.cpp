#include "hpl/pipeline.hpp"

#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "hpl/errors.hpp"
#include "hpl/io.hpp"
#include "hpl/rng.hpp"

namespace hpl {

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

std::string task_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "task-%04d", index);
    return buf;
}

void check_keys(const nlohmann::json& j,
                std::initializer_list<std::string_view> allowed,
                const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const auto& k : allowed)
            if (item.key() == k) {
                known = true;
                break;
            }
        if (!known)
            throw ConfigError(where + ": unknown key '" + item.key() + "'");
    }
}

EnvConfig env_from_json(const nlohmann::json& j) {
    check_keys(j,
               {"subtasks", "num_actions", "horizon", "gamma", "r_max",
                "completion_reward", "step_rewards", "tie_break"},
               "env");
    if (!j.contains("subtasks") || !j.contains("num_actions") ||
        !j.contains("horizon"))
        throw ConfigError("env: subtasks, num_actions, and horizon are required");
    std::vector<SubtaskSpec> subtasks;
    for (const auto& sj : j.at("subtasks")) {
        check_keys(sj, {"name", "actions"}, "env.subtasks[]");
        SubtaskSpec s;
        s.name = sj.at("name").get<std::string>();
        s.actions = sj.at("actions").get<std::vector<int>>();
        subtasks.push_back(std::move(s));
    }
    EnvConfig cfg = make_chain_config(
        std::move(subtasks), j.at("num_actions").get<int>(),
        j.at("horizon").get<int>(), j.value("gamma", 0.9), j.value("r_max", 1.0),
        j.value("completion_reward", 1.0));
    if (j.contains("tie_break")) cfg.tie_break = j.at("tie_break").get<std::string>();
    if (j.contains("step_rewards")) {
        for (const auto& row : j.at("step_rewards")) {
            if (!row.is_array() || row.size() != 3)
                throw ConfigError("env.step_rewards entries must be [state, action, value]");
            cfg.step_rewards[{row[0].get<int>(), row[1].get<int>()}] =
                row[2].get<double>();
        }
    }
    cfg.validate();
    return cfg;
}

nlohmann::json env_to_json(const EnvConfig& cfg) {
    nlohmann::json subtasks = nlohmann::json::array();
    for (const auto& s : cfg.subtasks)
        subtasks.push_back({{"name", s.name}, {"actions", s.actions}});
    nlohmann::json rewards = nlohmann::json::array();
    for (const auto& [key, value] : cfg.step_rewards)
        rewards.push_back({key.first, key.second, value});
    return nlohmann::json{{"subtasks", std::move(subtasks)},
                          {"num_actions", cfg.num_actions},
                          {"horizon", cfg.horizon},
                          {"gamma", cfg.gamma},
                          {"r_max", cfg.r_max},
                          {"completion_reward", 0.0},
                          {"step_rewards", std::move(rewards)},
                          {"tie_break", cfg.tie_break}};
}

std::filesystem::path artifact(const PipelineConfig& cfg, const char* name) {
    return cfg.out / name;
}

bool outputs_exist(const PipelineConfig& cfg,
                   std::initializer_list<const char*> names) {
    for (const char* n : names)
        if (!std::filesystem::exists(artifact(cfg, n))) return false;
    return true;
}

void require_inputs(const PipelineConfig& cfg, const std::string& stage,
                    std::initializer_list<const char*> names) {
    for (const char* n : names)
        if (!std::filesystem::exists(artifact(cfg, n)))
            throw IoError("stage " + stage + ": missing input " +
                          artifact(cfg, n).string() +
                          " (run the earlier stages first)");
}

/// Every stage leaves a resolved copy of the run configuration next to its
/// outputs so a run directory is self-describing.
void ensure_resolved_config(const PipelineConfig& cfg) {
    std::filesystem::create_directories(cfg.out);
    const auto file = artifact(cfg, "resolved_config.json");
    if (!std::filesystem::exists(file))
        write_json(file, pipeline_config_to_json(cfg));
}

nlohmann::json hash_map(const PipelineConfig& cfg,
                        std::initializer_list<const char*> names) {
    nlohmann::json out = nlohmann::json::object();
    for (const char* n : names) out[n] = hash_file(artifact(cfg, n));
    return out;
}

void write_manifest(const PipelineConfig& cfg, const std::string& stage,
                    nlohmann::json params, nlohmann::json inputs,
                    nlohmann::json outputs, nlohmann::json counters) {
    write_json(artifact(cfg, (stage + ".manifest.json").c_str()),
               nlohmann::json{{"stage", stage},
                              {"params", std::move(params)},
                              {"inputs", std::move(inputs)},
                              {"outputs", std::move(outputs)},
                              {"counters", std::move(counters)}});
}

std::string reward_regime(const EnvConfig& cfg) {
    return cfg.num_subtasks() > 1 ? "graded" : "binary";
}

std::vector<Trajectory> load_trajectories(const std::filesystem::path& file) {
    std::vector<Trajectory> out;
    for (const auto& j : read_jsonl(file)) out.push_back(trajectory_from_json(j));
    return out;
}

StageOutcome done(std::string stage, bool skipped,
                  std::initializer_list<const char*> outputs) {
    StageOutcome s;
    s.stage = std::move(stage);
    s.skipped = skipped;
    for (const char* n : outputs) s.outputs.emplace_back(n);
    return s;
}

} // namespace

void PipelineConfig::validate() const {
    env.validate();
    thresholds.validate();
    dpo.validate();
    if (num_tasks < 1) throw ConfigError("num_tasks must be positive");
    if (mc_samples < 1) throw ConfigError("mc_samples must be positive");
    if (step_rejection_budget < 1)
        throw ConfigError("step_rejection_budget must be positive");
    if (bc.learning_rate <= 0.0) throw ConfigError("bc.learning_rate must be positive");
    if (bc.epochs < 0) throw ConfigError("bc.epochs must be nonnegative");
    if (eval_episodes < 1) throw ConfigError("eval_episodes must be positive");
    if (workers < 1) throw ConfigError("workers must be positive");
    if (out.empty()) throw ConfigError("out path must not be empty");
    if (segmenter.provider != "oracle" && segmenter.provider != "http")
        throw ConfigError("segmenter.provider must be 'oracle' or 'http'");
    if (segmenter.fixed_n < 1 || segmenter.fixed_k < 1)
        throw ConfigError("segmenter.fixed_n and fixed_k must be positive");
    if (!(segmenter.entropy_quantile > 0.0 && segmenter.entropy_quantile <= 1.0))
        throw ConfigError("segmenter.entropy_quantile must lie in (0, 1]");
}

EnvConfig desk_env_config() {
    const std::vector<std::string> names{"alpha", "bravo", "charlie", "delta"};
    const std::vector<int> lengths{2, 5, 3, 8};
    const int num_actions = 6;
    std::vector<SubtaskSpec> subtasks;
    for (std::size_t k = 0; k < names.size(); ++k) {
        SubtaskSpec s;
        s.name = names[k];
        for (int j = 0; j < lengths[k]; ++j)
            s.actions.push_back((static_cast<int>(k) + j) % num_actions);
        subtasks.push_back(std::move(s));
    }
    return make_chain_config(std::move(subtasks), num_actions, /*horizon=*/24,
                             /*gamma=*/0.9, /*r_max=*/1.0,
                             /*completion_reward=*/1.0);
}

PipelineConfig default_pipeline_config() {
    PipelineConfig cfg;
    cfg.env = desk_env_config();
    return cfg;
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j,
                                         const std::filesystem::path& base_dir) {
    check_keys(j,
               {"env", "label", "num_tasks", "segmenter", "mc_samples",
                "step_mc_filter", "step_rejection_budget", "thresholds", "bc",
                "dpo", "eval_episodes", "seed", "workers", "out"},
               "config");
    PipelineConfig cfg = default_pipeline_config();
    if (j.contains("env")) {
        const auto& ej = j.at("env");
        if (ej.is_string()) {
            std::filesystem::path p = ej.get<std::string>();
            if (p.is_relative()) p = base_dir / p;
            cfg.env = load_env_config(p);
        } else {
            cfg.env = env_from_json(ej);
        }
    }
    cfg.label = j.value("label", cfg.label);
    cfg.num_tasks = j.value("num_tasks", cfg.num_tasks);
    if (j.contains("segmenter")) {
        const auto& sj = j.at("segmenter");
        check_keys(sj,
                   {"strategy", "provider", "fixed_n", "fixed_k",
                    "entropy_threshold", "entropy_quantile", "endpoint",
                    "fallback_to_oracle"},
                   "segmenter");
        if (sj.contains("strategy"))
            cfg.segmenter.strategy =
                seg_strategy_from_string(sj.at("strategy").get<std::string>());
        cfg.segmenter.provider = sj.value("provider", cfg.segmenter.provider);
        cfg.segmenter.fixed_n = sj.value("fixed_n", cfg.segmenter.fixed_n);
        cfg.segmenter.fixed_k = sj.value("fixed_k", cfg.segmenter.fixed_k);
        if (sj.contains("entropy_threshold") && !sj.at("entropy_threshold").is_null())
            cfg.segmenter.entropy_threshold = sj.at("entropy_threshold").get<double>();
        cfg.segmenter.entropy_quantile =
            sj.value("entropy_quantile", cfg.segmenter.entropy_quantile);
        cfg.segmenter.endpoint = sj.value("endpoint", cfg.segmenter.endpoint);
        cfg.segmenter.fallback_to_oracle =
            sj.value("fallback_to_oracle", cfg.segmenter.fallback_to_oracle);
    }
    cfg.mc_samples = j.value("mc_samples", cfg.mc_samples);
    cfg.step_mc_filter = j.value("step_mc_filter", cfg.step_mc_filter);
    cfg.step_rejection_budget =
        j.value("step_rejection_budget", cfg.step_rejection_budget);
    if (j.contains("thresholds")) {
        const auto& tj = j.at("thresholds");
        check_keys(tj, {"length_edges", "difficulty_edges"}, "thresholds");
        if (tj.contains("length_edges")) {
            const auto v = tj.at("length_edges").get<std::vector<int>>();
            if (v.size() != 3) throw ConfigError("length_edges needs 3 values");
            std::copy(v.begin(), v.end(), cfg.thresholds.length_edges.begin());
        }
        if (tj.contains("difficulty_edges")) {
            const auto v = tj.at("difficulty_edges").get<std::vector<double>>();
            if (v.size() != 3) throw ConfigError("difficulty_edges needs 3 values");
            std::copy(v.begin(), v.end(), cfg.thresholds.difficulty_edges.begin());
        }
    }
    if (j.contains("bc")) {
        const auto& bj = j.at("bc");
        check_keys(bj, {"learning_rate", "epochs"}, "bc");
        cfg.bc.learning_rate = bj.value("learning_rate", cfg.bc.learning_rate);
        cfg.bc.epochs = bj.value("epochs", cfg.bc.epochs);
    }
    cfg.eval_episodes = j.value("eval_episodes", cfg.eval_episodes);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.workers = j.value("workers", cfg.workers);
    if (j.contains("out")) {
        std::filesystem::path p = j.at("out").get<std::string>();
        if (p.is_relative()) p = base_dir / p;
        cfg.out = p;
    }
    if (j.contains("dpo")) {
        const auto& dj = j.at("dpo");
        check_keys(dj,
                   {"beta", "learning_rate", "phase_epochs", "include_bc",
                    "include_traj", "include_step", "include_group", "weight_bc",
                    "weight_traj", "weight_step", "weight_group", "curriculum",
                    "refreeze_per_phase", "check_gradients", "seed"},
                   "dpo");
        cfg.dpo.beta = dj.value("beta", cfg.dpo.beta);
        cfg.dpo.learning_rate = dj.value("learning_rate", cfg.dpo.learning_rate);
        if (dj.contains("phase_epochs")) {
            const auto v = dj.at("phase_epochs").get<std::vector<int>>();
            if (v.size() != 3) throw ConfigError("phase_epochs needs 3 values");
            std::copy(v.begin(), v.end(), cfg.dpo.phase_epochs.begin());
        }
        cfg.dpo.include_bc = dj.value("include_bc", cfg.dpo.include_bc);
        cfg.dpo.include_traj = dj.value("include_traj", cfg.dpo.include_traj);
        cfg.dpo.include_step = dj.value("include_step", cfg.dpo.include_step);
        cfg.dpo.include_group = dj.value("include_group", cfg.dpo.include_group);
        cfg.dpo.weight_bc = dj.value("weight_bc", cfg.dpo.weight_bc);
        cfg.dpo.weight_traj = dj.value("weight_traj", cfg.dpo.weight_traj);
        cfg.dpo.weight_step = dj.value("weight_step", cfg.dpo.weight_step);
        cfg.dpo.weight_group = dj.value("weight_group", cfg.dpo.weight_group);
        if (dj.contains("curriculum"))
            cfg.dpo.curriculum =
                curriculum_mode_from_string(dj.at("curriculum").get<std::string>());
        cfg.dpo.refreeze_per_phase =
            dj.value("refreeze_per_phase", cfg.dpo.refreeze_per_phase);
        cfg.dpo.check_gradients = dj.value("check_gradients", cfg.dpo.check_gradients);
        cfg.dpo.seed = dj.value("seed", cfg.seed);
    } else {
        cfg.dpo.seed = cfg.seed;
    }
    cfg.validate();
    return cfg;
}

nlohmann::json pipeline_config_to_json(const PipelineConfig& cfg) {
    return nlohmann::json{
        {"env", env_to_json(cfg.env)},
        {"label", cfg.label},
        {"num_tasks", cfg.num_tasks},
        {"segmenter",
         {{"strategy", to_string(cfg.segmenter.strategy)},
          {"provider", cfg.segmenter.provider},
          {"fixed_n", cfg.segmenter.fixed_n},
          {"fixed_k", cfg.segmenter.fixed_k},
          {"entropy_threshold",
           cfg.segmenter.entropy_threshold
               ? nlohmann::json(*cfg.segmenter.entropy_threshold)
               : nlohmann::json()},
          {"entropy_quantile", cfg.segmenter.entropy_quantile},
          {"endpoint", cfg.segmenter.endpoint},
          {"fallback_to_oracle", cfg.segmenter.fallback_to_oracle}}},
        {"mc_samples", cfg.mc_samples},
        {"step_mc_filter", cfg.step_mc_filter},
        {"step_rejection_budget", cfg.step_rejection_budget},
        {"thresholds",
         {{"length_edges", cfg.thresholds.length_edges},
          {"difficulty_edges", cfg.thresholds.difficulty_edges}}},
        {"bc", {{"learning_rate", cfg.bc.learning_rate}, {"epochs", cfg.bc.epochs}}},
        {"dpo",
         {{"beta", cfg.dpo.beta},
          {"learning_rate", cfg.dpo.learning_rate},
          {"phase_epochs", cfg.dpo.phase_epochs},
          {"include_bc", cfg.dpo.include_bc},
          {"include_traj", cfg.dpo.include_traj},
          {"include_step", cfg.dpo.include_step},
          {"include_group", cfg.dpo.include_group},
          {"weight_bc", cfg.dpo.weight_bc},
          {"weight_traj", cfg.dpo.weight_traj},
          {"weight_step", cfg.dpo.weight_step},
          {"weight_group", cfg.dpo.weight_group},
          {"curriculum", to_string(cfg.dpo.curriculum)},
          {"refreeze_per_phase", cfg.dpo.refreeze_per_phase},
          {"check_gradients", cfg.dpo.check_gradients},
          {"seed", cfg.dpo.seed}}},
        {"eval_episodes", cfg.eval_episodes},
        {"seed", cfg.seed},
        {"workers", cfg.workers},
        {"out", cfg.out.string()}};
}

EvalSummary evaluate_policy(const EnvConfig& cfg, const PolicyParams& policy,
                            int episodes, std::uint64_t seed) {
    if (episodes < 1) throw UsageError("evaluate_policy: episodes must be >= 1");
    if (policy.num_states() != cfg.num_states ||
        policy.num_actions() != cfg.num_actions)
        throw UsageError("evaluate_policy: policy/config shape mismatch");
    EvalSummary s;
    s.episodes = episodes;
    s.seed = seed;
    std::vector<int> finished(static_cast<std::size_t>(cfg.num_subtasks()), 0);
    int successes = 0;
    double sum = 0.0;
    for (int e = 0; e < episodes; ++e) {
        EnvState st =
            env_reset(cfg, derive_seed(seed, {"episode", std::to_string(e)}));
        while (!st.done) {
            int best = 0;
            for (int a = 1; a < cfg.num_actions; ++a)
                if (policy.logits(st.state, a) > policy.logits(st.state, best))
                    best = a;
            st = env_step(cfg, st, best).state;
        }
        const double outcome = outcome_of(cfg, st);
        sum += outcome;
        if (outcome == 1.0) ++successes;
        for (int k = 0; k < cfg.num_subtasks(); ++k)
            if (st.completed > k) ++finished[static_cast<std::size_t>(k)];
    }
    s.mean_outcome = sum / episodes;
    s.success_rate = static_cast<double>(successes) / episodes;
    for (int k = 0; k < cfg.num_subtasks(); ++k)
        s.per_subtask[cfg.subtasks[static_cast<std::size_t>(k)].name] =
            static_cast<double>(finished[static_cast<std::size_t>(k)]) / episodes;
    return s;
}

nlohmann::json eval_summary_to_json(const EvalSummary& s) {
    return nlohmann::json{{"episodes", s.episodes},
                          {"mean_outcome", s.mean_outcome},
                          {"success_rate", s.success_rate},
                          {"per_subtask", s.per_subtask},
                          {"seed", s.seed}};
}

EvalSummary eval_summary_from_json(const nlohmann::json& j) {
    EvalSummary s;
    s.episodes = j.at("episodes").get<int>();
    s.mean_outcome = j.at("mean_outcome").get<double>();
    s.success_rate = j.at("success_rate").get<double>();
    if (j.contains("per_subtask"))
        s.per_subtask = j.at("per_subtask").get<std::map<std::string, double>>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

StageOutcome stage_expert(const PipelineConfig& cfg) {
    static constexpr const char* kOutputs[] = {"env.cfg", "expert.jsonl",
                                               "expert.manifest.json"};
    if (outputs_exist(cfg, {kOutputs[0], kOutputs[1], kOutputs[2]}))
        return done("expert", true, {kOutputs[0], kOutputs[1], kOutputs[2]});
    ensure_resolved_config(cfg);
    save_env_config(cfg.env, artifact(cfg, "env.cfg"));
    std::vector<nlohmann::json> rows;
    rows.reserve(static_cast<std::size_t>(cfg.num_tasks));
    for (int i = 0; i < cfg.num_tasks; ++i) {
        const std::string id = task_name(i);
        rows.push_back(trajectory_to_json(
            scripted_expert(cfg.env, derive_seed(cfg.seed, {"expert", id}), id)));
    }
    write_jsonl(artifact(cfg, "expert.jsonl"), rows);
    write_manifest(cfg, "expert",
                   {{"num_tasks", cfg.num_tasks}, {"seed", cfg.seed}},
                   nlohmann::json::object(),
                   hash_map(cfg, {"env.cfg", "expert.jsonl"}),
                   {{"trajectories", rows.size()},
                    {"regime", reward_regime(cfg.env)}});
    return done("expert", false, {kOutputs[0], kOutputs[1], kOutputs[2]});
}

StageOutcome stage_bc(const PipelineConfig& cfg) {
    if (outputs_exist(cfg, {"bc_policy.json", "ref_policy.json", "bc.manifest.json"}))
        return done("bc", true, {"bc_policy.json", "ref_policy.json", "bc.manifest.json"});
    ensure_resolved_config(cfg);
    require_inputs(cfg, "bc", {"expert.jsonl"});
    const auto expert = load_trajectories(artifact(cfg, "expert.jsonl"));
    PolicyParams init =
        make_uniform_policy(cfg.env.num_states, cfg.env.num_actions);
    PolicyParams bc = bc_train(expert, std::move(init), cfg.bc.learning_rate,
                               cfg.bc.epochs, derive_seed(cfg.seed, {"bc"}));
    bc.tag = "bc";
    const PolicyParams ref = freeze_reference(bc);
    save_policy(bc, artifact(cfg, "bc_policy.json"));
    save_policy(ref, artifact(cfg, "ref_policy.json"));
    write_manifest(cfg, "bc",
                   {{"learning_rate", cfg.bc.learning_rate},
                    {"epochs", cfg.bc.epochs}},
                   hash_map(cfg, {"expert.jsonl"}),
                   hash_map(cfg, {"bc_policy.json", "ref_policy.json"}),
                   {{"trajectories", expert.size()},
                    {"final_loss", bc_loss(bc, expert)}});
    return done("bc", false, {"bc_policy.json", "ref_policy.json", "bc.manifest.json"});
}

namespace {

/// Builds generation-time segmenter options. HPL_SEGMENTER_URL, when set,
/// points the semantic strategy at that HTTP endpoint regardless of the
/// configured provider.
SegmenterOptions make_segmenter_options(const PipelineConfig& cfg,
                                        const std::vector<Trajectory>& expert,
                                        const PolicyParams& ref,
                                        std::string* effective_endpoint) {
    SegmenterOptions opts;
    opts.strategy = cfg.segmenter.strategy;
    opts.fixed_n = cfg.segmenter.fixed_n;
    opts.fixed_k = cfg.segmenter.fixed_k;
    opts.quantile = cfg.segmenter.entropy_quantile;
    opts.fallback_to_oracle = cfg.segmenter.fallback_to_oracle;
    if (opts.strategy == SegStrategy::uncertainty) {
        opts.entropy_threshold =
            cfg.segmenter.entropy_threshold
                ? *cfg.segmenter.entropy_threshold
                : calibrate_entropy_threshold(expert, ref, opts.quantile);
    }
    std::string endpoint = cfg.segmenter.endpoint;
    bool use_http = cfg.segmenter.provider == "http";
    if (const char* url = std::getenv("HPL_SEGMENTER_URL"); url && *url) {
        endpoint = url;
        use_http = true;
    }
    if (opts.strategy == SegStrategy::semantic) {
        if (use_http) {
            if (endpoint.empty())
                throw ConfigError("semantic segmenter: http provider needs an endpoint");
            opts.provider = std::make_shared<HttpSegmenter>(endpoint);
            if (effective_endpoint) *effective_endpoint = endpoint;
        } else {
            opts.provider = std::make_shared<OracleSegmenter>();
        }
    }
    return opts;
}

} // namespace

StageOutcome stage_prefs(const PipelineConfig& cfg) {
    static constexpr const char* kOut[] = {"traj_pairs.jsonl", "step_pairs.jsonl",
                                           "group_candidates.jsonl",
                                           "prefs.manifest.json"};
    if (outputs_exist(cfg, {kOut[0], kOut[1], kOut[2], kOut[3]}))
        return done("prefs", true, {kOut[0], kOut[1], kOut[2], kOut[3]});
    ensure_resolved_config(cfg);
    require_inputs(cfg, "prefs", {"expert.jsonl", "ref_policy.json"});
    const auto expert = load_trajectories(artifact(cfg, "expert.jsonl"));
    const PolicyParams ref = load_policy(artifact(cfg, "ref_policy.json"));

    PrefCounters counters;
    const auto traj_pairs = gen_traj_pairs(expert, ref, cfg.env, cfg.seed, &counters);
    StepPairOptions step_opts;
    step_opts.rejection_budget = cfg.step_rejection_budget;
    step_opts.mc_filter = cfg.step_mc_filter;
    step_opts.mc_samples = cfg.mc_samples;
    const auto step_pairs =
        gen_step_pairs(expert, ref, cfg.env, cfg.seed, step_opts, &counters);
    std::string endpoint;
    const SegmenterOptions seg_opts =
        make_segmenter_options(cfg, expert, ref, &endpoint);
    const auto candidates =
        gen_group_candidates(expert, ref, cfg.env, seg_opts, cfg.seed, &counters);

    std::vector<nlohmann::json> rows;
    for (const auto& p : traj_pairs) rows.push_back(traj_pair_to_json(p));
    write_jsonl(artifact(cfg, kOut[0]), rows);
    rows.clear();
    for (const auto& p : step_pairs) rows.push_back(step_pair_to_json(p));
    write_jsonl(artifact(cfg, kOut[1]), rows);
    rows.clear();
    for (const auto& p : candidates) rows.push_back(group_pair_to_json(p));
    write_jsonl(artifact(cfg, kOut[2]), rows);

    nlohmann::json params{
        {"strategy", to_string(cfg.segmenter.strategy)},
        {"provider", endpoint.empty() ? "oracle" : "http"},
        {"endpoint", endpoint},
        {"fixed_n", cfg.segmenter.fixed_n},
        {"fixed_k", cfg.segmenter.fixed_k},
        {"entropy_quantile", cfg.segmenter.entropy_quantile},
        {"entropy_threshold", seg_opts.entropy_threshold
                                  ? nlohmann::json(*seg_opts.entropy_threshold)
                                  : nlohmann::json()},
        {"step_rejection_budget", cfg.step_rejection_budget},
        {"step_mc_filter", cfg.step_mc_filter},
        {"seed", cfg.seed}};
    write_manifest(cfg, "prefs", std::move(params),
                   hash_map(cfg, {"expert.jsonl", "ref_policy.json"}),
                   hash_map(cfg, {kOut[0], kOut[1], kOut[2]}),
                   {{"traj_pairs", traj_pairs.size()},
                    {"step_pairs", step_pairs.size()},
                    {"group_candidates", candidates.size()},
                    {"traj_filtered", counters.traj_filtered},
                    {"step_skipped", counters.step_skipped},
                    {"step_filtered", counters.step_filtered},
                    {"loser_short_skips", counters.loser_short_skips},
                    {"fallback_events", counters.fallback_events},
                    {"regime", reward_regime(cfg.env)}});
    return done("prefs", false, {kOut[0], kOut[1], kOut[2], kOut[3]});
}

StageOutcome stage_mc(const PipelineConfig& cfg) {
    if (outputs_exist(cfg, {"group_pairs.jsonl", "mc.manifest.json"}))
        return done("mc", true, {"group_pairs.jsonl", "mc.manifest.json"});
    ensure_resolved_config(cfg);
    require_inputs(cfg, "mc", {"group_candidates.jsonl", "ref_policy.json"});
    const PolicyParams ref = load_policy(artifact(cfg, "ref_policy.json"));
    std::vector<GroupPair> candidates;
    for (const auto& j : read_jsonl(artifact(cfg, "group_candidates.jsonl")))
        candidates.push_back(group_pair_from_json(j));
    PrefCounters counters;
    const std::size_t total = candidates.size();
    const auto scored =
        mc_score_groups(std::move(candidates), ref, cfg.env, cfg.mc_samples,
                        cfg.seed, &counters, cfg.workers);
    std::vector<nlohmann::json> rows;
    for (const auto& p : scored) rows.push_back(group_pair_to_json(p));
    write_jsonl(artifact(cfg, "group_pairs.jsonl"), rows);
    write_manifest(cfg, "mc",
                   {{"mc_samples", cfg.mc_samples}, {"seed", cfg.seed}},
                   hash_map(cfg, {"group_candidates.jsonl", "ref_policy.json"}),
                   hash_map(cfg, {"group_pairs.jsonl"}),
                   {{"candidates", total},
                    {"scored_pairs", scored.size()},
                    {"non_positive_delta", counters.non_positive_delta},
                    {"regime", reward_regime(cfg.env)}});
    return done("mc", false, {"group_pairs.jsonl", "mc.manifest.json"});
}

namespace {

std::vector<GroupPair> load_group_pairs(const std::filesystem::path& file) {
    std::vector<GroupPair> out;
    for (const auto& j : read_jsonl(file)) out.push_back(group_pair_from_json(j));
    return out;
}

} // namespace

StageOutcome stage_bucket(const PipelineConfig& cfg) {
    if (outputs_exist(cfg, {"buckets.json", "bucket.manifest.json"}))
        return done("bucket", true, {"buckets.json", "bucket.manifest.json"});
    ensure_resolved_config(cfg);
    require_inputs(cfg, "bucket", {"group_pairs.jsonl"});
    const CurriculumMatrix matrix =
        build_matrix(load_group_pairs(artifact(cfg, "group_pairs.jsonl")),
                     cfg.thresholds);
    write_json(artifact(cfg, "buckets.json"), matrix_summary(matrix));
    write_manifest(cfg, "bucket",
                   {{"length_edges", cfg.thresholds.length_edges},
                    {"difficulty_edges", cfg.thresholds.difficulty_edges}},
                   hash_map(cfg, {"group_pairs.jsonl"}),
                   hash_map(cfg, {"buckets.json"}),
                   {{"total", matrix.total()}});
    return done("bucket", false, {"buckets.json", "bucket.manifest.json"});
}

StageOutcome stage_train(const PipelineConfig& cfg) {
    static constexpr const char* kOut[] = {
        "train_report.json", "train_report.csv",  "hpl_policy.json",
        "phase1_policy.json", "phase2_policy.json", "phase3_policy.json",
        "train.manifest.json"};
    if (outputs_exist(cfg, {kOut[0], kOut[1], kOut[2], kOut[3], kOut[4], kOut[5],
                            kOut[6]}))
        return done("train", true,
                    {kOut[0], kOut[1], kOut[2], kOut[3], kOut[4], kOut[5], kOut[6]});
    ensure_resolved_config(cfg);
    require_inputs(cfg, "train",
                   {"expert.jsonl", "traj_pairs.jsonl", "step_pairs.jsonl",
                    "group_pairs.jsonl", "bc_policy.json", "ref_policy.json"});
    const auto expert = load_trajectories(artifact(cfg, "expert.jsonl"));
    std::vector<TrajPair> traj_pairs;
    for (const auto& j : read_jsonl(artifact(cfg, "traj_pairs.jsonl")))
        traj_pairs.push_back(traj_pair_from_json(j));
    std::vector<StepPair> step_pairs;
    for (const auto& j : read_jsonl(artifact(cfg, "step_pairs.jsonl")))
        step_pairs.push_back(step_pair_from_json(j));
    const auto group_pairs = load_group_pairs(artifact(cfg, "group_pairs.jsonl"));
    const PolicyParams init = load_policy(artifact(cfg, "bc_policy.json"));
    const PolicyParams ref = load_policy(artifact(cfg, "ref_policy.json"));
    const CurriculumMatrix matrix = build_matrix(group_pairs, cfg.thresholds);

    HplDatasets data;
    data.expert = &expert;
    data.traj = &traj_pairs;
    data.step = &step_pairs;
    TrainReport report = train_hpl(init, ref, data, matrix, cfg.dpo);

    write_json(artifact(cfg, kOut[0]), train_report_to_json(report));
    write_text(artifact(cfg, kOut[1]), train_report_csv(report));
    save_policy(report.final_params, artifact(cfg, kOut[2]));
    for (int phase = 1; phase <= 3; ++phase) {
        PolicyParams snap = report.phase_snapshots[static_cast<std::size_t>(phase - 1)];
        snap.tag = "phase" + std::to_string(phase);
        save_policy(snap, artifact(cfg, kOut[2 + phase]));
    }
    write_manifest(
        cfg, "train", pipeline_config_to_json(cfg)["dpo"],
        hash_map(cfg, {"expert.jsonl", "traj_pairs.jsonl", "step_pairs.jsonl",
                       "group_pairs.jsonl", "bc_policy.json", "ref_policy.json"}),
        hash_map(cfg, {kOut[0], kOut[1], kOut[2], kOut[3], kOut[4], kOut[5]}),
        {{"epochs", report.epochs.size()},
         {"phase_group_pairs", report.phase_group_pairs}});
    return done("train", false,
                {kOut[0], kOut[1], kOut[2], kOut[3], kOut[4], kOut[5], kOut[6]});
}

StageOutcome stage_eval(const PipelineConfig& cfg) {
    if (outputs_exist(cfg, {"eval.json", "eval.manifest.json"}))
        return done("eval", true, {"eval.json", "eval.manifest.json"});
    ensure_resolved_config(cfg);
    require_inputs(cfg, "eval", {"hpl_policy.json"});
    const PolicyParams policy = load_policy(artifact(cfg, "hpl_policy.json"));
    const EvalSummary summary = evaluate_policy(
        cfg.env, policy, cfg.eval_episodes, derive_seed(cfg.seed, {"eval"}));
    write_json(artifact(cfg, "eval.json"), eval_summary_to_json(summary));
    write_manifest(cfg, "eval",
                   {{"episodes", cfg.eval_episodes}, {"seed", cfg.seed}},
                   hash_map(cfg, {"hpl_policy.json"}),
                   hash_map(cfg, {"eval.json"}),
                   {{"mean_outcome", summary.mean_outcome},
                    {"success_rate", summary.success_rate}});
    return done("eval", false, {"eval.json", "eval.manifest.json"});
}

namespace {

template <typename Fn>
StageOutcome run_stage(const char* name, Fn fn) {
    try {
        return fn();
    } catch (const UsageError& e) {
        throw UsageError("stage " + std::string(name) + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError("stage " + std::string(name) + ": " + e.what());
    } catch (const IoError& e) {
        throw IoError("stage " + std::string(name) + ": " + e.what());
    } catch (const CapabilityError& e) {
        throw CapabilityError("stage " + std::string(name) + ": " + e.what());
    } catch (const std::exception& e) {
        throw std::runtime_error("stage " + std::string(name) + ": " + e.what());
    }
}

} // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg) {
    cfg.validate();
    std::filesystem::create_directories(cfg.out);
    write_json(artifact(cfg, "resolved_config.json"), pipeline_config_to_json(cfg));
    PipelineResult result;
    result.stages.push_back(run_stage("expert", [&] { return stage_expert(cfg); }));
    result.stages.push_back(run_stage("bc", [&] { return stage_bc(cfg); }));
    result.stages.push_back(run_stage("prefs", [&] { return stage_prefs(cfg); }));
    result.stages.push_back(run_stage("mc", [&] { return stage_mc(cfg); }));
    result.stages.push_back(run_stage("bucket", [&] { return stage_bucket(cfg); }));
    result.stages.push_back(run_stage("train", [&] { return stage_train(cfg); }));
    result.stages.push_back(run_stage("eval", [&] { return stage_eval(cfg); }));
    result.eval = eval_summary_from_json(read_json(artifact(cfg, "eval.json")));
    return result;
}

ReportBundle build_report(const std::vector<std::filesystem::path>& run_dirs) {
    ReportBundle bundle;
    static constexpr const char* kRequired[] = {
        "resolved_config.json", "env.cfg",           "eval.json",
        "train_report.json",    "buckets.json",      "phase1_policy.json",
        "phase2_policy.json",   "phase3_policy.json"};
    for (const auto& dir : run_dirs)
        for (const char* req : kRequired)
            if (!std::filesystem::exists(dir / req))
                bundle.missing.push_back((dir / req).string());
    if (!bundle.missing.empty()) return bundle;

    std::ostringstream phase_csv, census_csv, ablation_csv;
    phase_csv << "run,label,seed,phase,mean_outcome,success_rate\n";
    census_csv << "run,label,length_level,difficulty_level,count\n";
    ablation_csv << "run,label,curriculum,components,mean_outcome,success_rate\n";
    for (const auto& dir : run_dirs) {
        const std::string run = dir.filename().string();
        const nlohmann::json config = read_json(dir / "resolved_config.json");
        const std::string label = config.value("label", "run");
        const std::uint64_t seed = config.at("seed").get<std::uint64_t>();
        const int episodes = config.at("eval_episodes").get<int>();
        const EnvConfig env = load_env_config(dir / "env.cfg");

        for (int phase = 1; phase <= 3; ++phase) {
            const PolicyParams snapshot = load_policy(
                dir / ("phase" + std::to_string(phase) + "_policy.json"));
            const EvalSummary ev = evaluate_policy(env, snapshot, episodes,
                                                   derive_seed(seed, {"eval"}));
            phase_csv << run << ',' << label << ',' << seed << ',' << phase << ','
                      << fmt(ev.mean_outcome) << ',' << fmt(ev.success_rate)
                      << '\n';
        }

        const nlohmann::json buckets = read_json(dir / "buckets.json");
        for (int L = 1; L <= 3; ++L)
            for (int D = 1; D <= 3; ++D)
                census_csv << run << ',' << label << ',' << L << ',' << D << ','
                           << buckets.at("counts")[L - 1][D - 1].get<long long>()
                           << '\n';

        const nlohmann::json dpo = config.at("dpo");
        std::string components;
        for (const auto& [flag, name] :
             {std::pair<const char*, const char*>{"include_bc", "bc"},
              {"include_traj", "traj"},
              {"include_step", "step"},
              {"include_group", "group"}}) {
            if (dpo.at(flag).get<bool>()) {
                if (!components.empty()) components += '+';
                components += name;
            }
        }
        const EvalSummary ev = eval_summary_from_json(read_json(dir / "eval.json"));
        ablation_csv << run << ',' << label << ','
                     << dpo.at("curriculum").get<std::string>() << ','
                     << components << ',' << fmt(ev.mean_outcome) << ','
                     << fmt(ev.success_rate) << '\n';
    }
    bundle.phase_csv = phase_csv.str();
    bundle.census_csv = census_csv.str();
    bundle.ablation_csv = ablation_csv.str();
    return bundle;
}

} // namespace hpl
