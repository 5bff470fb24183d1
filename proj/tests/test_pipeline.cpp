#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "hpl/env.hpp"
#include "hpl/errors.hpp"
#include "hpl/io.hpp"
#include "hpl/pipeline.hpp"
#include "hpl/policy.hpp"
#include "hpl/prefgen.hpp"
#include "hpl/rng.hpp"

// httplib pulls in system resolver headers whose macros clash with Eigen's
// internals, so it must come after every header that includes Eigen.
#include <httplib.h>

using namespace hpl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static std::atomic<int> counter{0};
        path = fs::temp_directory_path() /
               ("hpl_pipe_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

/// Scoped environment-variable override that always restores the old state.
struct EnvGuard {
    std::string name;
    std::optional<std::string> old;
    EnvGuard(const std::string& n, const std::string& value) : name(n) {
        if (const char* v = std::getenv(n.c_str())) old = v;
        ::setenv(n.c_str(), value.c_str(), 1);
    }
    ~EnvGuard() {
        if (old)
            ::setenv(name.c_str(), old->c_str(), 1);
        else
            ::unsetenv(name.c_str());
    }
};

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>());
}

/// A quick configuration: the standard desk chain with smaller budgets.
PipelineConfig small_cfg(const fs::path& out, std::uint64_t seed = 11) {
    PipelineConfig cfg = default_pipeline_config();
    cfg.num_tasks = 6;
    cfg.mc_samples = 4;
    cfg.eval_episodes = 4;
    cfg.dpo.phase_epochs = {3, 3, 3};
    cfg.seed = seed;
    cfg.dpo.seed = seed;
    cfg.out = out;
    return cfg;
}

const std::vector<std::string> kRunFiles = {
    "resolved_config.json", "env.cfg",
    "expert.jsonl",         "expert.manifest.json",
    "bc_policy.json",       "ref_policy.json",
    "bc.manifest.json",     "traj_pairs.jsonl",
    "step_pairs.jsonl",     "group_candidates.jsonl",
    "prefs.manifest.json",  "group_pairs.jsonl",
    "mc.manifest.json",     "buckets.json",
    "bucket.manifest.json", "train_report.json",
    "train_report.csv",     "hpl_policy.json",
    "phase1_policy.json",   "phase2_policy.json",
    "phase3_policy.json",   "train.manifest.json",
    "eval.json",            "eval.manifest.json"};

/// Small two-sub-task chain used for hand-checkable evaluation.
EnvConfig pick_place() {
    return make_chain_config({{"pick", {0, 1}}, {"place", {2}}}, 3, 8);
}

int run_cli(const std::string& args) {
    const char* bin = std::getenv("HPL_BIN");
    REQUIRE(bin != nullptr);
    const std::string cmd =
        std::string(bin) + " " + args + " >/dev/null 2>/dev/null";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

} // namespace

TEST_CASE("the desk configuration is a valid four-sub-task chain") {
    const EnvConfig env = desk_env_config();
    CHECK(env.num_states == 2 + 5 + 3 + 8 + 1);
    CHECK(env.num_actions == 6);
    CHECK(env.horizon == 24);
    CHECK(env.gamma == 0.9);
    REQUIRE(env.num_subtasks() == 4);
    CHECK(env.subtasks[0].name == "alpha");
    CHECK(env.subtasks[1].name == "bravo");
    CHECK(env.subtasks[2].name == "charlie");
    CHECK(env.subtasks[3].name == "delta");
    CHECK(env.subtasks[0].actions.size() == 2);
    CHECK(env.subtasks[1].actions.size() == 5);
    CHECK(env.subtasks[2].actions.size() == 3);
    CHECK(env.subtasks[3].actions.size() == 8);
    CHECK_NOTHROW(env.validate());

    const PipelineConfig cfg = default_pipeline_config();
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.label == "run");
    CHECK(cfg.num_tasks == 24);
    CHECK(cfg.mc_samples == 8);
    CHECK(cfg.eval_episodes == 8);
    CHECK(cfg.workers == 1);
    CHECK(cfg.segmenter.provider == "oracle");
}

TEST_CASE("config documents round-trip through JSON") {
    PipelineConfig cfg = default_pipeline_config();
    cfg.label = "roundtrip";
    cfg.num_tasks = 9;
    cfg.segmenter.strategy = SegStrategy::uncertainty;
    cfg.segmenter.provider = "http";
    cfg.segmenter.endpoint = "http://127.0.0.1:1234/seg";
    cfg.segmenter.entropy_threshold = 0.625;
    cfg.segmenter.entropy_quantile = 0.5;
    cfg.segmenter.fallback_to_oracle = false;
    cfg.mc_samples = 5;
    cfg.step_mc_filter = true;
    cfg.step_rejection_budget = 7;
    cfg.thresholds.length_edges = {2, 4, 99};
    cfg.thresholds.difficulty_edges = {0.5, 0.25, 0.0};
    cfg.bc.learning_rate = 0.25;
    cfg.bc.epochs = 2;
    cfg.dpo.beta = 0.7;
    cfg.dpo.learning_rate = 0.125;
    cfg.dpo.phase_epochs = {1, 2, 3};
    cfg.dpo.include_traj = false;
    cfg.dpo.weight_group = 2.5;
    cfg.dpo.curriculum = CurriculumMode::length_only;
    cfg.dpo.refreeze_per_phase = true;
    cfg.dpo.seed = 77;
    cfg.eval_episodes = 3;
    cfg.seed = 42;
    cfg.workers = 2;
    cfg.out = "/tmp/hpl_roundtrip_out";

    const nlohmann::json j = pipeline_config_to_json(cfg);
    const PipelineConfig back = pipeline_config_from_json(j, "/");
    CHECK(pipeline_config_to_json(back) == j);

    // An empty document yields the defaults.
    const PipelineConfig defaulted = pipeline_config_from_json(
        nlohmann::json::object(), fs::current_path());
    CHECK(pipeline_config_to_json(defaulted).at("num_tasks") == 24);
    CHECK(defaulted.segmenter.provider == "oracle");
}

TEST_CASE("an env entry may name a config file on disk") {
    TempDir tmp;
    const EnvConfig env = pick_place();
    save_env_config(env, tmp.path / "chain.cfg");
    const nlohmann::json j{{"env", "chain.cfg"}};
    const PipelineConfig cfg = pipeline_config_from_json(j, tmp.path);
    CHECK(format_env_config(cfg.env) == format_env_config(env));

    const nlohmann::json missing{{"env", "nope.cfg"}};
    CHECK_THROWS_AS(pipeline_config_from_json(missing, tmp.path), IoError);
}

TEST_CASE("unknown keys are rejected at every nesting level") {
    const fs::path base = fs::current_path();
    CHECK_THROWS_AS(
        pipeline_config_from_json(nlohmann::json{{"oops", 1}}, base),
        ConfigError);
    CHECK_THROWS_AS(pipeline_config_from_json(
                        nlohmann::json{{"segmenter", {{"portt", 1}}}}, base),
                    ConfigError);
    CHECK_THROWS_AS(pipeline_config_from_json(
                        nlohmann::json{{"thresholds", {{"edges", 1}}}}, base),
                    ConfigError);
    CHECK_THROWS_AS(pipeline_config_from_json(
                        nlohmann::json{{"bc", {{"momentum", 0.9}}}}, base),
                    ConfigError);
    CHECK_THROWS_AS(pipeline_config_from_json(
                        nlohmann::json{{"dpo", {{"alpha", 0.1}}}}, base),
                    ConfigError);

    // Fixed-size arrays must have exactly three entries.
    CHECK_THROWS_AS(
        pipeline_config_from_json(
            nlohmann::json{{"thresholds", {{"length_edges", {1, 2}}}}}, base),
        ConfigError);
    CHECK_THROWS_AS(
        pipeline_config_from_json(
            nlohmann::json{{"dpo", {{"phase_epochs", {1, 2, 3, 4}}}}}, base),
        ConfigError);
}

TEST_CASE("field validation rejects out-of-range settings") {
    auto broken = [](auto mutate) {
        PipelineConfig cfg = default_pipeline_config();
        mutate(cfg);
        return cfg;
    };
    CHECK_THROWS_AS(broken([](auto& c) { c.num_tasks = 0; }).validate(),
                    ConfigError);
    CHECK_THROWS_AS(broken([](auto& c) { c.mc_samples = 0; }).validate(),
                    ConfigError);
    CHECK_THROWS_AS(broken([](auto& c) { c.step_rejection_budget = 0; }).validate(),
                    ConfigError);
    CHECK_THROWS_AS(broken([](auto& c) { c.bc.learning_rate = 0.0; }).validate(),
                    ConfigError);
    CHECK_THROWS_AS(broken([](auto& c) { c.bc.epochs = -1; }).validate(),
                    ConfigError);
    CHECK_THROWS_AS(broken([](auto& c) { c.eval_episodes = 0; }).validate(),
                    ConfigError);
    CHECK_THROWS_AS(broken([](auto& c) { c.workers = 0; }).validate(),
                    ConfigError);
    CHECK_THROWS_AS(broken([](auto& c) { c.out = ""; }).validate(), ConfigError);
    CHECK_THROWS_AS(broken([](auto& c) { c.segmenter.provider = "ftp"; }).validate(),
                    ConfigError);
    CHECK_THROWS_AS(broken([](auto& c) { c.segmenter.fixed_n = 0; }).validate(),
                    ConfigError);
    CHECK_THROWS_AS(
        broken([](auto& c) { c.segmenter.entropy_quantile = 0.0; }).validate(),
        ConfigError);
    CHECK_THROWS_AS(broken([](auto& c) { c.env.gamma = 1.0; }).validate(),
                    ConfigError);
    CHECK_THROWS_AS(broken([](auto& c) { c.dpo.beta = -1.0; }).validate(),
                    ConfigError);
}

TEST_CASE("the training seed defaults to the run seed") {
    const fs::path base = fs::current_path();
    CHECK(pipeline_config_from_json(nlohmann::json{{"seed", 7}}, base).dpo.seed == 7);
    CHECK(pipeline_config_from_json(
              nlohmann::json{{"seed", 7}, {"dpo", nlohmann::json::object()}}, base)
              .dpo.seed == 7);
    CHECK(pipeline_config_from_json(
              nlohmann::json{{"seed", 7}, {"dpo", {{"seed", 9}}}}, base)
              .dpo.seed == 9);
}

TEST_CASE("greedy evaluation is exact on known policies") {
    const EnvConfig env = pick_place();

    // A policy whose argmax is the expert action in every progress state.
    PolicyParams expert = make_uniform_policy(env.num_states, env.num_actions, "x");
    expert.logits(0, 0) = 50.0;
    expert.logits(1, 1) = 50.0;
    expert.logits(2, 2) = 50.0;
    const EvalSummary good = evaluate_policy(env, expert, 5, 123);
    CHECK(good.episodes == 5);
    CHECK(good.mean_outcome == 1.0);
    CHECK(good.success_rate == 1.0);
    CHECK(good.per_subtask.at("pick") == 1.0);
    CHECK(good.per_subtask.at("place") == 1.0);

    // All-zero logits break ties toward action 0: state 1 then always resets,
    // so nothing is ever completed.
    const PolicyParams stuck =
        make_uniform_policy(env.num_states, env.num_actions, "u");
    const EvalSummary bad = evaluate_policy(env, stuck, 5, 123);
    CHECK(bad.mean_outcome == 0.0);
    CHECK(bad.success_rate == 0.0);
    CHECK(bad.per_subtask.at("pick") == 0.0);

    // Greedy decoding ignores the seed entirely.
    const EvalSummary other = evaluate_policy(env, expert, 5, 999);
    CHECK(other.mean_outcome == good.mean_outcome);

    CHECK_THROWS_AS(evaluate_policy(env, expert, 0, 1), UsageError);
    const PolicyParams wrong = make_uniform_policy(2, 2, "w");
    CHECK_THROWS_AS(evaluate_policy(env, wrong, 1, 1), UsageError);

    // The summary serializes loss-free.
    const EvalSummary back = eval_summary_from_json(eval_summary_to_json(good));
    CHECK(back.episodes == good.episodes);
    CHECK(back.mean_outcome == good.mean_outcome);
    CHECK(back.success_rate == good.success_rate);
    CHECK(back.per_subtask == good.per_subtask);
    CHECK(back.seed == good.seed);
}

TEST_CASE("the full pipeline produces a complete self-describing run directory") {
    TempDir tmp;
    const PipelineConfig cfg = small_cfg(tmp.path / "run");
    const PipelineResult result = run_pipeline(cfg);

    REQUIRE(result.stages.size() == 7);
    const std::vector<std::string> order{"expert", "bc",    "prefs", "mc",
                                         "bucket", "train", "eval"};
    for (std::size_t i = 0; i < order.size(); ++i) {
        CHECK(result.stages[i].stage == order[i]);
        CHECK_FALSE(result.stages[i].skipped);
    }
    CHECK(result.eval.episodes == 4);

    for (const auto& name : kRunFiles) {
        CAPTURE(name);
        CHECK(fs::exists(cfg.out / name));
    }

    // The stored configuration is the resolved one, byte for byte.
    CHECK(read_json(cfg.out / "resolved_config.json") ==
          pipeline_config_to_json(cfg));

    // Manifests carry stage parameters and content digests -- and nothing
    // time-dependent.
    for (const auto& stage :
         {"expert", "bc", "prefs", "mc", "bucket", "train", "eval"}) {
        CAPTURE(stage);
        const nlohmann::json m =
            read_json(cfg.out / (std::string(stage) + ".manifest.json"));
        REQUIRE(m.is_object());
        CHECK(m.size() == 5);
        CHECK(m.contains("stage"));
        CHECK(m.contains("params"));
        CHECK(m.contains("inputs"));
        CHECK(m.contains("outputs"));
        CHECK(m.contains("counters"));
        CHECK(m.at("stage") == stage);
        for (const auto& [file, digest] : m.at("outputs").items()) {
            CHECK(digest.get<std::string>().size() == 16);
            // The recorded digest matches the file on disk.
            CHECK(hash_file(cfg.out / file) == digest.get<std::string>());
        }
    }
}

TEST_CASE("a second invocation skips every stage and rewrites nothing") {
    TempDir tmp;
    const PipelineConfig cfg = small_cfg(tmp.path / "run");
    run_pipeline(cfg);

    std::map<std::string, std::string> before;
    for (const auto& name : kRunFiles) before[name] = read_file(cfg.out / name);

    const PipelineResult again = run_pipeline(cfg);
    for (const auto& s : again.stages) {
        CAPTURE(s.stage);
        CHECK(s.skipped);
    }
    for (const auto& name : kRunFiles) {
        CAPTURE(name);
        CHECK(read_file(cfg.out / name) == before[name]);
    }

    // Deleting a mid-pipeline artifact triggers exactly that stage again and
    // reproduces the bytes.
    fs::remove(cfg.out / "group_pairs.jsonl");
    fs::remove(cfg.out / "mc.manifest.json");
    const PipelineResult third = run_pipeline(cfg);
    CHECK(third.stages[3].stage == "mc");
    CHECK_FALSE(third.stages[3].skipped);
    CHECK(third.stages[2].skipped);  // prefs untouched
    CHECK(third.stages[5].skipped);  // train outputs still present
    CHECK(read_file(cfg.out / "group_pairs.jsonl") == before["group_pairs.jsonl"]);
    CHECK(read_file(cfg.out / "mc.manifest.json") == before["mc.manifest.json"]);
}

TEST_CASE("two directories with the same settings agree byte for byte") {
    TempDir tmp;
    PipelineConfig a = small_cfg(tmp.path / "a");
    PipelineConfig b = small_cfg(tmp.path / "b");
    run_pipeline(a);
    run_pipeline(b);
    for (const auto& name : kRunFiles) {
        if (name == "resolved_config.json") continue;  // embeds the out path
        CAPTURE(name);
        CHECK(read_file(a.out / name) == read_file(b.out / name));
    }
}

TEST_CASE("stages demand their inputs by name") {
    auto expect_missing = [](auto stage_fn, const PipelineConfig& cfg,
                             const std::string& needle) {
        try {
            stage_fn(cfg);
            FAIL_CHECK("expected IoError mentioning " << needle);
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };

    {
        TempDir tmp;
        expect_missing(stage_bc, small_cfg(tmp.path / "r"), "expert.jsonl");
    }
    {
        TempDir tmp;
        expect_missing(stage_mc, small_cfg(tmp.path / "r"),
                       "group_candidates.jsonl");
    }
    {
        TempDir tmp;
        const PipelineConfig cfg = small_cfg(tmp.path / "r");
        stage_expert(cfg);
        stage_bc(cfg);
        expect_missing(stage_train, cfg, "traj_pairs.jsonl");
    }
    {
        TempDir tmp;
        expect_missing(stage_eval, small_cfg(tmp.path / "r"), "hpl_policy.json");
    }
}

TEST_CASE("the segmenter endpoint override reroutes group generation") {
    // A server that answers every request with one span covering the whole
    // demonstration.
    httplib::Server server;
    std::atomic<int> hits{0};
    server.Post("/segment", [&](const httplib::Request& req,
                                httplib::Response& res) {
        ++hits;
        const int n = nlohmann::json::parse(req.body).at("num_actions").get<int>();
        res.set_content("[[0, " + std::to_string(n - 1) + "]]",
                        "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread worker([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    const std::string url =
        "http://127.0.0.1:" + std::to_string(port) + "/segment";

    TempDir tmp;
    const PipelineConfig cfg = small_cfg(tmp.path / "r");
    stage_expert(cfg);
    stage_bc(cfg);
    {
        EnvGuard env("HPL_SEGMENTER_URL", url);
        stage_prefs(cfg);  // config says oracle; the variable wins
    }
    server.stop();
    worker.join();
    CHECK(hits > 0);

    const nlohmann::json manifest = read_json(cfg.out / "prefs.manifest.json");
    CHECK(manifest.at("params").at("provider") == "http");
    CHECK(manifest.at("params").at("endpoint") == url);

    // Whole-demo spans: every group candidate spans all 18 expert steps.
    const auto rows = read_jsonl(cfg.out / "group_candidates.jsonl");
    REQUIRE(!rows.empty());
    for (const auto& row : rows) {
        const GroupPair c = group_pair_from_json(row);
        CHECK(c.context.empty());  // the single span starts at step 0
        CHECK(c.length == 18);
        CHECK(c.winner.steps.size() == 18);
    }
}

TEST_CASE("a dead endpoint falls back to the oracle segmentation") {
    TempDir tmp;
    const PipelineConfig oracle_run = small_cfg(tmp.path / "oracle");
    stage_expert(oracle_run);
    stage_bc(oracle_run);
    stage_prefs(oracle_run);

    const PipelineConfig http_run = small_cfg(tmp.path / "http");
    stage_expert(http_run);
    stage_bc(http_run);
    {
        // Port 9 (discard) refuses connections; fallback_to_oracle defaults on.
        EnvGuard env("HPL_SEGMENTER_URL", "http://127.0.0.1:9/segment");
        stage_prefs(http_run);
    }
    CHECK(read_file(http_run.out / "group_candidates.jsonl") ==
          read_file(oracle_run.out / "group_candidates.jsonl"));

    // With the fallback disabled the transport failure surfaces.
    PipelineConfig strict = small_cfg(tmp.path / "strict");
    strict.segmenter.fallback_to_oracle = false;
    stage_expert(strict);
    stage_bc(strict);
    {
        EnvGuard env("HPL_SEGMENTER_URL", "http://127.0.0.1:9/segment");
        CHECK_THROWS_AS(stage_prefs(strict), TransportError);
    }
}

TEST_CASE("cross-run reports cover phases, buckets, and ablations") {
    TempDir tmp;
    PipelineConfig a = small_cfg(tmp.path / "a", 3);
    a.label = "alpha_run";
    PipelineConfig b = small_cfg(tmp.path / "b", 4);
    b.label = "beta_run";
    b.dpo.curriculum = CurriculumMode::all_at_once;
    b.dpo.include_traj = false;
    run_pipeline(a);
    run_pipeline(b);

    const ReportBundle bundle = build_report({a.out, b.out});
    CHECK(bundle.missing.empty());
    CHECK(bundle.phase_csv.rfind("run,label,seed,phase,mean_outcome,success_rate\n",
                                 0) == 0);
    CHECK(bundle.census_csv.rfind("run,label,length_level,difficulty_level,count\n",
                                  0) == 0);
    CHECK(bundle.ablation_csv.rfind(
              "run,label,curriculum,components,mean_outcome,success_rate\n", 0) ==
          0);
    CHECK(std::count(bundle.phase_csv.begin(), bundle.phase_csv.end(), '\n') ==
          1 + 2 * 3);
    CHECK(std::count(bundle.census_csv.begin(), bundle.census_csv.end(), '\n') ==
          1 + 2 * 9);
    CHECK(std::count(bundle.ablation_csv.begin(), bundle.ablation_csv.end(),
                     '\n') == 1 + 2);
    CHECK(bundle.ablation_csv.find("alpha_run,staged,bc+traj+step+group") !=
          std::string::npos);
    CHECK(bundle.ablation_csv.find("beta_run,static,bc+step+group") !=
          std::string::npos);

    // A missing artifact is reported instead of silently dropped.
    fs::remove(b.out / "eval.json");
    const ReportBundle broken = build_report({a.out, b.out});
    REQUIRE(broken.missing.size() == 1);
    CHECK(broken.missing[0] == (b.out / "eval.json").string());
    CHECK(broken.phase_csv.empty());
}

TEST_CASE("the command line tool guards its exit codes") {
    TempDir tmp;
    const fs::path cfg_file = tmp.path / "run.json";
    write_json(cfg_file, nlohmann::json{{"label", "cli"},
                                        {"num_tasks", 4},
                                        {"mc_samples", 4},
                                        {"eval_episodes", 4},
                                        {"dpo", {{"phase_epochs", {2, 2, 2}}}},
                                        {"seed", 11},
                                        {"out", "run"}});

    CHECK(run_cli("") == 2);            // a subcommand is required
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("pipeline --help") == 0);
    CHECK(run_cli("frobnicate") == 2);  // unknown subcommand
    CHECK(run_cli("pipeline --config " + (tmp.path / "nope.json").string()) == 2);

    write_json(tmp.path / "bad.json", nlohmann::json{{"oops", 1}});
    CHECK(run_cli("pipeline --config " + (tmp.path / "bad.json").string()) == 2);

    CHECK(run_cli("pipeline --config " + cfg_file.string()) == 0);
    CHECK(fs::exists(tmp.path / "run" / "eval.json"));

    // Stage subcommands reuse finished outputs.
    CHECK(run_cli("expert --config " + cfg_file.string()) == 0);

    // A seed override lands in the resolved configuration of a fresh run.
    CHECK(run_cli("pipeline --config " + cfg_file.string() + " --seed 5 --out " +
                  (tmp.path / "seeded").string()) == 0);
    CHECK(read_json(tmp.path / "seeded" / "resolved_config.json").at("seed") == 5);

    // Evaluating an explicit policy file.
    CHECK(run_cli("eval --config " + cfg_file.string() + " --policy " +
                  (tmp.path / "run" / "ref_policy.json").string()) == 0);

    // Reports from finished runs; an empty directory is an error.
    CHECK(run_cli("report " + (tmp.path / "run").string() + " --out " +
                  (tmp.path / "rep").string()) == 0);
    CHECK(fs::exists(tmp.path / "rep" / "phase_success.csv"));
    CHECK(fs::exists(tmp.path / "rep" / "bucket_census.csv"));
    CHECK(fs::exists(tmp.path / "rep" / "ablation.csv"));
    fs::create_directories(tmp.path / "empty");
    CHECK(run_cli("report " + (tmp.path / "empty").string() + " --out " +
                  (tmp.path / "rep2").string()) == 2);
}
