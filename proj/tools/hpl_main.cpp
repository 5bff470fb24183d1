#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hpl/analysis.hpp"
#include "hpl/errors.hpp"
#include "hpl/io.hpp"
#include "hpl/pipeline.hpp"
#include "hpl/rng.hpp"

namespace {

struct GlobalOptions {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int workers = 0;
    std::string out;
};

hpl::PipelineConfig resolve_config(const GlobalOptions& g) {
    hpl::PipelineConfig cfg;
    if (!g.config_path.empty()) {
        const std::filesystem::path path(g.config_path);
        cfg = hpl::pipeline_config_from_json(
            hpl::read_json(path),
            path.has_parent_path() ? path.parent_path()
                                   : std::filesystem::path("."));
    } else {
        cfg = hpl::default_pipeline_config();
    }
    if (g.seed_set) {
        cfg.seed = g.seed;
        cfg.dpo.seed = g.seed;
    }
    if (g.workers > 0) cfg.workers = g.workers;
    if (!g.out.empty()) cfg.out = g.out;
    cfg.validate();
    return cfg;
}

void print_stage(const hpl::StageOutcome& s) {
    nlohmann::json j{{"stage", s.stage},
                     {"skipped", s.skipped},
                     {"outputs", s.outputs}};
    std::cout << j.dump() << "\n";
}

void add_global_flags(CLI::App* cmd, GlobalOptions& g) {
    cmd->add_option("--config", g.config_path, "Run configuration JSON file");
    cmd->add_option("--seed", g.seed, "Root seed override")
        ->each([&g](const std::string&) { g.seed_set = true; });
    cmd->add_option("--workers", g.workers, "Worker thread override");
    cmd->add_option("--out", g.out, "Output directory override");
}

int run_guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const hpl::UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const hpl::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const hpl::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "Desk-scale laboratory for hierarchical preference learning on "
        "synthetic chain tasks"};
    app.require_subcommand(1);

    GlobalOptions g;
    std::function<int()> action;

    auto add_stage_cmd = [&](const char* name, const char* help,
                             hpl::StageOutcome (*stage)(const hpl::PipelineConfig&)) {
        CLI::App* cmd = app.add_subcommand(name, help);
        add_global_flags(cmd, g);
        cmd->callback([&action, &g, stage] {
            action = [&g, stage] {
                print_stage(stage(resolve_config(g)));
                return 0;
            };
        });
        return cmd;
    };

    add_stage_cmd("expert", "Write the expert demonstration dataset",
                  &hpl::stage_expert);
    add_stage_cmd("bc", "Clone the expert and freeze the reference policy",
                  &hpl::stage_bc);
    add_stage_cmd("prefs",
                  "Generate trajectory/step pairs and group candidates",
                  &hpl::stage_prefs);
    add_stage_cmd("mc", "Score group candidates with Monte-Carlo outcomes",
                  &hpl::stage_mc);
    add_stage_cmd("bucket", "Assign scored pairs to curriculum buckets",
                  &hpl::stage_bucket);
    add_stage_cmd("train", "Run three-phase preference training",
                  &hpl::stage_train);

    {
        CLI::App* cmd = app.add_subcommand(
            "eval", "Greedy evaluation of the trained (or a given) policy");
        add_global_flags(cmd, g);
        auto policy_path = std::make_shared<std::string>();
        cmd->add_option("--policy", *policy_path,
                        "Evaluate this policy file instead of the run's output");
        cmd->callback([&action, &g, policy_path] {
            action = [&g, policy_path] {
                const hpl::PipelineConfig cfg = resolve_config(g);
                if (!policy_path->empty()) {
                    const hpl::PolicyParams p = hpl::load_policy(*policy_path);
                    const hpl::EvalSummary s = hpl::evaluate_policy(
                        cfg.env, p, cfg.eval_episodes,
                        hpl::derive_seed(cfg.seed, {"eval"}));
                    std::cout << hpl::eval_summary_to_json(s).dump(2) << "\n";
                    return 0;
                }
                print_stage(hpl::stage_eval(cfg));
                std::cout << hpl::read_text(cfg.out / "eval.json");
                return 0;
            };
        });
    }

    {
        CLI::App* cmd = app.add_subcommand(
            "pipeline", "Run every stage from demonstrations to evaluation");
        add_global_flags(cmd, g);
        cmd->callback([&action, &g] {
            action = [&g] {
                const hpl::PipelineConfig cfg = resolve_config(g);
                const hpl::PipelineResult result = hpl::run_pipeline(cfg);
                for (const auto& s : result.stages) print_stage(s);
                std::cout << hpl::eval_summary_to_json(result.eval).dump(2)
                          << "\n";
                return 0;
            };
        });
    }

    {
        CLI::App* cmd = app.add_subcommand(
            "biasvar",
            "Estimator bias/variance study on the enumerable chain");
        auto grid = std::make_shared<hpl::BiasVarGridConfig>();
        auto out_dir = std::make_shared<std::string>("biasvar");
        cmd->add_option("--gamma", grid->gammas, "Discount grid");
        cmd->add_option("--horizon", grid->horizons, "Horizon grid");
        cmd->add_option("--k", grid->ks, "Group length grid");
        cmd->add_option("--pairs", grid->dataset_size,
                        "Preference pairs per replication (N)");
        cmd->add_option("--replications", grid->replications,
                        "Replicated datasets per estimate (R)");
        cmd->add_option("--beta", grid->beta, "Preference temperature");
        cmd->add_option("--noise", grid->noise_scale,
                        "Winner-policy logit noise scale");
        cmd->add_option("--var-slack", grid->var_slack,
                        "Allowed excess over the k/T variance ratio");
        cmd->add_option("--seed", grid->seed, "Root seed");
        cmd->add_option("--workers", grid->workers, "Worker threads");
        cmd->add_option("--out", *out_dir, "Output directory");
        cmd->callback([&action, grid, out_dir] {
            action = [grid, out_dir] {
                if (grid->gammas.empty() || grid->horizons.empty() ||
                    grid->ks.empty())
                    throw hpl::UsageError("biasvar: empty grid");
                if (grid->workers < 1) grid->workers = 1;
                const hpl::BiasVarReport report = hpl::run_biasvar_grid(*grid);
                const std::filesystem::path dir(*out_dir);
                hpl::write_text(dir / "biasvar.csv", hpl::biasvar_csv(report));
                const nlohmann::json verdicts = hpl::biasvar_verdicts(report);
                hpl::write_json(dir / "biasvar.json", verdicts);
                std::cout << verdicts.dump(2) << "\n";
                return report.all_ok ? 0 : 1;
            };
        });
    }

    {
        CLI::App* cmd = app.add_subcommand(
            "report", "Cross-run phase, bucket-census, and ablation tables");
        auto dirs = std::make_shared<std::vector<std::string>>();
        auto out_dir = std::make_shared<std::string>("report");
        cmd->add_option("runs", *dirs, "Run directories")->required();
        cmd->add_option("--out", *out_dir, "Output directory");
        cmd->callback([&action, dirs, out_dir] {
            action = [dirs, out_dir] {
                std::vector<std::filesystem::path> paths(dirs->begin(),
                                                         dirs->end());
                const hpl::ReportBundle bundle = hpl::build_report(paths);
                if (!bundle.missing.empty()) {
                    std::cerr << "error: missing artifacts:\n";
                    for (const auto& m : bundle.missing)
                        std::cerr << "  " << m << "\n";
                    return 2;
                }
                const std::filesystem::path dir(*out_dir);
                hpl::write_text(dir / "phase_success.csv", bundle.phase_csv);
                hpl::write_text(dir / "bucket_census.csv", bundle.census_csv);
                hpl::write_text(dir / "ablation.csv", bundle.ablation_csv);
                std::cout << "wrote " << (dir / "phase_success.csv").string()
                          << ", " << (dir / "bucket_census.csv").string() << ", "
                          << (dir / "ablation.csv").string() << "\n";
                return 0;
            };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    return run_guarded(action);
}
