#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpl/curriculum.hpp"
#include "hpl/dpo.hpp"
#include "hpl/env.hpp"
#include "hpl/policy.hpp"
#include "hpl/prefgen.hpp"

namespace hpl {

/// Segmentation settings for group-pair generation.
struct SegmenterConfig {
    SegStrategy strategy = SegStrategy::semantic;
    std::string provider = "oracle";  ///< "oracle" or "http"
    int fixed_n = 3;
    int fixed_k = 3;
    std::optional<double> entropy_threshold;  ///< calibrated when unset
    double entropy_quantile = 0.8;
    std::string endpoint;  ///< http provider target
    bool fallback_to_oracle = true;
};

struct BcConfig {
    double learning_rate = 0.5;
    int epochs = 4;
};

/// One experiment run, file-first: parsed from a JSON document, resolved
/// into an immutable copy stored next to the outputs.
struct PipelineConfig {
    EnvConfig env;
    std::string label = "run";
    int num_tasks = 24;
    SegmenterConfig segmenter;
    int mc_samples = 8;
    bool step_mc_filter = false;
    int step_rejection_budget = 32;
    CurriculumThresholds thresholds;
    BcConfig bc;
    DpoConfig dpo;
    int eval_episodes = 8;
    std::uint64_t seed = 0;
    int workers = 1;
    std::filesystem::path out = "run";

    void validate() const;
};

/// The standard desk environment: 4 sub-tasks of lengths 2, 5, 3, 8 over 6
/// actions, horizon 24. The mixed lengths spread oracle-segmented groups
/// across all three length levels of the curriculum matrix.
EnvConfig desk_env_config();

/// Desk environment plus the tuned default hyperparameters.
PipelineConfig default_pipeline_config();

/// Parses a config document. Relative paths resolve against base_dir;
/// unknown keys are rejected. When "env" is a string it names a config file;
/// when an object, a chain is built from it; when absent the desk default is
/// used.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j,
                                         const std::filesystem::path& base_dir);
nlohmann::json pipeline_config_to_json(const PipelineConfig& cfg);

struct EvalSummary {
    int episodes = 0;
    double mean_outcome = 0.0;
    double success_rate = 0.0;
    /// Fraction of episodes that finished each sub-task, keyed by name.
    std::map<std::string, double> per_subtask;
    std::uint64_t seed = 0;
};

/// Greedy (argmax) evaluation of a policy.
EvalSummary evaluate_policy(const EnvConfig& cfg, const PolicyParams& policy,
                            int episodes, std::uint64_t seed);
nlohmann::json eval_summary_to_json(const EvalSummary& s);
EvalSummary eval_summary_from_json(const nlohmann::json& j);

struct StageOutcome {
    std::string stage;
    bool skipped = false;  ///< outputs already present, nothing recomputed
    std::vector<std::string> outputs;
};

/// Pipeline stages. Each reads its inputs from the run directory, writes its
/// outputs plus a manifest with content hashes, and skips itself when every
/// output already exists. Stages are deterministic in (inputs, config), so a
/// re-run reproduces files byte for byte.
StageOutcome stage_expert(const PipelineConfig& cfg);
StageOutcome stage_bc(const PipelineConfig& cfg);
StageOutcome stage_prefs(const PipelineConfig& cfg);
StageOutcome stage_mc(const PipelineConfig& cfg);
StageOutcome stage_bucket(const PipelineConfig& cfg);
StageOutcome stage_train(const PipelineConfig& cfg);
StageOutcome stage_eval(const PipelineConfig& cfg);

struct PipelineResult {
    std::vector<StageOutcome> stages;
    EvalSummary eval;
};

/// expert -> cloning -> preference pairs -> Monte-Carlo scoring ->
/// bucketing -> staged training -> greedy evaluation.
PipelineResult run_pipeline(const PipelineConfig& cfg);

/// Cross-run tables: per-phase evaluation of the snapshot policies, bucket
/// census, and a per-run ablation summary. `missing` lists required
/// artifacts that were absent; the tables cover only complete runs.
struct ReportBundle {
    std::string phase_csv;
    std::string census_csv;
    std::string ablation_csv;
    std::vector<std::string> missing;
};

ReportBundle build_report(const std::vector<std::filesystem::path>& run_dirs);

} // namespace hpl
