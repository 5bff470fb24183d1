#include "hpl/prefgen.hpp"

#include <algorithm>
#include <cmath>

#include "hpl/errors.hpp"
#include "hpl/parallel.hpp"
#include "hpl/rng.hpp"

namespace hpl {

std::string to_string(SegStrategy s) {
    switch (s) {
        case SegStrategy::fixed_n: return "fixed_n";
        case SegStrategy::fixed_k: return "fixed_k";
        case SegStrategy::uncertainty: return "uncertainty";
        case SegStrategy::semantic: return "semantic";
    }
    throw UsageError("unknown segmentation strategy");
}

SegStrategy seg_strategy_from_string(const std::string& s) {
    if (s == "fixed_n") return SegStrategy::fixed_n;
    if (s == "fixed_k") return SegStrategy::fixed_k;
    if (s == "uncertainty") return SegStrategy::uncertainty;
    if (s == "semantic") return SegStrategy::semantic;
    throw ConfigError("unknown segmentation strategy '" + s + "'");
}

// ---------------------------------------------------------------------------
// Pair generation
// ---------------------------------------------------------------------------

std::vector<TrajPair> gen_traj_pairs(const std::vector<Trajectory>& expert,
                                     const PolicyParams& ref, const EnvConfig& cfg,
                                     std::uint64_t seed, PrefCounters* counters) {
    std::vector<TrajPair> out;
    for (const auto& demo : expert) {
        const auto roll = sample_rollout(ref, cfg, env_reset(cfg, 0), cfg.horizon,
                                         derive_seed(seed, {"prefs.traj", demo.task_id}));
        const double outcome = outcome_of(cfg, roll.final_state);
        if (outcome < demo.outcome_reward) {
            Trajectory loser;
            loser.task_id = demo.task_id;
            loser.instruction = demo.instruction;
            loser.steps = roll.steps;
            loser.outcome_reward = outcome;
            out.push_back(TrajPair{demo.task_id, demo.instruction, demo, std::move(loser)});
        } else if (counters) {
            ++counters->traj_filtered;
        }
    }
    return out;
}

std::vector<StepPair> gen_step_pairs(const std::vector<Trajectory>& expert,
                                     const PolicyParams& ref, const EnvConfig& cfg,
                                     std::uint64_t seed, const StepPairOptions& opts,
                                     PrefCounters* counters) {
    if (opts.rejection_budget < 1)
        throw UsageError("gen_step_pairs: rejection budget must be positive");
    std::vector<StepPair> out;
    for (const auto& demo : expert) {
        EnvState state = env_reset(cfg, 0);
        for (int t = 0; t < static_cast<int>(demo.steps.size()); ++t) {
            const int s_t = demo.steps[t].obs;
            const int expert_action = demo.steps[t].action;
            Rng rng(derive_seed(seed, {"prefs.step", demo.task_id, std::to_string(t)}));

            // Sample an alternative first action by rejection.
            const Eigen::VectorXd probs = state_probs(ref, s_t);
            std::vector<double> pv(probs.data(), probs.data() + probs.size());
            int alt = -1;
            for (int attempt = 0; attempt < opts.rejection_budget; ++attempt) {
                const int cand = rng.categorical(pv);
                if (cand != expert_action) {
                    alt = cand;
                    break;
                }
            }
            if (alt < 0) {
                if (counters) ++counters->step_skipped;
                state = env_step(cfg, state, expert_action).state;
                continue;
            }

            auto sample_counterfactual = [&](std::uint64_t roll_seed) {
                std::vector<TrajStep> steps;
                auto [after, reward] = env_step(cfg, state, alt);
                steps.push_back(TrajStep{s_t, alt, reward});
                auto roll = sample_rollout(ref, cfg, after, cfg.horizon, roll_seed);
                steps.insert(steps.end(), roll.steps.begin(), roll.steps.end());
                return std::pair{std::move(steps), roll.final_state};
            };

            auto [loser_steps, final_state] = sample_counterfactual(
                derive_seed(seed, {"prefs.step", demo.task_id, std::to_string(t), "roll"}));
            bool keep = outcome_of(cfg, final_state) < demo.outcome_reward;
            if (keep && opts.mc_filter) {
                double acc = 0.0;
                for (int m = 0; m < opts.mc_samples; ++m) {
                    auto [ignored, st] = sample_counterfactual(derive_seed(
                        seed, {"prefs.step", demo.task_id, std::to_string(t), "mc",
                               std::to_string(m)}));
                    acc += outcome_of(cfg, st);
                }
                keep = demo.outcome_reward > acc / opts.mc_samples;
            }
            if (keep) {
                StepPair p;
                p.task_id = demo.task_id;
                p.t = t;
                p.prefix.assign(demo.steps.begin(), demo.steps.begin() + t);
                p.winner_suffix.assign(demo.steps.begin() + t, demo.steps.end());
                p.loser_suffix = std::move(loser_steps);
                out.push_back(std::move(p));
            } else if (counters) {
                ++counters->step_filtered;
            }
            state = env_step(cfg, state, expert_action).state;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Segmentation strategies
// ---------------------------------------------------------------------------

namespace {

void require_nonempty(const Trajectory& traj) {
    if (traj.steps.empty())
        throw UsageError("cannot segment an empty trajectory");
}

} // namespace

Segmentation segment_fixed_n(const Trajectory& traj, int n) {
    require_nonempty(traj);
    const int len = static_cast<int>(traj.steps.size());
    if (n < 1 || n > len)
        throw UsageError("segment_fixed_n: need 1 <= N <= trajectory length");
    const int base = len / n;
    const int extra = len % n;
    Segmentation seg{SegStrategy::fixed_n, {}};
    int start = 0;
    for (int i = 0; i < n; ++i) {
        const int size = base + (i < extra ? 1 : 0);
        seg.spans.push_back(Span{start, start + size - 1});
        start += size;
    }
    return seg;
}

Segmentation segment_fixed_k(const Trajectory& traj, int k) {
    require_nonempty(traj);
    if (k < 1) throw UsageError("segment_fixed_k: K must be positive");
    const int len = static_cast<int>(traj.steps.size());
    Segmentation seg{SegStrategy::fixed_k, {}};
    for (int start = 0; start < len; start += k)
        seg.spans.push_back(Span{start, std::min(start + k, len) - 1});
    return seg;
}

Segmentation segment_uncertainty(const Trajectory& traj, const PolicyParams& ref,
                                 double entropy_threshold) {
    require_nonempty(traj);
    const int len = static_cast<int>(traj.steps.size());
    Segmentation seg{SegStrategy::uncertainty, {}};
    int start = 0;
    for (int t = 1; t < len; ++t) {
        if (state_entropy(ref, traj.steps[t].obs) > entropy_threshold) {
            seg.spans.push_back(Span{start, t - 1});
            start = t;
        }
    }
    seg.spans.push_back(Span{start, len - 1});
    return seg;
}

double calibrate_entropy_threshold(const std::vector<Trajectory>& trajs,
                                   const PolicyParams& ref, double quantile) {
    if (!(quantile > 0.0 && quantile <= 1.0))
        throw UsageError("calibrate_entropy_threshold: quantile must lie in (0, 1]");
    std::vector<double> entropies;
    for (const auto& t : trajs)
        for (const auto& s : t.steps) entropies.push_back(state_entropy(ref, s.obs));
    if (entropies.empty())
        throw UsageError("calibrate_entropy_threshold: no steps to calibrate on");
    std::sort(entropies.begin(), entropies.end());
    const auto n = static_cast<double>(entropies.size());
    auto rank = static_cast<std::size_t>(std::ceil(quantile * n));  // 1-based
    if (rank < 1) rank = 1;
    return entropies[rank - 1];
}

// ---------------------------------------------------------------------------
// Semantic segmentation
// ---------------------------------------------------------------------------

std::string OracleSegmenter::segment_raw(const Trajectory& traj) {
    if (!traj.subtask_boundaries)
        throw UsageError("oracle segmenter: trajectory has no recorded boundaries");
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& sp : *traj.subtask_boundaries) arr.push_back({sp[0], sp[1]});
    return arr.dump();
}

std::vector<Span> parse_segmenter_response(const std::string& raw, int num_actions) {
    if (num_actions < 1)
        throw UsageError("parse_segmenter_response: need at least one action");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("segmenter response is not valid JSON: ") + e.what(),
                              raw);
    }
    if (!j.is_array())
        throw ValidationError("segmenter response is not a JSON array", raw);
    if (j.empty())
        throw ValidationError("segmenter response is empty; index 0 uncovered", raw);

    std::vector<Span> spans;
    int expected_start = 0;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& el = j.at(i);
        if (!el.is_array() || el.size() != 2)
            throw ValidationError("group " + std::to_string(i) +
                                      " is not a [start, end] pair",
                                  raw);
        if (!el.at(0).is_number_integer() || !el.at(1).is_number_integer())
            throw ValidationError("group " + std::to_string(i) +
                                      " has non-integer bounds",
                                  raw);
        const int start = el.at(0).get<int>();
        const int end = el.at(1).get<int>();
        if (start > end)
            throw ValidationError("group " + std::to_string(i) + " has start " +
                                      std::to_string(start) + " after end " +
                                      std::to_string(end),
                                  raw);
        if (start < 0 || end > num_actions - 1)
            throw ValidationError("group " + std::to_string(i) + " [" +
                                      std::to_string(start) + ", " + std::to_string(end) +
                                      "] falls outside 0.." + std::to_string(num_actions - 1),
                                  raw);
        if (start > expected_start)
            throw ValidationError("index " + std::to_string(expected_start) +
                                      " uncovered (group " + std::to_string(i) +
                                      " starts at " + std::to_string(start) + ")",
                                  raw);
        if (start < expected_start)
            throw ValidationError("index " + std::to_string(start) +
                                      " covered twice (group " + std::to_string(i) +
                                      " overlaps its predecessor)",
                                  raw);
        spans.push_back(Span{start, end});
        expected_start = end + 1;
    }
    if (expected_start != num_actions)
        throw ValidationError("index " + std::to_string(expected_start) +
                                  " uncovered (last group ends at " +
                                  std::to_string(expected_start - 1) + ")",
                              raw);
    return spans;
}

Segmentation segment_semantic(const Trajectory& traj, SegmenterProvider& provider) {
    require_nonempty(traj);
    const std::string raw = provider.segment_raw(traj);
    return Segmentation{SegStrategy::semantic,
                        parse_segmenter_response(raw, static_cast<int>(traj.steps.size()))};
}

// ---------------------------------------------------------------------------
// Group generation and Monte-Carlo scoring
// ---------------------------------------------------------------------------

double estimate_group_reward(const EnvConfig& cfg, const PolicyParams& ref,
                             std::span<const TrajStep> context,
                             std::span<const TrajStep> group, int mc_samples,
                             std::uint64_t seed) {
    if (mc_samples < 1)
        throw UsageError("estimate_group_reward: need at least one sample");
    EnvState state = replay_prefix(cfg, context);
    state = replay_from(cfg, state, group);
    if (state.done) return outcome_of(cfg, state);
    double acc = 0.0;
    for (int m = 0; m < mc_samples; ++m) {
        const auto roll = sample_rollout(ref, cfg, state, cfg.horizon,
                                         derive_seed(seed, {"mc", std::to_string(m)}));
        acc += outcome_of(cfg, roll.final_state);
    }
    return acc / mc_samples;
}

namespace {

Segmentation segment_with(const Trajectory& demo, const PolicyParams& ref,
                          const SegmenterOptions& opts, double calibrated_threshold,
                          PrefCounters* counters) {
    switch (opts.strategy) {
        case SegStrategy::fixed_n: {
            const int len = static_cast<int>(demo.steps.size());
            return segment_fixed_n(demo, std::min(opts.fixed_n, len));
        }
        case SegStrategy::fixed_k:
            return segment_fixed_k(demo, opts.fixed_k);
        case SegStrategy::uncertainty:
            return segment_uncertainty(demo, ref, calibrated_threshold);
        case SegStrategy::semantic: {
            static OracleSegmenter oracle;
            SegmenterProvider* provider =
                opts.provider ? opts.provider.get() : static_cast<SegmenterProvider*>(&oracle);
            try {
                return segment_semantic(demo, *provider);
            } catch (const ValidationError&) {
                if (!opts.fallback_to_oracle) throw;
            } catch (const TransportError&) {
                if (!opts.fallback_to_oracle) throw;
            }
            if (counters) ++counters->fallback_events;
            return segment_semantic(demo, oracle);
        }
    }
    throw UsageError("unknown segmentation strategy");
}

} // namespace

std::vector<GroupPair> gen_group_candidates(const std::vector<Trajectory>& expert,
                                            const PolicyParams& ref,
                                            const EnvConfig& cfg,
                                            const SegmenterOptions& seg,
                                            std::uint64_t seed,
                                            PrefCounters* counters) {
    double threshold = seg.entropy_threshold.value_or(0.0);
    if (seg.strategy == SegStrategy::uncertainty && !seg.entropy_threshold)
        threshold = calibrate_entropy_threshold(expert, ref, seg.quantile);

    std::vector<GroupPair> out;
    for (const auto& demo : expert) {
        const Segmentation segmentation = segment_with(demo, ref, seg, threshold, counters);
        for (const auto& span : segmentation.spans) {
            const int start = span[0];
            const int k_len = span[1] - span[0] + 1;
            GroupPair pair;
            pair.task_id = demo.task_id;
            pair.context.assign(demo.steps.begin(), demo.steps.begin() + start);
            pair.winner.steps.assign(demo.steps.begin() + start,
                                     demo.steps.begin() + span[1] + 1);
            pair.winner.span = span;
            pair.winner.origin = "expert";
            pair.length = k_len;

            const EnvState ctx_state = replay_prefix(cfg, pair.context);
            const auto roll = sample_rollout(
                ref, cfg, ctx_state, k_len,
                derive_seed(seed, {"prefs.group", demo.task_id, std::to_string(start),
                                   "loser"}));
            if (static_cast<int>(roll.steps.size()) < k_len) {
                if (counters) ++counters->loser_short_skips;
                continue;
            }
            pair.loser.steps = roll.steps;
            pair.loser.origin = "sampled";
            out.push_back(std::move(pair));
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const GroupPair& a, const GroupPair& b) {
        const int sa = a.winner.span ? (*a.winner.span)[0] : 0;
        const int sb = b.winner.span ? (*b.winner.span)[0] : 0;
        return std::tie(a.task_id, sa) < std::tie(b.task_id, sb);
    });
    return out;
}

std::vector<GroupPair> mc_score_groups(std::vector<GroupPair> candidates,
                                       const PolicyParams& ref, const EnvConfig& cfg,
                                       int mc_samples, std::uint64_t seed,
                                       PrefCounters* counters, int workers) {
    const int n = static_cast<int>(candidates.size());
    parallel_for(n, workers, [&](int i) {
        GroupPair& p = candidates[static_cast<std::size_t>(i)];
        const std::string start =
            std::to_string(p.winner.span ? (*p.winner.span)[0] : 0);
        p.winner.r_hat = estimate_group_reward(
            cfg, ref, p.context, p.winner.steps, mc_samples,
            derive_seed(seed, {"mc.group", p.task_id, start, "w"}));
        p.loser.r_hat = estimate_group_reward(
            cfg, ref, p.context, p.loser.steps, mc_samples,
            derive_seed(seed, {"mc.group", p.task_id, start, "l"}));
        p.delta_r = *p.winner.r_hat - *p.loser.r_hat;
    });
    std::vector<GroupPair> kept;
    kept.reserve(candidates.size());
    for (auto& p : candidates) {
        if (p.delta_r && *p.delta_r > 0.0) {
            kept.push_back(std::move(p));
        } else if (counters) {
            ++counters->non_positive_delta;
        }
    }
    return kept;
}

std::vector<GroupPair> gen_group_pairs(const std::vector<Trajectory>& expert,
                                       const PolicyParams& ref, const EnvConfig& cfg,
                                       const SegmenterOptions& seg, int mc_samples,
                                       std::uint64_t seed, PrefCounters* counters,
                                       int workers) {
    auto candidates = gen_group_candidates(expert, ref, cfg, seg, seed, counters);
    return mc_score_groups(std::move(candidates), ref, cfg, mc_samples, seed, counters,
                           workers);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

nlohmann::json steps_to_json(const std::vector<TrajStep>& steps) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : steps)
        arr.push_back({{"obs", s.obs}, {"action", s.action}, {"reward", s.reward}});
    return arr;
}

std::vector<TrajStep> steps_from_json(const nlohmann::json& arr) {
    std::vector<TrajStep> steps;
    for (const auto& s : arr)
        steps.push_back(TrajStep{s.at("obs").get<int>(), s.at("action").get<int>(),
                                 s.at("reward").get<double>()});
    return steps;
}

nlohmann::json group_to_json(const ActionGroup& g) {
    nlohmann::json j{{"origin", g.origin}, {"steps", steps_to_json(g.steps)}};
    if (g.span) j["span"] = {(*g.span)[0], (*g.span)[1]};
    if (g.r_hat) j["r_hat"] = *g.r_hat;
    return j;
}

ActionGroup group_from_json(const nlohmann::json& j) {
    ActionGroup g;
    g.origin = j.at("origin").get<std::string>();
    g.steps = steps_from_json(j.at("steps"));
    if (j.contains("span"))
        g.span = Span{j.at("span").at(0).get<int>(), j.at("span").at(1).get<int>()};
    if (j.contains("r_hat")) g.r_hat = j.at("r_hat").get<double>();
    return g;
}

} // namespace

nlohmann::json traj_pair_to_json(const TrajPair& p) {
    return nlohmann::json{{"task_id", p.task_id},
                          {"instruction", p.instruction},
                          {"winner", trajectory_to_json(p.winner)},
                          {"loser", trajectory_to_json(p.loser)}};
}

TrajPair traj_pair_from_json(const nlohmann::json& j) {
    TrajPair p;
    p.task_id = j.at("task_id").get<std::string>();
    p.instruction = j.at("instruction").get<std::string>();
    p.winner = trajectory_from_json(j.at("winner"));
    p.loser = trajectory_from_json(j.at("loser"));
    return p;
}

nlohmann::json step_pair_to_json(const StepPair& p) {
    return nlohmann::json{{"task_id", p.task_id},
                          {"t", p.t},
                          {"prefix", steps_to_json(p.prefix)},
                          {"winner_suffix", steps_to_json(p.winner_suffix)},
                          {"loser_suffix", steps_to_json(p.loser_suffix)}};
}

StepPair step_pair_from_json(const nlohmann::json& j) {
    StepPair p;
    p.task_id = j.at("task_id").get<std::string>();
    p.t = j.at("t").get<int>();
    p.prefix = steps_from_json(j.at("prefix"));
    p.winner_suffix = steps_from_json(j.at("winner_suffix"));
    p.loser_suffix = steps_from_json(j.at("loser_suffix"));
    return p;
}

nlohmann::json group_pair_to_json(const GroupPair& p) {
    nlohmann::json j{{"task_id", p.task_id},
                     {"context", steps_to_json(p.context)},
                     {"winner", group_to_json(p.winner)},
                     {"loser", group_to_json(p.loser)},
                     {"length", p.length}};
    if (p.delta_r) j["delta_r"] = *p.delta_r;
    return j;
}

GroupPair group_pair_from_json(const nlohmann::json& j) {
    GroupPair p;
    p.task_id = j.at("task_id").get<std::string>();
    p.context = steps_from_json(j.at("context"));
    p.winner = group_from_json(j.at("winner"));
    p.loser = group_from_json(j.at("loser"));
    p.length = j.at("length").get<int>();
    if (j.contains("delta_r")) p.delta_r = j.at("delta_r").get<double>();
    return p;
}

} // namespace hpl
