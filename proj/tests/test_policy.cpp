#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "hpl/env.hpp"
#include "hpl/errors.hpp"
#include "hpl/policy.hpp"
#include "hpl/rng.hpp"

using namespace hpl;

namespace {

EnvConfig small_config() {
    return make_chain_config({{"pick", {0, 1}}, {"place", {2}}}, 3, 8, 0.9, 1.0, 1.0);
}

PolicyParams random_policy(int ns, int na, std::uint64_t seed) {
    PolicyParams p = make_uniform_policy(ns, na);
    Rng rng(seed);
    for (int s = 0; s < ns; ++s)
        for (int a = 0; a < na; ++a) p.logits(s, a) = rng.normal();
    return p;
}

// Naive long-double softmax used as an oracle for the stabilized version.
std::vector<double> naive_softmax(const std::vector<double>& logits) {
    long double z = 0.0L;
    for (double x : logits) z += std::exp(static_cast<long double>(x));
    std::vector<double> out;
    for (double x : logits)
        out.push_back(static_cast<double>(std::exp(static_cast<long double>(x)) / z));
    return out;
}

} // namespace

TEST_CASE("softmax probabilities match a naive high-precision computation") {
    const PolicyParams p = random_policy(5, 4, 11);
    for (int s = 0; s < 5; ++s) {
        std::vector<double> row;
        for (int a = 0; a < 4; ++a) row.push_back(p.logits(s, a));
        const auto want = naive_softmax(row);
        const Eigen::VectorXd probs = state_probs(p, s);
        const Eigen::VectorXd logp = state_log_probs(p, s);
        double sum = 0.0;
        for (int a = 0; a < 4; ++a) {
            CHECK(probs(a) == doctest::Approx(want[static_cast<std::size_t>(a)])
                                  .epsilon(1e-12));
            CHECK(logp(a) == doctest::Approx(std::log(want[static_cast<std::size_t>(a)]))
                                 .epsilon(1e-12));
            CHECK(action_logprob(p, s, a) == logp(a));
            sum += probs(a);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("softmax stays finite under extreme logits") {
    PolicyParams p = make_uniform_policy(1, 3);
    p.logits << 1000.0, 0.0, -1000.0;
    const Eigen::VectorXd probs = state_probs(p, 0);
    CHECK(std::isfinite(probs(0)));
    CHECK(probs(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(probs(1) == doctest::Approx(0.0));
    CHECK(state_entropy(p, 0) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("entropy: uniform is log n, a two-action gap matches the formula") {
    const PolicyParams uni = make_uniform_policy(2, 4);
    CHECK(state_entropy(uni, 0) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(action_logprob(uni, 0, 2) == doctest::Approx(std::log(0.25)).epsilon(1e-12));

    PolicyParams two = make_uniform_policy(1, 2);
    two.logits << 1.0, 0.0;
    // Independent computation of the binary entropy at p = e/(1+e).
    const double pw = std::exp(1.0) / (1.0 + std::exp(1.0));
    const double want = -pw * std::log(pw) - (1.0 - pw) * std::log(1.0 - pw);
    CHECK(state_entropy(two, 0) == doctest::Approx(want).epsilon(1e-12));
    CHECK(state_entropy(two, 0) == doctest::Approx(0.582203).epsilon(1e-6));
}

TEST_CASE("sequence log-probability sums the per-step terms") {
    const EnvConfig cfg = small_config();
    const PolicyParams p = random_policy(cfg.num_states, cfg.num_actions, 5);
    const Trajectory t = scripted_expert(cfg, 0);
    double want = 0.0;
    for (const auto& s : t.steps) want += action_logprob(p, s.obs, s.action);
    CHECK(sequence_logprob(p, t.steps) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("continuation log-probability replays the context without scoring it") {
    const EnvConfig cfg = small_config();
    const PolicyParams p = random_policy(cfg.num_states, cfg.num_actions, 6);
    const Trajectory t = scripted_expert(cfg, 0);

    const std::span<const TrajStep> context(t.steps.data(), 1);
    const std::vector<int> actions{1, 2};  // continue correctly from state 1
    const double got = sequence_logprob(p, cfg, context, actions);
    // States after replaying one correct step: 1, then 2.
    const double want = action_logprob(p, 1, 1) + action_logprob(p, 2, 2);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));

    // Empty context starts at the initial state.
    const std::vector<int> from_start{0};
    CHECK(sequence_logprob(p, cfg, {}, from_start) ==
          doctest::Approx(action_logprob(p, 0, 0)).epsilon(1e-12));
}

TEST_CASE("cloning loss and gradient match hand computation on one step") {
    const EnvConfig cfg = small_config();
    PolicyParams p = make_uniform_policy(cfg.num_states, 4);
    Trajectory t;
    t.task_id = "unit";
    t.steps.push_back(TrajStep{0, 2, 0.0});
    const std::vector<Trajectory> data{t};

    CHECK(bc_loss(p, data) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    // d/dlogits of -log softmax(a=2) at uniform: (1/4, 1/4, -3/4, 1/4).
    const Eigen::MatrixXd g = bc_gradient(p, data);
    CHECK(g(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(g(0, 1) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(g(0, 2) == doctest::Approx(-0.75).epsilon(1e-12));
    CHECK(g(0, 3) == doctest::Approx(0.25).epsilon(1e-12));
    // Untouched states receive no gradient.
    for (int s = 1; s < cfg.num_states; ++s)
        for (int a = 0; a < 4; ++a) CHECK(g(s, a) == 0.0);
}

TEST_CASE("cloning gradient agrees with central finite differences") {
    const EnvConfig cfg = small_config();
    PolicyParams p = random_policy(cfg.num_states, cfg.num_actions, 21);
    const std::vector<Trajectory> data{scripted_expert(cfg, 0, "a"),
                                       scripted_expert(cfg, 1, "b")};
    const Eigen::MatrixXd g = bc_gradient(p, data);
    const double h = 1e-6;
    for (int s = 0; s < p.num_states(); ++s) {
        for (int a = 0; a < p.num_actions(); ++a) {
            PolicyParams up = p, down = p;
            up.logits(s, a) += h;
            down.logits(s, a) -= h;
            const double fd = (bc_loss(up, data) - bc_loss(down, data)) / (2 * h);
            CHECK(g(s, a) == doctest::Approx(fd).epsilon(1e-6));
        }
    }
}

TEST_CASE("cloning training lowers the loss and recovers the demonstration") {
    const EnvConfig cfg = small_config();
    const std::vector<Trajectory> data{scripted_expert(cfg, 0)};
    const PolicyParams init = make_uniform_policy(cfg.num_states, cfg.num_actions);
    const double before = bc_loss(init, data);

    const PolicyParams trained = bc_train(data, init, 0.5, 8, 0);
    const double after = bc_loss(trained, data);
    CHECK(after < before);

    // Greedy decoding now reproduces the expert path.
    for (const auto& s : data[0].steps) {
        int argmax = 0;
        state_probs(trained, s.obs).maxCoeff(&argmax);
        CHECK(argmax == s.action);
    }
}

TEST_CASE("the training guard keeps the loss non-increasing at a huge step size") {
    const EnvConfig cfg = small_config();
    const std::vector<Trajectory> data{scripted_expert(cfg, 0)};
    const PolicyParams init = make_uniform_policy(cfg.num_states, cfg.num_actions);
    const double before = bc_loss(init, data);
    const PolicyParams trained = bc_train(data, init, 500.0, 5, 0);
    CHECK(bc_loss(trained, data) <= before + 1e-12);
}

TEST_CASE("training rejects empty data and non-positive step sizes") {
    const EnvConfig cfg = small_config();
    const PolicyParams init = make_uniform_policy(cfg.num_states, cfg.num_actions);
    CHECK_THROWS_AS(bc_train({}, init, 0.5, 1, 0), UsageError);
    CHECK_THROWS_AS(
        bc_train({scripted_expert(cfg, 0)}, init, 0.0, 1, 0), UsageError);
    CHECK_THROWS_AS(bc_loss(init, {}), UsageError);
    CHECK_THROWS_AS(bc_gradient(init, {}), UsageError);
}

TEST_CASE("rollouts are seed-deterministic and bounded") {
    const EnvConfig cfg = small_config();
    const PolicyParams p = make_uniform_policy(cfg.num_states, cfg.num_actions);
    const EnvState start = env_reset(cfg, 0);

    const RolloutResult a = sample_rollout(p, cfg, start, 5, 42);
    const RolloutResult b = sample_rollout(p, cfg, start, 5, 42);
    REQUIRE(a.steps.size() == b.steps.size());
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
        CHECK(a.steps[i].obs == b.steps[i].obs);
        CHECK(a.steps[i].action == b.steps[i].action);
    }
    CHECK(static_cast<int>(a.steps.size()) <= 5);

    // max_len zero means no steps at all.
    CHECK(sample_rollout(p, cfg, start, 0, 1).steps.empty());

    // A finished start state yields an empty rollout.
    EnvState done_state = start;
    done_state.done = true;
    CHECK(sample_rollout(p, cfg, done_state, 5, 1).steps.empty());

    PolicyParams wrong_shape = make_uniform_policy(2, cfg.num_actions);
    CHECK_THROWS_AS(sample_rollout(wrong_shape, cfg, start, 5, 1), UsageError);
}

TEST_CASE("rollout action frequencies follow the softmax distribution") {
    // Single-state environment so every first action is drawn from one row.
    const EnvConfig cfg = make_chain_config({{"one", {0}}}, 4, 1, 0.9, 1.0, 1.0);
    PolicyParams p = make_uniform_policy(cfg.num_states, 4);
    p.logits.row(0) << 0.0, 0.5, 1.0, 1.5;
    const Eigen::VectorXd probs = state_probs(p, 0);

    std::vector<int> counts(4, 0);
    const int n = 10000;
    const EnvState start = env_reset(cfg, 0);
    for (int i = 0; i < n; ++i) {
        const auto roll =
            sample_rollout(p, cfg, start, 1, derive_seed(7, {"freq", std::to_string(i)}));
        REQUIRE(roll.steps.size() == 1);
        ++counts[static_cast<std::size_t>(roll.steps[0].action)];
    }
    for (int a = 0; a < 4; ++a)
        CHECK(std::abs(counts[static_cast<std::size_t>(a)] / static_cast<double>(n) -
                       probs(a)) < 0.02);
}

TEST_CASE("freezing the reference copies parameters and detaches storage") {
    PolicyParams p = random_policy(3, 2, 9);
    p.tag = "theta";
    const PolicyParams ref = freeze_reference(p);
    CHECK(ref.tag == "ref");
    CHECK(ref.logits == p.logits);
    p.logits(0, 0) += 1.0;
    CHECK(ref.logits(0, 0) != p.logits(0, 0));
}

TEST_CASE("policies round-trip through JSON and disk exactly") {
    namespace fs = std::filesystem;
    const PolicyParams p = random_policy(4, 3, 33);
    const PolicyParams back = policy_from_json(policy_to_json(p));
    CHECK(back.tag == p.tag);
    CHECK(back.logits == p.logits);  // bitwise: JSON doubles round-trip exactly

    const fs::path dir = fs::temp_directory_path() / "hpl_policy_test";
    fs::create_directories(dir);
    save_policy(p, dir / "p.json");
    const PolicyParams from_disk = load_policy(dir / "p.json");
    CHECK(from_disk.logits == p.logits);
    CHECK_THROWS_AS(load_policy(dir / "absent.json"), IoError);
    fs::remove_all(dir);

    nlohmann::json bad = policy_to_json(p);
    bad["logits"].erase(0);
    CHECK_THROWS_AS(policy_from_json(bad), ConfigError);
}

TEST_CASE("constructing a policy validates its shape") {
    CHECK_THROWS_AS(make_uniform_policy(0, 3), UsageError);
    CHECK_THROWS_AS(make_uniform_policy(3, 0), UsageError);
    const PolicyParams p = make_uniform_policy(2, 3);
    CHECK_THROWS_AS(state_probs(p, 5), UsageError);
    CHECK_THROWS_AS(action_logprob(p, 0, 3), UsageError);
}
