#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "hpo/advantage.hpp"
#include "hpo/objective.hpp"
#include "support.hpp"

using namespace hpo;
using namespace hpo::testing;
using V = std::vector<double>;

TEST_CASE("prob_ratio examples") {
  CHECK(prob_ratio(-1.0, -1.0) == 1.0);
  CHECK(prob_ratio(-0.5, -1.0) == doctest::Approx(1.6487213).epsilon(1e-7));
  CHECK(prob_ratio(-2.0, -1.0) == doctest::Approx(0.3678794).epsilon(1e-7));
  CHECK_THROWS_AS(prob_ratio(std::nan(""), -1.0), Error);
  CHECK_THROWS_AS(prob_ratio(-1.0, -INFINITY), Error);
}

TEST_CASE("ppo token surrogate examples") {
  auto t = ppo_token_surrogate(1.0, 0.75, 0.2);
  CHECK(t.surrogate == 0.75);
  CHECK_FALSE(t.clipped);
  t = ppo_token_surrogate(1.5, 1.0, 0.2);
  CHECK(t.surrogate == doctest::Approx(1.2).epsilon(1e-15));
  CHECK(t.clipped);
  t = ppo_token_surrogate(0.5, -1.0, 0.2);
  CHECK(t.surrogate == doctest::Approx(-0.8).epsilon(1e-15));
  CHECK(t.clipped);
}

TEST_CASE("ppo token surrogate is the minimum of both branches on a grid") {
  for (int a = 0; a < 40; ++a) {
    for (int b = 0; b < 40; ++b) {
      for (double eps : {0.05, 0.2, 0.5, 0.9}) {
        const double ratio = 0.05 + 0.06 * a;
        const double adv = -2.0 + 0.1 * b;
        const auto t = ppo_token_surrogate(ratio, adv, eps);
        const double u = ratio * adv;
        const double c = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * adv;
        CHECK(t.surrogate == std::min(u, c));
        CHECK(t.clipped == (c < u));
      }
    }
  }
  for (double adv : {-3.0, -0.1, 0.0, 0.4, 7.0}) CHECK(ppo_token_surrogate(1.0, adv, 0.3).surrogate == adv);
}

TEST_CASE("aggregation examples") {
  PolicyShape shape;
  shape.vocab_size = 3;
  shape.max_tokens = 8;
  const TabularPolicy policy(shape);
  TrainConfig pr;
  pr.normalization = Normalization::per_response;
  TrainConfig ml;
  ml.normalization = Normalization::mean_length;

  // Single response of length L with constant surrogate c (the pair's other
  // response has zero advantage and the same length).
  const double c = 0.8;
  const AdvantageSet single({c, 0.0}, {1.0, 1.0}, 1.0, AdvantageEstimator::grpo_standardized);
  Batch same({Group(0, "x", {filler_response(policy, 0, 5), filler_response(policy, 0, 5)},
                    {1, 0})});
  const auto lp = batch_logprobs(policy, same);
  CHECK(2.0 * aggregate_objective(same, {single}, lp, pr) == doctest::Approx(c).epsilon(1e-15));
  CHECK(2.0 * aggregate_objective(same, {single}, lp, ml) == doctest::Approx(c).epsilon(1e-15));

  // Lengths 2 and 4, token surrogate 1 everywhere.
  Batch two({Group(0, "x", {filler_response(policy, 0, 2), filler_response(policy, 0, 4)},
                   {1, 0})});
  const auto lp2 = batch_logprobs(policy, two);
  const AdvantageSet ones({1.0, 1.0}, {1.0, 1.0}, 1.0, AdvantageEstimator::grpo_standardized);
  CHECK(aggregate_objective(two, {ones}, lp2, pr) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(aggregate_objective(two, {ones}, lp2, ml) == doctest::Approx(1.0).epsilon(1e-15));
  // Second response's tokens at surrogate 2.
  const AdvantageSet scaled({1.0, 2.0}, {1.0, 1.0}, 1.0, AdvantageEstimator::grpo_standardized);
  CHECK(aggregate_objective(two, {scaled}, lp2, pr) == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(aggregate_objective(two, {scaled}, lp2, ml) == doctest::Approx(10.0 / 6.0).epsilon(1e-15));

  // Shape mismatch.
  auto bad = lp2;
  bad[0][1].pop_back();
  CHECK_THROWS_AS(aggregate_objective(two, {scaled}, bad, pr), Error);
  CHECK_THROWS_AS(aggregate_objective(two, {}, lp2, pr), Error);
}

TEST_CASE("length-bias exhibit") {
  for (std::uint32_t len : {1u, 3u, 5u}) {
    for (double c : {0.25, -0.7}) {
      const auto e = length_bias_exhibit(len, c);
      CHECK(std::abs(e.per_response_short - c) <= 1e-12);
      CHECK(std::abs(e.per_response_long - c) <= 1e-12);
      CHECK(std::abs(e.mean_length_long - 2.0 * e.mean_length_short) <= 1e-12);
    }
  }
}

TEST_CASE("equal lengths make both normalizations agree") {
  PolicyShape shape;
  shape.vocab_size = 3;
  shape.max_tokens = 4;
  const TabularPolicy policy(shape);
  Batch b({Group(0, "x", {filler_response(policy, 0, 4), filler_response(policy, 0, 4),
                          filler_response(policy, 0, 4)},
                 {1, 0, 0})});
  TrainConfig c;
  c.estimator_variant = EstimatorVariant::a_hpo;
  const auto sets = compute_advantage_sets(b, c);
  const auto lp = batch_logprobs(policy, b);
  c.normalization = Normalization::per_response;
  const double a = aggregate_objective(b, sets, lp, c);
  c.normalization = Normalization::mean_length;
  CHECK(aggregate_objective(b, sets, lp, c) == doctest::Approx(a).epsilon(1e-15));
}

TEST_CASE("mean-length aggregate is invariant to permuting responses") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto prob = random_problem(seed, EstimatorVariant::hpo_fixed, Normalization::mean_length);
    const auto sets = compute_advantage_sets(prob.batch, prob.config);
    const auto moved = perturbed(prob.policy, seed, 0.3);
    const double base = evaluate_objective(prob.batch, sets, moved, prob.config).value;
    // Reverse the group order and the responses inside every group.
    std::vector<Group> groups;
    std::vector<AdvantageSet> rsets;
    for (std::size_t g = prob.batch.groups().size(); g-- > 0;) {
      const auto& grp = prob.batch.groups()[g];
      auto trajs = grp.trajectories();
      auto rewards = grp.rewards();
      auto adv = sets[g].advantages();
      auto w = sets[g].weights();
      std::reverse(trajs.begin(), trajs.end());
      std::reverse(rewards.begin(), rewards.end());
      std::reverse(adv.begin(), adv.end());
      std::reverse(w.begin(), w.end());
      groups.emplace_back(grp.prompt_id(), grp.answer(), trajs, rewards);
      rsets.emplace_back(adv, w, sets[g].alpha_used(), AdvantageEstimator::grpo_standardized);
    }
    Batch permuted(std::move(groups));
    CHECK(evaluate_objective(permuted, rsets, moved, prob.config).value ==
          doctest::Approx(base).epsilon(1e-13));
  }
}

TEST_CASE("gradient matches finite differences at and away from pi_old") {
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    for (auto variant : kAllVariants) {
      for (auto norm : {Normalization::per_response, Normalization::mean_length}) {
        const auto prob = random_problem(seed, variant, norm);
        const auto sets = compute_advantage_sets(prob.batch, prob.config);
        for (double scale : {0.0, 0.15}) {
          const TabularPolicy at = scale == 0.0 ? prob.policy : perturbed(prob.policy, seed, scale);
          if (scale > 0.0 && distance_to_clip_boundary(prob.batch, at, prob.config.clip_epsilon) < 1e-3) {
            continue;
          }
          const auto eval = evaluate_objective(prob.batch, sets, at, prob.config);
          CHECK(eval.value == doctest::Approx(reference_objective(prob.batch, sets, at, prob.config))
                                  .epsilon(1e-12));
          const auto fd = finite_difference_gradient(prob.batch, sets, at, prob.config, 1e-5);
          CHECK(relative_error(eval.gradient, fd) <= 1e-5);
          ++checked;
        }
      }
    }
  }
  CHECK(checked > 700);
}

TEST_CASE("zero advantages give a zero gradient") {
  auto prob = random_problem(4, EstimatorVariant::a_hpo, Normalization::mean_length);
  std::vector<AdvantageSet> zero;
  for (const auto& g : prob.batch.groups()) {
    zero.emplace_back(V(g.size(), 0.0), V(g.size(), 1.0), 1.0, AdvantageEstimator::centered);
  }
  const auto eval = evaluate_objective(prob.batch, zero, perturbed(prob.policy, 1, 0.3), prob.config);
  CHECK(eval.value == 0.0);
  for (double g : eval.gradient) CHECK(g == 0.0);
}

TEST_CASE("decomposition identity and component properties") {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    for (auto variant : kAllVariants) {
      const auto prob = random_problem(seed, variant, Normalization::mean_length);
      const auto sets = compute_advantage_sets(prob.batch, prob.config);
      const auto at = perturbed(prob.policy, seed + 100, 0.2);
      const auto g = objective_gradient(prob.batch, sets, at, prob.config);
      const auto parts = split_gradient_components(prob.batch, sets, at, prob.config);
      V residual(g.size());
      for (std::size_t k = 0; k < g.size(); ++k) {
        residual[k] = g[k] - (parts.positive[k] + parts.weighted_negative[k]);
      }
      CHECK(l2_norm(residual) <= 1e-10);
      if (variant != EstimatorVariant::v_hpo) {
        const double alpha = sets.front().alpha_used();
        for (std::size_t k = 0; k < g.size(); ++k) residual[k] = g[k] - (parts.positive[k] + alpha * parts.negative[k]);
        CHECK(l2_norm(residual) <= 1e-10);
      }
    }
  }
}

TEST_CASE("only positive advantages leave G_neg zero; mirrored pair gives G_pos = -G_neg") {
  PolicyShape shape;
  shape.vocab_size = 4;
  shape.max_tokens = 5;
  RngStream rng(3, RngDomain::test);
  const auto policy = random_policy(shape, rng);
  const auto t = filler_response(policy, 0, 4);
  Batch pair({Group(0, "x", {t, t}, {1, 0})});
  TrainConfig c;
  c.estimator_variant = EstimatorVariant::hpo_fixed;
  c.alpha_fixed = 0.5;
  const auto sets = compute_advantage_sets(pair, c);
  const auto parts = split_gradient_components(pair, sets, policy, c);
  for (std::size_t k = 0; k < parts.positive.size(); ++k) CHECK(parts.positive[k] == -parts.negative[k]);

  const AdvantageSet pos({0.5, 0.0}, {1, 1}, 1.0, AdvantageEstimator::grpo_standardized);
  const auto only = split_gradient_components(pair, {pos}, policy, c);
  for (double v : only.negative) CHECK(v == 0.0);
}

TEST_CASE("alpha zero removes negative responses from the gradient exactly") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    auto prob = random_problem(seed, EstimatorVariant::hpo_fixed, Normalization::mean_length);
    prob.config.alpha_fixed = 0.0;
    const auto sets = compute_advantage_sets(prob.batch, prob.config);
    std::vector<AdvantageSet> masked;
    for (const auto& s : sets) {
      V adv = s.advantages();
      for (double& a : adv) a = a < 0.0 ? 0.0 : a;
      masked.emplace_back(adv, V(adv.size(), 1.0), 1.0, AdvantageEstimator::grpo_standardized);
    }
    const auto at = perturbed(prob.policy, seed, 0.2);
    CHECK(objective_gradient(prob.batch, sets, at, prob.config) ==
          objective_gradient(prob.batch, masked, at, prob.config));
  }
}

TEST_CASE("non-finite intermediates are reported with their index") {
  PolicyShape shape;
  shape.vocab_size = 3;
  shape.max_tokens = 3;
  const TabularPolicy policy(shape);
  const SequenceLimits lim = policy.limits();
  // exp(new - old) overflows; with a negative advantage the unclipped branch
  // is the minimum, so the derivative is infinite.
  Trajectory ok = filler_response(policy, 0, 2);
  Trajectory bad(0, {Token{1}, Token{0}}, {-1000.0, std::log(1.0 / 3.0)}, lim);
  Batch b({Group(0, "x", {ok, bad}, {1, 0})});
  TrainConfig c;
  c.estimator_variant = EstimatorVariant::hpo_fixed;
  c.alpha_fixed = 1.0;
  const auto sets = compute_advantage_sets(b, c);
  CHECK_THROWS_WITH_AS(evaluate_objective(b, sets, policy, c),
                       doctest::Contains("group 0, response 1, token 0"), Error);
}

TEST_CASE("limit equivalences against objectives written from rewards") {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    auto sym = random_problem(seed, EstimatorVariant::hpo_fixed, Normalization::mean_length);
    sym.config.alpha_fixed = 1.0;
    auto grpo = random_problem(seed, EstimatorVariant::grpo, Normalization::per_response);
    for (auto* prob : {&sym, &grpo}) {
      const bool standardized = prob == &grpo;
      const auto sets = compute_advantage_sets(prob->batch, prob->config);
      const auto at = perturbed(prob->policy, seed + 7, 0.15);
      const auto eval = evaluate_objective(prob->batch, sets, at, prob->config);
      const auto text = [&](const TabularPolicy& p) {
        return textbook_objective(prob->batch, p, prob->config.clip_epsilon, standardized,
                                  prob->config.std_eps);
      };
      CHECK(eval.value == doctest::Approx(text(at)).epsilon(1e-12).scale(1e-15));
      if (distance_to_clip_boundary(prob->batch, at, prob->config.clip_epsilon) < 1e-3) continue;
      CHECK(relative_error(eval.gradient, finite_difference(at, text, 1e-5)) <= 1e-5);
    }
  }
}
