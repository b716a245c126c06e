#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "fmdp/domains.hpp"
#include "fmdp/evaluators.hpp"
#include "support.hpp"

using namespace fmdp;

namespace {

constexpr double kInfClip = std::numeric_limits<double>::infinity();

/// Deterministic two-bit toggle: action a flips bit a, action 2 does nothing.
/// Reward 1 while both bits are set. Starts from (0, 0).
FactoredMdp toggle_mdp(int horizon) {
  std::vector<Cpt> cpts;
  for (int i = 0; i < 2; ++i) {
    std::vector<double> probs;
    for (Symbol v = 0; v < 2; ++v)
      for (int a = 0; a < 3; ++a) {
        const Symbol y = a == i ? static_cast<Symbol>(1 - v) : v;
        probs.push_back(y == 0 ? 1.0 : 0.0);
        probs.push_back(y == 1 ? 1.0 : 0.0);
      }
    cpts.emplace_back(ParentSet{i}, 2, 3, probs);
  }
  std::vector<double> reward(4 * 3, 0.0);
  for (int a = 0; a < 3; ++a) reward[3 * 3 + static_cast<std::size_t>(a)] = 1.0;
  return FactoredMdp(2, 2, 3, horizon, cpts, Reward::table(2, 3, reward),
                     InitialDistribution::table(2, 2, {1.0, 0.0, 0.0, 0.0}));
}

/// 0 → flip bit 0, then flip bit 1, then stay.
Policy toggle_target() { return Policy::deterministic(2, 3, {0, 2, 1, 2}); }

Thresholds small_threshold(std::uint64_t n) {
  Thresholds th;
  th.min_count = n;
  return th;
}

FactoredMdp with_reward(const FactoredMdp& m, Reward r) {
  std::vector<Cpt> cpts;
  for (int i = 0; i < m.dims(); ++i) cpts.push_back(m.cpt(i));
  return FactoredMdp(m.dims(), m.gamma(), m.actions(), m.horizon(), cpts, std::move(r), m.rho());
}

}  // namespace

TEST(NormalizedError, Examples) {
  EXPECT_EQ(normalized_error(3.5, 3.5), 0.0);
  EXPECT_NEAR(normalized_error(9.0, 10.0), 0.1, 1e-15);
  EXPECT_NEAR(normalized_error(-1.0, -2.0), 0.5, 1e-15);
  EXPECT_THROW(normalized_error(1.0, 0.0), std::domain_error);
  EXPECT_THROW(normalized_error(1.0, 1e-13), std::domain_error);
}

TEST(ModelBased, TrueModelMatchesExactValue) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto mdp = random_fmdp(3, 2, 2, seed, 5);
    const auto pi = oracle::random_policy(3, 2, 2, seed + 7);
    const auto r = evaluate_model_based(LearnedModel::from_true(mdp), mdp.meta(), pi, 10000, seed);
    EXPECT_LE(std::abs(r.estimate - exact_value(mdp, pi)), 4.0 * r.std_error) << "seed " << seed;
    EXPECT_EQ(r.diagnostics.at("fallback_rate"), 0.0);
  }
}

TEST(ModelBased, EmptyModelGivesZero) {
  const auto mdp = random_fmdp(4, 2, 2, 1, 10);
  const auto model = build_model(TransitionSet::from_batch({}, mdp.meta()), mdp.parent_sets(), Thresholds{});
  const auto r = evaluate_model_based(model, mdp.meta(), Policy::uniform(2), 500, 3);
  EXPECT_EQ(r.estimate, 0.0);
  EXPECT_EQ(r.std_error, 0.0);
  EXPECT_EQ(r.diagnostics.at("fallback_rate"), 1.0);
}

TEST(ModelBased, SignatureMismatchRejected) {
  const auto mdp = random_fmdp(4, 2, 2, 1, 10);
  const auto other = random_fmdp(5, 2, 2, 1, 10);
  EXPECT_THROW(evaluate_model_based(LearnedModel::from_true(other), mdp.meta(), Policy::uniform(2), 10, 1),
               std::invalid_argument);
  EXPECT_THROW(evaluate_model_based(LearnedModel::from_true(mdp), mdp.meta(), Policy::uniform(3), 10, 1),
               std::invalid_argument);
}

TEST(ModelBased, ValuesWithinZeroAndHorizon) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto mdp = random_fmdp(5, 2, 3, seed, 15);
    const auto data = TransitionSet::from_batch(sample_batch(mdp, Policy::uniform(3), 30, seed), mdp.meta());
    const auto th = small_threshold(3);
    for (const auto& r : {evaluate_gscope(data, th, mdp.meta(), Policy::uniform(3), 200, seed),
                          evaluate_known_structure(data, mdp.parent_sets(), th, mdp.meta(), Policy::uniform(3), 200, seed),
                          evaluate_flat(data, mdp.meta(), Policy::uniform(3), 200, seed)}) {
      EXPECT_GE(r.estimate, 0.0);
      EXPECT_LE(r.estimate, 15.0);
      EXPECT_GE(r.std_error, 0.0);
      EXPECT_GE(r.diagnostics.at("fallback_rate"), 0.0);
      EXPECT_LE(r.diagnostics.at("fallback_rate"), 1.0);
    }
  }
}

TEST(ModelBased, CopyDomainLearnedFromAbundantData) {
  const auto mdp = make_copy_chain(6, 2, 2, 20);
  const auto data = TransitionSet::from_batch(sample_batch(mdp, Policy::uniform(2), 2000, 5), mdp.meta());
  Thresholds th;
  const auto pi = Policy::uniform(2);
  const double truth = exact_value(mdp, pi);
  const auto g = evaluate_gscope(data, th, mdp.meta(), pi, 5000, 9);
  EXPECT_EQ(g.diagnostics.at("fallback_rate"), 0.0);
  EXPECT_LE(std::abs(g.estimate - truth), 4.0 * g.std_error);
  const auto k = evaluate_known_structure(data, mdp.parent_sets(), th, mdp.meta(), pi, 5000, 9);
  EXPECT_LE(std::abs(k.estimate - truth), 4.0 * k.std_error);
}

TEST(KnownStructure, IdenticalToGscopeWhenStructureRecovered) {
  const auto mdp = make_copy_chain(6, 2, 2, 20);
  const auto data = TransitionSet::from_batch(sample_batch(mdp, Policy::uniform(2), 300, 5), mdp.meta());
  Thresholds th;
  th.min_count = 50;
  ASSERT_EQ(learn_structure(data, th).parents, mdp.parent_sets());
  const auto pi = Policy::uniform(2);
  const auto g = evaluate_gscope(data, th, mdp.meta(), pi, 1000, 4);
  const auto k = evaluate_known_structure(data, mdp.parent_sets(), th, mdp.meta(), pi, 1000, 4);
  EXPECT_EQ(g.estimate, k.estimate);
  EXPECT_EQ(g.std_error, k.std_error);
}

TEST(KnownStructure, EmptyBatchGivesZero) {
  const auto mdp = make_copy_chain(4, 2, 2, 10);
  const auto r = evaluate_known_structure(TransitionSet::from_batch({}, mdp.meta()), mdp.parent_sets(), Thresholds{},
                                          mdp.meta(), Policy::uniform(2), 100, 1);
  EXPECT_EQ(r.estimate, 0.0);
}

TEST(Flat, DeterministicFullCoverageIsExact) {
  const auto mdp = toggle_mdp(6);
  const auto data = TransitionSet::from_batch(sample_batch(mdp, Policy::uniform(3), 200, 3), mdp.meta());
  const auto pi = toggle_target();
  const double truth = exact_value(mdp, pi);
  EXPECT_DOUBLE_EQ(truth, 4.0);
  const auto r = evaluate_flat(data, mdp.meta(), pi, 50, 2);
  EXPECT_DOUBLE_EQ(r.estimate, truth);
  EXPECT_EQ(r.std_error, 0.0);
}

TEST(Flat, EmptyBatchGivesZero) {
  const auto mdp = toggle_mdp(6);
  EXPECT_EQ(evaluate_flat(TransitionSet::from_batch({}, mdp.meta()), mdp.meta(), toggle_target(), 10, 1).estimate, 0.0);
}

TEST(Flat, RefusesLargeStateSpace) {
  const auto mdp = random_fmdp(20, 2, 2, 3, 5);
  const auto data = TransitionSet::from_batch(sample_batch(mdp, Policy::uniform(2), 2, 1), mdp.meta());
  EXPECT_THROW(evaluate_flat(data, mdp.meta(), Policy::uniform(2), 10, 1), InfeasibleError);
}

TEST(Mfmc, OnPolicyDeterministicReproducesReturns) {
  const auto mdp = toggle_mdp(6);
  const auto pi = toggle_target();
  const auto batch = sample_batch(mdp, pi, 10, 4);
  const auto r = evaluate_mfmc(batch, mdp.meta(), pi, {}, 5);
  EXPECT_DOUBLE_EQ(r.estimate, trajectory_return(batch.front()));
  EXPECT_EQ(r.diagnostics.at("mean_stitch_distance"), 0.0);
  EXPECT_EQ(r.diagnostics.at("truncation_rate"), 0.0);
}

TEST(Mfmc, ZeroRewardGivesZero) {
  const auto mdp = with_reward(random_fmdp(4, 2, 2, 2, 8), Reward::constant(0.0));
  const auto batch = sample_batch(mdp, Policy::uniform(2), 20, 1);
  EXPECT_EQ(evaluate_mfmc(batch, mdp.meta(), Policy::uniform(2), {}, 1).estimate, 0.0);
}

TEST(Mfmc, ConsumesEachTransitionAtMostOnce) {
  const auto mdp = random_fmdp(5, 2, 2, 7, 10);
  const auto batch = sample_batch(mdp, Policy::uniform(2), 15, 3);
  for (std::size_t n_art : {5, 15, 60}) {
    const auto r = evaluate_mfmc(batch, mdp.meta(), Policy::fixed_action(2, 1), {1, n_art}, 2);
    EXPECT_LE(r.diagnostics.at("transitions_used"), r.diagnostics.at("transitions_logged"));
    EXPECT_EQ(r.diagnostics.at("transitions_logged"), 150.0);
  }
  // Demanding more steps of action 1 than were logged must truncate.
  const auto r = evaluate_mfmc(batch, mdp.meta(), Policy::fixed_action(2, 1), {1, 60}, 2);
  EXPECT_GT(r.diagnostics.at("truncation_rate"), 0.0);
}

TEST(Mfmc, SparseHighDimensionalDataStitchesFar) {
  const auto mdp = random_fmdp(20, 2, 4, 7, 200);
  const auto batch = sample_batch(mdp, Policy::uniform(4), 5, 3);
  const auto target = plan_myopic_policy(mdp, 0.05);
  const auto r = evaluate_mfmc(batch, mdp.meta(), target, {}, 2);
  EXPECT_GT(r.diagnostics.at("mean_stitch_distance"), 1.0);
  EXPECT_THROW(evaluate_mfmc({}, mdp.meta(), target, {}, 1), std::invalid_argument);
  EXPECT_THROW(evaluate_mfmc(batch, mdp.meta(), target, {0, 0}, 1), std::invalid_argument);
}

TEST(Cis, SamePolicyUnclippedIsPlainMean) {
  const auto mdp = random_fmdp(4, 2, 3, 2, 12);
  const auto pi = oracle::random_policy(4, 2, 3, 8);
  const auto batch = sample_batch(mdp, pi, 37, 6);
  std::vector<double> returns;
  for (const auto& t : batch) returns.push_back(trajectory_return(t));
  const auto r = evaluate_cis(batch, pi, pi, kInfClip);
  EXPECT_EQ(r.estimate, summarize_returns(returns).mean);
  EXPECT_NEAR(r.diagnostics.at("effective_sample_size"), 37.0, 1e-9);
}

TEST(Cis, ZeroTargetProbabilityZeroesWeight) {
  const auto mdp = with_reward(random_fmdp(3, 2, 2, 2, 5), Reward::constant(1.0));
  const auto batch = sample_batch(mdp, Policy::uniform(2), 50, 6);
  const auto r = evaluate_cis(batch, Policy::fixed_action(2, 0), Policy::uniform(2), kInfClip);
  double expected = 0.0;
  for (const auto& t : batch) {
    bool all_zero = true;
    for (const auto& st : t.steps) all_zero = all_zero && st.action == 0;
    if (all_zero) expected += 32.0 * 5.0;
  }
  EXPECT_NEAR(r.estimate, expected / 50.0, 1e-9);
}

TEST(Cis, ClippingIsMonotone) {
  const auto mdp = random_fmdp(4, 2, 3, 5, 10);
  const auto behavior = Policy::uniform(3);
  const auto target = plan_target_policy(mdp, 0.1);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto batch = sample_batch(mdp, behavior, 40, seed);
    double prev = -1.0;
    for (double c : {0.5, 1.0, 5.0, 50.0, 1e4, kInfClip}) {
      const double e = evaluate_cis(batch, target, behavior, c).estimate;
      EXPECT_GE(e, prev);
      prev = e;
    }
  }
}

TEST(Cis, RejectsInconsistentLogs) {
  const auto mdp = random_fmdp(3, 2, 2, 2, 5);
  const auto batch = sample_batch(mdp, Policy::fixed_action(2, 1), 5, 6);
  EXPECT_THROW(evaluate_cis(batch, Policy::uniform(2), Policy::fixed_action(2, 0), 10.0), std::invalid_argument);
  EXPECT_THROW(evaluate_cis(batch, Policy::uniform(2), Policy::uniform(2), 0.0), std::invalid_argument);
}

TEST(Reference, ExactWhenEnumerable) {
  const auto mdp = random_fmdp(3, 2, 2, 2, 5);
  const auto ref = reference_value(mdp, Policy::uniform(2), 10, 1);
  EXPECT_TRUE(ref.exact);
  EXPECT_EQ(ref.std_error, 0.0);
  const auto big = reference_value(random_fmdp(20, 2, 2, 2, 5), Policy::uniform(2), 1000, 1);
  EXPECT_FALSE(big.exact);
  EXPECT_GT(big.std_error, 0.0);
}
