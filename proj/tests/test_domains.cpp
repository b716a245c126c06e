#include <gtest/gtest.h>

#include <array>
#include <map>

#include "fmdp/domains.hpp"
#include "fmdp/gscope.hpp"
#include "fmdp/theory.hpp"
#include "support.hpp"

using namespace fmdp;

namespace {

/// ‖Pr(Y) − Pr(Y | X(var) = x)‖₁ maximized over x, with states weighted by w.
double marginal_score(const FactoredMdp& mdp, const std::vector<double>& w, int target, int var) {
  const int g = mdp.gamma();
  std::vector<double> base(static_cast<std::size_t>(g), 0.0);
  std::vector<std::vector<double>> cond(static_cast<std::size_t>(g), std::vector<double>(static_cast<std::size_t>(g), 0.0));
  std::vector<double> mass(static_cast<std::size_t>(g), 0.0);
  double total = 0.0;
  for (std::uint64_t k = 0; k < mdp.flat_state_count(); ++k) {
    if (w[k] <= 0.0) continue;
    const State s = decode_flat(k, mdp.dims(), g);
    const auto row = mdp.cpt(target).row_for(s, 0);
    total += w[k];
    mass[s[static_cast<std::size_t>(var)]] += w[k];
    for (int y = 0; y < g; ++y) {
      base[static_cast<std::size_t>(y)] += w[k] * row[static_cast<std::size_t>(y)];
      cond[s[static_cast<std::size_t>(var)]][static_cast<std::size_t>(y)] += w[k] * row[static_cast<std::size_t>(y)];
    }
  }
  double best = 0.0;
  for (int x = 0; x < g; ++x) {
    if (mass[static_cast<std::size_t>(x)] <= 0.0) continue;
    double d = 0.0;
    for (int y = 0; y < g; ++y)
      d += std::abs(cond[static_cast<std::size_t>(x)][static_cast<std::size_t>(y)] / mass[static_cast<std::size_t>(x)] -
                    base[static_cast<std::size_t>(y)] / total);
    best = std::max(best, d);
  }
  return best;
}

std::vector<double> initial_weights(const FactoredMdp& mdp) {
  std::vector<double> w(mdp.flat_state_count());
  for (std::uint64_t k = 0; k < w.size(); ++k) w[k] = mdp.rho().prob(decode_flat(k, mdp.dims(), mdp.gamma()));
  return w;
}

FactoredMdp zero_reward(const FactoredMdp& m) {
  std::vector<Cpt> cpts;
  for (int i = 0; i < m.dims(); ++i) cpts.push_back(m.cpt(i));
  return FactoredMdp(m.dims(), m.gamma(), m.actions(), m.horizon(), cpts, Reward::constant(0.0), m.rho());
}

}  // namespace

TEST(Taxi, FiveHundredReachableStates) {
  const auto mdp = make_taxi();
  EXPECT_EQ(mdp.dims(), 4);
  EXPECT_EQ(mdp.actions(), 6);
  EXPECT_EQ(mdp.horizon(), 200);
  EXPECT_EQ(reachable_states(mdp).size(), 500u);
}

TEST(Taxi, DocumentedParentSets) {
  const auto mdp = make_taxi();
  EXPECT_EQ(mdp.parents(0), (ParentSet{0}));
  EXPECT_EQ(mdp.parents(1), (ParentSet{0, 1}));
  EXPECT_EQ(mdp.parents(2), (ParentSet{0, 1, 2, 3}));
  EXPECT_EQ(mdp.parents(3), (ParentSet{0, 1, 2, 3}));
}

TEST(Taxi, RewardsRescaledIntoUnitInterval) {
  const auto mdp = make_taxi();
  using namespace taxi;
  // In taxi at depot 3 = (4,3) with destination 3: delivery.
  EXPECT_DOUBLE_EQ(mdp.reward(State{4, 3, kInTaxi, 3}, kDropoff), 1.0);
  EXPECT_DOUBLE_EQ(mdp.reward(State{2, 2, 0, 1}, kNorth), 0.3);
  EXPECT_DOUBLE_EQ(mdp.reward(State{2, 2, 0, 1}, kPickup), 0.0);
  for (std::uint64_t k = 0; k < mdp.flat_state_count(); ++k)
    for (int a = 0; a < 6; ++a) {
      const double r = mdp.reward(decode_flat(k, 4, 5), a);
      EXPECT_GE(r, 0.0);
      EXPECT_LE(r, 1.0);
    }
}

TEST(Taxi, WallsAndEdgesBlockMoves) {
  const auto mdp = make_taxi();
  using namespace taxi;
  Rng rng(1);
  EXPECT_EQ(step(mdp, State{0, 2, 0, 1}, kNorth, rng).first, (State{0, 2, 0, 1}));
  EXPECT_EQ(step(mdp, State{4, 2, 0, 1}, kSouth, rng).first, (State{4, 2, 0, 1}));
  EXPECT_EQ(step(mdp, State{2, 4, 0, 1}, kEast, rng).first, (State{2, 4, 0, 1}));
  EXPECT_EQ(step(mdp, State{2, 0, 0, 1}, kWest, rng).first, (State{2, 0, 0, 1}));
  EXPECT_EQ(step(mdp, State{0, 1, 0, 1}, kEast, rng).first, (State{0, 1, 0, 1}));
  EXPECT_EQ(step(mdp, State{2, 1, 0, 1}, kEast, rng).first, (State{2, 2, 0, 1}));
  EXPECT_EQ(step(mdp, State{4, 1, 0, 1}, kWest, rng).first, (State{4, 1, 0, 1}));
}

TEST(Taxi, PickupAndDeliveryRespawn) {
  const auto mdp = make_taxi();
  using namespace taxi;
  Rng rng(2);
  EXPECT_EQ(step(mdp, State{0, 4, 1, 2}, kPickup, rng).first, (State{0, 4, kInTaxi, 2}));
  std::map<std::pair<int, int>, int> seen;
  for (int k = 0; k < 4000; ++k) {
    const auto next = step(mdp, State{4, 3, kInTaxi, 3}, kDropoff, rng).first;
    EXPECT_LT(next[2], 4);
    EXPECT_LT(next[3], 4);
    ++seen[{next[2], next[3]}];
  }
  EXPECT_EQ(seen.size(), 16u);
}

TEST(Planning, TaxiPlanBeatsUniform) {
  const auto mdp = make_taxi();
  const auto planned = plan_target_policy(mdp, 0.05);
  EXPECT_GT(exact_value(mdp, planned), exact_value(mdp, Policy::uniform(6)));
}

TEST(Planning, EpsilonFloorRespected) {
  const auto mdp = make_taxi(20);
  const auto pi = plan_target_policy(mdp, 0.05);
  for (std::uint64_t k = 0; k < mdp.flat_state_count(); k += 7) {
    const State s = decode_flat(k, 4, 5);
    double total = 0.0;
    for (int a = 0; a < 6; ++a) {
      EXPECT_GE(pi.action_prob(s, a), 0.05 / 6 - 1e-15);
      total += pi.action_prob(s, a);
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(Planning, ZeroRewardStillAProperPolicy) {
  const auto mdp = zero_reward(random_fmdp(3, 2, 3, 4, 5));
  const auto pi = plan_target_policy(mdp, 0.0);
  for (std::uint64_t k = 0; k < 8; ++k) {
    double total = 0.0;
    for (int a = 0; a < 3; ++a) total += pi.action_prob(decode_flat(k, 3, 2), a);
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  EXPECT_THROW(plan_target_policy(random_fmdp(20, 2, 2, 1), 0.05), InfeasibleError);
}

TEST(Planning, PlannedIsOptimalOnSmallInstances) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto mdp = random_fmdp(3, 2, 2, seed, 1);
    const auto planned = plan_target_policy(mdp, 0.0);
    // With T = 1 every deterministic policy is a candidate; none beats the plan.
    for (int mask = 0; mask < 256; ++mask) {
      std::vector<int> choice(8);
      for (int s = 0; s < 8; ++s) choice[static_cast<std::size_t>(s)] = (mask >> s) & 1;
      EXPECT_LE(exact_value(mdp, Policy::deterministic(2, 2, choice)), exact_value(mdp, planned) + 1e-12);
    }
  }
}

TEST(Planning, MyopicMaximizesNextRewardProbability) {
  const auto mdp = random_fmdp(6, 2, 4, 3, 10);
  const auto pi = plan_myopic_policy(mdp, 0.0);
  const auto& cpt = mdp.cpt(5);
  Rng rng(5);
  for (int k = 0; k < 30; ++k) {
    const State s = decode_flat(rng.index(mdp.flat_state_count()), 6, 2);
    int chosen = -1;
    for (int a = 0; a < 4; ++a)
      if (pi.action_prob(s, a) == 1.0) chosen = a;
    ASSERT_GE(chosen, 0);
    for (int a = 0; a < 4; ++a) EXPECT_LE(cpt.row_for(s, a)[1], cpt.row_for(s, chosen)[1] + 1e-12);
  }
}

TEST(RandomFmdp, ShapesAndDeterminism) {
  const auto a = random_fmdp(20, 2, 4, 9), b = random_fmdp(20, 2, 4, 9), c = random_fmdp(20, 2, 4, 10);
  EXPECT_EQ(a.dims(), 20);
  EXPECT_EQ(a.horizon(), 200);
  EXPECT_EQ(a.parent_sets(), b.parent_sets());
  EXPECT_NE(a.parent_sets(), c.parent_sets());
  for (int i = 0; i < 20; ++i) {
    const auto& p = a.parents(i);
    EXPECT_GE(p.size(), 1u);
    EXPECT_LE(p.size(), 4u);
    const auto& ca = a.cpt(i);
    const auto& cb = b.cpt(i);
    for (std::uint64_t r = 0; r < ca.realizations(); ++r)
      for (int act = 0; act < 4; ++act) {
        const auto row = ca.row(r, act);
        EXPECT_NEAR(row[0] + row[1], 1.0, 1e-9);
        EXPECT_EQ(row[0], cb.row(r, act)[0]);
      }
  }
  EXPECT_EQ(a.reward(State(20, 0), 0), 0.0);
  State last(20, 0);
  last[19] = 1;
  EXPECT_EQ(a.reward(last, 2), 1.0);
}

TEST(RandomFmdp, ParentCountsUniform) {
  std::array<int, 5> counts{};
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const auto m = random_fmdp(4, 2, 1, seed, 1);
    ++counts[m.parents(0).size()];
  }
  double chi2 = 0.0;
  for (int k = 1; k <= 4; ++k) chi2 += std::pow(counts[static_cast<std::size_t>(k)] - 2500.0, 2) / 2500.0;
  EXPECT_EQ(counts[0], 0);
  EXPECT_LT(chi2, 16.27);  // χ²(3) at p = 0.001
}

TEST(CopyChain, SelfCopyParents) {
  const auto mdp = make_copy_chain();
  EXPECT_EQ(mdp.dims(), 8);
  for (int i = 0; i < 8; ++i) EXPECT_EQ(mdp.parents(i), (ParentSet{i}));
}

TEST(Assumption1Violation, ExactScores) {
  const auto mdp = make_assumption1_violation();
  const auto w = initial_weights(mdp);
  // Every step has the initial law: X(1), X(2) copy themselves and X(3) = f(X(1), X(2)).
  EXPECT_NEAR(marginal_score(mdp, w, 2, 2), 1.0, 1e-12);
  EXPECT_NEAR(marginal_score(mdp, w, 2, 0), 0.5, 1e-12);
  EXPECT_NEAR(marginal_score(mdp, w, 2, 1), 0.5, 1e-12);
  const auto data = expected_transitions(mdp, Policy::uniform(1), 1.0);
  const auto scores = candidate_scores(data, 2, {}, 0.0);
  ASSERT_EQ(scores.scores.size(), 3u);
  EXPECT_NEAR(scores.scores[2].diff, 2.0 * scores.scores[0].diff, 1e-12);
  EXPECT_NEAR(scores.scores[0].diff, scores.scores[1].diff, 1e-12);
  EXPECT_EQ(scores.best()->var, 2);
}

TEST(Assumption3Violation, ExactScores) {
  const auto mdp = make_assumption3_violation();
  const auto w = initial_weights(mdp);
  EXPECT_NEAR(marginal_score(mdp, w, 2, 0), 0.0, 1e-12);
  EXPECT_NEAR(marginal_score(mdp, w, 2, 1), 0.0, 1e-12);
  const auto data = expected_transitions(mdp, Policy::uniform(1), 1.0);
  const auto pair = candidate_scores(data, 2, {0}, 0.0);
  ASSERT_EQ(pair.scores.size(), 2u);
  EXPECT_EQ(pair.scores[0].var, 1);
  EXPECT_NEAR(pair.scores[0].diff, 1.0, 1e-12);
}

TEST(Assumption3Violation, ValueSymmetricInParents) {
  const auto mdp = make_assumption3_violation(6);
  std::vector<Cpt> swapped{mdp.cpt(1), mdp.cpt(0), mdp.cpt(2)};
  std::vector<double> xor_t;
  for (int v = 0; v < 4; ++v) {
    const int x1 = v >> 1, x2 = v & 1;
    const auto row = mdp.cpt(2).row_for(State{static_cast<Symbol>(x2), static_cast<Symbol>(x1), 0}, 0);
    xor_t.insert(xor_t.end(), row.begin(), row.end());
  }
  swapped[2] = Cpt({0, 1}, 2, 1, xor_t);
  const FactoredMdp other(3, 2, 1, 6, swapped, mdp.reward(), mdp.rho());
  EXPECT_NEAR(exact_value(mdp, Policy::uniform(1)), exact_value(other, Policy::uniform(1)), 1e-12);
}

TEST(Registry, AllDomainsConstructAndRegenerate) {
  for (const auto& name : domain_names()) {
    DomainParams p;
    p.dims = 6;
    p.seed = 3;
    const auto a = make_domain(name, p);
    const auto b = make_domain(name, p);
    EXPECT_EQ(a.parent_sets(), b.parent_sets()) << name;
    for (int i = 0; i < a.dims(); ++i)
      for (std::uint64_t r = 0; r < a.cpt(i).realizations(); ++r)
        for (int act = 0; act < a.actions(); ++act) {
          const auto ra = a.cpt(i).row(r, act), rb = b.cpt(i).row(r, act);
          EXPECT_TRUE(std::equal(ra.begin(), ra.end(), rb.begin())) << name;
        }
  }
  EXPECT_THROW(make_domain("space-invaders"), std::invalid_argument);
}
