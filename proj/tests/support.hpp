#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "fmdp/core.hpp"

namespace fmdp::oracle {

/// Pr(next | s, a) as an explicit product of CPT entries.
inline double transition_prob(const FactoredMdp& mdp, const State& s, int a, const State& next) {
  double p = 1.0;
  for (int i = 0; i < mdp.dims(); ++i) p *= mdp.cpt(i).row_for(s, a)[next[static_cast<std::size_t>(i)]];
  return p;
}

/// Expected return by direct recursion over every state sequence, sharing no
/// code with the library's backward induction beyond CPT lookup.
inline double brute_force_value(const FactoredMdp& mdp, const Policy& pi) {
  const auto n = mdp.flat_state_count();
  std::function<double(const State&, int)> value = [&](const State& s, int t) -> double {
    if (t == mdp.horizon()) return 0.0;
    double v = 0.0;
    for (int a = 0; a < mdp.actions(); ++a) {
      const double pa = pi.action_prob(s, a);
      if (pa == 0.0) continue;
      double cont = 0.0;
      for (std::uint64_t k = 0; k < n; ++k) {
        const State next = decode_flat(k, mdp.dims(), mdp.gamma());
        const double p = transition_prob(mdp, s, a, next);
        if (p > 0.0) cont += p * value(next, t + 1);
      }
      v += pa * (mdp.reward(s, a) + cont);
    }
    return v;
  };
  double nu = 0.0;
  for (std::uint64_t k = 0; k < n; ++k) {
    const State s = decode_flat(k, mdp.dims(), mdp.gamma());
    const double p = mdp.rho().prob(s);
    if (p > 0.0) nu += p * value(s, 0);
  }
  return nu;
}

/// Random tabular policy over flat states.
inline Policy random_policy(int dims, int gamma, int actions, std::uint64_t seed) {
  Rng rng(seed);
  const auto n = checked_pow(gamma, static_cast<std::size_t>(dims));
  std::vector<double> probs;
  for (std::uint64_t s = 0; s < n; ++s) {
    std::vector<double> row(static_cast<std::size_t>(actions));
    double total = 0.0;
    for (auto& x : row) total += (x = rng.uniform() + 0.05);
    for (auto x : row) probs.push_back(x / total);
  }
  return Policy::tabular(gamma, actions, std::move(probs));
}

}  // namespace fmdp::oracle
