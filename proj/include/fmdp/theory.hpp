#pragma once

// Exact occupancies, the policy-mismatch coefficients ψᵢ, the finite-sample
// evaluation bound, and brute-force checks of the three structural
// assumptions behind greedy parent selection.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmdp/core.hpp"
#include "fmdp/gscope.hpp"

namespace fmdp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Exact forward pass: fn(t, flat s, a, Pr(s_t = s, a_t = a)) for every
/// positive-mass triple, t = 0..T-1.
template <typename Fn>
void forward_pass(const FactoredMdp& mdp, const Policy& policy, const SuccessorTable& table, Fn&& fn) {
  const auto n = table.states();
  const auto actions = static_cast<std::size_t>(mdp.actions());
  std::vector<State> states(n);
  for (std::uint64_t s = 0; s < n; ++s) states[s] = decode_flat(s, mdp.dims(), mdp.gamma());
  std::vector<double> d(n), next(n);
  for (std::uint64_t s = 0; s < n; ++s) d[s] = mdp.rho().prob(states[s]);
  std::vector<double> pi(actions);
  for (int t = 0; t < mdp.horizon(); ++t) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::uint64_t s = 0; s < n; ++s) {
      if (d[s] <= 0.0) continue;
      policy.action_probs(states[s], pi);
      for (std::size_t a = 0; a < actions; ++a) {
        const double m = d[s] * pi[a];
        if (m <= 0.0) continue;
        fn(t, s, static_cast<int>(a), m);
        for (const auto& e : table.successors(s, static_cast<int>(a))) next[e.next] += m * e.prob;
      }
    }
    std::swap(d, next);
  }
}

/// Pr(X_t(Φ) = v, a_t = a) indexed [t][rank(v) * A + a], t = 0..T-1.
inline std::vector<std::vector<double>> occupancy(const FactoredMdp& mdp, const Policy& policy,
                                                  const ParentSet& parents) {
  require_enumerable(mdp, "occupancy");
  const SuccessorTable table(mdp);
  const auto cells = checked_pow(mdp.gamma(), parents.size()) * static_cast<std::uint64_t>(mdp.actions());
  std::vector<std::vector<double>> occ(static_cast<std::size_t>(mdp.horizon()), std::vector<double>(cells, 0.0));
  forward_pass(mdp, policy, table, [&](int t, std::uint64_t s, int a, double m) {
    const State st = decode_flat(s, mdp.dims(), mdp.gamma());
    occ[static_cast<std::size_t>(t)][realization_rank(st, parents, mdp.gamma()) * static_cast<std::uint64_t>(mdp.actions()) +
                                     static_cast<std::uint64_t>(a)] += m;
  });
  return occ;
}

/// Σ_t Pr(s_t = s, a_t = a) indexed [s * A + a].
inline std::vector<double> state_action_visits(const FactoredMdp& mdp, const Policy& policy,
                                               const SuccessorTable& table) {
  std::vector<double> w(table.states() * static_cast<std::uint64_t>(mdp.actions()), 0.0);
  forward_pass(mdp, policy, table, [&](int, std::uint64_t s, int a, double m) {
    w[s * static_cast<std::uint64_t>(mdp.actions()) + static_cast<std::uint64_t>(a)] += m;
  });
  return w;
}

/// ψᵢ = max over (v, a) of Σ_t target occupancy / Σ_t behavior occupancy of
/// X(Φᵢ) = v, a; 0/0 = 0 and x/0 = ∞.
inline std::vector<double> compute_psi(const FactoredMdp& mdp, const Policy& behavior, const Policy& target,
                                       const std::vector<ParentSet>& parents) {
  require_enumerable(mdp, "compute_psi");
  if (parents.size() != static_cast<std::size_t>(mdp.dims())) throw std::invalid_argument("compute_psi: one parent set per variable");
  const SuccessorTable table(mdp);
  const auto wb = state_action_visits(mdp, behavior, table);
  const auto we = state_action_visits(mdp, target, table);
  const auto actions = static_cast<std::uint64_t>(mdp.actions());
  std::vector<double> psi;
  for (const auto& p : parents) {
    const auto cells = checked_pow(mdp.gamma(), p.size()) * actions;
    std::vector<double> b(cells, 0.0), e(cells, 0.0);
    for (std::uint64_t s = 0; s < table.states(); ++s) {
      const auto r = realization_rank(decode_flat(s, mdp.dims(), mdp.gamma()), p, mdp.gamma());
      for (std::uint64_t a = 0; a < actions; ++a) {
        b[r * actions + a] += wb[s * actions + a];
        e[r * actions + a] += we[s * actions + a];
      }
    }
    double worst = 0.0;
    for (std::uint64_t c = 0; c < cells; ++c) {
      if (e[c] <= 0.0) continue;
      worst = std::max(worst, b[c] > 0.0 ? e[c] / b[c] : kInf);
    }
    psi.push_back(worst);
  }
  return psi;
}

inline std::vector<double> compute_psi(const FactoredMdp& mdp, const Policy& behavior, const Policy& target) {
  return compute_psi(mdp, behavior, target, mdp.parent_sets());
}

/// Expected transition weights under the policy, scaled: the "exact-frequency"
/// data a batch of `scale` trajectories would produce in expectation.
inline TransitionSet expected_transitions(const FactoredMdp& mdp, const Policy& policy, double scale) {
  require_enumerable(mdp, "expected_transitions");
  const SuccessorTable table(mdp);
  std::vector<Transition> raw;
  forward_pass(mdp, policy, table, [&](int, std::uint64_t s, int a, double m) {
    const State st = decode_flat(s, mdp.dims(), mdp.gamma());
    for (const auto& e : table.successors(s, a))
      raw.push_back({st, a, decode_flat(e.next, mdp.dims(), mdp.gamma()), scale * m * e.prob});
  });
  return TransitionSet::from_transitions(std::move(raw), mdp.dims(), mdp.gamma(), mdp.actions());
}

// ---------------------------------------------------------------------------
// Evaluation bound

struct BoundInputs {
  double eps = 0.1;
  double delta1 = 0.05;
  int horizon = 1;
  int dims = 1;
  int m = 1;
  double c2 = 0.0;
  double c3 = 0.0;
  std::vector<double> psi;
  int actions = 1;
  int gamma = 2;
};

struct BoundResult {
  double eps_star = 0.0;
  double delta_star = 0.0;           // AΓ^m Σψᵢ δ₁
  double delta_star_trajectory = 0.0; // T · AΓ^m Σψᵢ δ₁
  double value_bound = 0.0;          // δ*_traj T + ε* D T²
  double value_bound_main = 0.0;     // T² (δ* + ε* D)
  double confidence = 1.0;           // 1 − 2AD(m+2)(D+1−m)Γ^{m+1}δ₁, may be negative
};

inline BoundResult value_error_bound(const BoundInputs& in) {
  if (in.dims < 1 || in.m < 0 || in.m > in.dims) throw std::invalid_argument("value_error_bound: need 0 <= m <= D");
  if (in.horizon < 0 || in.actions < 1 || in.gamma < 2) throw std::invalid_argument("value_error_bound: bad signature");
  if (!(in.eps >= 0.0) || !(in.delta1 >= 0.0) || !(in.c2 >= 0.0) || !(in.c3 >= 0.0))
    throw std::invalid_argument("value_error_bound: eps, delta1, c2, c3 must be nonnegative");
  if (in.psi.size() != static_cast<std::size_t>(in.dims)) throw std::invalid_argument("value_error_bound: one psi per variable");
  double psi_sum = 0.0;
  for (double p : in.psi) {
    if (!(p >= 0.0)) throw std::invalid_argument("value_error_bound: psi must be nonnegative");
    psi_sum += p;
  }
  const double T = in.horizon, D = in.dims, m = in.m, A = in.actions, G = in.gamma;
  BoundResult r;
  r.eps_star = (4.0 * m + 1.0) * in.eps + m * in.c2 + m * m * in.c3;
  // δ₁ = 0 yields δ* = 0 even when some ψᵢ is infinite.
  r.delta_star = in.delta1 == 0.0 ? 0.0 : A * std::pow(G, m) * psi_sum * in.delta1;
  r.delta_star_trajectory = in.delta1 == 0.0 ? 0.0 : T * A * std::pow(G, m) * psi_sum * in.delta1;
  r.value_bound = r.delta_star_trajectory * T + r.eps_star * D * T * T;
  r.value_bound_main = T * T * (r.delta_star + r.eps_star * D);
  r.confidence = 1.0 - 2.0 * A * D * (m + 2.0) * (D + 1.0 - m) * std::pow(G, m + 1.0) * in.delta1;
  return r;
}

// ---------------------------------------------------------------------------
// Assumption checks

inline constexpr double kScoreTolerance = 1e-12;

/// Exact conditionals Pr(Y(i) | X(U) = v, a) where the state-action law is a
/// fixed visit measure w(s, a). Variables in U are ranked in ascending index order.
class ExactConditionals {
 public:
  ExactConditionals(const FactoredMdp& mdp, std::vector<double> visits)
      : mdp_(mdp), visits_(std::move(visits)), states_(mdp.flat_state_count()) {}

  struct Cell {
    double weight = 0.0;
    std::vector<double> mass;  // unnormalized, over y
  };

  static std::vector<int> vars_of(std::uint32_t mask) {
    std::vector<int> v;
    for (int k = 0; mask >> k; ++k)
      if ((mask >> k) & 1U) v.push_back(k);
    return v;
  }

  /// Cells indexed [rank(v) * A + a].
  const std::vector<Cell>& table(int i, std::uint32_t mask) const {
    auto key = std::make_pair(i, mask);
    auto it = memo_.find(key);
    if (it != memo_.end()) return it->second;
    const auto vars = vars_of(mask);
    const auto actions = static_cast<std::uint64_t>(mdp_.actions());
    std::vector<Cell> cells(checked_pow(mdp_.gamma(), vars.size()) * actions,
                            Cell{0.0, std::vector<double>(static_cast<std::size_t>(mdp_.gamma()), 0.0)});
    for (std::uint64_t s = 0; s < states_; ++s) {
      const State st = decode_flat(s, mdp_.dims(), mdp_.gamma());
      const auto r = realization_rank(st, vars, mdp_.gamma());
      for (std::uint64_t a = 0; a < actions; ++a) {
        const double w = visits_[s * actions + a];
        if (w <= 0.0) continue;
        auto& c = cells[r * actions + a];
        c.weight += w;
        const auto row = mdp_.cpt(i).row_for(st, static_cast<int>(a));
        for (std::size_t y = 0; y < row.size(); ++y) c.mass[y] += w * row[y];
      }
    }
    return memo_.emplace(key, std::move(cells)).first->second;
  }

  /// Rank of the restriction to `sub` of a realization of `super` (sub ⊆ super).
  std::uint64_t project(std::uint64_t rank, std::uint32_t super, std::uint32_t sub) const {
    const auto vars = vars_of(super);
    const auto values = decode_rank(rank, vars.size(), mdp_.gamma());
    std::uint64_t r = 0;
    for (std::size_t k = 0; k < vars.size(); ++k)
      if ((sub >> vars[k]) & 1U) r = r * static_cast<std::uint64_t>(mdp_.gamma()) + values[k];
    return r;
  }

  /// ‖Pr(Y(i) | X(base ∪ {j}) = w, a) − Pr(Y(i) | X(base) = w|base, a)‖₁ for
  /// the realization `rank` of base ∪ {j}; nullopt when it has zero weight.
  std::optional<double> gain(int i, std::uint32_t base, int j, std::uint64_t rank, int a) const {
    const std::uint32_t joint = base | (1U << j);
    const auto actions = static_cast<std::uint64_t>(mdp_.actions());
    const auto& cj = table(i, joint)[rank * actions + static_cast<std::uint64_t>(a)];
    if (cj.weight <= 0.0) return std::nullopt;
    const auto& cb = table(i, base)[project(rank, joint, base) * actions + static_cast<std::uint64_t>(a)];
    double d = 0.0;
    for (std::size_t y = 0; y < cj.mass.size(); ++y) d += std::abs(cj.mass[y] / cj.weight - cb.mass[y] / cb.weight);
    return d;
  }

  std::uint64_t realizations(std::uint32_t mask) const {
    return checked_pow(mdp_.gamma(), vars_of(mask).size());
  }

  const FactoredMdp& mdp() const { return mdp_; }

 private:
  const FactoredMdp& mdp_;
  std::vector<double> visits_;
  std::uint64_t states_;
  mutable std::map<std::pair<int, std::uint32_t>, std::vector<Cell>> memo_;
};

/// A scored candidate: adding `var` to `base` at realization `values` of
/// base ∪ {var} (ascending index order) under action `action`.
struct ScoredRealization {
  int var = -1;
  std::vector<int> base;
  std::vector<Symbol> values;
  int action = 0;
  double score = 0.0;
};

struct A1Witness {
  ScoredRealization non_parent;           // the j with the largest gain
  std::vector<ScoredRealization> strong;  // per k ∈ S∖Ψ, its weakest realization
};

struct A3Witness {
  std::vector<int> base;  // Ψ
  int j = -1, k = -1;
  std::vector<Symbol> values;  // realization of Ψ ∪ {j, k}
  int action = 0;
  double score_j = 0.0, score_k = 0.0, score_k_given_j = 0.0;
};

struct VariableReport {
  int var = 0;
  ParentSet parents;
  bool a1_holds = false;
  ParentSet strong;            // Φˢᵢ (empty when A1 fails)
  std::optional<double> c1;    // +inf when vacuous
  std::optional<A1Witness> a1_witness;
  double c2 = 0.0;
  std::optional<ScoredRealization> a2_witness;  // realization attaining C₂
  bool a3_holds = true;
  double c3 = kInf;  // +inf when vacuous
  std::optional<A3Witness> a3_witness;
};

struct AssumptionReport {
  std::string weighting;
  std::vector<VariableReport> variables;
  bool a1_holds = true;
  bool a3_holds = true;
  double c1 = kInf;
  double c2 = 0.0;
  double c3 = kInf;
};

namespace detail {

inline std::uint32_t mask_of(const std::vector<int>& vars) {
  std::uint32_t m = 0;
  for (int v : vars) m |= 1U << v;
  return m;
}

/// Subsets of `set` (as a bitmask), in increasing numeric order.
inline std::vector<std::uint32_t> submasks(std::uint32_t set) {
  std::vector<std::uint32_t> out;
  for (std::uint32_t s = set;; s = (s - 1) & set) {
    out.push_back(s);
    if (s == 0) break;
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline ScoredRealization scored(const ExactConditionals& ec, std::uint32_t base, int j, std::uint64_t rank, int a,
                                double score) {
  const std::uint32_t joint = base | (1U << j);
  return {j, ExactConditionals::vars_of(base),
          decode_rank(rank, ExactConditionals::vars_of(joint).size(), ec.mdp().gamma()), a, score};
}

/// Largest / smallest gain of adding j to base over positive-weight realizations.
template <typename Better>
std::optional<ScoredRealization> extreme_gain(const ExactConditionals& ec, int i, std::uint32_t base, int j,
                                              Better better) {
  std::optional<ScoredRealization> best;
  const std::uint32_t joint = base | (1U << j);
  for (std::uint64_t r = 0; r < ec.realizations(joint); ++r)
    for (int a = 0; a < ec.mdp().actions(); ++a) {
      const auto g = ec.gain(i, base, j, r, a);
      if (g && (!best || better(*g, best->score))) best = scored(ec, base, j, r, a, *g);
    }
  return best;
}

struct A1Outcome {
  double slack = kInf;
  std::optional<A1Witness> witness;
};

inline A1Outcome check_strong_candidate(const ExactConditionals& ec, int i, std::uint32_t phi, std::uint32_t strong,
                                        const std::vector<int>& non_parents) {
  A1Outcome out;
  for (std::uint32_t psi : submasks(phi)) {
    if ((strong & ~psi) == 0) continue;
    std::optional<ScoredRealization> worst_j;
    for (int j : non_parents) {
      auto g = extreme_gain(ec, i, psi, j, [](double x, double y) { return x > y; });
      if (g && (!worst_j || g->score > worst_j->score)) worst_j = g;
    }
    if (!worst_j) continue;
    double best_k = -kInf;
    std::vector<ScoredRealization> ks;
    for (int k : ExactConditionals::vars_of(strong & ~psi)) {
      auto g = extreme_gain(ec, i, psi, k, [](double x, double y) { return x < y; });
      const double weakest = g ? g->score : kInf;
      best_k = std::max(best_k, weakest);
      if (g) ks.push_back(*g);
    }
    const double slack = best_k - worst_j->score;
    if (slack < out.slack) {
      out.slack = slack;
      out.witness = A1Witness{*worst_j, ks};
    }
  }
  return out;
}

}  // namespace detail

/// Re-scores an A1 witness; true when it still shows every listed strong
/// candidate failing to beat the non-parent by a positive margin.
inline bool verify_a1_witness(const ExactConditionals& ec, int i, const A1Witness& w) {
  auto rescore = [&](const ScoredRealization& s) -> std::optional<double> {
    const std::uint32_t base = detail::mask_of(s.base);
    std::uint64_t rank = 0;
    for (Symbol v : s.values) rank = rank * static_cast<std::uint64_t>(ec.mdp().gamma()) + v;
    return ec.gain(i, base, s.var, rank, s.action);
  };
  const auto j = rescore(w.non_parent);
  if (!j) return false;
  for (const auto& k : w.strong) {
    const auto g = rescore(k);
    if (!g || *g > *j + kScoreTolerance) return false;
  }
  return true;
}

inline bool verify_a3_witness(const ExactConditionals& ec, int i, const A3Witness& w) {
  const auto g = ec.mdp().gamma();
  const std::uint32_t psi = detail::mask_of(w.base);
  const std::uint32_t all = psi | (1U << w.j) | (1U << w.k);
  std::uint64_t rank = 0;
  for (Symbol v : w.values) rank = rank * static_cast<std::uint64_t>(g) + v;
  const auto sj = ec.gain(i, psi, w.j, ec.project(rank, all, psi | (1U << w.j)), w.action);
  const auto sk = ec.gain(i, psi, w.k, ec.project(rank, all, psi | (1U << w.k)), w.action);
  const auto skj = ec.gain(i, psi | (1U << w.j), w.k, rank, w.action);
  if (!sj || !sk || !skj) return false;
  return *sj >= *sk - kScoreTolerance && *sj < *skj - kScoreTolerance;
}

/// Brute-force check of the three assumptions with exact conditionals under
/// the timestep-summed visit measure of `weighting` (uniform-random by default).
inline AssumptionReport check_assumptions(const FactoredMdp& mdp, const std::optional<Policy>& weighting = std::nullopt) {
  if (mdp.dims() > 10) throw InfeasibleError("check_assumptions: D = " + std::to_string(mdp.dims()) + " exceeds 10");
  require_enumerable(mdp, "check_assumptions");
  const std::uint64_t work = mdp.flat_state_count() * static_cast<std::uint64_t>(mdp.actions()) << mdp.dims();
  if (work > (std::uint64_t{1} << 28))
    throw InfeasibleError("check_assumptions: Γ^D·A·2^D = " + std::to_string(work) + " exceeds 2^28");
  const Policy pol = weighting ? *weighting : Policy::uniform(mdp.actions());
  if (pol.actions() != mdp.actions()) throw std::invalid_argument("check_assumptions: policy action count mismatch");
  const SuccessorTable table(mdp);
  const ExactConditionals ec(mdp, state_action_visits(mdp, pol, table));

  AssumptionReport report;
  report.weighting = pol.kind() + " visit measure summed over t = 0..T-1";
  const std::uint32_t everything = (1U << mdp.dims()) - 1U;
  for (int i = 0; i < mdp.dims(); ++i) {
    VariableReport vr;
    vr.var = i;
    vr.parents = mdp.parents(i);
    const std::uint32_t phi = detail::mask_of(vr.parents);
    const auto non_parents = ExactConditionals::vars_of(everything & ~phi);

    // Assumption 1: the largest nonempty strong subset with a strictly positive margin.
    std::uint32_t strong = 0;
    if (phi == 0) {
      vr.a1_holds = true;
      vr.c1 = kInf;
    } else {
      std::optional<double> best_c1;
      for (std::uint32_t s : detail::submasks(phi)) {
        if (s == 0) continue;
        const auto out = detail::check_strong_candidate(ec, i, phi, s, non_parents);
        if (!(out.slack > kScoreTolerance)) continue;
        const int size = std::popcount(s), best_size = std::popcount(strong);
        if (!best_c1 || size > best_size || (size == best_size && out.slack > *best_c1)) {
          strong = s;
          best_c1 = out.slack;
        }
      }
      if (best_c1) {
        vr.a1_holds = true;
        vr.c1 = best_c1;
      } else {
        vr.a1_holds = false;
        vr.a1_witness = detail::check_strong_candidate(ec, i, phi, phi, non_parents).witness;
      }
    }
    vr.strong = ExactConditionals::vars_of(strong);

    // Assumptions 2 and 3 range over Φˢ ⊆ Ψ ⊆ Φ.
    std::vector<std::uint32_t> bases;
    for (std::uint32_t psi : detail::submasks(phi))
      if ((psi & strong) == strong) bases.push_back(psi);
    for (std::uint32_t psi : bases) {
      for (int j : non_parents) {
        auto g = detail::extreme_gain(ec, i, psi, j, [](double x, double y) { return x > y; });
        if (g && g->score > vr.c2) {
          vr.c2 = g->score;
          vr.a2_witness = g;
        }
      }
      const auto free = ExactConditionals::vars_of(phi & ~psi);
      for (int j : free)
        for (int k : free) {
          if (j == k) continue;
          const std::uint32_t pj = psi | (1U << j), pk = psi | (1U << k), all = pj | (1U << k);
          for (std::uint64_t r = 0; r < ec.realizations(all); ++r)
            for (int a = 0; a < mdp.actions(); ++a) {
              const auto skj = ec.gain(i, pj, k, r, a);
              if (!skj) continue;
              const auto sj = ec.gain(i, psi, j, ec.project(r, all, pj), a);
              const auto sk = ec.gain(i, psi, k, ec.project(r, all, pk), a);
              if (!sj || !sk || *sj < *sk - kScoreTolerance) continue;
              const double slack = *sj - *skj;
              if (slack < vr.c3) {
                vr.c3 = slack;
                if (slack < -kScoreTolerance)
                  vr.a3_witness = A3Witness{ExactConditionals::vars_of(psi), j, k,
                                            decode_rank(r, ExactConditionals::vars_of(all).size(), mdp.gamma()), a,
                                            *sj, *sk, *skj};
              }
            }
        }
    }
    vr.a3_holds = !(vr.c3 < -kScoreTolerance);
    if (vr.a3_holds) {
      vr.a3_witness.reset();
      vr.c3 = std::max(vr.c3, 0.0);
    }

    report.a1_holds = report.a1_holds && vr.a1_holds;
    report.a3_holds = report.a3_holds && vr.a3_holds;
    if (vr.c1) report.c1 = std::min(report.c1, *vr.c1);
    report.c2 = std::max(report.c2, vr.c2);
    report.c3 = std::min(report.c3, vr.c3);
    report.variables.push_back(std::move(vr));
  }
  return report;
}

}  // namespace fmdp
