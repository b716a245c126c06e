#pragma once

// Benchmark domains (Taxi, random FMDPs, copy chain, the two assumption
// counterexamples) and target-policy planners on the true model.

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmdp/core.hpp"

namespace fmdp {

namespace detail {

/// Builds a CPT by evaluating law(parent values, action) → distribution for every row.
template <typename Law>
Cpt tabulate_cpt(ParentSet parents, int gamma, int actions, Law&& law) {
  const auto rows = checked_pow(gamma, parents.size());
  std::vector<double> probs;
  probs.reserve(rows * static_cast<std::uint64_t>(actions) * static_cast<std::uint64_t>(gamma));
  for (std::uint64_t r = 0; r < rows; ++r) {
    const auto v = decode_rank(r, parents.size(), gamma);
    for (int a = 0; a < actions; ++a) {
      const std::vector<double> p = law(v, a);
      probs.insert(probs.end(), p.begin(), p.end());
    }
  }
  return Cpt(std::move(parents), gamma, actions, std::move(probs));
}

inline std::vector<double> point_mass(int gamma, int y) {
  std::vector<double> p(static_cast<std::size_t>(gamma), 0.0);
  p[static_cast<std::size_t>(y)] = 1.0;
  return p;
}

inline Cpt self_copy(int var, int gamma, int actions) {
  return tabulate_cpt({var}, gamma, actions, [gamma](const std::vector<Symbol>& v, int) { return point_mass(gamma, v[0]); });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Taxi

namespace taxi {

inline constexpr int kRow = 0, kCol = 1, kPassenger = 2, kDestination = 3;
inline constexpr int kSouth = 0, kNorth = 1, kEast = 2, kWest = 3, kPickup = 4, kDropoff = 5;
inline constexpr int kInTaxi = 4;
inline constexpr int kSize = 5;
inline constexpr std::array<std::array<int, 2>, 4> kDepots{{{0, 0}, {0, 4}, {4, 0}, {4, 3}}};

inline double rescale(double classic) { return (classic + 10.0) / 30.0; }

/// Wall between (row, col) and (row, col + 1).
inline bool wall_east(int row, int col) {
  if (col >= kSize - 1) return true;
  if (row <= 1) return col == 1;
  if (row >= 3) return col == 0 || col == 2;
  return false;
}

inline int depot_at(int row, int col) {
  for (int k = 0; k < 4; ++k)
    if (kDepots[static_cast<std::size_t>(k)][0] == row && kDepots[static_cast<std::size_t>(k)][1] == col) return k;
  return -1;
}

/// Classic Taxi reward: +20 delivery, -10 illegal pickup/dropoff, -1 otherwise.
inline double classic_reward(int row, int col, int pass, int dest, int a) {
  if (a == kPickup) return (pass < 4 && depot_at(row, col) == pass) ? -1.0 : -10.0;
  if (a == kDropoff) {
    if (pass != kInTaxi) return -10.0;
    const int d = depot_at(row, col);
    if (d >= 0 && d == dest) return 20.0;
    return d >= 0 ? -1.0 : -10.0;
  }
  return -1.0;
}

}  // namespace taxi

/// 5×5 Taxi. Variables: row, col, passenger (0-3 depot, 4 in taxi), destination
/// (0-3; symbol 4 is never reached). A delivery respawns passenger and
/// destination uniformly over the depots so the episode runs the full horizon.
inline FactoredMdp make_taxi(int horizon = 200) {
  using namespace taxi;
  const int g = kSize;
  const int actions = 6;
  std::vector<Cpt> cpts;
  cpts.push_back(detail::tabulate_cpt({kRow}, g, actions, [](const std::vector<Symbol>& v, int a) {
    int row = v[0];
    if (a == kSouth) row = std::min(row + 1, kSize - 1);
    if (a == kNorth) row = std::max(row - 1, 0);
    return detail::point_mass(kSize, row);
  }));
  cpts.push_back(detail::tabulate_cpt({kRow, kCol}, g, actions, [](const std::vector<Symbol>& v, int a) {
    const int row = v[0];
    int col = v[1];
    if (a == kEast && !wall_east(row, col)) ++col;
    if (a == kWest && col > 0 && !wall_east(row, col - 1)) --col;
    return detail::point_mass(kSize, col);
  }));
  const std::vector<double> respawn{0.25, 0.25, 0.25, 0.25, 0.0};
  cpts.push_back(detail::tabulate_cpt({kRow, kCol, kPassenger, kDestination}, g, actions,
                                      [&](const std::vector<Symbol>& v, int a) {
                                        const int depot = depot_at(v[0], v[1]);
                                        const int pass = v[2], dest = v[3];
                                        if (a == kPickup && pass < 4 && depot == pass) return detail::point_mass(kSize, kInTaxi);
                                        if (a == kDropoff && pass == kInTaxi && depot >= 0)
                                          return depot == dest ? respawn : detail::point_mass(kSize, depot);
                                        return detail::point_mass(kSize, pass);
                                      }));
  cpts.push_back(detail::tabulate_cpt({kRow, kCol, kPassenger, kDestination}, g, actions,
                                      [&](const std::vector<Symbol>& v, int a) {
                                        const int depot = depot_at(v[0], v[1]);
                                        if (a == kDropoff && v[2] == kInTaxi && depot >= 0 && depot == v[3]) return respawn;
                                        return detail::point_mass(kSize, v[3]);
                                      }));
  std::vector<double> reward(625 * actions);
  for (std::uint64_t s = 0; s < 625; ++s) {
    const State st = decode_flat(s, 4, g);
    for (int a = 0; a < actions; ++a)
      reward[s * actions + static_cast<std::uint64_t>(a)] = rescale(classic_reward(st[0], st[1], st[2], st[3], a));
  }
  std::vector<std::vector<double>> rho(4, std::vector<double>(5, 0.2));
  rho[kDestination] = respawn;
  return FactoredMdp(4, g, actions, horizon, std::move(cpts), Reward::table(g, actions, std::move(reward)),
                     InitialDistribution::product(std::move(rho)));
}

/// Flat states reachable from the support of ρ under any action sequence.
inline std::vector<std::uint64_t> reachable_states(const FactoredMdp& mdp) {
  const SuccessorTable table(mdp);
  const auto n = table.states();
  std::vector<char> seen(n, 0);
  std::deque<std::uint64_t> frontier;
  for (std::uint64_t s = 0; s < n; ++s)
    if (mdp.rho().prob(decode_flat(s, mdp.dims(), mdp.gamma())) > 0.0) {
      seen[s] = 1;
      frontier.push_back(s);
    }
  while (!frontier.empty()) {
    const auto s = frontier.front();
    frontier.pop_front();
    for (int a = 0; a < mdp.actions(); ++a)
      for (const auto& e : table.successors(s, a))
        if (!seen[e.next]) {
          seen[e.next] = 1;
          frontier.push_back(e.next);
        }
  }
  std::vector<std::uint64_t> out;
  for (std::uint64_t s = 0; s < n; ++s)
    if (seen[s]) out.push_back(s);
  return out;
}

// ---------------------------------------------------------------------------

/// Random FMDP: each variable draws its parent count uniformly from 1..4
/// (capped at D) and that many distinct parents; CPT entries are Uniform(0,1)
/// and row-normalized; reward is 1 iff the last variable equals 1.
inline FactoredMdp random_fmdp(int dims, int gamma, int actions, std::uint64_t seed, int horizon = 200,
                               int max_parents = 4) {
  if (dims < 1 || gamma < 2 || actions < 1 || max_parents < 1)
    throw std::invalid_argument("random_fmdp: need D >= 1, gamma >= 2, A >= 1");
  Rng rng(derive_seed(seed, fnv1a("random-fmdp")));
  std::vector<Cpt> cpts;
  for (int i = 0; i < dims; ++i) {
    const int count = std::min(1 + static_cast<int>(rng.index(static_cast<std::size_t>(max_parents))), dims);
    std::vector<int> pool(static_cast<std::size_t>(dims));
    std::iota(pool.begin(), pool.end(), 0);
    for (int k = 0; k < count; ++k)
      std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(k) + rng.index(pool.size() - static_cast<std::size_t>(k))]);
    ParentSet parents(pool.begin(), pool.begin() + count);
    std::sort(parents.begin(), parents.end());
    cpts.push_back(detail::tabulate_cpt(parents, gamma, actions, [&](const std::vector<Symbol>&, int) {
      std::vector<double> p(static_cast<std::size_t>(gamma));
      double sum = 0.0;
      for (auto& x : p) sum += (x = rng.uniform());
      if (sum <= 0.0) return detail::point_mass(gamma, 0);
      for (auto& x : p) x /= sum;
      return p;
    }));
  }
  return FactoredMdp(dims, gamma, actions, horizon, std::move(cpts), Reward::variable_equals(dims - 1, 1),
                     InitialDistribution::uniform(dims, gamma));
}

/// Every variable copies itself: Y(i) = X(i) under every action.
inline FactoredMdp make_copy_chain(int dims = 8, int gamma = 2, int actions = 2, int horizon = 50) {
  std::vector<Cpt> cpts;
  for (int i = 0; i < dims; ++i) cpts.push_back(detail::self_copy(i, gamma, actions));
  return FactoredMdp(dims, gamma, actions, horizon, std::move(cpts), Reward::variable_equals(dims - 1, 1),
                     InitialDistribution::uniform(dims, gamma));
}

/// Y(3) = f(X(1), X(2)) with X(1), X(2) self-copying and uniform, and ρ placing
/// X(3) = f(X(1), X(2)) so that X(3) is a perfect proxy of Y(3) at every step.
/// Rows of f have 3, 3, 1, 1 ones: each single parent value leaves Y(3) partly
/// uncertain while X(3) pins it down.
inline const std::array<std::array<int, 4>, 4>& assumption1_table() {
  static const std::array<std::array<int, 4>, 4> f{{{1, 1, 1, 0}, {1, 1, 0, 1}, {1, 0, 0, 0}, {0, 1, 0, 0}}};
  return f;
}

inline FactoredMdp make_assumption1_violation(int horizon = 10) {
  const int g = 4;
  const auto& f = assumption1_table();
  std::vector<Cpt> cpts;
  cpts.push_back(detail::self_copy(0, g, 1));
  cpts.push_back(detail::self_copy(1, g, 1));
  cpts.push_back(detail::tabulate_cpt({0, 1}, g, 1, [&](const std::vector<Symbol>& v, int) {
    return detail::point_mass(g, f[v[0]][v[1]]);
  }));
  std::vector<double> rho(64, 0.0);
  for (int x1 = 0; x1 < g; ++x1)
    for (int x2 = 0; x2 < g; ++x2)
      rho[static_cast<std::size_t>((x1 * g + x2) * g + f[static_cast<std::size_t>(x1)][static_cast<std::size_t>(x2)])] = 1.0 / 16.0;
  return FactoredMdp(3, g, 1, horizon, std::move(cpts), Reward::variable_equals(2, 1),
                     InitialDistribution::table(3, g, std::move(rho)));
}

/// Y(3) = X(1) XOR X(2) with X(1), X(2) redrawn uniformly every step.
inline FactoredMdp make_assumption3_violation(int horizon = 10) {
  const int g = 2;
  std::vector<Cpt> cpts;
  for (int k = 0; k < 2; ++k)
    cpts.push_back(detail::tabulate_cpt({}, g, 1, [](const std::vector<Symbol>&, int) { return std::vector<double>{0.5, 0.5}; }));
  cpts.push_back(detail::tabulate_cpt({0, 1}, g, 1, [](const std::vector<Symbol>& v, int) {
    return detail::point_mass(2, v[0] ^ v[1]);
  }));
  return FactoredMdp(3, g, 1, horizon, std::move(cpts), Reward::variable_equals(2, 1), InitialDistribution::uniform(3, g));
}

// ---------------------------------------------------------------------------
// Planning

/// Finite-horizon backward induction on the true model. Returns the
/// deterministic stationary policy greedy in the first-stage Q values (ties to
/// the lowest action), wrapped with the given epsilon floor.
inline Policy plan_target_policy(const FactoredMdp& mdp, double eps_floor) {
  require_enumerable(mdp, "plan_target_policy");
  const SuccessorTable table(mdp);
  const auto n = table.states();
  const int actions = mdp.actions();
  std::vector<State> states(n);
  for (std::uint64_t s = 0; s < n; ++s) states[s] = decode_flat(s, mdp.dims(), mdp.gamma());
  std::vector<double> next(n, 0.0), cur(n, 0.0);
  std::vector<int> choice(n, 0);
  const int stages = std::max(mdp.horizon(), 1);
  for (int t = stages - 1; t >= 0; --t) {
    for (std::uint64_t s = 0; s < n; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int a = 0; a < actions; ++a) {
        double q = mdp.reward(states[s], a);
        if (t + 1 < stages)
          for (const auto& e : table.successors(s, a)) q += e.prob * next[e.next];
        if (q > best + 1e-12) {
          best = q;
          arg = a;
        }
      }
      cur[s] = best;
      if (t == 0) choice[s] = arg;
    }
    std::swap(cur, next);
  }
  return Policy::deterministic(mdp.gamma(), actions, choice).floored(eps_floor);
}

/// One-step greedy policy for a reward of the variable-equals kind: in each
/// realization of the reward variable's parents, the action maximizing the
/// probability that the reward variable takes the rewarded value next step.
/// Works on models too large to enumerate.
inline Policy plan_myopic_policy(const FactoredMdp& mdp, double eps_floor) {
  const auto& r = mdp.reward();
  if (r.kind() != Reward::Kind::variable_equals)
    throw std::invalid_argument("plan_myopic_policy: needs a variable-equals reward");
  const auto& cpt = mdp.cpt(r.var());
  const double sign = r.hit() >= r.miss() ? 1.0 : -1.0;
  std::vector<int> best(cpt.realizations(), 0);
  for (std::uint64_t v = 0; v < cpt.realizations(); ++v) {
    double top = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < mdp.actions(); ++a) {
      const double p = sign * cpt.row(v, a)[r.value()];
      if (p > top + 1e-12) {
        top = p;
        best[v] = a;
      }
    }
  }
  return Policy::by_realization(mdp.actions(), cpt.parents(), mdp.gamma(), std::move(best)).floored(eps_floor);
}

// ---------------------------------------------------------------------------
// Registry

struct DomainParams {
  std::uint64_t seed = 0;
  int dims = 20;
  int gamma = 2;
  int actions = 4;
  int horizon = -1;  // domain default when negative
};

inline const std::vector<std::string>& domain_names() {
  static const std::vector<std::string> names{"taxi", "random-fmdp", "assumption1-violation", "assumption3-violation",
                                              "copy-chain"};
  return names;
}

inline FactoredMdp make_domain(const std::string& name, const DomainParams& p = {}) {
  auto h = [&](int fallback) { return p.horizon >= 0 ? p.horizon : fallback; };
  if (name == "taxi") return make_taxi(h(200));
  if (name == "random-fmdp") return random_fmdp(p.dims, p.gamma, p.actions, p.seed, h(200));
  if (name == "assumption1-violation") return make_assumption1_violation(h(10));
  if (name == "assumption3-violation") return make_assumption3_violation(h(10));
  if (name == "copy-chain") return make_copy_chain(p.dims, p.gamma, p.actions, h(50));
  throw std::invalid_argument("unknown domain '" + name + "'");
}

}  // namespace fmdp
