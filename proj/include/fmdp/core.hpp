#pragma once

// Factored MDP data model: per-variable conditional probability tables over a
// uniform symbol domain, a known reward, a (product or explicit) initial
// distribution, Markov policies, trajectory sampling, and exact / Monte-Carlo
// policy values.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fmdp/rng.hpp"

namespace fmdp {

using Symbol = std::uint16_t;
using State = std::vector<Symbol>;
using ParentSet = std::vector<int>;

inline constexpr double kProbTolerance = 1e-9;
inline constexpr std::uint64_t kMaxEnumerableStates = std::uint64_t{1} << 16;
inline constexpr int kMaxActions = 64;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an operation refuses an input as computationally infeasible
/// (state space too large to enumerate, flat model on a huge space, ...).
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Mixed-radix helpers. The first listed variable is the most significant digit.

/// gamma^k, throwing when the result would not fit comfortably in 62 bits.
inline std::uint64_t checked_pow(int gamma, std::size_t k) {
  std::uint64_t r = 1;
  for (std::size_t i = 0; i < k; ++i) {
    if (r > (std::uint64_t{1} << 62) / static_cast<std::uint64_t>(gamma))
      throw InfeasibleError("realization space " + std::to_string(gamma) + "^" + std::to_string(k) +
                            " exceeds 2^62");
    r *= static_cast<std::uint64_t>(gamma);
  }
  return r;
}

inline std::uint64_t realization_rank(const State& s, std::span<const int> vars, int gamma) {
  std::uint64_t r = 0;
  for (int v : vars) r = r * static_cast<std::uint64_t>(gamma) + s[static_cast<std::size_t>(v)];
  return r;
}

inline std::uint64_t flat_index(const State& s, int gamma) {
  std::uint64_t r = 0;
  for (Symbol x : s) r = r * static_cast<std::uint64_t>(gamma) + x;
  return r;
}

inline State decode_flat(std::uint64_t index, int dims, int gamma) {
  State s(static_cast<std::size_t>(dims));
  for (int i = dims - 1; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = static_cast<Symbol>(index % static_cast<std::uint64_t>(gamma));
    index /= static_cast<std::uint64_t>(gamma);
  }
  return s;
}

/// Decodes a realization rank back into per-variable values (same order as vars).
inline std::vector<Symbol> decode_rank(std::uint64_t rank, std::size_t width, int gamma) {
  std::vector<Symbol> v(width);
  for (std::size_t k = width; k-- > 0;) {
    v[k] = static_cast<Symbol>(rank % static_cast<std::uint64_t>(gamma));
    rank /= static_cast<std::uint64_t>(gamma);
  }
  return v;
}

namespace detail {

inline void check_distribution(std::span<const double> p, const std::string& what) {
  double sum = 0.0;
  for (double x : p) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw std::invalid_argument(what + ": negative or non-finite entry");
    sum += x;
  }
  if (std::abs(sum - 1.0) > kProbTolerance) {
    std::ostringstream os;
    os.precision(17);
    os << what << ": sums to " << sum << ", expected 1";
    throw std::invalid_argument(os.str());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// Conditional probability table for one next-state variable.
/// Layout: probs[(rank * actions + a) * gamma + y].
class Cpt {
 public:
  Cpt() = default;
  Cpt(ParentSet parents, int gamma, int actions, std::vector<double> probs)
      : parents_(std::move(parents)), gamma_(gamma), actions_(actions), probs_(std::move(probs)) {
    if (gamma_ < 2) throw std::invalid_argument("Cpt: gamma must be >= 2");
    if (actions_ < 1) throw std::invalid_argument("Cpt: need at least one action");
    realizations_ = checked_pow(gamma_, parents_.size());
    const auto expected = realizations_ * static_cast<std::uint64_t>(actions_) * static_cast<std::uint64_t>(gamma_);
    if (probs_.size() != expected)
      throw std::invalid_argument("Cpt: table has " + std::to_string(probs_.size()) + " entries, expected " +
                                  std::to_string(expected));
    for (std::uint64_t r = 0; r < realizations_; ++r)
      for (int a = 0; a < actions_; ++a)
        detail::check_distribution(row(r, a), "Cpt row " + std::to_string(r) + "/" + std::to_string(a));
  }

  const ParentSet& parents() const { return parents_; }
  int gamma() const { return gamma_; }
  int actions() const { return actions_; }
  std::uint64_t realizations() const { return realizations_; }
  const std::vector<double>& probs() const { return probs_; }

  std::span<const double> row(std::uint64_t rank, int a) const {
    return {probs_.data() + (rank * static_cast<std::uint64_t>(actions_) + static_cast<std::uint64_t>(a)) *
                                static_cast<std::uint64_t>(gamma_),
            static_cast<std::size_t>(gamma_)};
  }
  std::span<const double> row_for(const State& s, int a) const {
    return row(realization_rank(s, parents_, gamma_), a);
  }

 private:
  ParentSet parents_;
  int gamma_ = 2;
  int actions_ = 1;
  std::uint64_t realizations_ = 1;
  std::vector<double> probs_;
};

/// Known deterministic reward R(s, a) in [0, 1].
class Reward {
 public:
  enum class Kind { constant, variable_equals, table };

  static Reward constant(double value) {
    Reward r;
    r.kind_ = Kind::constant;
    r.hit_ = value;
    return r;
  }
  /// hit if s[var] == value, miss otherwise.
  static Reward variable_equals(int var, Symbol value, double hit = 1.0, double miss = 0.0) {
    Reward r;
    r.kind_ = Kind::variable_equals;
    r.var_ = var;
    r.value_ = value;
    r.hit_ = hit;
    r.miss_ = miss;
    return r;
  }
  /// Explicit table indexed [flat_index(s) * actions + a].
  static Reward table(int gamma, int actions, std::vector<double> values) {
    Reward r;
    r.kind_ = Kind::table;
    r.gamma_ = gamma;
    r.actions_ = actions;
    r.table_ = std::move(values);
    return r;
  }

  double operator()(const State& s, int a) const {
    switch (kind_) {
      case Kind::constant: return hit_;
      case Kind::variable_equals: return s[static_cast<std::size_t>(var_)] == value_ ? hit_ : miss_;
      case Kind::table:
        return table_[flat_index(s, gamma_) * static_cast<std::uint64_t>(actions_) + static_cast<std::uint64_t>(a)];
    }
    return 0.0;
  }

  void validate(int dims, int gamma, int actions) const {
    auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
    switch (kind_) {
      case Kind::constant:
        if (!in_unit(hit_)) throw std::invalid_argument("Reward: constant outside [0,1]");
        break;
      case Kind::variable_equals:
        if (var_ < 0 || var_ >= dims) throw std::invalid_argument("Reward: variable index out of range");
        if (value_ >= gamma) throw std::invalid_argument("Reward: symbol out of range");
        if (!in_unit(hit_) || !in_unit(miss_)) throw std::invalid_argument("Reward: values outside [0,1]");
        break;
      case Kind::table: {
        if (gamma_ != gamma || actions_ != actions) throw std::invalid_argument("Reward: table signature mismatch");
        const auto expected = checked_pow(gamma, static_cast<std::size_t>(dims)) * static_cast<std::uint64_t>(actions);
        if (table_.size() != expected) throw std::invalid_argument("Reward: table size mismatch");
        if (!std::all_of(table_.begin(), table_.end(), in_unit))
          throw std::invalid_argument("Reward: table entries outside [0,1]");
        break;
      }
    }
  }

  Kind kind() const { return kind_; }
  int var() const { return var_; }
  Symbol value() const { return value_; }
  double hit() const { return hit_; }
  double miss() const { return miss_; }
  const std::vector<double>& values() const { return table_; }

 private:
  Kind kind_ = Kind::constant;
  int var_ = 0;
  Symbol value_ = 0;
  double hit_ = 0.0;
  double miss_ = 0.0;
  int gamma_ = 2;
  int actions_ = 1;
  std::vector<double> table_;
};

/// Initial-state distribution: independent per-variable marginals, or an
/// explicit table over flat states for small domains.
class InitialDistribution {
 public:
  enum class Kind { product, table };

  static InitialDistribution product(std::vector<std::vector<double>> marginals) {
    InitialDistribution d;
    d.kind_ = Kind::product;
    d.marginals_ = std::move(marginals);
    return d;
  }
  static InitialDistribution uniform(int dims, int gamma) {
    return product(std::vector<std::vector<double>>(static_cast<std::size_t>(dims),
                                                    std::vector<double>(static_cast<std::size_t>(gamma), 1.0 / gamma)));
  }
  static InitialDistribution table(int dims, int gamma, std::vector<double> probs) {
    InitialDistribution d;
    d.kind_ = Kind::table;
    d.dims_ = dims;
    d.gamma_ = gamma;
    d.probs_ = std::move(probs);
    d.cumulative_.resize(d.probs_.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < d.probs_.size(); ++k) d.cumulative_[k] = (acc += d.probs_[k]);
    return d;
  }

  State sample(Rng& rng) const {
    if (kind_ == Kind::product) {
      State s(marginals_.size());
      for (std::size_t i = 0; i < marginals_.size(); ++i) s[i] = static_cast<Symbol>(rng.categorical(marginals_[i]));
      return s;
    }
    const double u = rng.uniform() * cumulative_.back();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    auto k = static_cast<std::size_t>(std::distance(cumulative_.begin(), it));
    if (k >= probs_.size()) k = probs_.size() - 1;
    while (probs_[k] <= 0.0 && k > 0) --k;
    return decode_flat(k, dims_, gamma_);
  }

  double prob(const State& s) const {
    if (kind_ == Kind::table) return probs_[flat_index(s, gamma_)];
    double p = 1.0;
    for (std::size_t i = 0; i < s.size(); ++i) p *= marginals_[i][s[i]];
    return p;
  }

  void validate(int dims, int gamma) const {
    if (kind_ == Kind::product) {
      if (marginals_.size() != static_cast<std::size_t>(dims)) throw std::invalid_argument("rho: wrong number of marginals");
      for (std::size_t i = 0; i < marginals_.size(); ++i) {
        if (marginals_[i].size() != static_cast<std::size_t>(gamma)) throw std::invalid_argument("rho: marginal size");
        detail::check_distribution(marginals_[i], "rho marginal " + std::to_string(i));
      }
    } else {
      if (dims_ != dims || gamma_ != gamma) throw std::invalid_argument("rho: table signature mismatch");
      if (probs_.size() != checked_pow(gamma, static_cast<std::size_t>(dims)))
        throw std::invalid_argument("rho: table size mismatch");
      detail::check_distribution(probs_, "rho table");
    }
  }

  Kind kind() const { return kind_; }
  const std::vector<std::vector<double>>& marginals() const { return marginals_; }
  const std::vector<double>& probs() const { return probs_; }

 private:
  Kind kind_ = Kind::product;
  std::vector<std::vector<double>> marginals_;
  int dims_ = 0;
  int gamma_ = 2;
  std::vector<double> probs_;
  std::vector<double> cumulative_;
};

/// The parts of an MDP an evaluator is allowed to know without data:
/// dimensions, horizon, the reward function and the initial distribution.
struct MdpMeta {
  int dims = 0;
  int gamma = 2;
  int actions = 1;
  int horizon = 0;
  Reward reward;
  InitialDistribution rho;
};

class FactoredMdp {
 public:
  FactoredMdp(int dims, int gamma, int actions, int horizon, std::vector<Cpt> cpts, Reward reward,
              InitialDistribution rho)
      : dims_(dims),
        gamma_(gamma),
        actions_(actions),
        horizon_(horizon),
        cpts_(std::move(cpts)),
        reward_(std::move(reward)),
        rho_(std::move(rho)) {
    if (dims_ < 1) throw std::invalid_argument("FactoredMdp: need at least one variable");
    if (gamma_ < 2 || gamma_ > std::numeric_limits<Symbol>::max())
      throw std::invalid_argument("FactoredMdp: gamma out of range");
    if (actions_ < 1 || actions_ > kMaxActions) throw std::invalid_argument("FactoredMdp: action count out of range");
    if (horizon_ < 0) throw std::invalid_argument("FactoredMdp: negative horizon");
    if (cpts_.size() != static_cast<std::size_t>(dims_)) throw std::invalid_argument("FactoredMdp: one CPT per variable");
    for (std::size_t i = 0; i < cpts_.size(); ++i) {
      const auto& c = cpts_[i];
      if (c.gamma() != gamma_) throw std::invalid_argument("FactoredMdp: mixed variable domains are not supported");
      if (c.actions() != actions_) throw std::invalid_argument("FactoredMdp: CPT action count mismatch");
      const auto& p = c.parents();
      if (p.size() > static_cast<std::size_t>(dims_)) throw std::invalid_argument("FactoredMdp: too many parents");
      for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] < 0 || p[k] >= dims_) throw std::invalid_argument("FactoredMdp: parent index out of range");
        if (k > 0 && p[k] <= p[k - 1])
          throw std::invalid_argument("FactoredMdp: parents of variable " + std::to_string(i) +
                                      " must be distinct and sorted");
      }
    }
    reward_.validate(dims_, gamma_, actions_);
    rho_.validate(dims_, gamma_);
  }

  int dims() const { return dims_; }
  int gamma() const { return gamma_; }
  int actions() const { return actions_; }
  int horizon() const { return horizon_; }
  const std::vector<Cpt>& cpts() const { return cpts_; }
  const Cpt& cpt(int i) const { return cpts_[static_cast<std::size_t>(i)]; }
  const ParentSet& parents(int i) const { return cpt(i).parents(); }
  std::vector<ParentSet> parent_sets() const {
    std::vector<ParentSet> out;
    for (const auto& c : cpts_) out.push_back(c.parents());
    return out;
  }
  const Reward& reward() const { return reward_; }
  const InitialDistribution& rho() const { return rho_; }
  double reward(const State& s, int a) const { return reward_(s, a); }

  MdpMeta meta() const { return {dims_, gamma_, actions_, horizon_, reward_, rho_}; }

  FactoredMdp with_horizon(int horizon) const {
    FactoredMdp copy = *this;
    if (horizon < 0) throw std::invalid_argument("FactoredMdp: negative horizon");
    copy.horizon_ = horizon;
    return copy;
  }

  /// Γ^D, or throws when it exceeds 2^62.
  std::uint64_t flat_state_count() const { return checked_pow(gamma_, static_cast<std::size_t>(dims_)); }
  bool enumerable() const {
    try {
      return flat_state_count() <= kMaxEnumerableStates;
    } catch (const InfeasibleError&) {
      return false;
    }
  }

  void check_state(const State& s) const {
    if (s.size() != static_cast<std::size_t>(dims_))
      throw std::invalid_argument("state has " + std::to_string(s.size()) + " entries, expected " + std::to_string(dims_));
    for (Symbol x : s)
      if (x >= gamma_) throw std::invalid_argument("state entry out of domain");
  }
  void check_action(int a) const {
    if (a < 0 || a >= actions_) throw std::invalid_argument("action out of range");
  }

 private:
  int dims_;
  int gamma_;
  int actions_;
  int horizon_;
  std::vector<Cpt> cpts_;
  Reward reward_;
  InitialDistribution rho_;
};

// ---------------------------------------------------------------------------
// Policies

class Policy {
 public:
  struct Uniform {};
  struct FixedAction {
    int action = 0;
  };
  /// Probabilities indexed [flat_index(s) * actions + a].
  struct Tabular {
    int gamma = 2;
    std::vector<double> probs;
  };
  /// Deterministic choice by parent realization of one variable:
  /// best[rank(s(vars))].
  struct ByRealization {
    ParentSet vars;
    int gamma = 2;
    std::vector<int> best;
  };
  using Rule = std::variant<Uniform, FixedAction, Tabular, ByRealization>;

  static Policy uniform(int actions) { return Policy(actions, Uniform{}); }
  static Policy fixed_action(int actions, int action) {
    if (action < 0 || action >= actions) throw std::invalid_argument("fixed_action: action out of range");
    return Policy(actions, FixedAction{action});
  }
  static Policy tabular(int gamma, int actions, std::vector<double> probs) {
    if (probs.size() % static_cast<std::size_t>(actions) != 0) throw std::invalid_argument("tabular: size mismatch");
    for (std::size_t s = 0; s < probs.size() / static_cast<std::size_t>(actions); ++s)
      detail::check_distribution(std::span<const double>(probs).subspan(s * static_cast<std::size_t>(actions),
                                                                        static_cast<std::size_t>(actions)),
                                 "tabular policy row " + std::to_string(s));
    return Policy(actions, Tabular{gamma, std::move(probs)});
  }
  static Policy deterministic(int gamma, int actions, const std::vector<int>& choice) {
    std::vector<double> probs(choice.size() * static_cast<std::size_t>(actions), 0.0);
    for (std::size_t s = 0; s < choice.size(); ++s) {
      if (choice[s] < 0 || choice[s] >= actions) throw std::invalid_argument("deterministic: action out of range");
      probs[s * static_cast<std::size_t>(actions) + static_cast<std::size_t>(choice[s])] = 1.0;
    }
    return Policy(actions, Tabular{gamma, std::move(probs)});
  }
  static Policy by_realization(int actions, ParentSet vars, int gamma, std::vector<int> best) {
    for (int b : best)
      if (b < 0 || b >= actions) throw std::invalid_argument("by_realization: action out of range");
    return Policy(actions, ByRealization{std::move(vars), gamma, std::move(best)});
  }

  int actions() const { return actions_; }
  double floor() const { return eps_; }
  const Rule& rule() const { return rule_; }

  std::string kind() const {
    std::string base = std::visit(
        [](const auto& r) -> std::string {
          using T = std::decay_t<decltype(r)>;
          if constexpr (std::is_same_v<T, Uniform>) return "uniform-random";
          else if constexpr (std::is_same_v<T, FixedAction>) return "fixed-action";
          else if constexpr (std::is_same_v<T, Tabular>) return "tabular";
          else return "by-realization";
        },
        rule_);
    return eps_ > 0.0 ? "epsilon-floored(" + base + ")" : base;
  }

  /// (1 - eps) * base + eps * uniform, written into out[0..actions).
  void action_probs(const State& s, std::span<double> out) const {
    std::visit(
        [&](const auto& r) {
          using T = std::decay_t<decltype(r)>;
          if constexpr (std::is_same_v<T, Uniform>) {
            std::fill(out.begin(), out.end(), 1.0 / actions_);
          } else if constexpr (std::is_same_v<T, FixedAction>) {
            std::fill(out.begin(), out.end(), 0.0);
            out[static_cast<std::size_t>(r.action)] = 1.0;
          } else if constexpr (std::is_same_v<T, Tabular>) {
            const auto base = flat_index(s, r.gamma) * static_cast<std::uint64_t>(actions_);
            for (int a = 0; a < actions_; ++a) out[static_cast<std::size_t>(a)] = r.probs[base + static_cast<std::uint64_t>(a)];
          } else {
            std::fill(out.begin(), out.end(), 0.0);
            out[static_cast<std::size_t>(r.best[realization_rank(s, r.vars, r.gamma)])] = 1.0;
          }
        },
        rule_);
    if (eps_ > 0.0)
      for (auto& p : out) p = (1.0 - eps_) * p + eps_ / actions_;
  }

  double action_prob(const State& s, int a) const {
    std::array<double, kMaxActions> buf{};
    action_probs(s, std::span<double>(buf.data(), static_cast<std::size_t>(actions_)));
    return buf[static_cast<std::size_t>(a)];
  }

  int sample(const State& s, Rng& rng) const {
    std::array<double, kMaxActions> buf{};
    action_probs(s, std::span<double>(buf.data(), static_cast<std::size_t>(actions_)));
    return static_cast<int>(rng.categorical(std::span<const double>(buf.data(), static_cast<std::size_t>(actions_))));
  }

  /// Composes with an additional epsilon floor. Two floors e1 then e2 equal a
  /// single floor 1 - (1 - e1)(1 - e2).
  Policy floored(double eps) const {
    if (!(eps >= 0.0 && eps <= 1.0)) throw std::invalid_argument("epsilon_floor: eps must lie in [0,1]");
    Policy p = *this;
    p.eps_ = 1.0 - (1.0 - eps_) * (1.0 - eps);
    return p;
  }

 private:
  Policy(int actions, Rule rule) : actions_(actions), rule_(std::move(rule)) {
    if (actions_ < 1 || actions_ > kMaxActions) throw std::invalid_argument("Policy: action count out of range");
  }

  int actions_;
  Rule rule_;
  double eps_ = 0.0;
};

inline Policy epsilon_floor(const Policy& base, double eps) { return base.floored(eps); }

// ---------------------------------------------------------------------------
// Dynamics

struct Step {
  State state;
  int action = 0;
  double reward = 0.0;
};

struct Trajectory {
  std::vector<Step> steps;
  State final_state;  // s_T, so a length-T trajectory holds T transitions
  std::uint64_t seed = 0;
};

using Batch = std::vector<Trajectory>;

/// Samples each next-state variable independently from its CPT row. No input checks.
inline State advance(const FactoredMdp& mdp, const State& s, int a, Rng& rng) {
  State next(s.size());
  for (int i = 0; i < mdp.dims(); ++i)
    next[static_cast<std::size_t>(i)] = static_cast<Symbol>(rng.categorical(mdp.cpt(i).row_for(s, a)));
  return next;
}

inline std::pair<State, double> step(const FactoredMdp& mdp, const State& s, int a, Rng& rng) {
  mdp.check_state(s);
  mdp.check_action(a);
  const double r = mdp.reward(s, a);
  return {advance(mdp, s, a, rng), r};
}

inline Trajectory sample_trajectory(const FactoredMdp& mdp, const Policy& policy, std::uint64_t seed) {
  if (policy.actions() != mdp.actions()) throw std::invalid_argument("sample_trajectory: policy action count mismatch");
  Rng rng(seed);
  Trajectory traj;
  traj.seed = seed;
  traj.steps.reserve(static_cast<std::size_t>(mdp.horizon()));
  State s = mdp.rho().sample(rng);
  for (int t = 0; t < mdp.horizon(); ++t) {
    const int a = policy.sample(s, rng);
    const double r = mdp.reward(s, a);
    State next = advance(mdp, s, a, rng);
    traj.steps.push_back({std::move(s), a, r});
    s = std::move(next);
  }
  traj.final_state = std::move(s);
  return traj;
}

/// H trajectories; trajectory h uses stream derive_seed(seed, h), so a batch of
/// size H is a prefix of any larger batch drawn with the same seed.
inline Batch sample_batch(const FactoredMdp& mdp, const Policy& policy, std::size_t count, std::uint64_t seed) {
  Batch batch;
  batch.reserve(count);
  for (std::size_t h = 0; h < count; ++h) batch.push_back(sample_trajectory(mdp, policy, derive_seed(seed, h)));
  return batch;
}

inline double trajectory_return(const Trajectory& traj) {
  double g = 0.0;
  for (const auto& st : traj.steps) g += st.reward;
  return g;
}

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Mean and standard error (sample std with n-1 denominator over sqrt n).
inline McEstimate summarize_returns(std::span<const double> returns) {
  McEstimate e;
  if (returns.empty()) return e;
  double sum = 0.0;
  for (double g : returns) sum += g;
  e.mean = sum / static_cast<double>(returns.size());
  if (returns.size() > 1) {
    double ss = 0.0;
    for (double g : returns) ss += (g - e.mean) * (g - e.mean);
    e.std_error = std::sqrt(ss / static_cast<double>(returns.size() - 1)) / std::sqrt(static_cast<double>(returns.size()));
  }
  return e;
}

inline McEstimate monte_carlo_value(const FactoredMdp& mdp, const Policy& policy, std::size_t rollouts,
                                    std::uint64_t seed) {
  if (rollouts < 1) throw std::invalid_argument("monte_carlo_value: need at least one rollout");
  std::vector<double> returns(rollouts);
  for (std::size_t r = 0; r < rollouts; ++r) {
    Rng rng(derive_seed(seed, r));
    State s = mdp.rho().sample(rng);
    double g = 0.0;
    for (int t = 0; t < mdp.horizon(); ++t) {
      const int a = policy.sample(s, rng);
      g += mdp.reward(s, a);
      s = advance(mdp, s, a, rng);
    }
    returns[r] = g;
  }
  return summarize_returns(returns);
}

// ---------------------------------------------------------------------------
// Exact computations over the flat state space

inline void require_enumerable(const FactoredMdp& mdp, const std::string& what) {
  std::uint64_t n = 0;
  try {
    n = mdp.flat_state_count();
  } catch (const InfeasibleError&) {
    n = std::numeric_limits<std::uint64_t>::max();
  }
  if (n > kMaxEnumerableStates) {
    std::ostringstream os;
    os << what << ": flat state space " << mdp.gamma() << "^" << mdp.dims();
    if (n != std::numeric_limits<std::uint64_t>::max()) os << " = " << n;
    os << " exceeds the enumeration limit " << kMaxEnumerableStates;
    throw InfeasibleError(os.str());
  }
}

/// Sparse next-state law P(s' | s, a) for every flat (s, a), built as the
/// product of the nonzero entries of each variable's CPT row.
class SuccessorTable {
 public:
  static constexpr std::uint64_t kMaxEntries = std::uint64_t{1} << 26;

  struct Entry {
    std::uint32_t next;
    double prob;
  };

  explicit SuccessorTable(const FactoredMdp& mdp) : states_(0), actions_(mdp.actions()) {
    require_enumerable(mdp, "SuccessorTable");
    states_ = mdp.flat_state_count();
    offsets_.reserve(states_ * static_cast<std::uint64_t>(actions_) + 1);
    offsets_.push_back(0);
    const auto dims = static_cast<std::size_t>(mdp.dims());
    std::vector<std::vector<std::pair<Symbol, double>>> support(dims);
    std::vector<std::size_t> digit(dims);
    for (std::uint64_t si = 0; si < states_; ++si) {
      const State s = decode_flat(si, mdp.dims(), mdp.gamma());
      for (int a = 0; a < actions_; ++a) {
        std::uint64_t combos = 1;
        for (std::size_t i = 0; i < dims; ++i) {
          support[i].clear();
          const auto row = mdp.cpt(static_cast<int>(i)).row_for(s, a);
          for (std::size_t y = 0; y < row.size(); ++y)
            if (row[y] > 0.0) support[i].emplace_back(static_cast<Symbol>(y), row[y]);
          combos *= support[i].size();
        }
        if (entries_.size() + combos > kMaxEntries)
          throw InfeasibleError("SuccessorTable: more than 2^26 nonzero transition entries");
        std::fill(digit.begin(), digit.end(), 0);
        for (std::uint64_t c = 0; c < combos; ++c) {
          std::uint64_t idx = 0;
          double p = 1.0;
          for (std::size_t i = 0; i < dims; ++i) {
            const auto& [y, q] = support[i][digit[i]];
            idx = idx * static_cast<std::uint64_t>(mdp.gamma()) + y;
            p *= q;
          }
          entries_.push_back({static_cast<std::uint32_t>(idx), p});
          for (std::size_t i = dims; i-- > 0;) {
            if (++digit[i] < support[i].size()) break;
            digit[i] = 0;
          }
        }
        offsets_.push_back(entries_.size());
      }
    }
  }

  std::uint64_t states() const { return states_; }
  int actions() const { return actions_; }
  std::span<const Entry> successors(std::uint64_t s, int a) const {
    const auto k = s * static_cast<std::uint64_t>(actions_) + static_cast<std::uint64_t>(a);
    return {entries_.data() + offsets_[k], entries_.data() + offsets_[k + 1]};
  }

 private:
  std::uint64_t states_;
  int actions_;
  std::vector<std::uint64_t> offsets_;
  std::vector<Entry> entries_;
};

/// Flat ρ as a dense vector.
inline std::vector<double> initial_vector(const FactoredMdp& mdp) {
  require_enumerable(mdp, "initial_vector");
  const auto n = mdp.flat_state_count();
  std::vector<double> rho(n);
  for (std::uint64_t s = 0; s < n; ++s) rho[s] = mdp.rho().prob(decode_flat(s, mdp.dims(), mdp.gamma()));
  return rho;
}

/// Exact ν = ρᵀV₀ by backward induction: V_T = 0,
/// V_t(s) = Σ_a π(a|s) [R(s,a) + Σ_s' P(s'|s,a) V_{t+1}(s')].
inline double exact_value(const FactoredMdp& mdp, const Policy& policy, const SuccessorTable* table = nullptr) {
  require_enumerable(mdp, "exact_value");
  if (mdp.horizon() == 0) return 0.0;
  std::optional<SuccessorTable> own;
  if (table == nullptr) table = &own.emplace(mdp);
  const auto n = table->states();
  const auto actions = static_cast<std::size_t>(mdp.actions());
  std::vector<double> next(n, 0.0), cur(n, 0.0);
  std::vector<State> states(n);
  for (std::uint64_t s = 0; s < n; ++s) states[s] = decode_flat(s, mdp.dims(), mdp.gamma());
  std::vector<double> pi(actions);
  for (int t = mdp.horizon() - 1; t >= 0; --t) {
    for (std::uint64_t s = 0; s < n; ++s) {
      policy.action_probs(states[s], pi);
      double v = 0.0;
      for (std::size_t a = 0; a < actions; ++a) {
        if (pi[a] == 0.0) continue;
        double q = mdp.reward(states[s], static_cast<int>(a));
        if (t + 1 < mdp.horizon())
          for (const auto& e : table->successors(s, static_cast<int>(a))) q += e.prob * next[e.next];
        v += pi[a] * q;
      }
      cur[s] = v;
    }
    std::swap(cur, next);
  }
  double nu = 0.0;
  for (std::uint64_t s = 0; s < n; ++s) nu += mdp.rho().prob(states[s]) * next[s];
  return nu;
}

}  // namespace fmdp
