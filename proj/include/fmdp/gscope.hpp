#pragma once

// Greedy structure learning from batch transitions: count tables, empirical
// conditionals, the sufficiency threshold N(eps, delta1), candidate scoring and
// learned-model assembly with the induced-MDP known set.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "fmdp/core.hpp"

namespace fmdp {

/// Raised when a conditional is requested for a realization with zero count.
class UnobservedRealization : public Error {
 public:
  using Error::Error;
};

/// ⌈(2Γ²/ε²) ln(2Γ/δ₁)⌉.
inline std::uint64_t sample_threshold(double eps, double delta1, int gamma) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw std::invalid_argument("sample_threshold: eps must be positive");
  if (gamma < 2) throw std::invalid_argument("sample_threshold: gamma must be >= 2");
  if (!(delta1 > 0.0) || !(delta1 < 2.0 * gamma))
    throw std::invalid_argument("sample_threshold: delta1 must lie in (0, 2*gamma)");
  const long double g = gamma;
  const long double e = eps;
  const long double x = (2.0L * g * g / (e * e)) * std::log(2.0L * g / static_cast<long double>(delta1));
  if (x > 1e18L) throw std::invalid_argument("sample_threshold: threshold overflows");
  // Relative slack so that closed forms landing on an integer are not bumped up by rounding.
  const long double n = std::ceil(x * (1.0L - 1e-12L));
  return n < 1.0L ? 1 : static_cast<std::uint64_t>(n);
}

struct Thresholds {
  double eps = 0.1;
  double delta1 = 0.05;
  double c2 = 0.0;
  /// Replaces N(eps, delta1) as the count threshold when set.
  std::optional<std::uint64_t> min_count;

  std::uint64_t count_threshold(int gamma) const {
    return min_count ? *min_count : sample_threshold(eps, delta1, gamma);
  }
  void validate() const {
    if (!(eps > 0.0)) throw std::invalid_argument("thresholds: eps must be positive");
    if (!(delta1 > 0.0 && delta1 < 1.0)) throw std::invalid_argument("thresholds: delta1 must lie in (0,1)");
    if (!(c2 >= 0.0)) throw std::invalid_argument("thresholds: c2 must be nonnegative");
  }
};

inline double l1_diff(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("l1_diff: length mismatch");
  double d = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) d += std::abs(p[k] - q[k]);
  return d;
}

// ---------------------------------------------------------------------------

struct Transition {
  State state;
  int action = 0;
  State next;
  double weight = 1.0;
};

/// One-step transitions aggregated into (s, a, s') → weight, sorted, so that
/// every statistic computed from it is independent of trajectory order.
class TransitionSet {
 public:
  TransitionSet(int dims, int gamma, int actions) : dims_(dims), gamma_(gamma), actions_(actions) {}

  static TransitionSet from_batch(const Batch& batch, int dims, int gamma, int actions) {
    std::vector<Transition> raw;
    for (const auto& traj : batch) {
      for (std::size_t t = 0; t < traj.steps.size(); ++t) {
        const State& next = t + 1 < traj.steps.size() ? traj.steps[t + 1].state : traj.final_state;
        raw.push_back({traj.steps[t].state, traj.steps[t].action, next, 1.0});
      }
    }
    return from_transitions(std::move(raw), dims, gamma, actions);
  }

  static TransitionSet from_batch(const Batch& batch, const MdpMeta& meta) {
    return from_batch(batch, meta.dims, meta.gamma, meta.actions);
  }

  static TransitionSet from_transitions(std::vector<Transition> raw, int dims, int gamma, int actions) {
    TransitionSet ts(dims, gamma, actions);
    for (const auto& tr : raw) {
      if (tr.state.size() != static_cast<std::size_t>(dims) || tr.next.size() != static_cast<std::size_t>(dims))
        throw std::invalid_argument("TransitionSet: state width mismatch");
      if (tr.action < 0 || tr.action >= actions) throw std::invalid_argument("TransitionSet: action out of range");
      if (!(tr.weight >= 0.0)) throw std::invalid_argument("TransitionSet: negative weight");
    }
    auto key = [](const Transition& t) { return std::tie(t.state, t.action, t.next); };
    std::sort(raw.begin(), raw.end(), [&](const Transition& x, const Transition& y) { return key(x) < key(y); });
    for (auto& tr : raw) {
      if (tr.weight == 0.0) continue;
      if (!ts.items_.empty() && key(ts.items_.back()) == key(tr))
        ts.items_.back().weight += tr.weight;
      else
        ts.items_.push_back(std::move(tr));
    }
    for (const auto& tr : ts.items_) ts.total_ += tr.weight;
    return ts;
  }

  int dims() const { return dims_; }
  int gamma() const { return gamma_; }
  int actions() const { return actions_; }
  const std::vector<Transition>& items() const { return items_; }
  double total_weight() const { return total_; }
  bool empty() const { return items_.empty(); }

 private:
  int dims_;
  int gamma_;
  int actions_;
  std::vector<Transition> items_;
  double total_ = 0.0;
};

/// n(v,a) and n(y,v,a) for one target variable over an ordered candidate set Ψ.
/// Realization ranks follow the order of Ψ as given.
class CountStore {
 public:
  CountStore(const TransitionSet& data, int target, std::vector<int> vars)
      : target_(target), vars_(std::move(vars)), gamma_(data.gamma()), actions_(data.actions()) {
    if (target < 0 || target >= data.dims()) throw std::invalid_argument("CountStore: target out of range");
    for (int v : vars_)
      if (v < 0 || v >= data.dims()) throw std::invalid_argument("CountStore: variable out of range");
    const auto stride = static_cast<std::size_t>(gamma_) + 1;
    for (const auto& tr : data.items()) {
      const auto key = realization_rank(tr.state, vars_, gamma_) * static_cast<std::uint64_t>(actions_) +
                       static_cast<std::uint64_t>(tr.action);
      auto [it, inserted] = index_.try_emplace(key, cells_.size() / stride);
      if (inserted) {
        cells_.resize(cells_.size() + stride, 0.0);
        keys_.push_back(key);
      }
      double* row = cells_.data() + it->second * stride;
      row[0] += tr.weight;
      row[1 + tr.next[static_cast<std::size_t>(target_)]] += tr.weight;
      total_ += tr.weight;
    }
  }

  int target() const { return target_; }
  const std::vector<int>& vars() const { return vars_; }
  int gamma() const { return gamma_; }
  double total() const { return total_; }
  std::size_t observed_rows() const { return keys_.size(); }

  double n(std::uint64_t rank, int a) const {
    const double* row = find(rank, a);
    return row ? row[0] : 0.0;
  }
  double n(Symbol y, std::uint64_t rank, int a) const {
    const double* row = find(rank, a);
    return row ? row[1 + y] : 0.0;
  }

  /// P̂(Y = y | X(Ψ) = v, a) = n(y,v,a) / n(v,a).
  std::vector<double> empirical_cpt(std::uint64_t rank, int a) const {
    const double* row = find(rank, a);
    if (row == nullptr || row[0] <= 0.0)
      throw UnobservedRealization("empirical_cpt: realization " + std::to_string(rank) + " with action " +
                                  std::to_string(a) + " was never observed");
    std::vector<double> p(static_cast<std::size_t>(gamma_));
    for (int y = 0; y < gamma_; ++y) p[static_cast<std::size_t>(y)] = row[1 + y] / row[0];
    return p;
  }

  /// Visits observed rows as (rank, action, n(v,a), counts over y) in ascending key order.
  template <typename Fn>
  void for_each_row(Fn&& fn) const {
    std::vector<std::uint64_t> keys = keys_;
    std::sort(keys.begin(), keys.end());
    const auto stride = static_cast<std::size_t>(gamma_) + 1;
    for (auto key : keys) {
      const double* row = cells_.data() + index_.at(key) * stride;
      fn(key / static_cast<std::uint64_t>(actions_), static_cast<int>(key % static_cast<std::uint64_t>(actions_)),
         row[0], std::span<const double>(row + 1, static_cast<std::size_t>(gamma_)));
    }
  }

 private:
  const double* find(std::uint64_t rank, int a) const {
    auto it = index_.find(rank * static_cast<std::uint64_t>(actions_) + static_cast<std::uint64_t>(a));
    return it == index_.end() ? nullptr : cells_.data() + it->second * (static_cast<std::size_t>(gamma_) + 1);
  }

  int target_;
  std::vector<int> vars_;
  int gamma_;
  int actions_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
  std::vector<std::uint64_t> keys_;
  std::vector<double> cells_;  // per row: n(v,a), then n(y,v,a) for y < gamma
  double total_ = 0.0;
};

// ---------------------------------------------------------------------------

struct CandidateScore {
  int var = 0;
  bool has_data = false;      // Θ_j nonempty
  double diff = 0.0;          // max L1 gain over Θ_j; meaningful only with data
  std::size_t qualifying = 0; // |Θ_j|
};

struct CandidateScores {
  std::vector<CandidateScore> scores;  // one per j outside phi_hat, ascending j
  bool theta_empty = true;

  /// Highest diff among candidates with data; ties go to the lowest index.
  std::optional<CandidateScore> best() const {
    std::optional<CandidateScore> out;
    for (const auto& s : scores)
      if (s.has_data && (!out || s.diff > out->diff)) out = s;
    return out;
  }
};

/// Scores every j ∉ phi_hat for target variable i: Θ_j holds the (v, v_j, a)
/// with n(v, v_j, a) > threshold, and diff_j is the largest L1 distance between
/// P̂(·|(v, v_j), a) and P̂(·|v, a) over Θ_j.
inline CandidateScores candidate_scores(const TransitionSet& data, int i, const ParentSet& phi_hat,
                                        double threshold) {
  CandidateScores out;
  const int gamma = data.gamma();
  const CountStore base(data, i, phi_hat);
  std::vector<double> p(static_cast<std::size_t>(gamma)), q(static_cast<std::size_t>(gamma));
  for (int j = 0; j < data.dims(); ++j) {
    if (std::find(phi_hat.begin(), phi_hat.end(), j) != phi_hat.end()) continue;
    CandidateScore cs;
    cs.var = j;
    if (!data.empty()) {
      std::vector<int> vars = phi_hat;
      vars.push_back(j);
      const CountStore joint(data, i, vars);
      joint.for_each_row([&](std::uint64_t rank, int a, double n, std::span<const double> counts) {
        if (!(n > threshold)) return;
        const std::uint64_t base_rank = rank / static_cast<std::uint64_t>(gamma);
        const double nb = base.n(base_rank, a);
        for (int y = 0; y < gamma; ++y) {
          p[static_cast<std::size_t>(y)] = counts[static_cast<std::size_t>(y)] / n;
          q[static_cast<std::size_t>(y)] = base.n(static_cast<Symbol>(y), base_rank, a) / nb;
        }
        const double d = l1_diff(p, q);
        if (!cs.has_data || d > cs.diff) cs.diff = d;
        cs.has_data = true;
        ++cs.qualifying;
      });
    }
    if (cs.has_data) out.theta_empty = false;
    out.scores.push_back(cs);
  }
  return out;
}

inline CandidateScores candidate_scores(const TransitionSet& data, int i, const ParentSet& phi_hat,
                                        const Thresholds& th) {
  return candidate_scores(data, i, phi_hat, static_cast<double>(th.count_threshold(data.gamma())));
}

struct StructureResult {
  std::vector<ParentSet> parents;         // sorted
  std::vector<std::vector<int>> order;    // selection order
  std::vector<int> score_rounds;          // candidate_scores calls per variable
};

inline ParentSet learn_parents(const TransitionSet& data, int i, const Thresholds& th, std::vector<int>* order = nullptr,
                               int* rounds = nullptr) {
  th.validate();
  const auto threshold = static_cast<double>(th.count_threshold(data.gamma()));
  ParentSet phi;
  std::vector<int> picked;
  int calls = 0;
  while (static_cast<int>(phi.size()) < data.dims()) {
    const auto scores = candidate_scores(data, i, phi, threshold);
    ++calls;
    if (scores.theta_empty) break;
    const auto best = scores.best();
    if (!best || !(best->diff > th.c2 + 2.0 * th.eps)) break;
    picked.push_back(best->var);
    phi.insert(std::upper_bound(phi.begin(), phi.end(), best->var), best->var);
  }
  if (order) *order = std::move(picked);
  if (rounds) *rounds = calls;
  return phi;
}

inline StructureResult learn_structure(const TransitionSet& data, const Thresholds& th) {
  StructureResult r;
  for (int i = 0; i < data.dims(); ++i) {
    std::vector<int> order;
    int rounds = 0;
    r.parents.push_back(learn_parents(data, i, th, &order, &rounds));
    r.order.push_back(std::move(order));
    r.score_rounds.push_back(rounds);
  }
  return r;
}

// ---------------------------------------------------------------------------

struct Provenance {
  std::string domain;      // serialized domain spec, may be empty
  std::string data_hash;   // hex digest of the training transitions
  std::uint64_t seed = 0;  // seed used to draw the batch
};

/// Estimated factored model. Rows exist exactly for the sufficient (i, v, a);
/// any other realization puts the state-action pair outside the known set.
class LearnedModel {
 public:
  using RowMap = std::unordered_map<std::uint64_t, std::vector<double>>;  // key rank * A + a

  LearnedModel(int dims, int gamma, int actions, std::vector<ParentSet> parents, Thresholds thresholds,
               std::uint64_t count_threshold, std::vector<RowMap> rows)
      : dims_(dims),
        gamma_(gamma),
        actions_(actions),
        parents_(std::move(parents)),
        thresholds_(thresholds),
        count_threshold_(count_threshold),
        rows_(std::move(rows)) {
    if (parents_.size() != static_cast<std::size_t>(dims_) || rows_.size() != static_cast<std::size_t>(dims_))
      throw std::invalid_argument("LearnedModel: one parent set and row map per variable");
    for (std::size_t i = 0; i < parents_.size(); ++i) {
      const auto& p = parents_[i];
      for (std::size_t k = 0; k < p.size(); ++k)
        if (p[k] < 0 || p[k] >= dims_ || (k > 0 && p[k] <= p[k - 1]))
          throw std::invalid_argument("LearnedModel: parent sets must be sorted, distinct and in range");
      const auto limit = checked_pow(gamma_, p.size()) * static_cast<std::uint64_t>(actions_);
      for (const auto& [key, row] : rows_[i]) {
        if (key >= limit) throw std::invalid_argument("LearnedModel: row key out of range");
        if (row.size() != static_cast<std::size_t>(gamma_)) throw std::invalid_argument("LearnedModel: row width");
        detail::check_distribution(row, "LearnedModel row");
      }
    }
  }

  /// The true model with every realization marked sufficient.
  static LearnedModel from_true(const FactoredMdp& mdp) {
    std::vector<RowMap> rows(static_cast<std::size_t>(mdp.dims()));
    for (int i = 0; i < mdp.dims(); ++i) {
      const auto& c = mdp.cpt(i);
      for (std::uint64_t r = 0; r < c.realizations(); ++r)
        for (int a = 0; a < mdp.actions(); ++a) {
          auto row = c.row(r, a);
          rows[static_cast<std::size_t>(i)].emplace(r * static_cast<std::uint64_t>(mdp.actions()) +
                                                        static_cast<std::uint64_t>(a),
                                                    std::vector<double>(row.begin(), row.end()));
        }
    }
    return LearnedModel(mdp.dims(), mdp.gamma(), mdp.actions(), mdp.parent_sets(), Thresholds{}, 0, std::move(rows));
  }

  int dims() const { return dims_; }
  int gamma() const { return gamma_; }
  int actions() const { return actions_; }
  const std::vector<ParentSet>& parents() const { return parents_; }
  const Thresholds& thresholds() const { return thresholds_; }
  std::uint64_t count_threshold() const { return count_threshold_; }
  const std::vector<RowMap>& rows() const { return rows_; }
  std::size_t sufficient_rows() const {
    std::size_t n = 0;
    for (const auto& m : rows_) n += m.size();
    return n;
  }

  const std::vector<double>* row(int i, std::uint64_t rank, int a) const {
    const auto& m = rows_[static_cast<std::size_t>(i)];
    auto it = m.find(rank * static_cast<std::uint64_t>(actions_) + static_cast<std::uint64_t>(a));
    return it == m.end() ? nullptr : &it->second;
  }
  bool sufficient(int i, std::uint64_t rank, int a) const { return row(i, rank, a) != nullptr; }

  /// (s, a) ∈ K iff every factor's realization is sufficient.
  bool known(const State& s, int a) const {
    for (int i = 0; i < dims_; ++i)
      if (!sufficient(i, realization_rank(s, parents_[static_cast<std::size_t>(i)], gamma_), a)) return false;
    return true;
  }

  Provenance provenance;

 private:
  int dims_;
  int gamma_;
  int actions_;
  std::vector<ParentSet> parents_;
  Thresholds thresholds_;
  std::uint64_t count_threshold_;
  std::vector<RowMap> rows_;
};

/// Empirical CPTs on the given parent sets, kept only where n(v,a) ≥ threshold.
inline LearnedModel build_model(const TransitionSet& data, const std::vector<ParentSet>& parents,
                                const Thresholds& th) {
  if (parents.size() != static_cast<std::size_t>(data.dims()))
    throw std::invalid_argument("build_model: one parent set per variable");
  const auto threshold = th.count_threshold(data.gamma());
  std::vector<LearnedModel::RowMap> rows(parents.size());
  for (int i = 0; i < data.dims(); ++i) {
    const auto& p = parents[static_cast<std::size_t>(i)];
    if (!std::is_sorted(p.begin(), p.end())) throw std::invalid_argument("build_model: parent sets must be sorted");
    const CountStore counts(data, i, p);
    counts.for_each_row([&](std::uint64_t rank, int a, double n, std::span<const double> c) {
      if (!(n >= static_cast<double>(threshold)) || n <= 0.0) return;
      std::vector<double> row(c.size());
      for (std::size_t y = 0; y < c.size(); ++y) row[y] = c[y] / n;
      rows[static_cast<std::size_t>(i)].emplace(rank * static_cast<std::uint64_t>(data.actions()) +
                                                    static_cast<std::uint64_t>(a),
                                                std::move(row));
    });
  }
  return LearnedModel(data.dims(), data.gamma(), data.actions(), parents, th, threshold, std::move(rows));
}

/// FNV-1a digest of the aggregated transitions, as 16 hex digits.
inline std::string transitions_hash(const TransitionSet& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::uint64_t x) {
    for (int b = 0; b < 8; ++b) {
      h ^= (x >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  feed(static_cast<std::uint64_t>(data.dims()));
  feed(static_cast<std::uint64_t>(data.gamma()));
  feed(static_cast<std::uint64_t>(data.actions()));
  for (const auto& tr : data.items()) {
    for (Symbol x : tr.state) feed(x);
    feed(static_cast<std::uint64_t>(tr.action));
    for (Symbol x : tr.next) feed(x);
    std::uint64_t w = 0;
    std::memcpy(&w, &tr.weight, sizeof w);
    feed(w);
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int k = 15; k >= 0; --k, h >>= 4) out[static_cast<std::size_t>(k)] = kHex[h & 0xf];
  return out;
}

}  // namespace fmdp
