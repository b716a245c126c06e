#pragma once

// Off-policy value estimators from batch data: simulation on a learned factored
// model (G-SCOPE or known structure), a flat tabular model, model-free Monte
// Carlo trajectory stitching, and clipped importance sampling.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "fmdp/core.hpp"
#include "fmdp/gscope.hpp"

namespace fmdp {

struct EvalResult {
  std::string method;
  double estimate = 0.0;
  double std_error = 0.0;
  std::size_t rollouts = 0;
  std::size_t trajectories = 0;
  std::map<std::string, double> diagnostics;
};

inline double normalized_error(double estimate, double truth) {
  if (!(std::abs(truth) > 1e-12)) throw std::domain_error("normalized_error: undefined for |truth| <= 1e-12");
  return std::abs(estimate - truth) / std::abs(truth);
}

namespace detail {

inline void check_target(const MdpMeta& meta, const Policy& target) {
  if (target.actions() != meta.actions) throw std::invalid_argument("evaluator: target policy action count mismatch");
}

/// Runs n rollouts where next_state(s, a, rng, out) either fills the successor
/// and returns true, or returns false when (s, a) lies outside the known set;
/// the rollout then self-loops with zero reward for its remaining steps.
template <typename NextState>
EvalResult simulate_known_set(const MdpMeta& meta, const Policy& target, std::size_t n_rollouts, std::uint64_t seed,
                              NextState&& next_state) {
  if (n_rollouts < 1) throw std::invalid_argument("evaluator: need at least one rollout");
  check_target(meta, target);
  std::vector<double> returns(n_rollouts);
  std::size_t fallbacks = 0;
  State next;
  for (std::size_t r = 0; r < n_rollouts; ++r) {
    Rng rng(derive_seed(seed, r));
    State s = meta.rho.sample(rng);
    double g = 0.0;
    for (int t = 0; t < meta.horizon; ++t) {
      const int a = target.sample(s, rng);
      if (!next_state(s, a, rng, next)) {
        ++fallbacks;
        break;
      }
      g += meta.reward(s, a);
      std::swap(s, next);
    }
    returns[r] = g;
  }
  const auto mc = summarize_returns(returns);
  EvalResult res;
  res.estimate = mc.mean;
  res.std_error = mc.std_error;
  res.rollouts = n_rollouts;
  res.diagnostics["fallback_rate"] = static_cast<double>(fallbacks) / static_cast<double>(n_rollouts);
  return res;
}

}  // namespace detail

/// Monte-Carlo value of the target on the learned model, with the induced-MDP
/// fallback the first time any factor's realization is insufficient.
inline EvalResult evaluate_model_based(const LearnedModel& model, const MdpMeta& meta, const Policy& target,
                                       std::size_t n_rollouts, std::uint64_t seed) {
  if (model.dims() != meta.dims || model.gamma() != meta.gamma || model.actions() != meta.actions)
    throw std::invalid_argument("evaluate_model_based: model signature does not match the MDP");
  const int dims = model.dims();
  std::vector<const std::vector<double>*> rows(static_cast<std::size_t>(dims));
  auto res = detail::simulate_known_set(meta, target, n_rollouts, seed, [&](const State& s, int a, Rng& rng, State& out) {
    for (int i = 0; i < dims; ++i) {
      rows[static_cast<std::size_t>(i)] =
          model.row(i, realization_rank(s, model.parents()[static_cast<std::size_t>(i)], model.gamma()), a);
      if (rows[static_cast<std::size_t>(i)] == nullptr) return false;
    }
    out.resize(static_cast<std::size_t>(dims));
    for (int i = 0; i < dims; ++i)
      out[static_cast<std::size_t>(i)] = static_cast<Symbol>(rng.categorical(*rows[static_cast<std::size_t>(i)]));
    return true;
  });
  res.method = "gscope";
  res.diagnostics["sufficient_rows"] = static_cast<double>(model.sufficient_rows());
  return res;
}

/// G-SCOPE end to end: learn structure, build the model, simulate.
inline EvalResult evaluate_gscope(const TransitionSet& data, const Thresholds& th, const MdpMeta& meta,
                                  const Policy& target, std::size_t n_rollouts, std::uint64_t seed) {
  const auto structure = learn_structure(data, th);
  const auto model = build_model(data, structure.parents, th);
  auto res = evaluate_model_based(model, meta, target, n_rollouts, seed);
  std::size_t edges = 0;
  for (const auto& p : structure.parents) edges += p.size();
  res.diagnostics["learned_parents"] = static_cast<double>(edges);
  return res;
}

/// Same thresholds and fallback as G-SCOPE, but on the given parent sets.
inline EvalResult evaluate_known_structure(const TransitionSet& data, const std::vector<ParentSet>& true_parents,
                                           const Thresholds& th, const MdpMeta& meta, const Policy& target,
                                           std::size_t n_rollouts, std::uint64_t seed) {
  const auto model = build_model(data, true_parents, th);
  auto res = evaluate_model_based(model, meta, target, n_rollouts, seed);
  res.method = "ks";
  return res;
}

/// Tabular empirical P̂(s'|s,a) over flat states; (s,a) pairs never observed
/// are outside the known set.
inline EvalResult evaluate_flat(const TransitionSet& data, const MdpMeta& meta, const Policy& target,
                                std::size_t n_rollouts, std::uint64_t seed) {
  std::uint64_t states = 0;
  try {
    states = checked_pow(meta.gamma, static_cast<std::size_t>(meta.dims));
  } catch (const InfeasibleError&) {
    states = std::numeric_limits<std::uint64_t>::max();
  }
  if (states > kMaxEnumerableStates)
    throw InfeasibleError("flat model: " + std::to_string(meta.gamma) + "^" + std::to_string(meta.dims) +
                          " states exceed the limit " + std::to_string(kMaxEnumerableStates));
  struct Row {
    std::vector<std::uint32_t> next;
    std::vector<double> weight;
  };
  std::unordered_map<std::uint64_t, Row> table;
  for (const auto& tr : data.items()) {
    auto& row = table[flat_index(tr.state, meta.gamma) * static_cast<std::uint64_t>(meta.actions) +
                      static_cast<std::uint64_t>(tr.action)];
    row.next.push_back(static_cast<std::uint32_t>(flat_index(tr.next, meta.gamma)));
    row.weight.push_back(tr.weight);
  }
  for (auto& [key, row] : table) {
    const double total = std::accumulate(row.weight.begin(), row.weight.end(), 0.0);
    for (auto& w : row.weight) w /= total;
  }
  auto res = detail::simulate_known_set(meta, target, n_rollouts, seed, [&](const State& s, int a, Rng& rng, State& out) {
    auto it = table.find(flat_index(s, meta.gamma) * static_cast<std::uint64_t>(meta.actions) + static_cast<std::uint64_t>(a));
    if (it == table.end()) return false;
    out = decode_flat(it->second.next[rng.categorical(it->second.weight)], meta.dims, meta.gamma);
    return true;
  });
  res.method = "flat";
  res.diagnostics["observed_pairs"] = static_cast<double>(table.size());
  return res;
}

// ---------------------------------------------------------------------------
// Model-free Monte Carlo

struct MfmcOptions {
  std::size_t k = 1;
  std::size_t n_artificial = 0;  // 0: one per logged trajectory
};

namespace detail {

/// States packed into 64-bit words, w bits per symbol, for fast Hamming distance.
class PackedStates {
 public:
  PackedStates(int dims, int gamma) : dims_(dims) {
    bits_ = std::max(1, static_cast<int>(std::bit_width(static_cast<unsigned>(gamma - 1))));
    per_word_ = 64 / bits_;
    words_ = (dims + per_word_ - 1) / per_word_;
    std::uint64_t low = 0;
    for (int k = 0; k < per_word_; ++k) low |= std::uint64_t{1} << (k * bits_);
    low_mask_ = low;
  }

  int words() const { return words_; }

  void pack(const State& s, std::uint64_t* out) const {
    std::fill(out, out + words_, 0);
    for (int i = 0; i < dims_; ++i)
      out[i / per_word_] |= static_cast<std::uint64_t>(s[static_cast<std::size_t>(i)]) << ((i % per_word_) * bits_);
  }

  int distance(const std::uint64_t* x, const std::uint64_t* y) const {
    int d = 0;
    for (int w = 0; w < words_; ++w) {
      std::uint64_t diff = x[w] ^ y[w];
      std::uint64_t fold = diff;
      for (int b = 1; b < bits_; ++b) fold |= diff >> b;
      d += std::popcount(fold & low_mask_);
    }
    return d;
  }

 private:
  int dims_;
  int bits_ = 1;
  int per_word_ = 64;
  int words_ = 1;
  std::uint64_t low_mask_ = 0;
};

}  // namespace detail

/// Stitches artificial target-policy trajectories out of logged one-step
/// transitions. At each step the target picks an action; among unused logged
/// transitions with that action the k nearest (Hamming distance on the state)
/// are found, one of them is chosen uniformly and consumed. Transitions are
/// consumed at most once over the whole estimate. A trajectory that finds no
/// transition with the required action is truncated with zero reward.
inline EvalResult evaluate_mfmc(const Batch& batch, const MdpMeta& meta, const Policy& target, MfmcOptions opt,
                                std::uint64_t seed) {
  if (batch.empty()) throw std::invalid_argument("evaluate_mfmc: empty batch");
  if (opt.k < 1) throw std::invalid_argument("evaluate_mfmc: k must be >= 1");
  detail::check_target(meta, target);
  const std::size_t n_art = opt.n_artificial ? opt.n_artificial : batch.size();
  Rng rng(seed);

  struct Logged {
    double reward;
    State next;
  };
  std::vector<Logged> logged;
  // Buckets of unused transitions sharing (state, action). Per action, the
  // packed states of its buckets are stored contiguously.
  const detail::PackedStates packer(meta.dims, meta.gamma);
  const auto W = static_cast<std::size_t>(packer.words());
  struct ActionPool {
    std::vector<std::uint64_t> keys;             // bucket b occupies [b*W, (b+1)*W)
    std::vector<std::vector<std::size_t>> items; // unused logged indices per bucket
    std::map<std::vector<std::uint64_t>, std::size_t> lookup;
    std::size_t remaining = 0;
  };
  std::vector<ActionPool> pools(static_cast<std::size_t>(meta.actions));
  std::vector<std::uint64_t> packed(W);
  for (const auto& traj : batch) {
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
      const auto& st = traj.steps[t];
      const State& next = t + 1 < traj.steps.size() ? traj.steps[t + 1].state : traj.final_state;
      auto& pool = pools[static_cast<std::size_t>(st.action)];
      packer.pack(st.state, packed.data());
      auto [it, inserted] = pool.lookup.try_emplace(packed, pool.items.size());
      if (inserted) {
        pool.keys.insert(pool.keys.end(), packed.begin(), packed.end());
        pool.items.emplace_back();
      }
      pool.items[it->second].push_back(logged.size());
      ++pool.remaining;
      logged.push_back({st.reward, next});
    }
  }
  for (auto& pool : pools)
    for (auto& items : pool.items)
      for (std::size_t k = items.size(); k > 1; --k) std::swap(items[k - 1], items[rng.index(k)]);

  std::vector<std::size_t> starts;
  auto next_start = [&]() -> const State& {
    if (starts.empty()) {
      starts.resize(batch.size());
      std::iota(starts.begin(), starts.end(), 0);
      for (std::size_t k = starts.size(); k > 1; --k) std::swap(starts[k - 1], starts[rng.index(k)]);
    }
    const std::size_t h = starts.back();
    starts.pop_back();
    const auto& traj = batch[h];
    return traj.steps.empty() ? traj.final_state : traj.steps.front().state;
  };

  struct Candidate {
    int dist;
    std::uint64_t tiebreak;
    std::size_t bucket;
  };
  std::vector<Candidate> cands;
  std::vector<double> returns(n_art);
  std::size_t truncated = 0, steps = 0;
  double distance_sum = 0.0;
  for (std::size_t h = 0; h < n_art; ++h) {
    State s = next_start();
    double g = 0.0;
    for (int t = 0; t < meta.horizon; ++t) {
      const int a = target.sample(s, rng);
      auto& pool = pools[static_cast<std::size_t>(a)];
      if (pool.remaining == 0) {
        ++truncated;
        break;
      }
      packer.pack(s, packed.data());
      std::size_t chosen_bucket = 0, chosen_slot = 0;
      int chosen_dist = 0;
      auto exact = pool.lookup.find(packed);
      if (exact != pool.lookup.end() && pool.items[exact->second].size() >= opt.k) {
        chosen_bucket = exact->second;
        chosen_slot = rng.index(opt.k);
      } else {
        cands.clear();
        for (std::size_t b = 0; b < pool.items.size(); ++b)
          if (!pool.items[b].empty()) cands.push_back({packer.distance(packed.data(), pool.keys.data() + b * W), rng.next(), b});
        std::sort(cands.begin(), cands.end(), [](const Candidate& x, const Candidate& y) {
          return std::tie(x.dist, x.tiebreak) < std::tie(y.dist, y.tiebreak);
        });
        std::size_t covered = 0;
        for (const auto& c : cands) {
          covered += pool.items[c.bucket].size();
          if (covered >= opt.k) break;
        }
        std::size_t pick = rng.index(std::min(opt.k, covered));
        for (const auto& c : cands) {
          if (pick < pool.items[c.bucket].size()) {
            chosen_bucket = c.bucket;
            chosen_slot = pick;
            chosen_dist = c.dist;
            break;
          }
          pick -= pool.items[c.bucket].size();
        }
      }
      auto& items = pool.items[chosen_bucket];
      const std::size_t idx = items[items.size() - 1 - chosen_slot];
      items.erase(items.end() - 1 - static_cast<std::ptrdiff_t>(chosen_slot));
      --pool.remaining;
      distance_sum += chosen_dist;
      ++steps;
      g += logged[idx].reward;
      s = logged[idx].next;
    }
    returns[h] = g;
  }
  const auto mc = summarize_returns(returns);
  EvalResult res;
  res.method = "mfmc";
  res.estimate = mc.mean;
  res.std_error = mc.std_error;
  res.rollouts = n_art;
  res.trajectories = batch.size();
  res.diagnostics["truncation_rate"] = static_cast<double>(truncated) / static_cast<double>(n_art);
  res.diagnostics["mean_stitch_distance"] = steps ? distance_sum / static_cast<double>(steps) : 0.0;
  res.diagnostics["transitions_used"] = static_cast<double>(steps);
  res.diagnostics["transitions_logged"] = static_cast<double>(logged.size());
  return res;
}

// ---------------------------------------------------------------------------
// Clipped importance sampling

/// (1/H) Σ_h min(clip, Π_t π_e(a_t|s_t)/π_b(a_t|s_t)) · G_h.
inline EvalResult evaluate_cis(const Batch& batch, const Policy& target, const Policy& behavior, double clip) {
  if (!(clip > 0.0)) throw std::invalid_argument("evaluate_cis: clip must be positive or infinite");
  if (target.actions() != behavior.actions()) throw std::invalid_argument("evaluate_cis: action count mismatch");
  EvalResult res;
  res.method = "cis";
  res.trajectories = batch.size();
  if (batch.empty()) {
    res.diagnostics["effective_sample_size"] = 0.0;
    res.diagnostics["clipped_fraction"] = 0.0;
    return res;
  }
  std::vector<double> weighted(batch.size());
  double sw = 0.0, sw2 = 0.0;
  std::size_t clipped = 0;
  for (std::size_t h = 0; h < batch.size(); ++h) {
    double w = 1.0;
    double g = 0.0;
    for (const auto& st : batch[h].steps) {
      const double pb = behavior.action_prob(st.state, st.action);
      if (!(pb > 0.0))
        throw std::invalid_argument("evaluate_cis: behavior assigns probability 0 to a logged action (trajectory " +
                                    std::to_string(h) + ")");
      w *= target.action_prob(st.state, st.action) / pb;
      g += st.reward;
    }
    if (w > clip) {
      w = clip;
      ++clipped;
    }
    weighted[h] = w * g;
    sw += w;
    sw2 += w * w;
  }
  const auto mc = summarize_returns(weighted);
  res.estimate = mc.mean;
  res.std_error = mc.std_error;
  res.diagnostics["effective_sample_size"] = sw2 > 0.0 ? sw * sw / sw2 : 0.0;
  res.diagnostics["clipped_fraction"] = static_cast<double>(clipped) / static_cast<double>(batch.size());
  return res;
}

// ---------------------------------------------------------------------------

struct Reference {
  double value = 0.0;
  double std_error = 0.0;
  bool exact = false;
};

/// Exact ν where the state space is enumerable, otherwise a Monte-Carlo
/// estimate from the given number of rollouts.
inline Reference reference_value(const FactoredMdp& mdp, const Policy& target, std::size_t rollouts, std::uint64_t seed) {
  if (mdp.enumerable()) {
    try {
      return {exact_value(mdp, target), 0.0, true};
    } catch (const InfeasibleError&) {
    }
  }
  const auto mc = monte_carlo_value(mdp, target, rollouts, seed);
  return {mc.mean, mc.std_error, false};
}

}  // namespace fmdp
