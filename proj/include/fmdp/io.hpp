#pragma once

// JSON forms of models, batches, learned models and reports.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fmdp/core.hpp"
#include "fmdp/domains.hpp"
#include "fmdp/evaluators.hpp"
#include "fmdp/gscope.hpp"
#include "fmdp/theory.hpp"

namespace fmdp::io {

using nlohmann::json;

/// Numbers that may be infinite are written as the string "inf".
inline json number(double x) {
  if (std::isinf(x)) return x > 0 ? json("inf") : json("-inf");
  if (std::isnan(x)) return json("nan");
  return json(x);
}

inline double read_number(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw std::invalid_argument("expected a number, got '" + s + "'");
  }
  return j.get<double>();
}

// ---------------------------------------------------------------------------
// FMDP

inline json reward_to_json(const Reward& r) {
  switch (r.kind()) {
    case Reward::Kind::constant: return {{"kind", "constant"}, {"params", {{"value", r.hit()}}}};
    case Reward::Kind::variable_equals:
      return {{"kind", "variable_equals"},
              {"params", {{"var", r.var()}, {"value", r.value()}, {"hit", r.hit()}, {"miss", r.miss()}}}};
    case Reward::Kind::table: return {{"kind", "table"}, {"params", {{"values", r.values()}}}};
  }
  return {};
}

inline Reward reward_from_json(const json& j, int gamma, int actions) {
  const auto kind = j.at("kind").get<std::string>();
  const auto& p = j.at("params");
  if (kind == "constant") return Reward::constant(p.at("value").get<double>());
  if (kind == "variable_equals")
    return Reward::variable_equals(p.at("var").get<int>(), p.at("value").get<Symbol>(), p.value("hit", 1.0),
                                   p.value("miss", 0.0));
  if (kind == "table") return Reward::table(gamma, actions, p.at("values").get<std::vector<double>>());
  throw std::invalid_argument("unknown reward kind '" + kind + "'");
}

inline json rho_to_json(const InitialDistribution& d) {
  if (d.kind() == InitialDistribution::Kind::product) return {{"kind", "product"}, {"params", {{"marginals", d.marginals()}}}};
  return {{"kind", "table"}, {"params", {{"probs", d.probs()}}}};
}

inline InitialDistribution rho_from_json(const json& j, int dims, int gamma) {
  const auto kind = j.at("kind").get<std::string>();
  const auto& p = j.at("params");
  if (kind == "product") return InitialDistribution::product(p.at("marginals").get<std::vector<std::vector<double>>>());
  if (kind == "uniform") return InitialDistribution::uniform(dims, gamma);
  if (kind == "table") return InitialDistribution::table(dims, gamma, p.at("probs").get<std::vector<double>>());
  throw std::invalid_argument("unknown rho kind '" + kind + "'");
}

inline json to_json(const FactoredMdp& mdp) {
  json cpts = json::array();
  for (const auto& c : mdp.cpts()) {
    json rows = json::array();
    for (std::uint64_t r = 0; r < c.realizations(); ++r) {
      json per_action = json::array();
      for (int a = 0; a < c.actions(); ++a) {
        const auto row = c.row(r, a);
        per_action.push_back(std::vector<double>(row.begin(), row.end()));
      }
      rows.push_back(std::move(per_action));
    }
    cpts.push_back(std::move(rows));
  }
  return {{"D", mdp.dims()},
          {"gamma", mdp.gamma()},
          {"A", mdp.actions()},
          {"horizon", mdp.horizon()},
          {"parents", mdp.parent_sets()},
          {"cpts", std::move(cpts)},
          {"reward", reward_to_json(mdp.reward())},
          {"rho", rho_to_json(mdp.rho())}};
}

inline FactoredMdp mdp_from_json(const json& j) {
  const int dims = j.at("D").get<int>();
  const int gamma = j.at("gamma").get<int>();
  const int actions = j.at("A").get<int>();
  const int horizon = j.at("horizon").get<int>();
  const auto parents = j.at("parents").get<std::vector<ParentSet>>();
  const auto& cj = j.at("cpts");
  if (parents.size() != static_cast<std::size_t>(dims) || cj.size() != static_cast<std::size_t>(dims))
    throw std::invalid_argument("FMDP JSON: parents and cpts need one entry per variable");
  std::vector<Cpt> cpts;
  for (int i = 0; i < dims; ++i) {
    std::vector<double> probs;
    for (const auto& per_action : cj[static_cast<std::size_t>(i)])
      for (const auto& row : per_action)
        for (const auto& p : row) probs.push_back(p.get<double>());
    cpts.emplace_back(parents[static_cast<std::size_t>(i)], gamma, actions, std::move(probs));
  }
  return FactoredMdp(dims, gamma, actions, horizon, std::move(cpts), reward_from_json(j.at("reward"), gamma, actions),
                     rho_from_json(j.at("rho"), dims, gamma));
}

// ---------------------------------------------------------------------------
// Domain specs

inline json to_json(const std::string& name, const DomainParams& p) {
  return {{"name", name}, {"seed", p.seed}, {"D", p.dims}, {"gamma", p.gamma}, {"A", p.actions}, {"horizon", p.horizon}};
}

inline std::pair<std::string, DomainParams> domain_from_json(const json& j) {
  DomainParams p;
  p.seed = j.value("seed", std::uint64_t{0});
  p.dims = j.value("D", p.dims);
  p.gamma = j.value("gamma", p.gamma);
  p.actions = j.value("A", p.actions);
  p.horizon = j.value("horizon", p.horizon);
  return {j.at("name").get<std::string>(), p};
}

// ---------------------------------------------------------------------------
// Batches

inline json to_json(const Batch& batch, const MdpMeta& meta) {
  json trajs = json::array();
  for (const auto& t : batch) {
    json states = json::array(), actions = json::array(), rewards = json::array();
    for (const auto& st : t.steps) {
      states.push_back(st.state);
      actions.push_back(st.action);
      rewards.push_back(st.reward);
    }
    states.push_back(t.final_state);
    trajs.push_back({{"seed", t.seed}, {"states", std::move(states)}, {"actions", std::move(actions)}, {"rewards", std::move(rewards)}});
  }
  return {{"D", meta.dims}, {"gamma", meta.gamma}, {"A", meta.actions}, {"horizon", meta.horizon}, {"trajectories", std::move(trajs)}};
}

inline Batch batch_from_json(const json& j) {
  Batch batch;
  for (const auto& tj : j.at("trajectories")) {
    Trajectory t;
    t.seed = tj.value("seed", std::uint64_t{0});
    const auto states = tj.at("states").get<std::vector<State>>();
    const auto actions = tj.at("actions").get<std::vector<int>>();
    const auto rewards = tj.at("rewards").get<std::vector<double>>();
    if (states.size() != actions.size() + 1 || rewards.size() != actions.size())
      throw std::invalid_argument("batch JSON: states must hold one more entry than actions and rewards");
    for (std::size_t k = 0; k < actions.size(); ++k) t.steps.push_back({states[k], actions[k], rewards[k]});
    t.final_state = states.back();
    batch.push_back(std::move(t));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Learned models

inline std::string row_key(int i, std::uint64_t rank, int a) {
  return std::to_string(i) + "/" + std::to_string(rank) + "/" + std::to_string(a);
}

inline json to_json(const LearnedModel& m) {
  json cpts = json::object(), sufficient = json::object();
  for (int i = 0; i < m.dims(); ++i)
    for (const auto& [key, row] : m.rows()[static_cast<std::size_t>(i)]) {
      const auto k = row_key(i, key / static_cast<std::uint64_t>(m.actions()), static_cast<int>(key % static_cast<std::uint64_t>(m.actions())));
      cpts[k] = row;
      sufficient[k] = true;
    }
  json th = {{"eps", m.thresholds().eps},
             {"delta1", m.thresholds().delta1},
             {"c2", m.thresholds().c2},
             {"N", m.count_threshold()}};
  if (m.thresholds().min_count) th["min_count"] = *m.thresholds().min_count;
  json prov = {{"data_hash", m.provenance.data_hash}, {"seed", m.provenance.seed}};
  prov["domain"] = m.provenance.domain.empty() ? json(nullptr) : json::parse(m.provenance.domain);
  return {{"D", m.dims()}, {"gamma", m.gamma()}, {"A", m.actions()}, {"phi_hat", m.parents()},
          {"thresholds", th}, {"cpts", cpts}, {"sufficient", sufficient}, {"provenance", prov}};
}

inline LearnedModel learned_model_from_json(const json& j) {
  const int dims = j.at("D").get<int>();
  const int actions = j.at("A").get<int>();
  const auto& th = j.at("thresholds");
  Thresholds t;
  t.eps = th.at("eps").get<double>();
  t.delta1 = th.at("delta1").get<double>();
  t.c2 = th.at("c2").get<double>();
  if (th.contains("min_count")) t.min_count = th.at("min_count").get<std::uint64_t>();
  std::vector<LearnedModel::RowMap> rows(static_cast<std::size_t>(dims));
  const auto& suff = j.at("sufficient");
  for (const auto& [key, row] : j.at("cpts").items()) {
    if (!suff.contains(key)) throw std::invalid_argument("learned model JSON: row '" + key + "' lacks a sufficiency flag");
    int i = 0, a = 0;
    unsigned long long rank = 0;
    char s1 = 0, s2 = 0;
    std::istringstream is(key);
    if (!(is >> i >> s1 >> rank >> s2 >> a) || s1 != '/' || s2 != '/' || i < 0 || i >= dims)
      throw std::invalid_argument("learned model JSON: bad key '" + key + "'");
    rows[static_cast<std::size_t>(i)].emplace(rank * static_cast<std::uint64_t>(actions) + static_cast<std::uint64_t>(a),
                                              row.get<std::vector<double>>());
  }
  LearnedModel m(dims, j.at("gamma").get<int>(), actions, j.at("phi_hat").get<std::vector<ParentSet>>(), t,
                 th.at("N").get<std::uint64_t>(), std::move(rows));
  if (j.contains("provenance")) {
    const auto& p = j.at("provenance");
    m.provenance.data_hash = p.value("data_hash", std::string{});
    m.provenance.seed = p.value("seed", std::uint64_t{0});
    if (p.contains("domain") && !p.at("domain").is_null()) m.provenance.domain = p.at("domain").dump();
  }
  return m;
}

// ---------------------------------------------------------------------------
// Results and reports

inline json to_json(const EvalResult& r) {
  json diag = json::object();
  for (const auto& [k, v] : r.diagnostics) diag[k] = number(v);
  return {{"method", r.method}, {"estimate", number(r.estimate)}, {"stderr", number(r.std_error)},
          {"rollouts", r.rollouts}, {"trajectories", r.trajectories}, {"diagnostics", diag}};
}

inline json to_json(const BoundResult& b) {
  return {{"eps_star", number(b.eps_star)},
          {"delta_star", number(b.delta_star)},
          {"delta_star_trajectory", number(b.delta_star_trajectory)},
          {"value_bound", number(b.value_bound)},
          {"value_bound_main", number(b.value_bound_main)},
          {"confidence", number(b.confidence)}};
}

inline json to_json(const ScoredRealization& s) {
  return {{"var", s.var}, {"base", s.base}, {"values", s.values}, {"action", s.action}, {"score", number(s.score)}};
}

inline json to_json(const AssumptionReport& r) {
  json vars = json::array();
  for (const auto& v : r.variables) {
    json e = {{"var", v.var},           {"parents", v.parents}, {"a1_holds", v.a1_holds}, {"strong", v.strong},
              {"c2", number(v.c2)},     {"a3_holds", v.a3_holds}, {"c3", number(v.c3)}};
    e["c1"] = v.c1 ? number(*v.c1) : json(nullptr);
    if (v.a1_witness) {
      json ks = json::array();
      for (const auto& k : v.a1_witness->strong) ks.push_back(to_json(k));
      e["a1_witness"] = {{"non_parent", to_json(v.a1_witness->non_parent)}, {"strong", ks}};
    }
    if (v.a2_witness) e["a2_witness"] = to_json(*v.a2_witness);
    if (v.a3_witness) {
      const auto& w = *v.a3_witness;
      e["a3_witness"] = {{"base", w.base},       {"j", w.j},       {"k", w.k},
                         {"values", w.values},   {"action", w.action},
                         {"score_j", number(w.score_j)}, {"score_k", number(w.score_k)},
                         {"score_k_given_j", number(w.score_k_given_j)}};
    }
    vars.push_back(std::move(e));
  }
  return {{"weighting", r.weighting}, {"a1_holds", r.a1_holds}, {"a3_holds", r.a3_holds}, {"c1", number(r.c1)},
          {"c2", number(r.c2)},       {"c3", number(r.c3)},       {"variables", vars}};
}

// ---------------------------------------------------------------------------

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return json::parse(in);
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
}

inline void write_json_file(const std::string& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

}  // namespace fmdp::io
