#pragma once

// Sweep harness: INI-style configuration, per-cell seeded runs of every
// method, CSV rows and per-(method, H) quantile summaries.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "fmdp/core.hpp"
#include "fmdp/domains.hpp"
#include "fmdp/evaluators.hpp"
#include "fmdp/gscope.hpp"
#include "fmdp/io.hpp"

namespace fmdp::bench {

using nlohmann::json;

inline const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names{"gscope", "ks", "flat", "mfmc", "cis"};
  return names;
}

struct SweepConfig {
  std::string domain = "taxi";
  DomainParams params;
  std::string behavior = "uniform";  // uniform | fixed:<action>[:<eps>]
  std::string target = "auto";       // auto | planned | myopic | uniform
  double target_eps = 0.05;
  std::vector<std::string> methods = method_names();
  std::vector<int> H{10, 100, 1000};
  int trials = 20;
  std::vector<int> full_H;
  int full_trials = 0;
  std::uint64_t master_seed = 1;
  Thresholds thresholds;
  std::size_t rollouts = 1000;
  std::size_t truth_rollouts = 100000;
  std::size_t mfmc_k = 1;
  double cis_clip = 100.0;
  int workers = 0;  // 0: hardware concurrency

  /// Switches to the full-scale grid when one is configured.
  SweepConfig full_scale() const {
    SweepConfig c = *this;
    if (!full_H.empty()) c.H = full_H;
    if (full_trials > 0) c.trials = full_trials;
    return c;
  }
};

// ---------------------------------------------------------------------------
// Formatting

/// Shortest decimal that round-trips; "inf" / "-inf" for infinities.
inline std::string format_double(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  if (std::isnan(x)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double x = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw std::invalid_argument("not a number: '" + s + "'");
  return x;
}

template <typename T>
std::string join(const std::vector<T>& xs, const std::string& sep = ",") {
  std::ostringstream os;
  for (std::size_t k = 0; k < xs.size(); ++k) os << (k ? sep : "") << xs[k];
  return os.str();
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration files

inline SweepConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  static const std::map<std::string, std::vector<std::string>> known{
      {"domain", {"name", "seed", "D", "gamma", "A", "horizon"}},
      {"policy", {"behavior", "target", "target_eps"}},
      {"methods", {"list"}},
      {"sweep", {"H", "trials", "master_seed", "full_H", "full_trials"}},
      {"thresholds", {"eps", "delta1", "c2", "min_count"}},
      {"eval", {"rollouts", "truth_rollouts", "mfmc_k", "cis_clip", "workers"}}};
  for (const auto& [section, body] : tree) {
    auto it = known.find(section);
    if (it == known.end()) throw std::invalid_argument("config: unknown section [" + section + "]");
    for (const auto& [key, value] : body)
      if (std::find(it->second.begin(), it->second.end(), key) == it->second.end())
        throw std::invalid_argument("config: unknown key '" + key + "' in [" + section + "]");
  }
  SweepConfig c;
  auto str = [&](const std::string& path, const std::string& fallback) { return tree.get<std::string>(path, fallback); };
  auto num = [&](const std::string& path, double fallback) {
    auto v = tree.get_optional<std::string>(path);
    return v ? parse_double(*v) : fallback;
  };
  auto integer = [&](const std::string& path, long long fallback) {
    auto v = tree.get_optional<std::string>(path);
    return v ? std::stoll(*v) : fallback;
  };
  auto ints = [&](const std::string& path, const std::vector<int>& fallback) {
    auto v = tree.get_optional<std::string>(path);
    if (!v) return fallback;
    std::vector<int> out;
    for (const auto& s : split_list(*v)) out.push_back(std::stoi(s));
    return out;
  };
  c.domain = str("domain.name", c.domain);
  c.params.seed = static_cast<std::uint64_t>(integer("domain.seed", static_cast<long long>(c.params.seed)));
  c.params.dims = static_cast<int>(integer("domain.D", c.params.dims));
  c.params.gamma = static_cast<int>(integer("domain.gamma", c.params.gamma));
  c.params.actions = static_cast<int>(integer("domain.A", c.params.actions));
  c.params.horizon = static_cast<int>(integer("domain.horizon", c.params.horizon));
  c.behavior = str("policy.behavior", c.behavior);
  c.target = str("policy.target", c.target);
  c.target_eps = num("policy.target_eps", c.target_eps);
  if (auto m = tree.get_optional<std::string>("methods.list")) c.methods = split_list(*m);
  c.H = ints("sweep.H", c.H);
  c.trials = static_cast<int>(integer("sweep.trials", c.trials));
  c.master_seed = static_cast<std::uint64_t>(integer("sweep.master_seed", static_cast<long long>(c.master_seed)));
  c.full_H = ints("sweep.full_H", c.full_H);
  c.full_trials = static_cast<int>(integer("sweep.full_trials", c.full_trials));
  c.thresholds.eps = num("thresholds.eps", c.thresholds.eps);
  c.thresholds.delta1 = num("thresholds.delta1", c.thresholds.delta1);
  c.thresholds.c2 = num("thresholds.c2", c.thresholds.c2);
  if (auto v = tree.get_optional<std::string>("thresholds.min_count"))
    c.thresholds.min_count = static_cast<std::uint64_t>(std::stoull(*v));
  c.rollouts = static_cast<std::size_t>(integer("eval.rollouts", static_cast<long long>(c.rollouts)));
  c.truth_rollouts = static_cast<std::size_t>(integer("eval.truth_rollouts", static_cast<long long>(c.truth_rollouts)));
  c.mfmc_k = static_cast<std::size_t>(integer("eval.mfmc_k", static_cast<long long>(c.mfmc_k)));
  c.cis_clip = num("eval.cis_clip", c.cis_clip);
  c.workers = static_cast<int>(integer("eval.workers", c.workers));

  for (const auto& m : c.methods)
    if (std::find(method_names().begin(), method_names().end(), m) == method_names().end())
      throw std::invalid_argument("config: unknown method '" + m + "'");
  if (c.H.empty() || std::any_of(c.H.begin(), c.H.end(), [](int h) { return h < 1; }))
    throw std::invalid_argument("config: H grid must be nonempty and positive");
  if (c.trials < 1) throw std::invalid_argument("config: trials must be >= 1");
  if (c.rollouts < 1 || c.truth_rollouts < 1) throw std::invalid_argument("config: rollout counts must be >= 1");
  if (c.mfmc_k < 1) throw std::invalid_argument("config: mfmc_k must be >= 1");
  if (!(c.cis_clip > 0.0)) throw std::invalid_argument("config: cis_clip must be positive");
  c.thresholds.validate();
  return c;
}

inline std::string config_to_ini(const SweepConfig& c) {
  std::ostringstream os;
  os << "[domain]\nname = " << c.domain << "\nseed = " << c.params.seed << "\nD = " << c.params.dims
     << "\ngamma = " << c.params.gamma << "\nA = " << c.params.actions << "\nhorizon = " << c.params.horizon << "\n\n";
  os << "[policy]\nbehavior = " << c.behavior << "\ntarget = " << c.target
     << "\ntarget_eps = " << format_double(c.target_eps) << "\n\n";
  os << "[methods]\nlist = " << join(c.methods) << "\n\n";
  os << "[sweep]\nH = " << join(c.H) << "\ntrials = " << c.trials << "\nmaster_seed = " << c.master_seed << "\n";
  if (!c.full_H.empty()) os << "full_H = " << join(c.full_H) << "\n";
  if (c.full_trials > 0) os << "full_trials = " << c.full_trials << "\n";
  os << "\n[thresholds]\neps = " << format_double(c.thresholds.eps) << "\ndelta1 = " << format_double(c.thresholds.delta1)
     << "\nc2 = " << format_double(c.thresholds.c2) << "\n";
  if (c.thresholds.min_count) os << "min_count = " << *c.thresholds.min_count << "\n";
  os << "\n[eval]\nrollouts = " << c.rollouts << "\ntruth_rollouts = " << c.truth_rollouts << "\nmfmc_k = " << c.mfmc_k
     << "\ncis_clip = " << format_double(c.cis_clip) << "\nworkers = " << c.workers << "\n";
  return os.str();
}

inline bool operator==(const Thresholds& a, const Thresholds& b) {
  return a.eps == b.eps && a.delta1 == b.delta1 && a.c2 == b.c2 && a.min_count == b.min_count;
}

inline bool same_config(const SweepConfig& a, const SweepConfig& b) { return config_to_ini(a) == config_to_ini(b); }

/// Built-in configurations, also shipped as files under configs/.
inline const std::map<std::string, std::string>& presets() {
  static const std::map<std::string, std::string> p{
      {"paper_taxi", R"([domain]
name = taxi
horizon = 200

[policy]
behavior = uniform
target = planned
target_eps = 0.05

[methods]
list = gscope,ks,flat,mfmc,cis

[sweep]
H = 10,100,1000
trials = 20
master_seed = 2016
full_H = 10,20,50,100,200,500,1000,2000
full_trials = 40

[thresholds]
eps = 0.1
delta1 = 0.05
c2 = 0
min_count = 1

[eval]
rollouts = 1000
truth_rollouts = 100000
mfmc_k = 1
cis_clip = 100
workers = 0
)"},
      {"paper_random_fmdp", R"([domain]
name = random-fmdp
seed = 7
D = 20
gamma = 2
A = 4
horizon = 200

[policy]
behavior = uniform
target = myopic
target_eps = 0.05

[methods]
list = gscope,ks,flat,mfmc,cis

[sweep]
H = 20,200
trials = 5
master_seed = 2016
full_trials = 10

[thresholds]
eps = 0.3
delta1 = 0.05
c2 = 0

[eval]
rollouts = 1000
truth_rollouts = 100000
mfmc_k = 1
cis_clip = 100
workers = 0
)"}};
  return p;
}

/// A preset name or a path to a config file.
inline SweepConfig load_config(const std::string& name_or_path) {
  auto it = presets().find(name_or_path);
  if (it != presets().end()) return parse_config(it->second);
  std::ifstream in(name_or_path);
  if (!in) throw std::invalid_argument("config '" + name_or_path + "' is neither a preset nor a readable file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// ---------------------------------------------------------------------------
// Policies from specs

inline Policy make_behavior(const std::string& spec, int actions) {
  if (spec == "uniform") return Policy::uniform(actions);
  if (spec.rfind("fixed:", 0) == 0) {
    std::vector<std::string> parts;
    std::string item;
    std::istringstream is(spec.substr(6));
    while (std::getline(is, item, ':')) parts.push_back(item);
    if (parts.empty() || parts.size() > 2) throw std::invalid_argument("behavior: expected fixed:<action>[:<eps>]");
    Policy p = Policy::fixed_action(actions, std::stoi(parts[0]));
    return parts.size() == 2 ? p.floored(parse_double(parts[1])) : p;
  }
  throw std::invalid_argument("unknown behavior policy '" + spec + "'");
}

inline Policy make_target(const std::string& spec, const FactoredMdp& mdp, double eps) {
  if (spec == "uniform") return Policy::uniform(mdp.actions());
  if (spec == "planned") return plan_target_policy(mdp, eps);
  if (spec == "myopic") return plan_myopic_policy(mdp, eps);
  if (spec == "auto") return mdp.enumerable() ? plan_target_policy(mdp, eps) : plan_myopic_policy(mdp, eps);
  throw std::invalid_argument("unknown target policy '" + spec + "'");
}

// ---------------------------------------------------------------------------
// Sweeps

struct Row {
  std::string method;
  std::string domain;
  int H = 0;
  int trial = 0;
  std::uint64_t seed = 0;
  std::optional<double> estimate;
  std::optional<double> std_error;
  double truth = 0.0;
  double truth_stderr = 0.0;
  std::optional<double> normalized_error;
  std::string status = "ok";
  json diagnostics = json::object();
};

struct Quartiles {
  double median = 0.0, q1 = 0.0, q3 = 0.0;
  std::size_t n = 0;
};

/// Linear-interpolation (type 7) quantiles.
inline double quantile(std::vector<double> xs, double p) {
  if (xs.empty()) throw std::invalid_argument("quantile: empty sample");
  std::sort(xs.begin(), xs.end());
  const double h = (static_cast<double>(xs.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline Quartiles quartiles(const std::vector<double>& xs) {
  return {quantile(xs, 0.5), quantile(xs, 0.25), quantile(xs, 0.75), xs.size()};
}

struct SweepResult {
  std::vector<Row> rows;
  Reference truth;
  json summary;
};

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

inline const char* kCsvHeader =
    "method,domain,H,trial,seed,estimate,stderr,truth,truth_stderr,normalized_error,status,diagnostics";

inline std::string to_csv(const std::vector<Row>& rows) {
  std::ostringstream os;
  os << kCsvHeader << "\n";
  auto opt = [](const std::optional<double>& x) { return x ? format_double(*x) : std::string(); };
  for (const auto& r : rows)
    os << csv_escape(r.method) << ',' << csv_escape(r.domain) << ',' << r.H << ',' << r.trial << ',' << r.seed << ','
       << opt(r.estimate) << ',' << opt(r.std_error) << ',' << format_double(r.truth) << ','
       << format_double(r.truth_stderr) << ',' << opt(r.normalized_error) << ',' << r.status << ','
       << csv_escape(r.diagnostics.dump()) << "\n";
  return os.str();
}

/// Splits one CSV line honoring double-quoted fields.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char ch = line[k];
    if (quoted) {
      if (ch == '"' && k + 1 < line.size() && line[k + 1] == '"') {
        cur += '"';
        ++k;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

inline std::vector<Row> parse_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kCsvHeader) throw std::invalid_argument("results CSV: unexpected header");
  std::vector<Row> rows;
  auto opt = [](const std::string& s) -> std::optional<double> {
    if (s.empty()) return std::nullopt;
    return parse_double(s);
  };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 12) throw std::invalid_argument("results CSV: expected 12 fields, got " + std::to_string(f.size()));
    Row r;
    r.method = f[0];
    r.domain = f[1];
    r.H = std::stoi(f[2]);
    r.trial = std::stoi(f[3]);
    r.seed = std::stoull(f[4]);
    r.estimate = opt(f[5]);
    r.std_error = opt(f[6]);
    r.truth = parse_double(f[7]);
    r.truth_stderr = parse_double(f[8]);
    r.normalized_error = opt(f[9]);
    r.status = f[10];
    r.diagnostics = json::parse(f[11]);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline json summarize(const std::vector<Row>& rows) {
  std::map<std::pair<std::string, int>, std::vector<double>> errors;
  std::map<std::pair<std::string, int>, std::size_t> refused;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.method, r.H);
    errors[key];
    if (r.status == "refused") ++refused[key];
    if (r.normalized_error) errors[key].push_back(*r.normalized_error);
  }
  json cells = json::array();
  for (const auto& [key, xs] : errors) {
    json c = {{"method", key.first}, {"H", key.second}, {"n", xs.size()}, {"refused", refused[key]}};
    if (!xs.empty()) {
      const auto q = quartiles(xs);
      c["median"] = io::number(q.median);
      c["q1"] = io::number(q.q1);
      c["q3"] = io::number(q.q3);
    } else {
      c["median"] = c["q1"] = c["q3"] = nullptr;
    }
    cells.push_back(std::move(c));
  }
  return cells;
}

/// Median normalized error of a (method, H) cell from a summary, if present.
inline std::optional<double> summary_median(const json& summary, const std::string& method, int H) {
  for (const auto& c : summary.at("cells"))
    if (c.at("method") == method && c.at("H") == H && !c.at("median").is_null()) return io::read_number(c.at("median"));
  return std::nullopt;
}

struct Domain {
  FactoredMdp mdp;
  Policy behavior;
  Policy target;
};

inline Domain build_domain(const SweepConfig& cfg) {
  FactoredMdp mdp = make_domain(cfg.domain, cfg.params);
  Policy behavior = make_behavior(cfg.behavior, mdp.actions());
  Policy target = make_target(cfg.target, mdp, cfg.target_eps);
  return {std::move(mdp), std::move(behavior), std::move(target)};
}

/// Runs one method on one batch. Infeasible combinations come back as "refused".
inline Row run_method(const std::string& method, const SweepConfig& cfg, const Domain& dom, const Batch& batch,
                      const TransitionSet& data, std::uint64_t seed) {
  Row row;
  row.method = method;
  row.seed = seed;
  const auto meta = dom.mdp.meta();
  try {
    EvalResult r;
    if (method == "gscope")
      r = evaluate_gscope(data, cfg.thresholds, meta, dom.target, cfg.rollouts, seed);
    else if (method == "ks")
      r = evaluate_known_structure(data, dom.mdp.parent_sets(), cfg.thresholds, meta, dom.target, cfg.rollouts, seed);
    else if (method == "flat")
      r = evaluate_flat(data, meta, dom.target, cfg.rollouts, seed);
    else if (method == "mfmc")
      r = evaluate_mfmc(batch, meta, dom.target, {cfg.mfmc_k, 0}, seed);
    else if (method == "cis")
      r = evaluate_cis(batch, dom.target, dom.behavior, cfg.cis_clip);
    else
      throw std::invalid_argument("unknown method '" + method + "'");
    row.estimate = r.estimate;
    row.std_error = r.std_error;
    for (const auto& [k, v] : r.diagnostics) row.diagnostics[k] = io::number(v);
  } catch (const InfeasibleError& e) {
    row.status = "refused";
    row.diagnostics["reason"] = e.what();
  }
  return row;
}

inline SweepResult run_sweep(const SweepConfig& cfg) {
  const Domain dom = build_domain(cfg);
  SweepResult out;
  out.truth = reference_value(dom.mdp, dom.target, cfg.truth_rollouts, derive_seed(cfg.master_seed, fnv1a("truth")));

  struct Cell {
    int H;
    int trial;
  };
  std::vector<Cell> cells;
  for (int h : cfg.H)
    for (int t = 0; t < cfg.trials; ++t) cells.push_back({h, t});
  std::vector<std::vector<Row>> results(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < cells.size();) {
      try {
        const auto& c = cells[k];
        const auto batch_seed = derive_seed(cfg.master_seed, static_cast<std::uint64_t>(c.H), static_cast<std::uint64_t>(c.trial));
        const Batch batch = sample_batch(dom.mdp, dom.behavior, static_cast<std::size_t>(c.H), batch_seed);
        const auto data = TransitionSet::from_batch(batch, dom.mdp.meta());
        for (const auto& m : cfg.methods) {
          Row r = run_method(m, cfg, dom, batch, data, derive_seed(batch_seed, fnv1a(m)));
          r.domain = cfg.domain;
          r.H = c.H;
          r.trial = c.trial;
          r.truth = out.truth.value;
          r.truth_stderr = out.truth.std_error;
          if (r.estimate) {
            if (std::abs(r.truth) > 1e-12)
              r.normalized_error = normalized_error(*r.estimate, r.truth);
            else
              r.status = "undefined-metric";
          }
          results[k].push_back(std::move(r));
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  int workers = cfg.workers > 0 ? cfg.workers : static_cast<int>(std::max(1U, std::thread::hardware_concurrency()));
  workers = std::min<int>(workers, static_cast<int>(std::max<std::size_t>(cells.size(), 1)));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  for (auto& rs : results)
    for (auto& r : rs) out.rows.push_back(std::move(r));
  std::sort(out.rows.begin(), out.rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.method, a.H, a.trial) < std::tie(b.method, b.H, b.trial);
  });
  out.summary = {{"domain", cfg.domain},
                 {"truth", {{"value", io::number(out.truth.value)}, {"stderr", io::number(out.truth.std_error)}, {"exact", out.truth.exact}}},
                 {"cells", summarize(out.rows)}};
  return out;
}

}  // namespace fmdp::bench
