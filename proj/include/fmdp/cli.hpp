#pragma once

// Command-line front end. cli_dispatch takes the argument list without the
// program name and writes to the given streams, so it is testable in-process.
// Exit status: 0 success, 1 usage or input error, 2 refused as infeasible.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fmdp/bench.hpp"
#include "fmdp/core.hpp"
#include "fmdp/domains.hpp"
#include "fmdp/evaluators.hpp"
#include "fmdp/gscope.hpp"
#include "fmdp/io.hpp"
#include "fmdp/theory.hpp"

namespace fmdp::cli {

using nlohmann::json;

struct DomainArgs {
  std::string name;
  std::string file;
  DomainParams params;
};

inline void add_domain_options(CLI::App* app, DomainArgs& d, bool positional) {
  if (positional)
    app->add_option("domain", d.name, "registered domain name")->check(CLI::IsMember(domain_names()));
  else
    app->add_option("--domain", d.name, "registered domain name")->check(CLI::IsMember(domain_names()));
  app->add_option("--domain-file", d.file, "FMDP JSON file instead of a registered domain");
  app->add_option("--D", d.params.dims, "number of state variables (random-fmdp, copy-chain)");
  app->add_option("--gamma", d.params.gamma, "domain size (random-fmdp, copy-chain)");
  app->add_option("--A", d.params.actions, "action count (random-fmdp, copy-chain)");
  app->add_option("--horizon", d.params.horizon, "horizon override");
  app->add_option("--domain-seed", d.params.seed, "generator seed (random-fmdp)");
}

inline FactoredMdp resolve_domain(const DomainArgs& d, std::string* spec = nullptr) {
  if (!d.file.empty()) {
    auto mdp = io::mdp_from_json(io::read_json_file(d.file));
    return d.params.horizon >= 0 ? mdp.with_horizon(d.params.horizon) : mdp;
  }
  if (d.name.empty()) throw CLI::ValidationError("a domain is required (--domain or --domain-file)");
  if (spec) *spec = io::to_json(d.name, d.params).dump();
  return make_domain(d.name, d.params);
}

inline void emit(const json& j, const std::string& out_path, std::ostream& out) {
  if (out_path.empty())
    out << j.dump(2) << "\n";
  else
    io::write_json_file(out_path, j);
}

inline int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Factored-MDP structure learning and off-policy evaluation benchmark", "fmdp-bench"};
  app.require_subcommand(1);
  std::uint64_t seed = 1;
  std::string config, out_path;

  // gen-domain
  DomainArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-domain", "write a registered domain as FMDP JSON");
  add_domain_options(gen_cmd, gen, true);
  gen_cmd->add_option("--out", out_path, "output file (default stdout)");

  // sample
  DomainArgs smp;
  std::string behavior = "uniform";
  int H = 10;
  auto* sample_cmd = app.add_subcommand("sample", "draw a batch of trajectories");
  add_domain_options(sample_cmd, smp, false);
  sample_cmd->add_option("--behavior", behavior, "uniform | fixed:<action>[:<eps>]");
  sample_cmd->add_option("--H", H, "number of trajectories")->check(CLI::PositiveNumber);
  sample_cmd->add_option("--seed", seed, "batch seed");
  sample_cmd->add_option("--out", out_path, "output file (default stdout)");

  // learn
  DomainArgs lrn;
  std::string batch_path;
  Thresholds th;
  std::optional<std::uint64_t> min_count;
  std::optional<int> learn_H;
  auto* learn_cmd = app.add_subcommand("learn", "learn parent sets and empirical CPTs");
  learn_cmd->add_option("--batch", batch_path, "batch JSON from `sample`");
  learn_cmd->add_option("--config", config, "sweep config or preset: sample the batch it describes");
  add_domain_options(learn_cmd, lrn, false);
  learn_cmd->add_option("--H", learn_H, "trajectories to draw with --config (default: first H of the grid)");
  learn_cmd->add_option("--seed", seed, "batch seed with --config");
  learn_cmd->add_option("--eps", th.eps, "accuracy parameter");
  learn_cmd->add_option("--delta1", th.delta1, "confidence parameter");
  learn_cmd->add_option("--c2", th.c2, "stopping slack");
  learn_cmd->add_option("--min-count", min_count, "count threshold overriding N(eps, delta1)");
  learn_cmd->add_option("--out", out_path, "output file (default stdout)");

  // eval
  DomainArgs evd;
  std::string model_path, target = "auto", method;
  double target_eps = 0.05, clip = 100.0;
  std::size_t rollouts = 1000, k = 1;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a target policy");
  eval_cmd->add_option("--model", model_path, "learned model JSON (domain taken from its provenance by default)");
  eval_cmd->add_option("--batch", batch_path, "batch JSON for --method");
  eval_cmd->add_option("--method", method, "gscope | ks | flat | mfmc | cis (with --batch)")
      ->check(CLI::IsMember(bench::method_names()));
  add_domain_options(eval_cmd, evd, false);
  eval_cmd->add_option("--behavior", behavior, "behavior policy of the batch (cis)");
  eval_cmd->add_option("--target", target, "auto | planned | myopic | uniform");
  eval_cmd->add_option("--target-eps", target_eps, "epsilon floor of the target");
  eval_cmd->add_option("--rollouts", rollouts, "Monte-Carlo rollouts")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--mfmc-k", k, "MFMC neighbour count")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--cis-clip", clip, "CIS weight cap");
  eval_cmd->add_option("--eps", th.eps, "accuracy parameter (gscope, ks)");
  eval_cmd->add_option("--delta1", th.delta1, "confidence parameter (gscope, ks)");
  eval_cmd->add_option("--min-count", min_count, "count threshold override (gscope, ks)");
  eval_cmd->add_option("--seed", seed, "rollout seed");
  eval_cmd->add_option("--out", out_path, "output file (default stdout)");

  // sweep
  bool full = false;
  std::optional<int> workers;
  std::optional<std::uint64_t> master;
  auto* sweep_cmd = app.add_subcommand("sweep", "run a benchmark sweep");
  sweep_cmd->add_option("--config", config, "config file or preset name")->required();
  sweep_cmd->add_option("--out", out_path, "output directory for results.csv and summary.json")->required();
  sweep_cmd->add_flag("--full", full, "use the full-scale grid");
  sweep_cmd->add_option("--workers", workers, "worker threads");
  sweep_cmd->add_option("--seed", master, "master seed override");

  // theory
  auto* theory_cmd = app.add_subcommand("theory", "theoretical quantities");
  theory_cmd->require_subcommand(1);
  DomainArgs thd;
  std::string psi_behavior = "uniform", psi_target = "auto";
  auto* psi_cmd = theory_cmd->add_subcommand("psi", "policy mismatch coefficients");
  add_domain_options(psi_cmd, thd, false);
  psi_cmd->add_option("--behavior", psi_behavior, "behavior policy");
  psi_cmd->add_option("--target", psi_target, "target policy");
  psi_cmd->add_option("--target-eps", target_eps, "epsilon floor of the target");
  psi_cmd->add_option("--out", out_path, "output file (default stdout)");
  BoundInputs bi;
  std::vector<double> psi_values{1.0};
  auto* bound_cmd = theory_cmd->add_subcommand("bound", "evaluation-error bound");
  bound_cmd->add_option("--eps", bi.eps, "accuracy parameter");
  bound_cmd->add_option("--delta1", bi.delta1, "confidence parameter");
  bound_cmd->add_option("--T", bi.horizon, "horizon");
  bound_cmd->add_option("--D", bi.dims, "number of variables");
  bound_cmd->add_option("--m", bi.m, "largest parent set size");
  bound_cmd->add_option("--c2", bi.c2, "non-parent weakness constant");
  bound_cmd->add_option("--c3", bi.c3, "diminishing-returns constant");
  bound_cmd->add_option("--psi", psi_values, "one value per variable, or a single value for all");
  bound_cmd->add_option("--A", bi.actions, "action count");
  bound_cmd->add_option("--gamma", bi.gamma, "domain size");
  bound_cmd->add_option("--out", out_path, "output file (default stdout)");
  DomainArgs asd;
  std::string weighting = "uniform";
  auto* assume_cmd = theory_cmd->add_subcommand("assumptions", "brute-force assumption check");
  add_domain_options(assume_cmd, asd, false);
  assume_cmd->add_option("--weighting", weighting, "policy whose visit measure weights the conditionals");
  assume_cmd->add_option("--out", out_path, "output file (default stdout)");

  // report
  std::string in_path;
  auto* report_cmd = app.add_subcommand("report", "summarize a results CSV");
  report_cmd->add_option("--in", in_path, "results.csv from `sweep`")->required();
  report_cmd->add_option("--out", out_path, "output file (default stdout)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (min_count) th.min_count = min_count;

    if (*gen_cmd) {
      emit(io::to_json(resolve_domain(gen)), out_path, out);
    } else if (*sample_cmd) {
      std::string spec;
      const auto mdp = resolve_domain(smp, &spec);
      const auto batch = sample_batch(mdp, bench::make_behavior(behavior, mdp.actions()), static_cast<std::size_t>(H), seed);
      auto j = io::to_json(batch, mdp.meta());
      if (!spec.empty()) j["domain"] = json::parse(spec);
      emit(j, out_path, out);
    } else if (*learn_cmd) {
      th.validate();
      Batch batch;
      MdpMeta meta;
      Provenance prov;
      if (!config.empty()) {
        const auto cfg = bench::load_config(config);
        const auto dom = bench::build_domain(cfg);
        batch = sample_batch(dom.mdp, dom.behavior, static_cast<std::size_t>(learn_H.value_or(cfg.H.front())), seed);
        meta = dom.mdp.meta();
        prov.domain = io::to_json(cfg.domain, cfg.params).dump();
        if (learn_cmd->count("--eps") == 0 && learn_cmd->count("--delta1") == 0 && learn_cmd->count("--c2") == 0 && !min_count)
          th = cfg.thresholds;
      } else if (!batch_path.empty()) {
        const auto bj = io::read_json_file(batch_path);
        batch = io::batch_from_json(bj);
        meta.dims = bj.at("D").get<int>();
        meta.gamma = bj.at("gamma").get<int>();
        meta.actions = bj.at("A").get<int>();
        meta.horizon = bj.at("horizon").get<int>();
        if (!lrn.name.empty())
          prov.domain = io::to_json(lrn.name, lrn.params).dump();
        else if (bj.contains("domain"))
          prov.domain = bj["domain"].dump();
      } else {
        throw CLI::ValidationError("learn needs --batch or --config");
      }
      const auto data = TransitionSet::from_batch(batch, meta);
      const auto structure = learn_structure(data, th);
      auto model = build_model(data, structure.parents, th);
      prov.data_hash = transitions_hash(data);
      prov.seed = seed;
      model.provenance = prov;
      emit(io::to_json(model), out_path, out);
    } else if (*eval_cmd) {
      std::optional<LearnedModel> model;
      if (!model_path.empty()) model = io::learned_model_from_json(io::read_json_file(model_path));
      DomainArgs dom_args = evd;
      if (dom_args.name.empty() && dom_args.file.empty() && model && !model->provenance.domain.empty()) {
        auto [name, params] = io::domain_from_json(json::parse(model->provenance.domain));
        dom_args.name = name;
        dom_args.params = params;
      }
      const auto mdp = resolve_domain(dom_args);
      const auto meta = mdp.meta();
      const auto pol = bench::make_target(target, mdp, target_eps);
      EvalResult r;
      if (!method.empty()) {
        if (batch_path.empty()) throw CLI::ValidationError("--method needs --batch");
        const auto batch = io::batch_from_json(io::read_json_file(batch_path));
        const auto data = TransitionSet::from_batch(batch, meta);
        if (method == "gscope") r = evaluate_gscope(data, th, meta, pol, rollouts, seed);
        if (method == "ks") r = evaluate_known_structure(data, mdp.parent_sets(), th, meta, pol, rollouts, seed);
        if (method == "flat") r = evaluate_flat(data, meta, pol, rollouts, seed);
        if (method == "mfmc") r = evaluate_mfmc(batch, meta, pol, {k, 0}, seed);
        if (method == "cis") r = evaluate_cis(batch, pol, bench::make_behavior(behavior, mdp.actions()), clip);
      } else if (model) {
        r = evaluate_model_based(*model, meta, pol, rollouts, seed);
      } else {
        throw CLI::ValidationError("eval needs --model, or --method with --batch");
      }
      const auto truth = reference_value(mdp, pol, 100000, derive_seed(seed, fnv1a("truth")));
      json j = io::to_json(r);
      j["truth"] = io::number(truth.value);
      j["truth_stderr"] = io::number(truth.std_error);
      if (std::abs(truth.value) > 1e-12) j["normalized_error"] = io::number(normalized_error(r.estimate, truth.value));
      emit(j, out_path, out);
    } else if (*sweep_cmd) {
      auto cfg = bench::load_config(config);
      if (full) cfg = cfg.full_scale();
      if (workers) cfg.workers = *workers;
      if (master) cfg.master_seed = *master;
      const auto res = bench::run_sweep(cfg);
      std::filesystem::create_directories(out_path);
      const auto dir = std::filesystem::path(out_path);
      io::write_text_file((dir / "results.csv").string(), bench::to_csv(res.rows));
      json summary = res.summary;
      summary["config"] = bench::config_to_ini(cfg);
      io::write_json_file((dir / "summary.json").string(), summary);
      out << "wrote " << res.rows.size() << " rows to " << (dir / "results.csv").string() << "\n";
    } else if (*theory_cmd) {
      if (*psi_cmd) {
        const auto mdp = resolve_domain(thd);
        const auto psi = compute_psi(mdp, bench::make_behavior(psi_behavior, mdp.actions()),
                                     bench::make_target(psi_target, mdp, target_eps));
        json arr = json::array();
        for (double p : psi) arr.push_back(io::number(p));
        emit({{"psi", arr}}, out_path, out);
      } else if (*bound_cmd) {
        bi.psi = psi_values.size() == 1 ? std::vector<double>(static_cast<std::size_t>(bi.dims), psi_values[0]) : psi_values;
        emit(io::to_json(value_error_bound(bi)), out_path, out);
      } else if (*assume_cmd) {
        const auto mdp = resolve_domain(asd);
        emit(io::to_json(check_assumptions(mdp, bench::make_behavior(weighting, mdp.actions()))), out_path, out);
      }
    } else if (*report_cmd) {
      std::ifstream in(in_path);
      if (!in) throw std::runtime_error("cannot open '" + in_path + "'");
      std::stringstream ss;
      ss << in.rdbuf();
      emit({{"cells", bench::summarize(bench::parse_csv(ss.str()))}}, out_path, out);
    }
  } catch (const InfeasibleError& e) {
    err << "refused: " << e.what() << "\n";
    return 2;
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace fmdp::cli
