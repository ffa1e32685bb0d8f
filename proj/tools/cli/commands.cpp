#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

namespace strata::cli {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void write_manifest(const fs::path& path, Manifest m) {
  write_text_file(path, dump(manifest_to_json(m)));
}

TrialShape parse_shape(const std::string& text) {
  std::vector<int> v;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      v.push_back(std::stoi(part));
    } catch (const std::exception&) {
      throw UsageError("--shape expects n_z,n_r,n_a,n_x");
    }
  }
  if (v.size() != 4) throw UsageError("--shape expects n_z,n_r,n_a,n_x");
  TrialShape s{v[0], v[1], v[2], v[3]};
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("--shape: ") + e.what());
  }
  return s;
}

IdentifyMode parse_mode(const std::string& m) {
  if (m == "auto") return IdentifyMode::Auto;
  if (m == "theorem1") return IdentifyMode::Theorem1;
  if (m == "theorem2") return IdentifyMode::Theorem2;
  throw UsageError("--mode must be auto, theorem1 or theorem2");
}

DecisionRule rule_by_name(const std::string& name, int n_z) {
  try {
    return DecisionRule::by_name(name, n_z);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

json sampler_json(const SamplerConfig& s) {
  return {{"chains", s.chains}, {"warmup", s.warmup}, {"iters", s.iters}, {"seed", s.seed}, {"optimize_init", s.optimize_init}};
}

}  // namespace

fs::path manifest_path_for(const fs::path& out) {
  fs::path p = out;
  p.replace_extension(".manifest.json");
  return p;
}

int cmd_check(const CheckOptions& o, std::ostream& log) {
  const auto t0 = Clock::now();
  const fs::path mpath = manifest_path_for(o.out);
  check_writable(o.out, o.force);
  check_writable(mpath, o.force);
  const json cfg = read_json_file(o.design);
  const DesignInput d = design_from_json(cfg);
  DesignCheckReport rep;
  try {
    rep = check_design(d.P_A_given_strata, d.P_strata_given_R, d.sn_S, d.sp_S, d.theorem);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("design: ") + e.what());
  }
  write_text_file(o.out, dump(report_to_json(rep)));
  write_manifest(mpath, {"check", cfg, 0, seconds_since(t0), {o.out}});
  log << (rep.passed ? "PASS" : "FAIL") << ' ' << to_string(rep.theorem) << " n_z=" << rep.n_z << " krank_A=" << rep.krank_A
      << " rank_SR=" << rep.rank_SR << '\n';
  for (const auto& m : rep.messages) log << "  " << m << '\n';
  return rep.passed ? kExitOk : kExitDomain;
}

int cmd_simulate(const SimulateOptions& o, std::ostream& log) {
  const auto t0 = Clock::now();
  SimConfig cfg;
  if (o.config) {
    cfg = sim_config_from_json(read_json_file(*o.config));
  } else {
    Scenario sc;
    try {
      sc = parse_scenario(o.scenario.value_or("two_arm_severe"));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    cfg = scenario_config(sc, o.n.value_or(1000), o.seed.value_or(1), o.a_error);
    if (o.households) cfg = household_mapping(cfg);
  }
  if (o.config && o.scenario) throw UsageError("--scenario cannot be combined with a config file");
  if (o.n) cfg.n = *o.n;
  if (o.seed) cfg.seed = *o.seed;
  if (cfg.n < 1) throw UsageError("--n must be positive");

  const fs::path csv = o.out / "dataset.csv", params = o.out / "params.json", cells = o.out / "cells.json",
                 mpath = o.out / "manifest.json";
  for (const auto& p : {csv, params, mpath}) check_writable(p, o.force);
  if (o.cells) check_writable(cells, o.force);

  cfg.threads = available_threads();
  const GeneratedParams g = gen_params(cfg);
  const TrialDataset data = simulate_dataset(g.population, cfg);
  write_text_file(csv, dataset_csv(data, o.oracle));
  json pj = params_to_json(g.population);
  pj["source"] = {{"scenario", to_string(cfg.scenario)}, {"seed", cfg.seed}, {"n", cfg.n}};
  write_text_file(params, dump(pj));
  std::vector<fs::path> outs = {csv, params};
  if (o.cells) {
    write_text_file(cells, dump(cells_to_json(count_cells(data))));
    outs.push_back(cells);
  }
  json mcfg = sim_config_to_json(cfg);
  mcfg["oracle_columns"] = o.oracle;
  write_manifest(mpath, {"simulate", mcfg, cfg.seed, seconds_since(t0), outs});
  log << "simulated " << cfg.n << (cfg.households ? " households" : " participants") << " (" << to_string(cfg.scenario)
      << ", " << cfg.shape.n_r << " sites, " << cfg.shape.n_a << " covariate levels) into " << o.out.string() << '\n';
  return kExitOk;
}

int cmd_oracle(const OracleOptions& o, std::ostream& log) {
  const auto t0 = Clock::now();
  const fs::path mpath = manifest_path_for(o.out);
  check_writable(o.out, o.force);
  check_writable(mpath, o.force);
  const json pj = read_json_file(o.params);
  const PopulationParams P = params_from_json(pj);
  IdentifyOptions io;
  io.mode = parse_mode(o.mode);
  io.known_sn_Y = o.known_sn_Y;
  io.x_weights = P.x_dist;
  io.site_weights = P.site_dist;
  const IdentifiedQuantities id = identify_from_population(forward_probabilities(P), io);
  json out = identified_to_json(id);
  out["max_abs_error"] = truth_errors(id, P);
  write_text_file(o.out, dump(out));
  json cfg = {{"params", pj}, {"mode", o.mode}, {"known_sn_Y", o.known_sn_Y ? json(*o.known_sn_Y) : json(nullptr)}};
  write_manifest(mpath, {"oracle", cfg, 0, seconds_since(t0), {o.out}});
  log << "identified via " << to_string(id.mode_used) << ": sn_S=" << id.sn_S_hat << " sp_S=" << id.sp_S_hat
      << " sp_Y=" << id.sp_Y_hat << " max_abs_error=" << out["max_abs_error"]["max"].get<double>() << '\n';
  return kExitOk;
}

int cmd_fit(const FitOptions& o, std::ostream& log) {
  const auto t0 = Clock::now();
  const fs::path mpath = manifest_path_for(o.out);
  check_writable(o.out, o.force);
  check_writable(mpath, o.force);
  if (o.draws) check_writable(*o.draws, o.force);

  std::optional<TrialShape> shape;
  if (o.shape) shape = parse_shape(*o.shape);
  const std::string text = read_text_file(o.data);
  CellCounts counts;
  if (o.data.extension() == ".json") {
    json cj;
    try {
      cj = json::parse(text);
    } catch (const json::parse_error& e) {
      throw UsageError(o.data.string() + ": malformed JSON: " + e.what());
    }
    counts = cells_from_json(cj);
    if (shape && !(*shape == counts.shape)) throw UsageError("--shape disagrees with the cell-count file");
  } else {
    counts = cells_from_csv(text, shape);
  }

  ModelSpec spec;
  spec.shape = counts.shape;
  json prior_cfg = nullptr;
  if (o.priors) {
    prior_cfg = read_json_file(*o.priors);
    apply_priors(prior_cfg, spec.priors);
  }
  if (o.a_kernel) {
    if (*o.a_kernel == "default")
      spec.a_kernel = default_a_kernel(spec.shape.n_a);
    else
      spec.a_kernel = matrix_from_json(read_json_file(*o.a_kernel), "A~ kernel");
  }
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const MinimumDesign md = minimum_design(spec.shape.n_z);
  if (spec.shape.n_r < md.min_sites || spec.shape.n_a < md.min_covariate_levels) {
    std::ostringstream msg;
    msg << "design has " << spec.shape.n_r << " sites and " << spec.shape.n_a << " covariate levels; minimum for n_z = "
        << spec.shape.n_z << " is (" << md.min_sites << ", " << md.min_covariate_levels << ")";
    if (o.strict_design) throw DomainFailure(msg.str());
    log << "warning: " << msg.str() << '\n';
  }

  std::optional<DecisionRule> rule;
  if (o.rule) rule = rule_by_name(*o.rule, spec.shape.n_z);
  std::vector<EstimandSpec> est = default_estimands(spec.shape);
  if (rule)
    for (const auto& t : rule->thresholds) {
      const std::string l = t.estimand.label();
      if (std::none_of(est.begin(), est.end(), [&](const EstimandSpec& e) { return e.label() == l; }))
        est.push_back(t.estimand);
    }

  SamplerConfig sc = o.sampler;
  sc.threads = std::max(1, std::min(sc.chains, available_threads()));
  try {
    sc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const FitResult fit = sample_posterior(spec, counts, sc, est);
  std::optional<Decision> decision;
  if (rule) decision = decide(fit, *rule);

  write_text_file(o.out, dump(fit_to_json(fit, sc, spec.priors, decision, rule)));
  std::vector<fs::path> outs = {o.out};
  if (o.draws) {
    write_draws_gz(*o.draws, fit);
    outs.push_back(*o.draws);
  }
  json cfg = {{"data", o.data.generic_string()},
              {"data_fnv1a64", hex64(fnv1a64(text))},
              {"shape", shape_to_json(spec.shape)},
              {"priors", prior_cfg},
              {"a_kernel", spec.a_kernel ? matrix_to_json(*spec.a_kernel) : json(nullptr)},
              {"rule", o.rule ? json(*o.rule) : json(nullptr)},
              {"sampler", sampler_json(sc)}};
  write_manifest(mpath, {"fit", cfg, sc.seed, seconds_since(t0), outs});
  log << "fit " << counts.total() << " observations: max R-hat " << fit.diagnostics.max_rhat() << ", min bulk ESS "
      << fit.diagnostics.min_ess_bulk() << ", acceptance " << fit.diagnostics.acceptance_rate << '\n';
  if (decision)
    log << "rule " << rule->name << ": posterior probability " << decision->posterior_prob
        << (decision->reject ? " -> reject" : " -> do not reject") << '\n';
  return kExitOk;
}

int cmd_power(const PowerOptions& o, std::ostream& log) {
  const auto t0 = Clock::now();
  if (o.reps < 1) throw UsageError("--reps must be at least 1");
  if (o.n_grid.empty()) throw UsageError("--n-grid needs at least one sample size");
  PowerConfig pc;
  try {
    pc.scenario = parse_scenario(o.scenario);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (pc.scenario == Scenario::Custom) throw UsageError("power needs a named scenario");
  pc.measure_A_with_error = o.a_error;
  pc.n_grid = o.n_grid;
  pc.replicates = o.reps;
  pc.master_seed = o.seed;
  pc.sampler = o.sampler;
  pc.jobs = std::max(1, std::min(o.jobs.value_or(available_threads()), available_threads()));
  pc.sampler.threads = pc.jobs > 1 ? 1 : std::max(1, std::min(pc.sampler.chains, available_threads()));
  const int n_z = scenario_config(pc.scenario, 1, 1).shape.n_z;
  if (o.rule) pc.rule = rule_by_name(*o.rule, n_z);
  try {
    pc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const fs::path csv = o.out / "power.csv", reps = o.out / "replicates.csv", mpath = o.out / "manifest.json";
  for (const auto& p : {csv, reps, mpath}) check_writable(p, o.force);

  const std::size_t total = pc.n_grid.size() * static_cast<std::size_t>(pc.replicates);
  std::size_t done = 0;
  const PowerResult res = power_study(pc, [&](const ReplicateOutcome& r) {
    ++done;
    log << "[" << done << "/" << total << "] n=" << r.n << " rep=" << r.rep;
    if (r.ok)
      log << " reject=" << r.reject << " prob=" << r.posterior_prob << " max_rhat=" << r.max_rhat;
    else
      log << " failed: " << r.error;
    log << '\n';
  });
  write_text_file(csv, power_csv(res));
  write_text_file(reps, replicates_csv(res));

  const DecisionRule rule = pc.rule ? *pc.rule : rule_by_name(pc.scenario == Scenario::TwoArmTransmission ||
                                                                       pc.scenario == Scenario::TwoArmTransmissionNull
                                                                   ? "transmission"
                                                                   : "severe",
                                                               n_z);
  json th = json::array();
  for (const auto& t : rule.thresholds) th.push_back({{"estimand", t.estimand.label()}, {"cutoff", t.cutoff}});
  json cfg = {{"scenario", o.scenario},
              {"measure_A_with_error", o.a_error},
              {"n_grid", o.n_grid},
              {"replicates", o.reps},
              {"rule", {{"name", rule.name}, {"thresholds", th}, {"posterior_prob_cutoff", rule.posterior_prob_cutoff}}},
              {"sampler", sampler_json(pc.sampler)},
              {"seed_mapping", "params=derive_seed(seed,{rep}) data=derive_seed(seed,{rep,n}) sampler=derive_seed(seed,{rep,n,1})"}};
  write_manifest(mpath, {"power", cfg, o.seed, seconds_since(t0), {csv, reps}});
  for (const auto& row : res.rows)
    log << row.trial << ' ' << row.measurement << " n=" << row.n << " power=" << row.power << " [" << row.ci_lo << ", "
        << row.ci_hi << "] failures=" << row.failures << '\n';
  return kExitOk;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Identification, simulation and inference for vaccine-efficacy principal effects", "strata-id"};
  app.require_subcommand(1);
  app.set_version_flag("--version", tool_version());

  CheckOptions chk;
  auto* c = app.add_subcommand("check", "Check the rank hypotheses of a design file");
  c->add_option("design", chk.design, "Design JSON")->required();
  c->add_option("--out,-o", chk.out, "Report JSON")->required();
  c->add_flag("--force", chk.force, "Overwrite existing outputs");

  SimulateOptions sim;
  auto* s = app.add_subcommand("simulate", "Simulate a trial dataset");
  s->add_option("config", sim.config, "Simulation config JSON");
  s->add_option("--scenario", sim.scenario, "Named scenario");
  s->add_option("--n", sim.n, "Participants (households for transmission)");
  s->add_option("--seed", sim.seed, "Master seed");
  s->add_flag("--a-error", sim.a_error, "Observe A through the default A~ kernel");
  s->add_flag("--households", sim.households, "Apply the household mapping");
  s->add_flag("--oracle", sim.oracle, "Keep hidden true columns");
  s->add_flag("--cells", sim.cells, "Also write aggregated cell counts");
  s->add_option("--out,-o", sim.out, "Output directory")->required();
  s->add_flag("--force", sim.force, "Overwrite existing outputs");

  OracleOptions orc;
  auto* r = app.add_subcommand("oracle", "Identify parameters from exact population cells");
  r->add_option("params", orc.params, "Params JSON written by simulate")->required();
  r->add_option("--out,-o", orc.out, "Identified JSON")->required();
  r->add_option("--mode", orc.mode, "auto, theorem1 or theorem2");
  r->add_option("--known-sn-y", orc.known_sn_Y, "Known outcome sensitivity");
  r->add_flag("--force", orc.force, "Overwrite existing outputs");

  FitOptions fit;
  auto* f = app.add_subcommand("fit", "Posterior sampling from a dataset or cell counts");
  f->add_option("data", fit.data, "dataset.csv or cells JSON")->required();
  f->add_option("--out,-o", fit.out, "Fit JSON")->required();
  f->add_option("--priors", fit.priors, "Prior overrides JSON");
  f->add_option("--shape", fit.shape, "n_z,n_r,n_a,n_x (default: from the data)");
  f->add_option("--a-kernel", fit.a_kernel, "Known A~ kernel: 'default' or a JSON matrix file");
  f->add_option("--rule", fit.rule, "Decision rule: severe or transmission");
  f->add_option("--draws", fit.draws, "Write draws to a gzip CSV");
  f->add_option("--chains", fit.sampler.chains)->check(CLI::PositiveNumber);
  f->add_option("--warmup", fit.sampler.warmup)->check(CLI::NonNegativeNumber);
  f->add_option("--iters", fit.sampler.iters)->check(CLI::PositiveNumber);
  f->add_option("--seed", fit.sampler.seed);
  bool no_opt = false;
  f->add_flag("--prior-init", no_opt, "Start chains from prior draws instead of around the mode");
  f->add_flag("--strict-design", fit.strict_design, "Fail when the design is below the minimum");
  f->add_flag("--force", fit.force, "Overwrite existing outputs");

  PowerOptions pw;
  auto* p = app.add_subcommand("power", "Monte Carlo power or Type-I error");
  p->add_option("--scenario", pw.scenario, "Named scenario");
  p->add_option("--n-grid", pw.n_grid, "Sample sizes")->delimiter(',')->required();
  p->add_option("--reps", pw.reps, "Replicates per sample size");
  p->add_option("--rule", pw.rule, "severe or transmission");
  p->add_option("--jobs", pw.jobs, "Parallel replicates")->check(CLI::PositiveNumber);
  p->add_option("--seed", pw.seed, "Master seed");
  p->add_flag("--a-error", pw.a_error, "Observe A through the default A~ kernel");
  p->add_option("--chains", pw.sampler.chains)->check(CLI::PositiveNumber);
  p->add_option("--warmup", pw.sampler.warmup)->check(CLI::NonNegativeNumber);
  p->add_option("--iters", pw.sampler.iters)->check(CLI::PositiveNumber);
  p->add_option("--out,-o", pw.out, "Output directory")->required();
  p->add_flag("--force", pw.force, "Overwrite existing outputs");

  std::vector<const char*> argv = {"strata-id"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << tool_version() << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "strata-id: " << e.what() << '\n';
    return kExitUsage;
  }
  fit.sampler.optimize_init = !no_opt;

  try {
    if (c->parsed()) return cmd_check(chk, err);
    if (s->parsed()) return cmd_simulate(sim, err);
    if (r->parsed()) return cmd_oracle(orc, err);
    if (f->parsed()) return cmd_fit(fit, err);
    if (p->parsed()) return cmd_power(pw, err);
  } catch (const UsageError& e) {
    err << "strata-id: " << e.what() << '\n';
    return kExitUsage;
  } catch (const json::exception& e) {
    err << "strata-id: bad input: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DomainFailure& e) {
    err << "strata-id: " << e.what() << '\n';
    return kExitDomain;
  } catch (const IdentificationError& e) {
    err << "strata-id: identification failed: " << e.what() << '\n';
    return kExitDomain;
  } catch (const CpConvergenceError& e) {
    err << "strata-id: decomposition failed: " << e.what() << '\n';
    return kExitDomain;
  } catch (const std::invalid_argument& e) {
    err << "strata-id: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "strata-id: internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace strata::cli
