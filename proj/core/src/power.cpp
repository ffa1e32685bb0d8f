#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "strata_id/inference.hpp"

namespace strata {

namespace {

bool transmission_scenario(Scenario s) {
  return s == Scenario::TwoArmTransmission || s == Scenario::TwoArmTransmissionNull;
}

DecisionRule default_rule(Scenario s, int n_z) {
  return transmission_scenario(s) ? DecisionRule::transmission() : DecisionRule::severe(n_z);
}

double quantile_of(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

void DecisionRule::validate(const TrialShape& shape) const {
  if (thresholds.empty()) throw std::invalid_argument("decision rule needs at least one threshold");
  if (!(posterior_prob_cutoff >= 0.0 && posterior_prob_cutoff < 1.0))
    throw std::invalid_argument("posterior probability cutoff must lie in [0, 1)");
  for (const auto& t : thresholds) {
    t.estimand.validate(shape.n_z);
    if (!std::isfinite(t.cutoff)) throw std::invalid_argument("threshold cutoffs must be finite");
  }
}

DecisionRule DecisionRule::severe(int n_z) {
  DecisionRule r;
  r.name = "severe";
  EstimandSpec vi;
  vi.kind = EstimandKind::VeIMarginal;
  vi.stratum = stratum_from_index(num_strata(n_z) - 1, n_z);
  vi.arm_j = n_z - 1;
  vi.arm_k = 0;
  EstimandSpec vs = vi;
  vs.kind = EstimandKind::VeS;
  r.thresholds = {{vi, 0.1}, {vs, 0.3}};
  r.posterior_prob_cutoff = 0.9;
  return r;
}

DecisionRule DecisionRule::transmission() {
  DecisionRule r;
  r.name = "transmission";
  EstimandSpec vt;
  vt.kind = EstimandKind::VeTransmission;
  vt.stratum = stratum_from_index(3, 2);
  vt.arm_j = 1;
  vt.arm_k = 0;
  EstimandSpec vs = vt;
  vs.kind = EstimandKind::VeS;
  r.thresholds = {{vt, 0.0}, {vs, 0.3}};
  r.posterior_prob_cutoff = 0.95;
  return r;
}

DecisionRule DecisionRule::by_name(const std::string& name, int n_z) {
  if (name == "severe") return severe(n_z);
  if (name == "transmission") {
    if (n_z != 2) throw std::invalid_argument("the transmission rule applies to two-arm trials");
    return transmission();
  }
  throw std::invalid_argument("unknown decision rule '" + name + "' (expected severe or transmission)");
}

Decision decide(const std::vector<EstimandSpec>& estimands, const Matrix& draws, const DecisionRule& rule) {
  if (draws.rows() == 0) throw std::invalid_argument("decide: no estimand draws");
  if (rule.thresholds.empty()) throw std::invalid_argument("decide: rule has no thresholds");
  std::vector<Eigen::Index> cols;
  for (const auto& t : rule.thresholds) {
    const std::string want = t.estimand.label();
    auto it = std::find_if(estimands.begin(), estimands.end(), [&](const EstimandSpec& e) { return e.label() == want; });
    if (it == estimands.end()) throw std::invalid_argument("decide: no draws for estimand " + want);
    cols.push_back(static_cast<Eigen::Index>(it - estimands.begin()));
  }
  long hits = 0;
  for (Eigen::Index i = 0; i < draws.rows(); ++i) {
    bool all = true;
    for (std::size_t t = 0; t < cols.size() && all; ++t) all = draws(i, cols[t]) > rule.thresholds[t].cutoff;
    hits += all;
  }
  Decision d;
  d.posterior_prob = static_cast<double>(hits) / static_cast<double>(draws.rows());
  d.reject = d.posterior_prob >= rule.posterior_prob_cutoff;
  return d;
}

Decision decide(const FitResult& fit, const DecisionRule& rule) { return decide(fit.estimands, fit.estimand_draws, rule); }

Interval wilson_interval(int k, int n, double z) {
  if (n <= 0 || k < 0 || k > n) throw std::invalid_argument("wilson_interval: need 0 <= successes <= trials, trials > 0");
  const double nn = n, p = k / nn, z2 = z * z;
  const double centre = (p + z2 / (2.0 * nn)) / (1.0 + z2 / nn);
  const double half = z / (1.0 + z2 / nn) * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn));
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

void PowerConfig::validate() const {
  if (n_grid.empty()) throw std::invalid_argument("power: empty n grid");
  for (long n : n_grid)
    if (n < 1) throw std::invalid_argument("power: sample sizes must be positive");
  if (replicates < 1) throw std::invalid_argument("power: replicates must be >= 1");
  if (jobs < 1) throw std::invalid_argument("power: jobs must be >= 1");
  if (scenario == Scenario::Custom) throw std::invalid_argument("power: a named scenario is required");
  sampler.validate();
}

ReplicateSeeds replicate_seeds(std::uint64_t master, int rep, long n) {
  const auto r = static_cast<std::uint64_t>(rep), nn = static_cast<std::uint64_t>(n);
  return {derive_seed(master, {r}), derive_seed(master, {r, nn}), derive_seed(master, {r, nn, 1})};
}

ReplicateOutcome run_replicate(const PowerConfig& cfg, long n, int rep) {
  ReplicateOutcome out;
  out.n = n;
  out.rep = rep;
  try {
    const ReplicateSeeds seeds = replicate_seeds(cfg.master_seed, rep, n);
    SimConfig sim = scenario_config(cfg.scenario, n, seeds.params, cfg.measure_A_with_error);
    const GeneratedParams g = gen_params(sim);
    sim.seed = seeds.data;
    sim.threads = 1;
    const CellCounts counts = count_cells(simulate_dataset(g.population, sim));

    ModelSpec spec;
    spec.shape = sim.shape;
    if (cfg.measure_A_with_error && cfg.known_a_kernel) spec.a_kernel = sim.a_error_kernel;
    const DecisionRule rule = cfg.rule ? *cfg.rule : default_rule(cfg.scenario, sim.shape.n_z);
    rule.validate(sim.shape);
    std::vector<EstimandSpec> est;
    for (const auto& t : rule.thresholds) est.push_back(t.estimand);
    SamplerConfig sc = cfg.sampler;
    sc.seed = seeds.sampler;
    const FitResult fit = sample_posterior(spec, counts, sc, est);
    const Decision d = decide(fit, rule);
    out.reject = d.reject;
    out.posterior_prob = d.posterior_prob;
    out.max_rhat = fit.diagnostics.max_rhat();

    out.truth = basis_from_params(g.population).evaluate(est.front());
    std::vector<double> v;
    for (Eigen::Index i = 0; i < fit.estimand_draws.rows(); ++i)
      if (std::isfinite(fit.estimand_draws(i, 0))) v.push_back(fit.estimand_draws(i, 0));
    if (!v.empty()) {
      out.credible = {quantile_of(v, 0.025), quantile_of(v, 0.975)};
      out.covered = out.credible.contains(out.truth);
    }
    out.ok = true;
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = e.what();
  }
  return out;
}

PowerResult power_study(const PowerConfig& cfg, const std::function<void(const ReplicateOutcome&)>& progress) {
  cfg.validate();
  const int reps = cfg.replicates;
  const std::size_t tasks = cfg.n_grid.size() * static_cast<std::size_t>(reps);
  PowerResult res;
  res.replicates.resize(tasks);
  PowerConfig inner = cfg;
  if (cfg.jobs > 1) inner.sampler.threads = 1;
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= tasks) return;
      const long n = cfg.n_grid[t / static_cast<std::size_t>(reps)];
      const int rep = static_cast<int>(t % static_cast<std::size_t>(reps));
      res.replicates[t] = run_replicate(inner, n, rep);
      if (progress) {
        std::lock_guard<std::mutex> lock(mu);
        progress(res.replicates[t]);
      }
    }
  };
  const int jobs = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), tasks));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  const bool three = cfg.scenario == Scenario::ThreeArmSevere || cfg.scenario == Scenario::ThreeArmNull;
  for (std::size_t i = 0; i < cfg.n_grid.size(); ++i) {
    PowerRow row;
    row.trial = three ? "3-arm" : "2-arm";
    row.measurement = cfg.measure_A_with_error ? "A~" : "A";
    row.n = cfg.n_grid[i];
    row.replicates = reps;
    for (int r = 0; r < reps; ++r) {
      const auto& o = res.replicates[i * static_cast<std::size_t>(reps) + static_cast<std::size_t>(r)];
      if (!o.ok) {
        ++row.failures;
        continue;
      }
      row.rejections += o.reject;
      row.covered += o.covered;
    }
    const int ok = reps - row.failures;
    if (ok > 0) {
      row.power = static_cast<double>(row.rejections) / ok;
      const Interval ci = wilson_interval(row.rejections, ok);
      row.ci_lo = ci.lo;
      row.ci_hi = ci.hi;
    } else {
      row.power = row.ci_lo = row.ci_hi = std::numeric_limits<double>::quiet_NaN();
    }
    res.rows.push_back(row);
  }
  return res;
}

}  // namespace strata
