#include "doctest.h"
#include "oracles.hpp"

#include "strata_id/inference.hpp"
#include "strata_id/rng.hpp"
#include "strata_id/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

using namespace strata;

namespace {

CellCounts random_counts(const TrialShape& s, Rng& rng, int max_count = 30) {
  CellCounts c = CellCounts::zeros(s);
  for (auto& v : c.n) v = static_cast<double>(rng.uniform_int(static_cast<std::uint64_t>(max_count)));
  return c;
}

Vector random_t(const ModelSpec& spec, Rng& rng) { return draw_prior(spec, rng); }

// prior mean and sd of every unconstrained coordinate other than the rates
struct Coord {
  int index;
  double mean, sd;
};

std::vector<Coord> normal_coords(const ModelSpec& spec) {
  const TrialShape& s = spec.shape;
  const ParamLayout L(s);
  const PriorConfig& p = spec.priors;
  const int R = static_cast<int>(s.strata());
  std::vector<Coord> out;
  for (int r = 0; r < s.n_r; ++r)
    for (int u = 0; u < R - 1; ++u) out.push_back({L.mu(r, u), u < 2 ? 1.0 : 0.0, p.sd_mu});
  for (int x = 1; x < s.n_x; ++x)
    for (int u = 0; u < R - 1; ++u) out.push_back({L.eta(x, u), 0.0, p.sd_eta});
  for (int u = 0; u < R; ++u)
    for (int k = 0; k + 1 < s.n_a; ++k)
      out.push_back({L.nu(u, k), 0.0, (u == 0 || u == 1 || u == R - 1) ? p.sd_nu_wide : p.sd_nu});
  for (int x = 1; x < s.n_x; ++x)
    for (int k = 0; k + 1 < s.n_a; ++k) out.push_back({L.gamma(x, k), 0.0, p.sd_gamma});
  for (int u = 0; u < R; ++u)
    for (int j = 0; j < s.n_z; ++j)
      for (int k = 0; k < s.n_a; ++k)
        if (L.alpha(u, j, k) >= 0) out.push_back({L.alpha(u, j, k), 0.0, p.sd_alpha});
  for (int x = 1; x < s.n_x; ++x)
    for (int j = 0; j < s.n_z; ++j) out.push_back({L.omega(x, j), 0.0, p.sd_omega});
  return out;
}

// trapezoid integral of exp(log_prior) along one coordinate, normalized at t
double slice_density_at(const ModelSpec& spec, const Vector& t, int i, double lo, double hi, int n = 20000) {
  const double base = log_prior(spec, t);
  const double h = (hi - lo) / n;
  double z = 0.0;
  Vector v = t;
  for (int s = 0; s <= n; ++s) {
    v(i) = lo + s * h;
    const double w = (s == 0 || s == n) ? 0.5 : 1.0;
    z += w * std::exp(log_prior(spec, v) - base);
  }
  return 1.0 / (z * h);
}

}  // namespace

TEST_CASE("parameter layout covers every slot once") {
  for (const TrialShape& s : {TrialShape{2, 4, 3, 3}, TrialShape{3, 2, 2, 1}, TrialShape{2, 1, 1, 1}}) {
    const ParamLayout L(s);
    std::vector<int> seen(static_cast<std::size_t>(L.size()), 0);
    for (const auto& b : L.blocks())
      for (int i = b.begin; i < b.begin + b.size; ++i) ++seen[static_cast<std::size_t>(i)];
    CHECK(std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }));
    CHECK(L.names().size() == static_cast<std::size_t>(L.size()));
    const int R = static_cast<int>(s.strata());
    int alpha = 0;
    for (int u = 0; u < R; ++u)
      for (int j = 0; j < s.n_z; ++j) alpha += ((u >> j) & 1) * s.n_a;
    const int expect = 4 + s.n_r * (R - 1) + (s.n_x - 1) * (R - 1) + R * (s.n_a - 1) + (s.n_x - 1) * (s.n_a - 1) +
                       alpha + (s.n_x - 1) * s.n_z;
    CHECK(L.size() == expect);
  }
}

TEST_CASE("likelihood equals latent enumeration") {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const TrialShape s{2, 1 + static_cast<int>(rng.uniform_int(2)), 1 + static_cast<int>(rng.uniform_int(2)),
                       1 + static_cast<int>(rng.uniform_int(2))};
    ModelSpec spec;
    spec.shape = s;
    const Vector th = random_t(spec, rng);
    const CellCounts c = random_counts(s, rng);
    const PopulationParams P = to_population(spec, th);
    const double expect = oracle::log_likelihood(P, c);
    const auto ll = log_likelihood(spec, th, c);
    CHECK_FALSE(ll.zero_probability);
    CHECK(std::abs(ll.value - expect) < 1e-10 * std::max(1.0, c.total()));
    CHECK(std::abs(log_likelihood(P, c).value - ll.value) < 1e-10 * std::max(1.0, c.total()));
  }
}

TEST_CASE("likelihood with a covariate error kernel equals latent enumeration") {
  Rng rng(3);
  ModelSpec spec;
  spec.shape = TrialShape{2, 2, 3, 2};
  spec.a_kernel = default_a_kernel(3);
  for (int t = 0; t < 5; ++t) {
    const Vector th = random_t(spec, rng);
    const CellCounts c = random_counts(spec.shape, rng);
    const double expect = oracle::log_likelihood(to_population(spec, th), c);
    CHECK(std::abs(log_likelihood(spec, th, c).value - expect) < 1e-10 * c.total());
  }
}

TEST_CASE("likelihood scales with the counts") {
  Rng rng(4);
  ModelSpec spec;
  spec.shape = TrialShape{2, 4, 3, 3};
  const Vector th = random_t(spec, rng);
  CellCounts c = random_counts(spec.shape, rng);
  const double one = log_likelihood(spec, th, c).value;
  for (auto& v : c.n) v *= 2.0;
  CHECK(log_likelihood(spec, th, c).value == doctest::Approx(2.0 * one).epsilon(1e-12));
  CHECK(log_likelihood(spec, th, CellCounts::zeros(spec.shape)).value == 0.0);
}

TEST_CASE("likelihood flags counts on impossible cells") {
  PopulationParams P = PopulationParams::zeros(TrialShape{2, 1, 1, 1});
  P.theta[0].col(0) << 0.9, 0.05, 0.03, 0.02;
  CellCounts c = CellCounts::zeros(P.shape);
  c.n[c.index(0, 0, 0, 0, 1, 0)] = 1.0;  // outcome without infection, perfect tests
  const auto ll = log_likelihood(P, c);
  CHECK(ll.zero_probability);
  CHECK(ll.value == kLogZeroSentinel);
}

TEST_CASE("likelihood is invariant under the joint infection relabelling") {
  // (sn, sp) -> (1 - sp, 1 - sn) with every stratum complemented gives the same q cells
  Rng rng(5);
  const PopulationParams P = random_population(TrialShape{2, 2, 2, 1}, 8);
  PopulationParams Q = P;
  for (int u = 0; u < 4; ++u) {
    Q.theta[0].row(3 - u) = P.theta[0].row(u);
    Q.a[0].col(3 - u) = P.a[0].col(u);
  }
  Q.sn_S = 1.0 - P.sp_S;
  Q.sp_S = 1.0 - P.sn_S;
  // outcomes only attach to infected strata, so relabelling needs Y-free data
  for (int j = 0; j < 2; ++j)
    for (int u = 0; u < 4; ++u)
      for (int k = 0; k < 2; ++k) {
        Q.beta[0][j](k, u) = ((u >> j) & 1) ? 0.0 : std::nan("");
      }
  PopulationParams P0 = P;
  for (int j = 0; j < 2; ++j)
    for (int u = 0; u < 4; ++u)
      for (int k = 0; k < 2; ++k)
        if ((u >> j) & 1) P0.beta[0][j](k, u) = 0.0;
  CellCounts c = random_counts(P.shape, rng);
  for (int z = 0; z < 2; ++z)
    for (int r = 0; r < 2; ++r)
      for (int s = 0; s < 2; ++s)
        for (int k = 0; k < 2; ++k) c.n[c.index(0, z, r, s, 1, k)] = 0.0;
  P0.sp_Y = Q.sp_Y = 1.0;
  CHECK(log_likelihood(P0, c).value == doctest::Approx(log_likelihood(Q, c).value).epsilon(1e-12));
}

TEST_CASE("truth beats a perturbed truth on simulated data") {
  int wins = 0;
  const int reps = 20;
  for (int rep = 0; rep < reps; ++rep) {
    const auto cfg = scenario_config(Scenario::TwoArmSevere, 40000, 100 + static_cast<std::uint64_t>(rep));
    const auto g = gen_params(cfg);
    ModelSpec spec;
    spec.shape = cfg.shape;
    const CellCounts c = count_cells(simulate_dataset(g.population, cfg));
    const Vector truth = pack_regression(spec, g.regression, cfg.misclass);
    Rng rng(7, {static_cast<std::uint64_t>(rep)});
    Vector pert = truth;
    for (Eigen::Index i = 0; i < pert.size(); ++i) pert(i) += 0.1 * (rng.bernoulli(0.5) ? 1.0 : -1.0);
    wins += log_likelihood(spec, truth, c).value > log_likelihood(spec, pert, c).value;
  }
  CHECK(wins >= 19);
}

TEST_CASE("packed regression truth maps back to the generating population") {
  const auto cfg = scenario_config(Scenario::TwoArmSevere, 100, 12);
  const auto g = gen_params(cfg);
  ModelSpec spec;
  spec.shape = cfg.shape;
  const PopulationParams P = to_population(spec, pack_regression(spec, g.regression, cfg.misclass));
  for (int x = 0; x < 3; ++x) {
    CHECK((P.theta[x] - g.population.theta[x]).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((P.a[x] - g.population.a[x]).cwiseAbs().maxCoeff() < 1e-12);
    for (int j = 0; j < 2; ++j)
      for (int u = 0; u < 4; ++u)
        if ((u >> j) & 1)
          for (int k = 0; k < 3; ++k) CHECK(std::abs(P.beta[x][j](k, u) - g.population.beta[x][j](k, u)) < 1e-12);
  }
  CHECK(P.sn_S == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(P.sp_Y == doctest::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("shifted beta densities") {
  const PriorConfig p;
  CHECK(p.sn_S.log_density(0.75) == doctest::Approx(oracle::shifted_beta_logpdf(0.75, 0.5, 1.0, 4.0, 2.0)).epsilon(1e-14));
  CHECK(p.sp_S.log_density(0.9) == doctest::Approx(oracle::shifted_beta_logpdf(0.9, 0.5, 1.0, 10.0, 2.0)).epsilon(1e-14));
  CHECK(p.sn_Y.log_density(0.6) == doctest::Approx(oracle::shifted_beta_logpdf(0.6, 0.5, 1.0, 5.0, 2.0)).epsilon(1e-14));
  CHECK(p.sp_Y.log_density(0.55) == doctest::Approx(oracle::shifted_beta_logpdf(0.55, 0.5, 1.0, 4.0, 2.0)).epsilon(1e-14));
  CHECK(std::isinf(p.sn_S.log_density(0.4)));
  // Beta(4,2) on (0.5,1) at the midpoint: 20 * 0.5^3 * 0.5 / 0.5
  CHECK(std::exp(p.sn_S.log_density(0.75)) == doctest::Approx(2.5).epsilon(1e-13));
  // integrates to one
  for (const ShiftedBeta* b : {&p.sn_S, &p.sp_S, &p.sn_Y, &p.sp_Y}) {
    const int n = 200000;
    const double h = (b->hi - b->lo) / n;
    double z = 0.0;
    for (int i = 0; i < n; ++i) z += std::exp(b->log_density(b->lo + (i + 0.5) * h)) * h;
    CHECK(z == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("every prior slice integrates to the stated marginal") {
  ModelSpec spec;
  spec.shape = TrialShape{2, 2, 3, 2};
  Rng rng(13);
  const Vector t = draw_prior(spec, rng);
  for (const auto& c : normal_coords(spec)) {
    const double d = slice_density_at(spec, t, c.index, c.mean - 12 * c.sd, c.mean + 12 * c.sd);
    CHECK(std::log(d) == doctest::Approx(oracle::normal_logpdf(t(c.index), c.mean, c.sd)).epsilon(1e-6));
  }
  // rates: the slice on the logit scale is the shifted beta times the Jacobian
  const ShiftedBeta* rates[4] = {&spec.priors.sn_S, &spec.priors.sp_S, &spec.priors.sn_Y, &spec.priors.sp_Y};
  for (int i = 0; i < 4; ++i) {
    const double d = slice_density_at(spec, t, i, -40.0, 40.0, 80000);
    const double w = 1.0 / (1.0 + std::exp(-t(i)));
    const ShiftedBeta& b = *rates[i];
    const double v = b.lo + (b.hi - b.lo) * w;
    const double expect = oracle::shifted_beta_logpdf(v, b.lo, b.hi, b.a, b.b) + std::log((b.hi - b.lo) * w * (1 - w));
    CHECK(std::log(d) == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("wide covariate prior strata") {
  CHECK(PriorConfig::wide_nu_strata(2) == std::vector<std::size_t>{0, 1, 3});
  CHECK(PriorConfig::wide_nu_strata(3) == std::vector<std::size_t>{0, 1, 7});
}

TEST_CASE("effective sample size against direct autocovariances") {
  Rng rng(21);
  for (double phi : {0.0, 0.5, 0.9}) {
    std::vector<Vector> chains;
    for (int m = 0; m < 4; ++m) {
      Vector c(700);
      double v = rng.normal();
      for (int i = 0; i < 700; ++i) {
        v = phi * v + rng.normal();
        c(i) = v;
      }
      chains.push_back(c);
    }
    CHECK(ess_basic(chains) == doctest::Approx(oracle::ess_direct(chains)).epsilon(1e-8));
    if (phi == 0.9) {
      // AR(1) integrated time (1 + phi) / (1 - phi) = 19
      CHECK(ess_basic(chains) > 2800.0 / 40.0);
      CHECK(ess_basic(chains) < 2800.0 / 10.0);
    }
  }
}

TEST_CASE("split R-hat separates mixed and stuck chains") {
  Rng rng(22);
  std::vector<Vector> good, bad;
  for (int m = 0; m < 4; ++m) {
    Vector a(2000), b(2000);
    for (int i = 0; i < 2000; ++i) {
      a(i) = rng.normal();
      b(i) = rng.normal() + (m == 0 ? 2.0 : 0.0);
    }
    good.push_back(a);
    bad.push_back(b);
  }
  CHECK(split_rhat(good) < 1.01);
  CHECK(split_rhat(bad) > 1.1);
  CHECK(ess_bulk(good) > 5000.0);
  CHECK(ess_tail(good) > 3000.0);
}

TEST_CASE("decisions count joint exceedances") {
  const auto rule = DecisionRule::severe(2);
  CHECK(rule.posterior_prob_cutoff == 0.9);
  CHECK(rule.thresholds[0].cutoff == 0.1);
  CHECK(rule.thresholds[1].cutoff == 0.3);
  const auto tr = DecisionRule::transmission();
  CHECK(tr.posterior_prob_cutoff == 0.95);
  CHECK(tr.thresholds[0].estimand.kind == EstimandKind::VeTransmission);
  CHECK(tr.thresholds[0].cutoff == 0.0);

  const auto est = default_estimands(TrialShape{2, 4, 3, 1});
  Matrix draws = Matrix::Zero(10, static_cast<Eigen::Index>(est.size()));
  for (int i = 0; i < 10; ++i) {
    draws(i, 0) = 0.5;  // ve_i
    draws(i, 1) = i < 7 ? 0.6 : 0.1;  // ve_s
  }
  auto d = decide(est, draws, rule);
  CHECK(d.posterior_prob == doctest::Approx(0.7));
  CHECK_FALSE(d.reject);
  draws.col(1).setConstant(0.6);
  d = decide(est, draws, rule);
  CHECK(d.posterior_prob == 1.0);
  CHECK(d.reject);
  // adding a threshold cannot raise the probability
  DecisionRule more = rule;
  EstimandSpec vt = tr.thresholds[0].estimand;
  more.thresholds.push_back({vt, 0.0});
  CHECK(decide(est, draws, more).posterior_prob <= d.posterior_prob);
  CHECK_THROWS(decide(est, Matrix(0, static_cast<Eigen::Index>(est.size())), rule));
}

TEST_CASE("wilson interval") {
  const double z = 1.959963984540054;
  for (int k : {0, 3, 10, 17, 20}) {
    const int n = 20;
    const double p = static_cast<double>(k) / n;
    const double c = (k + z * z / 2) / (n + z * z);
    const double h = z * std::sqrt(n * p * (1 - p) + z * z / 4) / (n + z * z);
    const Interval ci = wilson_interval(k, n);
    CHECK(ci.lo == doctest::Approx(std::max(0.0, c - h)).epsilon(1e-12));
    CHECK(ci.hi == doctest::Approx(std::min(1.0, c + h)).epsilon(1e-12));
  }
  CHECK_THROWS(wilson_interval(3, 0));
}

TEST_CASE("replicate seeds follow the documented derivation") {
  const auto s = replicate_seeds(99, 3, 40000);
  CHECK(s.params == derive_seed(99, {3}));
  CHECK(s.data == derive_seed(99, {3, 40000}));
  CHECK(s.sampler == derive_seed(99, {3, 40000, 1}));
}

TEST_CASE("posterior with no data stays at the prior") {
  ModelSpec spec;
  spec.shape = TrialShape{2, 1, 2, 1};
  SamplerConfig cfg;
  cfg.chains = 4;
  cfg.warmup = 3000;
  cfg.iters = 6000;
  cfg.seed = 17;
  const FitResult fit = sample_posterior(spec, CellCounts::zeros(spec.shape), cfg);
  CHECK(fit.draws.rows() == 4 * 6000);
  std::vector<Vector> chains;
  double sum = 0.0, sum2 = 0.0;
  for (int c = 0; c < 4; ++c) {
    Vector v(6000);
    for (int i = 0; i < 6000; ++i) {
      v(i) = rate_from_unconstrained(spec.priors.sn_S, fit.draws(c * 6000 + i, 0));
      sum += v(i);
      sum2 += v(i) * v(i);
    }
    chains.push_back(v);
  }
  const double n = 24000.0, mean = sum / n, sd = std::sqrt(sum2 / n - mean * mean);
  const double mcse = sd / std::sqrt(ess_bulk(chains));
  CHECK(std::abs(mean - spec.priors.sn_S.mean()) < 3.0 * mcse);
  CHECK(std::abs(sd - std::sqrt(4.0 * 2.0 / (36.0 * 7.0)) * 0.5) < 0.01);
}

TEST_CASE("sampler output does not depend on the thread count") {
  const auto cfg_sim = scenario_config(Scenario::TwoArmSevere, 4000, 5);
  const auto g = gen_params(cfg_sim);
  const CellCounts c = count_cells(simulate_dataset(g.population, cfg_sim));
  ModelSpec spec;
  spec.shape = cfg_sim.shape;
  SamplerConfig cfg;
  cfg.chains = 2;
  cfg.warmup = 300;
  cfg.iters = 300;
  cfg.seed = 3;
  const FitResult a = sample_posterior(spec, c, cfg);
  cfg.threads = 2;
  const FitResult b = sample_posterior(spec, c, cfg);
  CHECK((a.draws - b.draws).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.estimand_draws - b.estimand_draws).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("R-hat smoke run at forty thousand participants [slow]") {
  const auto cfg_sim = scenario_config(Scenario::TwoArmSevere, 40000, 2026);
  const auto g = gen_params(cfg_sim);
  const CellCounts c = count_cells(simulate_dataset(g.population, cfg_sim));
  ModelSpec spec;
  spec.shape = cfg_sim.shape;
  SamplerConfig cfg;
  cfg.chains = 4;
  cfg.warmup = 60000;
  cfg.iters = 60000;
  cfg.seed = 11;
  cfg.threads = 4;
  const FitResult fit = sample_posterior(spec, c, cfg);
  const auto& r = fit.diagnostics.rhat;
  int below = 0;
  for (Eigen::Index i = 0; i < r.size(); ++i) below += r(i) < 1.01;
  MESSAGE("max R-hat " << r.maxCoeff() << ", " << below << "/" << r.size() << " below 1.01");
  CHECK(below >= 0.95 * static_cast<double>(r.size()));
}
