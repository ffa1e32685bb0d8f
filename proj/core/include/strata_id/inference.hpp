#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "strata_id/population.hpp"
#include "strata_id/rng.hpp"
#include "strata_id/simulate.hpp"

namespace strata {

/// Beta(a, b) moved onto (lo, hi): v = lo + (hi - lo) * chi.
struct ShiftedBeta {
  double lo = 0.5, hi = 1.0, a = 1.0, b = 1.0;

  double log_density(double v) const;
  double mean() const { return lo + (hi - lo) * a / (a + b); }
  void validate(const char* name) const;
};

struct PriorConfig {
  ShiftedBeta sn_S{0.5, 1.0, 4.0, 2.0};
  ShiftedBeta sp_S{0.5, 1.0, 10.0, 2.0};
  ShiftedBeta sn_Y{0.5, 1.0, 5.0, 2.0};
  ShiftedBeta sp_Y{0.5, 1.0, 4.0, 2.0};
  double sd_alpha = 1.7;
  double sd_nu_wide = 1.7;  // strata 0, 1 and the last stratum
  double sd_nu = 0.5;
  double sd_gamma = 0.5;
  double sd_eta = 0.5;
  double sd_omega = 1.0;
  double sd_mu = 1.0;
  double mu_lead_mean = 1.0;  // mean of the first two mu entries; the rest are 0

  void validate() const;
  /// Strata given the wide nu prior, ascending index order.
  static std::vector<std::size_t> wide_nu_strata(int n_z);
};

struct ModelSpec {
  TrialShape shape;
  PriorConfig priors;
  /// Known P(A~ | A); when set the counts are indexed by A~ and A is summed out.
  std::optional<Matrix> a_kernel;

  void validate() const;
};

/// Unconstrained parameter vector layout. Reference levels (last stratum,
/// last A level, first X level) are fixed at zero and not stored.
class ParamLayout {
 public:
  enum Rate { SnS = 0, SpS = 1, SnY = 2, SpY = 3 };
  struct Block {
    std::string name;
    int begin = 0, size = 0;
  };

  explicit ParamLayout(const TrialShape& shape);

  const TrialShape& shape() const { return shape_; }
  int size() const { return size_; }
  int rate(Rate r) const { return static_cast<int>(r); }
  int mu(int r, int u) const;
  int eta(int x, int u) const;  // x >= 1
  int nu(int u, int k) const;   // k < n_a - 1
  int gamma(int x, int k) const;
  int alpha(int u, int j, int k) const;  // -1 where u_j = 0
  int omega(int x, int j) const;
  /// Labels such as "mu[2,(1,0)]" or "alpha[(1,1),2,3]"; sites, arms, levels 1-based.
  std::vector<std::string> names() const;
  const std::vector<Block>& blocks() const { return blocks_; }

 private:
  TrialShape shape_;
  int size_ = 0;
  int mu_ = 0, eta_ = 0, nu_ = 0, gamma_ = 0, alpha_ = 0, omega_ = 0;
  std::vector<int> alpha_offset_;  // [u * n_z + j], -1 where u_j = 0
  std::vector<Block> blocks_;
};

double rate_from_unconstrained(const ShiftedBeta& support, double t);
double rate_to_unconstrained(const ShiftedBeta& support, double v);

/// Constrained population for an unconstrained vector. x_dist and site_dist
/// are uniform unless given.
PopulationParams to_population(const ModelSpec& spec, const Vector& t, const Vector& x_weights = {},
                               const Vector& site_weights = {});

/// Packs regression-scale truth (as drawn by gen_params) into the layout.
Vector pack_regression(const ModelSpec& spec, const RegressionParams& reg, const Misclassification& m);

/// mu at the prior mean, rates at their prior means, everything else 0.
Vector prior_center(const ModelSpec& spec);
Vector draw_prior(const ModelSpec& spec, Rng& rng);

/// Prior log-density of the unconstrained vector including the log-Jacobian
/// of the rate transforms.
double log_prior(const ModelSpec& spec, const Vector& t);

struct LogLikelihood {
  double value = 0.0;
  bool zero_probability = false;  // a positive count fell on a zero-probability cell
};

/// Sentinel returned in place of -infinity.
inline constexpr double kLogZeroSentinel = -1e300;

/// Multinomial log-mass without the multinomial coefficients, conditional on
/// (x, z, r).
LogLikelihood log_likelihood(const ModelSpec& spec, const Vector& t, const CellCounts& counts);
LogLikelihood log_likelihood(const PopulationParams& params, const CellCounts& counts);

double log_posterior(const ModelSpec& spec, const Vector& t, const CellCounts& counts);

/// Empirical weights of x levels and sites in the counts (uniform when empty).
Vector empirical_x_weights(const CellCounts& counts);
Vector empirical_site_weights(const CellCounts& counts);

struct MapResult {
  Vector x;
  double log_posterior = 0.0;
  bool converged = false;
  int iterations = 0;
  /// Inverse negative Hessian at x, eigenvalues floored; empty if not requested.
  Matrix covariance;
};

MapResult find_map(const ModelSpec& spec, const CellCounts& counts, const Vector& start, int max_iter = 500,
                   bool with_covariance = true);

struct SamplerConfig {
  int chains = 4;
  int warmup = 6000;
  int iters = 6000;
  std::uint64_t seed = 1;
  int threads = 1;
  double target_accept = 0.23;
  /// Start chains around the posterior mode; otherwise from prior draws with mu at its prior mean.
  bool optimize_init = true;

  void validate() const;
};

struct Diagnostics {
  Vector rhat;
  Vector ess_bulk;
  Vector ess_tail;
  double acceptance_rate = 0.0;
  double max_rhat() const;
  double min_ess_bulk() const;
  double min_ess_tail() const;
};

struct FitResult {
  TrialShape shape;
  std::vector<std::string> names;
  int chains = 0, iters = 0;
  Matrix draws;  // (chains * iters) x dim, chain-major rows
  Vector point;  // posterior mode
  double point_log_posterior = 0.0;
  std::vector<EstimandSpec> estimands;
  Matrix estimand_draws;  // rows match draws
  Diagnostics diagnostics;
  bool sn_Y_prior_dominated = true;
  std::vector<std::size_t> wide_nu_strata;
};

/// Estimands used by the default decision rules plus VE_S and VE_I for every
/// comparable pair on the always-infected stratum.
std::vector<EstimandSpec> default_estimands(const TrialShape& shape);

FitResult sample_posterior(const ModelSpec& spec, const CellCounts& counts, const SamplerConfig& config,
                           std::vector<EstimandSpec> estimands = {});

/// Split R-hat on rank-normalized draws (max of bulk and folded versions).
double split_rhat(const std::vector<Vector>& chains);
double ess_bulk(const std::vector<Vector>& chains);
double ess_tail(const std::vector<Vector>& chains);
/// Plain ESS of the given chains (no rank normalization).
double ess_basic(const std::vector<Vector>& chains);
Diagnostics compute_diagnostics(const Matrix& draws, int chains);

struct Threshold {
  EstimandSpec estimand;
  double cutoff = 0.0;  // estimand > cutoff
};

struct DecisionRule {
  std::string name;
  std::vector<Threshold> thresholds;
  double posterior_prob_cutoff = 0.9;

  void validate(const TrialShape& shape) const;
  /// VE_I on the always-infected stratum > 0.1 and VE_S > 0.3 comparing the
  /// last arm to the first, posterior probability >= 0.9.
  static DecisionRule severe(int n_z);
  /// VE_T on (1,1) > 0 and VE_S > 0.3, posterior probability >= 0.95.
  static DecisionRule transmission();
  static DecisionRule by_name(const std::string& name, int n_z);
};

struct Decision {
  bool reject = false;
  double posterior_prob = 0.0;
};

/// Fraction of joint draws meeting every threshold.
Decision decide(const FitResult& fit, const DecisionRule& rule);
Decision decide(const std::vector<EstimandSpec>& estimands, const Matrix& estimand_draws, const DecisionRule& rule);

Interval wilson_interval(int successes, int trials, double z = 1.959963984540054);

struct PowerConfig {
  Scenario scenario = Scenario::TwoArmSevere;
  bool measure_A_with_error = false;
  std::vector<long> n_grid;
  int replicates = 100;
  std::optional<DecisionRule> rule;  // default by scenario
  SamplerConfig sampler;
  std::uint64_t master_seed = 1;
  int jobs = 1;
  /// Pass the A~ kernel to the model when A is measured with error.
  bool known_a_kernel = true;

  void validate() const;
};

/// Seeds: parameters derive_seed(master, {rep}), data derive_seed(master,
/// {rep, n}), sampler derive_seed(master, {rep, n, 1}).
struct ReplicateSeeds {
  std::uint64_t params = 0, data = 0, sampler = 0;
};
ReplicateSeeds replicate_seeds(std::uint64_t master, int rep, long n);

struct ReplicateOutcome {
  long n = 0;
  int rep = 0;
  bool ok = false;
  std::string error;
  bool reject = false;
  double posterior_prob = 0.0;
  /// First rule estimand: truth and its central 95% credible interval.
  double truth = 0.0;
  Interval credible{0.0, 0.0};
  bool covered = false;
  double max_rhat = 0.0;
};

struct PowerRow {
  std::string trial, measurement;
  long n = 0;
  int replicates = 0, rejections = 0, failures = 0, covered = 0;
  double power = 0.0, ci_lo = 0.0, ci_hi = 0.0;
};

struct PowerResult {
  std::vector<PowerRow> rows;
  std::vector<ReplicateOutcome> replicates;  // ordered by (n index, rep)
};

/// One replicate of the power harness: simulate, fit, decide.
ReplicateOutcome run_replicate(const PowerConfig& config, long n, int rep);

PowerResult power_study(const PowerConfig& config,
                        const std::function<void(const ReplicateOutcome&)>& progress = {});

}  // namespace strata
