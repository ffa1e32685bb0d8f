#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "strata_id/identifiability.hpp"
#include "strata_id/linalg.hpp"
#include "strata_id/strata.hpp"

namespace strata {

/// Thrown when an input violates the hypotheses needed for identification.
class IdentificationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when an estimand has a zero denominator.
class UndefinedEstimand : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Complete population-level parameter set. Every probability table is held
/// per level x of the pretreatment covariate.
struct PopulationParams {
  TrialShape shape;
  std::vector<Matrix> theta;              // [x]: R x N_r, column r = P(S^P0 | R=r, X=x)
  std::vector<Matrix> a;                  // [x]: N_a x R, column u = P(A | S^P0=u, X=x)
  std::vector<std::vector<Matrix>> beta;  // [x][j]: N_a x R, P(Y(z_j)=1 | u, A, x); NaN where u_j = 0
  double sn_S = 1.0, sp_S = 1.0, sn_Y = 1.0, sp_Y = 1.0;
  Vector x_dist;     // N_x
  Vector z_dist;     // N_z
  Vector site_dist;  // N_r
  std::optional<Matrix> a_kernel;  // N_a x N_a, row k = P(A~ | A=k)

  /// Shape-only constructor helper: uniform weights, NaN-free zero tables.
  static PopulationParams zeros(const TrialShape& shape);
  void validate() const;
  bool noiseless_infection() const { return sn_S == 1.0 && sp_S == 1.0; }
};

/// Observable cell probabilities given (Z=z, R=r, X=x), flattened in the
/// order x, z, r, s, y, k. p is the error-free (S, Y, A) table with the
/// structurally absent (s=0, y=1) cells held at zero; q is the observed
/// (S~, Y~, A or A~) table.
struct ObservableCells {
  TrialShape shape;
  std::vector<double> p;
  std::vector<double> q;

  static ObservableCells zeros(const TrialShape& shape);
  std::size_t index(int x, int z, int r, int s, int y, int k) const;
  double& q_at(int x, int z, int r, int s, int y, int k) { return q[index(x, z, r, s, y, k)]; }
  double q_at(int x, int z, int r, int s, int y, int k) const { return q[index(x, z, r, s, y, k)]; }
  double& p_at(int x, int z, int r, int s, int y, int k) { return p[index(x, z, r, s, y, k)]; }
  double p_at(int x, int z, int r, int s, int y, int k) const { return p[index(x, z, r, s, y, k)]; }
  std::size_t size() const { return q.size(); }
};

/// Exact mixture probabilities.
ObservableCells forward_probabilities(const PopulationParams& params);

/// q cells for a single (x, z, r) block, length 4 N_a in (s, y, k) order.
/// Used by the likelihood so it shares one implementation with the oracle.
void q_block(const PopulationParams& params, int x, int z, int r, double* out);

/// One principal or infection effect value.
struct EffectValue {
  EstimandSpec spec;
  double value = 0.0;
};

/// Everything the estimand functions need: stratum/covariate tables,
/// outcome means per (x, j) on either the absolute scale or scaled by r_Y,
/// and the site / x weights used to marginalize.
struct EstimandBasis {
  TrialShape shape;
  std::vector<Matrix> theta;                 // [x]: R x N_r
  std::vector<Matrix> a;                     // [x]: N_a x R
  std::vector<std::vector<Matrix>> outcome;  // [x][j]: N_a x R
  Vector x_weights;
  Vector site_weights;
  bool outcome_scaled = false;  // outcome = r_Y * beta rather than beta

  double infection_risk(int j) const;
  /// E[Y(z_j) | u] (or r_Y times it), optionally conditional on A = level.
  double mean_outcome(std::size_t u, int j, int level = -1) const;
  double stratum_share(std::size_t u) const;
  double evaluate(const EstimandSpec& spec) const;
};

EstimandBasis basis_from_params(const PopulationParams& params);

struct VeTable {
  Matrix ve_S;                        // N_z x N_z, entry (j, k) = 1 - E[S(z_j)]/E[S(z_k)]
  std::vector<EffectValue> ve_I;      // marginal principal effects, all comparable (u, j != k)
  std::vector<EffectValue> ve_I_cond; // conditional on A = level
};

VeTable ve_estimands(const EstimandBasis& basis);
VeTable ve_estimands(const PopulationParams& params);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v, double tol = 0.0) const { return v >= lo - tol && v <= hi + tol; }
};

struct RegionResult {
  Interval sn_Y;
  std::vector<Interval> beta;  // one per input p_tilde entry
};

/// Identification regions for sn_Y and beta given p~ values (entries with
/// u_j = 1) and sp_Y. Throws std::invalid_argument when max p~ >= 1 or an
/// entry is not above 1 - sp_Y.
RegionResult identification_region(const std::vector<double>& p_tilde, double sp_Y);

enum class IdentifyMode { Auto, Theorem1, Theorem2 };
std::string to_string(IdentifyMode m);

struct IdentifyOptions {
  IdentifyMode mode = IdentifyMode::Auto;
  std::optional<double> known_sn_Y;
  Vector x_weights;     // empty: uniform
  Vector site_weights;  // empty: uniform
  StructuredCpOptions cp;
  double consistency_tol = 1e-6;  // agreement of (sn_S, sp_S) across x levels
};

struct IdentifiedQuantities {
  TrialShape shape;
  IdentifyMode mode_used = IdentifyMode::Theorem2;
  std::vector<Matrix> theta_hat;                 // [x]: R x N_r
  std::vector<Matrix> a_hat;                     // [x]: N_a x R (P(A~|u) under an A~ table)
  std::vector<std::vector<Matrix>> p_tilde;      // [x][j]: N_a x R, P(Y~=1 | z_j, u, A=k, x)
  double sn_S_hat = 1.0, sp_S_hat = 1.0, sp_Y_hat = 1.0;
  std::optional<double> sn_Y_known;
  std::optional<std::vector<std::vector<Matrix>>> beta_hat;  // only when sn_Y is known
  VeTable ve;
  Interval snY_region;
  std::vector<std::vector<Matrix>> beta_lo, beta_hi;  // [x][j]; NaN where u_j = 0
  double max_residual = 0.0;
  int cp_restarts = 0;
  bool permutation_resolved = false;

  EstimandBasis basis(const Vector& x_weights = {}, const Vector& site_weights = {}) const;
};

/// Constructive inverse of forward_probabilities. Throws IdentificationError
/// when the recovered quantities violate the hypotheses and
/// CpConvergenceError when the decomposition fails.
IdentifiedQuantities identify_from_population(const ObservableCells& cells, const IdentifyOptions& opts = {});

struct TwoArmObserved {
  double p110 = 0.0, p111 = 0.0, p100 = 0.0, p101 = 0.0;
};

struct TwoArmSensitivity {
  double theta_01 = 0.0, theta_10 = 0.0;
  double phi_11 = 0.0, phi_01 = 0.0, phi_10 = 0.0, phi_00 = 0.0;
  double ve = 0.0;
  bool feasible = true;
  std::vector<std::string> violations;
};

/// Map to the identifiable subspace of the basic two-arm model. phi_10 is
/// a free input (the estimand does not depend on it).
TwoArmSensitivity two_arm_sensitivity(const TwoArmObserved& p, double beta_10_1, double beta_01_2,
                                      double theta_11, double phi_10 = 0.0);

struct TwoArmParams {
  double theta_01 = 0.0, theta_10 = 0.0, theta_11 = 0.0;
  double beta_10_1 = 0.0, beta_01_2 = 0.0;
  double beta_11_1 = 0.0, beta_11_2 = 0.0;
};

/// Forward display of the basic two-arm model.
TwoArmObserved two_arm_forward(const TwoArmParams& t);

}  // namespace strata
