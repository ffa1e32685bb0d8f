#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "strata_id/population.hpp"

namespace strata {

enum class Scenario {
  TwoArmSevere,
  ThreeArmSevere,
  TwoArmTransmission,
  TwoArmNull,
  ThreeArmNull,
  TwoArmTransmissionNull,
  Custom,
};

std::string to_string(Scenario s);
Scenario parse_scenario(const std::string& text);

/// Outcome logit tables: logit P(Y(z_j)=1 | u, A=k, X=x) = alpha[u][j] + delta[u][j][k] + omega(x, j).
/// alpha[u][j] is NaN where u_j = 0.
struct EffectSettings {
  std::vector<std::vector<double>> alpha;               // [u][j]
  std::vector<std::vector<std::vector<double>>> delta;  // [u][j][k]
  Matrix omega;                                         // N_x x N_z
};

struct Misclassification {
  double sn_S = 1.0, sp_S = 1.0, sn_Y = 1.0, sp_Y = 1.0;
};

struct SimConfig {
  TrialShape shape;
  std::uint64_t seed = 1;
  long n = 1000;
  Scenario scenario = Scenario::TwoArmSevere;
  bool measure_A_with_error = false;
  std::vector<double> dirichlet_strata;
  double dirichlet_covariate = 2.0;
  EffectSettings effects;
  Misclassification misclass;
  std::optional<Matrix> a_error_kernel;
  bool households = false;
  int threads = 1;

  void validate() const;
};

/// Default configuration for a named scenario (shape, Dirichlet, effects,
/// misclassification rates, A~ kernel when measure_A_with_error is set).
SimConfig scenario_config(Scenario s, long n, std::uint64_t seed, bool measure_A_with_error = false);

/// Neighbour-smearing A~ kernels used by the named scenarios (N_a = 3 or 7).
Matrix default_a_kernel(int n_a);

/// Relabels the two-arm transmission scenario for household data: the
/// intermediate outcome is the randomized member's infection, Y the
/// contact's, sn_Y = sn_S and sp_Y = sp_S, and n counts households.
SimConfig household_mapping(const SimConfig& config);

/// Regression-scale parameters behind a PopulationParams draw. Reference
/// levels (last stratum, last covariate level, x = first level) are zero.
struct RegressionParams {
  Matrix mu;     // N_r x R
  Matrix eta;    // N_x x R
  Matrix nu;     // R x N_a
  Matrix gamma;  // N_x x N_a
  EffectSettings effects;
};

struct GeneratedParams {
  PopulationParams population;
  RegressionParams regression;
};

GeneratedParams gen_params(const SimConfig& config);

/// Direct population draw for identification checks: theta and a columns
/// Dirichlet(1), beta uniform on (0.05, 0.95), misclassification rates
/// uniform on (0.6, 1), x_dist Dirichlet(2), uniform z and site weights.
PopulationParams random_population(const TrialShape& shape, std::uint64_t seed);

Vector softmax(const Vector& v);
/// log(theta_i) - log(theta_last) for i < L; the reference entry is dropped.
Vector softmax_inverse(const Vector& theta);
double logit(double p);
double inv_logit(double x);

struct ParticipantRecord {
  std::int32_t z = 0, r = 0, x = 0;
  std::int32_t a_true = 0, a_obs = 0;
  std::int32_t stratum = 0;
  std::int8_t s_true = 0, s_obs = 0;
  std::int8_t y_true = 0, y_obs = 0;
};

struct TrialDataset {
  TrialShape shape;
  bool households = false;
  std::vector<ParticipantRecord> records;
};

/// Deterministic given config.seed; participant i draws from its own stream
/// so the output does not depend on the thread count.
TrialDataset simulate_dataset(const PopulationParams& params, const SimConfig& config);

/// Aggregated counts in the ObservableCells layout (x, z, r, s, y, k),
/// with k the observed covariate level.
struct CellCounts {
  TrialShape shape;
  std::vector<double> n;

  static CellCounts zeros(const TrialShape& shape);
  std::size_t index(int x, int z, int r, int s, int y, int k) const;
  double total() const;
};

CellCounts count_cells(const TrialDataset& data);

}  // namespace strata
