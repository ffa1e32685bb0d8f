#pragma once

// Principal strata encodings, trial shapes, estimand descriptors and the
// parameter / degree-of-freedom bookkeeping shared by every other module.
//
// Conventions used repo-wide:
//   * treatments, sites, covariate levels and strata are 0-based in the C++
//     API; file formats and the CLI use 1-based labels for z, r, x and a.
//   * a stratum u is a binary vector with u[j] = S(z_j); its canonical index
//     is sum_j u[j] * 2^j, so bits[0] is the least-significant digit
//     (index 4 with three treatments is (0,0,1)).
//   * strata are always iterated in ascending index order, which fixes the
//     column order of every structural matrix.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace strata {

inline constexpr int kMaxTreatments = 16;

/// Number of principal strata for n_z treatments (2^n_z).
std::size_t num_strata(int n_z);

class StratumVector {
 public:
  StratumVector() = default;
  explicit StratumVector(std::vector<std::uint8_t> bits);

  static StratumVector from_index(std::size_t index, int n_z);

  std::size_t index() const { return index_; }
  int size() const { return static_cast<int>(bits_.size()); }
  bool infected_under(int arm) const { return bits_.at(static_cast<std::size_t>(arm)) != 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  int infected_count() const;

  /// "(1,0,1)" style rendering used in messages and JSON keys.
  std::string to_string() const;

  friend bool operator==(const StratumVector& a, const StratumVector& b) {
    return a.bits_ == b.bits_;
  }
  friend std::strong_ordering operator<=>(const StratumVector& a, const StratumVector& b) {
    if (auto c = a.bits_.size() <=> b.bits_.size(); c != 0) return c;
    return a.index_ <=> b.index_;
  }

 private:
  std::vector<std::uint8_t> bits_;
  std::size_t index_ = 0;
};

/// Base-2 expansion of j with m digits, least-significant digit first.
/// Throws std::out_of_range when j >= 2^m or m is outside [1, 62].
StratumVector stratum_from_index(std::size_t j, int m);

/// Inverse of stratum_from_index.
std::size_t stratum_index(std::span<const std::uint8_t> bits);

/// Parses "(1,0,1)" or "101" (first character = first treatment).
StratumVector parse_stratum(const std::string& text);

/// Strata infected under every arm in `arms`, ascending by index.
/// Throws std::invalid_argument for an empty arm set or an arm >= n_z.
std::vector<StratumVector> comparable_strata(int n_z, std::span<const int> arms);

struct TrialShape {
  int n_z = 2;  // treatments
  int n_r = 1;  // sites
  int n_a = 1;  // levels of the stratum-relevant covariate A
  int n_x = 1;  // levels of the pretreatment covariate X

  std::size_t strata() const { return num_strata(n_z); }
  void validate() const;

  friend bool operator==(const TrialShape&, const TrialShape&) = default;
};

struct ParameterCounts {
  long infection_covariate = 0;
  long outcome = 0;
  long dof = 0;
};

/// Parameter and degree-of-freedom counts of the multi-site model:
/// N_r(2^Nz - 1) + 2^Nz(N_a - 1), N_a(2^Nz - 1) and N_r N_z (2 N_a - 1).
ParameterCounts count_params_and_dof(const TrialShape& shape);

struct BasicModelCounts {
  long params = 0;
  long dof = 0;
};

/// Counts for the single-site model without covariates:
/// 2^Nz - 1 + sum_j C(Nz, j)(2^j - 1) parameters against 2 Nz degrees of freedom.
BasicModelCounts count_basic_model(int n_z);

enum class EstimandKind {
  VeS,              // 1 - E[S(z_j)] / E[S(z_k)]
  VeIConditional,   // principal effect within stratum, conditional on A = k
  VeIMarginal,      // principal effect within stratum, A marginalized
  Composite,        // (E[Y(z_j)|u] - E[Y(z_k)|u]) / E[Y(z_ref)|u]
  VeTransmission,   // E[Y(z_k)|u] - E[Y(z_j)|u], a risk difference
};

std::string to_string(EstimandKind kind);
EstimandKind parse_estimand_kind(const std::string& text);

struct CompositeArms {
  int j = 0;
  int k = 0;
  int ref = 0;
};

struct EstimandSpec {
  EstimandKind kind = EstimandKind::VeS;
  StratumVector stratum;
  int arm_j = 0;
  int arm_k = 1;
  std::optional<int> covariate_level;
  std::optional<CompositeArms> composite_arms;

  /// Throws std::invalid_argument when the estimand is undefined for the
  /// stratum (principal effects require u_j = u_k = 1).
  void validate(int n_z) const;

  /// Stable text label, e.g. "ve_i[(1,1)](2,1)" with 1-based arms.
  std::string label() const;
};

}  // namespace strata
