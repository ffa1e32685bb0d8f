#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "strata_id/linalg.hpp"

namespace strata {

/// P(S | Z, S^P0): 2 n_z x 2^n_z, rows (s=1, z=1..n_z) then (s=0, z=1..n_z),
/// column j stacks bits(j) over 1 - bits(j).
Matrix build_S_matrix(int n_z);

/// P(S~ | Z, S^P0) with top entries sn^u (1-sp)^(1-u), bottom (1-sn)^u sp^(1-u).
Matrix build_Stilde_matrix(int n_z, double sn_S, double sp_S);

/// Entrywise derivatives of build_Stilde_matrix with respect to sn and sp.
Matrix Stilde_dsn(int n_z);
Matrix Stilde_dsp(int n_z);

/// Both in (1/2, 1] or both in [0, 1/2). Exactly 1/2 fails.
bool half_interval_ok(double sn, double sp);

/// If M equals build_Stilde_matrix(n_z, sn', sp') within tol for some
/// (sn', sp') in the upper (or lower) half-interval, returns that pair.
std::optional<std::pair<double, double>> match_in_family(const Matrix& M, int n_z, double tol,
                                                         bool upper_half = true);

enum class Theorem { T1, T2, C2, C3 };
std::string to_string(Theorem t);
Theorem parse_theorem(const std::string& text);

struct DesignCheckReport {
  Theorem theorem = Theorem::T2;
  int n_z = 0;
  int n_a = 0;
  int n_r = 0;
  int krank_A = 0;
  int krank_required = 0;
  double krank_margin = 0.0;
  int rank_SR = 0;
  int rank_required = 0;
  bool half_interval_ok = true;
  bool near_deficient = false;
  bool passed = false;
  std::vector<std::string> messages;
};

inline constexpr double kSimplexTol = 1e-8;

/// Checks the rank hypotheses for a proposed design. P_A_given_strata is
/// N_a x 2^n_z (or P(A~|S^P0) for C3), P_strata_given_R is 2^n_z x N_r.
/// Throws std::invalid_argument on shape mismatch or non-simplex columns.
DesignCheckReport check_design(const Matrix& P_A_given_strata, const Matrix& P_strata_given_R,
                               double sn_S, double sp_S, Theorem theorem);

struct MinimumDesign {
  int min_sites = 0;
  int min_covariate_levels = 0;
};
MinimumDesign minimum_design(int n_z);

struct StructuredCpOptions {
  int grid = 8;               // sn, sp grid points per axis over (0.5, 1]
  int grid_als_iter = 60;
  int candidates = 3;         // best grid points sent to the joint fit
  int max_restarts = 20;      // joint fits in total
  int lm_iter = 300;
  double conv_tol = 1e-11;    // relative Frobenius residual
  std::uint64_t seed = 0x51ed27u;
  bool upper_half = true;
};

struct StructuredCpResult {
  double sn = 1.0, sp = 1.0;
  Matrix B;  // J x R, rows on the simplex
  Matrix C;  // K x R, columns on the simplex
  double residual = 0.0;
  int restarts = 0;
  bool permutation_resolved = false;  // solution came from the mirrored half
};

/// Decomposes X = [Stilde(sn, sp), B, C] with (sn, sp) free, profiling a
/// (sn, sp) grid first and then fitting everything jointly. The complement
/// relabelling is resolved onto the requested half-interval.
/// Throws CpConvergenceError when no restart reaches conv_tol.
StructuredCpResult structured_cp(const ThreeWayArray& X, int n_z, const StructuredCpOptions& opts = {});

}  // namespace strata
