#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace strata {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kRankTol = 1e-10;

/// Number of singular values above tol * sigma_max. Zero for an all-zero matrix.
int numerical_rank(const Matrix& B, double tol = kRankTol);

struct KruskalRankDetail {
  int rank = 0;
  /// Smallest sigma_min / sigma_max over the column subsets of size `rank`.
  double margin = 0.0;
  /// First subset found deficient at size rank + 1 (empty if full).
  std::vector<int> deficient_subset;
  bool near_deficient(double tol = kRankTol) const { return rank > 0 && margin < 10.0 * tol; }
};

/// Largest k such that every k-column subset has numerical rank k.
/// Throws std::length_error when B has more than 24 columns.
int kruskal_rank(const Matrix& B, double tol = kRankTol);
KruskalRankDetail kruskal_rank_detail(const Matrix& B, double tol = kRankTol);

/// Moore-Penrose inverse by SVD, truncating singular values <= tol * sigma_max.
Matrix pseudoinverse(const Matrix& B, double tol = kRankTol);

class ThreeWayArray {
 public:
  ThreeWayArray() = default;
  ThreeWayArray(int I, int J, int K, double fill = 0.0);

  int dim_i() const { return I_; }
  int dim_j() const { return J_; }
  int dim_k() const { return K_; }

  double& operator()(int i, int j, int k) { return data_[offset(i, j, k)]; }
  double operator()(int i, int j, int k) const { return data_[offset(i, j, k)]; }

  double frobenius_norm() const;
  bool all_finite() const;
  const std::vector<double>& data() const { return data_; }

  /// Mode-n matricizations: (I x JK), (J x IK), (K x IJ).
  Matrix unfold(int mode) const;

 private:
  std::size_t offset(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * static_cast<std::size_t>(J_) + static_cast<std::size_t>(j)) *
               static_cast<std::size_t>(K_) +
           static_cast<std::size_t>(k);
  }
  int I_ = 0, J_ = 0, K_ = 0;
  std::vector<double> data_;
};

/// X_ijk = sum_r A_ir B_jr C_kr.
ThreeWayArray triple_product(const Matrix& A, const Matrix& B, const Matrix& C);

double frobenius_distance(const ThreeWayArray& X, const ThreeWayArray& Y);

struct CpConstraints {
  std::optional<Matrix> fixed_A;
  bool columns_of_C_sum_to_one = false;
  bool rows_of_B_sum_to_one = false;
  bool nonneg = false;
};

struct CpOptions {
  int restarts = 20;
  int max_iter = 2000;
  double conv_tol = 1e-10;  // relative Frobenius residual
  std::uint64_t seed = 0x9d2c5680u;
  double dirichlet_concentration = 1.0;
  bool polish = true;  // Levenberg-Marquardt refinement after ALS
  int polish_iter = 200;
};

struct CpFactors {
  Matrix A, B, C;
  double residual = 0.0;  // ||X - [A,B,C]||_F / ||X||_F
  int restart = -1;
  int iterations = 0;
};

class CpConvergenceError : public std::runtime_error {
 public:
  CpConvergenceError(const std::string& what, double best_residual, CpFactors best)
      : std::runtime_error(what), best_residual_(best_residual), best_(std::move(best)) {}
  double best_residual() const { return best_residual_; }
  const CpFactors& best() const { return best_; }

 private:
  double best_residual_;
  CpFactors best_;
};

/// Constrained CP decomposition by alternating least squares with restarts.
/// Returns the lowest-index restart meeting conv_tol; otherwise throws
/// CpConvergenceError carrying the best restart.
CpFactors cp_decompose(const ThreeWayArray& X, int R, const CpConstraints& constraints,
                       const CpOptions& opts = {});

/// Runs one restart from the given initial B and C (and A when not fixed).
CpFactors cp_refine(const ThreeWayArray& X, const CpConstraints& constraints, CpFactors init,
                    const CpOptions& opts);

/// Greedy column assignment: perm[r] is the estimate column matched to
/// reference column r, by minimal Euclidean distance, ties to lowest index.
std::vector<int> match_columns(const Matrix& reference, const Matrix& estimate);
Matrix permute_columns(const Matrix& M, const std::vector<int>& perm);

struct LmOptions {
  int max_iter = 200;
  double ftol = 1e-30;   // absolute cost threshold
  double xtol = 1e-14;   // relative step threshold
  double lambda0 = 1e-3;
};

struct LmResult {
  Vector x;
  double cost = 0.0;  // 0.5 * ||r||^2
  int iterations = 0;
  bool converged = false;
};

/// Residual callback fills r (and J when non-null).
using LmProblem = std::function<void(const Vector& x, Vector& r, Matrix* J)>;

LmResult levenberg_marquardt(const LmProblem& f, Vector x0, const LmOptions& opts = {});

}  // namespace strata
