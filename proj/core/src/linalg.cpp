#include "strata_id/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace strata {

namespace {

Vector singular_values(const Matrix& B) {
  if (B.size() == 0) return Vector();
  Eigen::JacobiSVD<Matrix> svd(B);
  return svd.singularValues();
}

int rank_from_sv(const Vector& sv, double tol) {
  if (sv.size() == 0 || sv(0) <= 0.0) return 0;
  const double cut = tol * sv(0);
  int r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > cut) ++r;
  return r;
}

// Calls visit(subset) for each k-subset of {0..n-1} in lexicographic order;
// stops early when visit returns false.
template <class F>
bool for_each_subset(int n, int k, F&& visit) {
  std::vector<int> idx(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (;;) {
    if (!visit(idx)) return false;
    int p = k - 1;
    while (p >= 0 && idx[static_cast<std::size_t>(p)] == n - k + p) --p;
    if (p < 0) return true;
    ++idx[static_cast<std::size_t>(p)];
    for (int q = p + 1; q < k; ++q) idx[static_cast<std::size_t>(q)] = idx[static_cast<std::size_t>(q - 1)] + 1;
  }
}

}  // namespace

int numerical_rank(const Matrix& B, double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("numerical_rank: tol must be positive");
  return rank_from_sv(singular_values(B), tol);
}

KruskalRankDetail kruskal_rank_detail(const Matrix& B, double tol) {
  if (B.size() == 0) throw std::invalid_argument("kruskal_rank: empty matrix");
  if (!(tol > 0.0)) throw std::invalid_argument("kruskal_rank: tol must be positive");
  if (B.cols() > 24) throw std::length_error("kruskal_rank: too large (more than 24 columns)");

  KruskalRankDetail out;
  const Vector sv_all = singular_values(B);
  if (sv_all.size() == 0 || sv_all(0) <= 0.0) return out;
  const double zero_cut = tol * sv_all(0);
  for (Eigen::Index c = 0; c < B.cols(); ++c) {
    if (B.col(c).norm() <= zero_cut) {
      out.deficient_subset = {static_cast<int>(c)};
      return out;
    }
  }

  const int n = static_cast<int>(B.cols());
  const int kmax = static_cast<int>(std::min(B.rows(), B.cols()));
  out.rank = 1;
  out.margin = 1.0;
  Matrix sub(B.rows(), 0);
  for (int k = 2; k <= kmax; ++k) {
    double margin = std::numeric_limits<double>::infinity();
    std::vector<int> bad;
    sub.resize(B.rows(), k);
    const bool full = for_each_subset(n, k, [&](const std::vector<int>& idx) {
      for (int c = 0; c < k; ++c) sub.col(c) = B.col(idx[static_cast<std::size_t>(c)]);
      const Vector sv = singular_values(sub);
      if (rank_from_sv(sv, tol) < k) {
        bad = idx;
        return false;
      }
      margin = std::min(margin, sv(k - 1) / sv(0));
      return true;
    });
    if (!full) {
      out.deficient_subset = std::move(bad);
      return out;
    }
    out.rank = k;
    out.margin = margin;
  }
  return out;
}

int kruskal_rank(const Matrix& B, double tol) { return kruskal_rank_detail(B, tol).rank; }

Matrix pseudoinverse(const Matrix& B, double tol) {
  if (B.size() == 0) return Matrix::Zero(B.cols(), B.rows());
  Eigen::JacobiSVD<Matrix> svd(B, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  Vector inv = Vector::Zero(sv.size());
  if (sv.size() > 0 && sv(0) > 0.0) {
    const double cut = tol * sv(0);
    for (Eigen::Index i = 0; i < sv.size(); ++i)
      if (sv(i) > cut) inv(i) = 1.0 / sv(i);
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

ThreeWayArray::ThreeWayArray(int I, int J, int K, double fill) : I_(I), J_(J), K_(K) {
  if (I < 0 || J < 0 || K < 0) throw std::invalid_argument("ThreeWayArray: negative dimension");
  data_.assign(static_cast<std::size_t>(I) * static_cast<std::size_t>(J) * static_cast<std::size_t>(K), fill);
}

double ThreeWayArray::frobenius_norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return std::sqrt(s);
}

bool ThreeWayArray::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix ThreeWayArray::unfold(int mode) const {
  Matrix M;
  switch (mode) {
    case 0:
      M.resize(I_, J_ * K_);
      for (int i = 0; i < I_; ++i)
        for (int j = 0; j < J_; ++j)
          for (int k = 0; k < K_; ++k) M(i, k * J_ + j) = (*this)(i, j, k);
      break;
    case 1:
      M.resize(J_, I_ * K_);
      for (int i = 0; i < I_; ++i)
        for (int j = 0; j < J_; ++j)
          for (int k = 0; k < K_; ++k) M(j, k * I_ + i) = (*this)(i, j, k);
      break;
    case 2:
      M.resize(K_, I_ * J_);
      for (int i = 0; i < I_; ++i)
        for (int j = 0; j < J_; ++j)
          for (int k = 0; k < K_; ++k) M(k, j * I_ + i) = (*this)(i, j, k);
      break;
    default:
      throw std::invalid_argument("unfold: mode must be 0, 1 or 2");
  }
  return M;
}

ThreeWayArray triple_product(const Matrix& A, const Matrix& B, const Matrix& C) {
  if (A.cols() != B.cols() || A.cols() != C.cols())
    throw std::invalid_argument("triple_product: factors must share the column count");
  const int I = static_cast<int>(A.rows()), J = static_cast<int>(B.rows()), K = static_cast<int>(C.rows());
  ThreeWayArray X(I, J, K);
  for (int i = 0; i < I; ++i)
    for (int j = 0; j < J; ++j)
      for (int k = 0; k < K; ++k) {
        double s = 0.0;
        for (Eigen::Index r = 0; r < A.cols(); ++r) s += A(i, r) * B(j, r) * C(k, r);
        X(i, j, k) = s;
      }
  return X;
}

double frobenius_distance(const ThreeWayArray& X, const ThreeWayArray& Y) {
  if (X.dim_i() != Y.dim_i() || X.dim_j() != Y.dim_j() || X.dim_k() != Y.dim_k())
    throw std::invalid_argument("frobenius_distance: shape mismatch");
  double s = 0.0;
  for (std::size_t n = 0; n < X.data().size(); ++n) {
    const double d = X.data()[n] - Y.data()[n];
    s += d * d;
  }
  return std::sqrt(s);
}

std::vector<int> match_columns(const Matrix& reference, const Matrix& estimate) {
  if (reference.rows() != estimate.rows() || reference.cols() != estimate.cols())
    throw std::invalid_argument("match_columns: shape mismatch");
  const int R = static_cast<int>(reference.cols());
  std::vector<int> perm(static_cast<std::size_t>(R), -1);
  std::vector<bool> used(static_cast<std::size_t>(R), false);
  // Repeatedly take the globally closest unassigned (reference, estimate) pair.
  for (int step = 0; step < R; ++step) {
    double best = std::numeric_limits<double>::infinity();
    int br = -1, be = -1;
    for (int r = 0; r < R; ++r) {
      if (perm[static_cast<std::size_t>(r)] >= 0) continue;
      for (int e = 0; e < R; ++e) {
        if (used[static_cast<std::size_t>(e)]) continue;
        const double d = (reference.col(r) - estimate.col(e)).norm();
        if (d < best) {
          best = d;
          br = r;
          be = e;
        }
      }
    }
    perm[static_cast<std::size_t>(br)] = be;
    used[static_cast<std::size_t>(be)] = true;
  }
  return perm;
}

Matrix permute_columns(const Matrix& M, const std::vector<int>& perm) {
  Matrix out(M.rows(), M.cols());
  for (Eigen::Index r = 0; r < M.cols(); ++r) out.col(r) = M.col(perm[static_cast<std::size_t>(r)]);
  return out;
}

LmResult levenberg_marquardt(const LmProblem& f, Vector x0, const LmOptions& opts) {
  LmResult res;
  res.x = std::move(x0);
  Vector r;
  Matrix J;
  f(res.x, r, &J);
  double cost = 0.5 * r.squaredNorm();
  double lambda = opts.lambda0;
  Vector r_new;
  for (int it = 0; it < opts.max_iter; ++it) {
    res.iterations = it + 1;
    if (!std::isfinite(cost)) break;
    if (cost <= opts.ftol) {
      res.converged = true;
      break;
    }
    const Eigen::Index m = J.rows(), n = J.cols();
    const Vector diag = J.colwise().squaredNorm().transpose().cwiseMax(1e-12);
    Matrix aug(m + n, n);
    Vector rhs = Vector::Zero(m + n);
    aug.topRows(m) = J;
    rhs.head(m) = -r;
    bool accepted = false;
    for (int tries = 0; tries < 30; ++tries) {
      // Solve the damped problem as least squares to avoid squaring cond(J).
      aug.bottomRows(n) = (lambda * diag).cwiseSqrt().asDiagonal();
      const Vector step = aug.colPivHouseholderQr().solve(rhs);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const Vector x_new = res.x + step;
      f(x_new, r_new, nullptr);
      const double cost_new = 0.5 * r_new.squaredNorm();
      if (std::isfinite(cost_new) && cost_new < cost) {
        const double rel_step = step.norm() / (res.x.norm() + 1e-12);
        res.x = x_new;
        cost = cost_new;
        lambda = std::max(lambda / 10.0, 1e-15);
        accepted = true;
        f(res.x, r, &J);
        if (rel_step < opts.xtol) res.converged = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted || res.converged) {
      res.converged = res.converged || !accepted;
      break;
    }
  }
  res.cost = cost;
  return res;
}

}  // namespace strata
