#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "strata_id/linalg.hpp"
#include "strata_id/rng.hpp"

namespace strata {

namespace {

// Rows indexed by (outer * inner_rows + inner): column r is outer_r (x) inner_r.
Matrix khatri_rao(const Matrix& outer, const Matrix& inner) {
  Matrix out(outer.rows() * inner.rows(), outer.cols());
  for (Eigen::Index r = 0; r < outer.cols(); ++r)
    for (Eigen::Index o = 0; o < outer.rows(); ++o)
      out.block(o * inner.rows(), r, inner.rows(), 1) = outer(o, r) * inner.col(r);
  return out;
}

Matrix solve_factor(const Matrix& unfolded, const Matrix& kr) {
  const Matrix gram = kr.transpose() * kr;
  const Matrix rhs = unfolded * kr;
  return (pseudoinverse(gram, 1e-14) * rhs.transpose()).transpose();
}

double relative_residual(const ThreeWayArray& X, const CpFactors& f, double xnorm) {
  const double d = frobenius_distance(X, triple_product(f.A, f.B, f.C));
  return xnorm > 0.0 ? d / xnorm : d;
}

void normalize(CpFactors& f, const CpConstraints& c) {
  const bool a_free = !c.fixed_A.has_value();
  const Eigen::Index R = f.C.cols();
  if (c.columns_of_C_sum_to_one) {
    for (Eigen::Index r = 0; r < R; ++r) {
      const double s = f.C.col(r).sum();
      if (std::abs(s) < 1e-300) continue;
      f.C.col(r) /= s;
      if (a_free)
        f.A.col(r) *= s;
      else
        f.B.col(r) *= s;
    }
  }
  if (c.rows_of_B_sum_to_one && a_free) {
    const Vector m = pseudoinverse(f.B) * Vector::Ones(f.B.rows());
    for (Eigen::Index r = 0; r < R; ++r) {
      if (std::abs(m(r)) < 1e-12) continue;
      f.B.col(r) *= m(r);
      f.A.col(r) /= m(r);
    }
  }
}

void clamp_nonneg(Matrix& M) { M = M.cwiseMax(0.0); }

// Parameter layout for the LM polish.
struct Layout {
  bool a_free;
  bool b_rows;
  bool c_cols;
  Eigen::Index I, J, K, R;
  Eigen::Index nA() const { return a_free ? I * R : 0; }
  Eigen::Index nB() const { return J * (b_rows ? R - 1 : R); }
  Eigen::Index nC() const { return (c_cols ? K - 1 : K) * R; }
  Eigen::Index size() const { return nA() + nB() + nC(); }

  Vector pack(const CpFactors& f) const {
    Vector x(size());
    Eigen::Index p = 0;
    if (a_free)
      for (Eigen::Index r = 0; r < R; ++r)
        for (Eigen::Index i = 0; i < I; ++i) x(p++) = f.A(i, r);
    for (Eigen::Index r = 0; r < (b_rows ? R - 1 : R); ++r)
      for (Eigen::Index j = 0; j < J; ++j) x(p++) = f.B(j, r);
    for (Eigen::Index r = 0; r < R; ++r)
      for (Eigen::Index k = 0; k < (c_cols ? K - 1 : K); ++k) x(p++) = f.C(k, r);
    return x;
  }

  void unpack(const Vector& x, const Matrix* fixed_A, CpFactors& f) const {
    Eigen::Index p = 0;
    if (a_free) {
      f.A.resize(I, R);
      for (Eigen::Index r = 0; r < R; ++r)
        for (Eigen::Index i = 0; i < I; ++i) f.A(i, r) = x(p++);
    } else {
      f.A = *fixed_A;
    }
    f.B.resize(J, R);
    for (Eigen::Index r = 0; r < (b_rows ? R - 1 : R); ++r)
      for (Eigen::Index j = 0; j < J; ++j) f.B(j, r) = x(p++);
    if (b_rows)
      for (Eigen::Index j = 0; j < J; ++j) f.B(j, R - 1) = 1.0 - f.B.row(j).head(R - 1).sum();
    f.C.resize(K, R);
    for (Eigen::Index r = 0; r < R; ++r)
      for (Eigen::Index k = 0; k < (c_cols ? K - 1 : K); ++k) f.C(k, r) = x(p++);
    if (c_cols)
      for (Eigen::Index r = 0; r < R; ++r) f.C(K - 1, r) = 1.0 - f.C.col(r).head(K - 1).sum();
  }
};

void polish(const ThreeWayArray& X, const CpConstraints& c, CpFactors& f, int max_iter) {
  Layout L{!c.fixed_A.has_value(), c.rows_of_B_sum_to_one, c.columns_of_C_sum_to_one,
           X.dim_i(), X.dim_j(), X.dim_k(), f.C.cols()};
  const Matrix* fixed = c.fixed_A ? &*c.fixed_A : nullptr;
  const Eigen::Index I = L.I, J = L.J, K = L.K, R = L.R;
  auto problem = [&](const Vector& x, Vector& res, Matrix* Jac) {
    CpFactors g;
    L.unpack(x, fixed, g);
    res.resize(I * J * K);
    for (Eigen::Index i = 0; i < I; ++i)
      for (Eigen::Index j = 0; j < J; ++j)
        for (Eigen::Index k = 0; k < K; ++k) {
          double s = 0.0;
          for (Eigen::Index r = 0; r < R; ++r) s += g.A(i, r) * g.B(j, r) * g.C(k, r);
          res((i * J + j) * K + k) = s - X(static_cast<int>(i), static_cast<int>(j), static_cast<int>(k));
        }
    if (!Jac) return;
    Jac->setZero(I * J * K, L.size());
    for (Eigen::Index i = 0; i < I; ++i)
      for (Eigen::Index j = 0; j < J; ++j)
        for (Eigen::Index k = 0; k < K; ++k) {
          const Eigen::Index row = (i * J + j) * K + k;
          Eigen::Index p = 0;
          if (L.a_free) {
            for (Eigen::Index r = 0; r < R; ++r) (*Jac)(row, p + r * I + i) = g.B(j, r) * g.C(k, r);
            p += L.nA();
          }
          const Eigen::Index nb = L.b_rows ? R - 1 : R;
          for (Eigen::Index r = 0; r < nb; ++r) {
            double d = g.A(i, r) * g.C(k, r);
            if (L.b_rows) d -= g.A(i, R - 1) * g.C(k, R - 1);
            (*Jac)(row, p + r * J + j) = d;
          }
          p += L.nB();
          const Eigen::Index nk = L.c_cols ? K - 1 : K;
          for (Eigen::Index r = 0; r < R; ++r) {
            const double ab = g.A(i, r) * g.B(j, r);
            if (k < nk) (*Jac)(row, p + r * nk + k) += ab;
            if (L.c_cols && k == K - 1)
              for (Eigen::Index kk = 0; kk < nk; ++kk) (*Jac)(row, p + r * nk + kk) -= ab;
          }
        }
  };
  LmOptions lo;
  lo.max_iter = max_iter;
  const LmResult lm = levenberg_marquardt(problem, L.pack(f), lo);
  L.unpack(lm.x, fixed, f);
  f.iterations += lm.iterations;
}

}  // namespace

CpFactors cp_refine(const ThreeWayArray& X, const CpConstraints& c, CpFactors f, const CpOptions& opts) {
  const double xnorm = X.frobenius_norm();
  const bool a_free = !c.fixed_A.has_value();
  if (!a_free) f.A = *c.fixed_A;
  const Matrix X0 = X.unfold(0), X1 = X.unfold(1), X2 = X.unfold(2);

  double prev = std::numeric_limits<double>::infinity();
  int stall = 0;
  f.residual = relative_residual(X, f, xnorm);
  f.iterations = 0;
  for (int it = 0; it < opts.max_iter && f.residual > opts.conv_tol; ++it) {
    if (a_free) {
      f.A = solve_factor(X0, khatri_rao(f.C, f.B));
      if (c.nonneg) clamp_nonneg(f.A);
    }
    f.B = solve_factor(X1, khatri_rao(f.C, f.A));
    if (c.nonneg) clamp_nonneg(f.B);
    f.C = solve_factor(X2, khatri_rao(f.B, f.A));
    if (c.nonneg) clamp_nonneg(f.C);
    normalize(f, c);
    f.iterations = it + 1;
    f.residual = relative_residual(X, f, xnorm);
    if (!std::isfinite(f.residual)) break;
    stall = (prev - f.residual < 1e-9 * prev) ? stall + 1 : 0;
    prev = f.residual;
    // Switch to the second-order polish once ALS creeps.
    if (opts.polish && stall >= 10) break;
  }
  if (opts.polish && std::isfinite(f.residual) && f.residual > opts.conv_tol) {
    polish(X, c, f, opts.polish_iter);
    if (c.nonneg) {
      clamp_nonneg(f.B);
      clamp_nonneg(f.C);
      if (a_free) clamp_nonneg(f.A);
    }
    f.residual = relative_residual(X, f, xnorm);
  }
  if (!std::isfinite(f.residual)) f.residual = std::numeric_limits<double>::infinity();
  return f;
}

CpFactors cp_decompose(const ThreeWayArray& X, int R, const CpConstraints& c, const CpOptions& opts) {
  if (R < 1) throw std::invalid_argument("cp_decompose: R must be positive");
  if (!X.all_finite()) throw std::invalid_argument("cp_decompose: non-finite entries");
  if (c.fixed_A && (c.fixed_A->rows() != X.dim_i() || c.fixed_A->cols() != R))
    throw std::invalid_argument("cp_decompose: fixed A has the wrong shape");
  if (opts.restarts < 1) throw std::invalid_argument("cp_decompose: restarts must be >= 1");

  const int I = X.dim_i(), J = X.dim_j(), K = X.dim_k();
  const std::vector<double> alphaR(static_cast<std::size_t>(R), opts.dirichlet_concentration);
  const std::vector<double> alphaK(static_cast<std::size_t>(K), opts.dirichlet_concentration);
  CpFactors best;
  best.residual = std::numeric_limits<double>::infinity();
  for (int rs = 0; rs < opts.restarts; ++rs) {
    Rng rng(opts.seed, {static_cast<std::uint64_t>(rs)});
    CpFactors init;
    init.B.resize(J, R);
    for (int j = 0; j < J; ++j) {
      auto row = rng.dirichlet(alphaR);
      for (int r = 0; r < R; ++r) init.B(j, r) = row[static_cast<std::size_t>(r)];
    }
    init.C.resize(K, R);
    for (int r = 0; r < R; ++r) {
      auto col = rng.dirichlet(alphaK);
      for (int k = 0; k < K; ++k) init.C(k, r) = col[static_cast<std::size_t>(k)];
    }
    if (c.fixed_A) {
      init.A = *c.fixed_A;
    } else {
      init.A.resize(I, R);
      for (int i = 0; i < I; ++i)
        for (int r = 0; r < R; ++r) init.A(i, r) = rng.uniform();
    }
    CpFactors f = cp_refine(X, c, std::move(init), opts);
    f.restart = rs;
    if (f.residual <= opts.conv_tol) return f;
    if (f.residual < best.residual) best = std::move(f);
  }
  std::ostringstream os;
  os << "cp_decompose: no restart reached tolerance " << opts.conv_tol << " (best relative residual "
     << best.residual << " after " << opts.restarts << " restarts)";
  throw CpConvergenceError(os.str(), best.residual, best);
}

}  // namespace strata
