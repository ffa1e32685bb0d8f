#include "strata_id/identifiability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "strata_id/rng.hpp"
#include "strata_id/strata.hpp"

namespace strata {

namespace {

void check_nz(int n_z) {
  if (n_z < 2 || n_z > 4) throw std::invalid_argument("structural matrices support 2 <= n_z <= 4");
}

int log2_exact(Eigen::Index cols) {
  int n = 0;
  while ((Eigen::Index{1} << n) < cols) ++n;
  if ((Eigen::Index{1} << n) != cols) return -1;
  return n;
}

void check_simplex_columns(const Matrix& M, const char* name) {
  for (Eigen::Index c = 0; c < M.cols(); ++c) {
    if (M.col(c).minCoeff() < -kSimplexTol || std::abs(M.col(c).sum() - 1.0) > kSimplexTol) {
      std::ostringstream os;
      os << name << ": column " << c + 1 << " is not on the probability simplex";
      throw std::invalid_argument(os.str());
    }
  }
}

}  // namespace

Matrix build_S_matrix(int n_z) { return build_Stilde_matrix(n_z, 1.0, 1.0); }

Matrix build_Stilde_matrix(int n_z, double sn, double sp) {
  check_nz(n_z);
  if (sn < 0.0 || sn > 1.0 || sp < 0.0 || sp > 1.0)
    throw std::invalid_argument("sensitivity and specificity must lie in [0, 1]");
  const int R = 1 << n_z;
  Matrix M(2 * n_z, R);
  for (int u = 0; u < R; ++u)
    for (int i = 0; i < n_z; ++i) {
      const bool inf = (u >> i) & 1;
      M(i, u) = inf ? sn : 1.0 - sp;
      M(i + n_z, u) = inf ? 1.0 - sn : sp;
    }
  return M;
}

Matrix Stilde_dsn(int n_z) {
  check_nz(n_z);
  const int R = 1 << n_z;
  Matrix M = Matrix::Zero(2 * n_z, R);
  for (int u = 0; u < R; ++u)
    for (int i = 0; i < n_z; ++i)
      if ((u >> i) & 1) {
        M(i, u) = 1.0;
        M(i + n_z, u) = -1.0;
      }
  return M;
}

Matrix Stilde_dsp(int n_z) {
  check_nz(n_z);
  const int R = 1 << n_z;
  Matrix M = Matrix::Zero(2 * n_z, R);
  for (int u = 0; u < R; ++u)
    for (int i = 0; i < n_z; ++i)
      if (!((u >> i) & 1)) {
        M(i, u) = -1.0;
        M(i + n_z, u) = 1.0;
      }
  return M;
}

bool half_interval_ok(double sn, double sp) {
  const bool upper = sn > 0.5 && sn <= 1.0 && sp > 0.5 && sp <= 1.0;
  const bool lower = sn >= 0.0 && sn < 0.5 && sp >= 0.0 && sp < 0.5;
  return upper || lower;
}

std::optional<std::pair<double, double>> match_in_family(const Matrix& M, int n_z, double tol, bool upper_half) {
  check_nz(n_z);
  const int R = 1 << n_z;
  if (M.rows() != 2 * n_z || M.cols() != R) return std::nullopt;
  // Any family member carries sn in column "all infected" and 1 - sp in column "none".
  const double sn = M(0, R - 1);
  const double sp = 1.0 - M(0, 0);
  if (sn < 0.0 || sn > 1.0 || sp < 0.0 || sp > 1.0) return std::nullopt;
  if (!half_interval_ok(sn, sp) || (sn > 0.5) != upper_half) return std::nullopt;
  if ((M - build_Stilde_matrix(n_z, sn, sp)).cwiseAbs().maxCoeff() > tol) return std::nullopt;
  return std::make_pair(sn, sp);
}

std::string to_string(Theorem t) {
  switch (t) {
    case Theorem::T1: return "T1";
    case Theorem::T2: return "T2";
    case Theorem::C2: return "C2";
    case Theorem::C3: return "C3";
  }
  return "?";
}

Theorem parse_theorem(const std::string& text) {
  if (text == "T1") return Theorem::T1;
  if (text == "T2") return Theorem::T2;
  if (text == "C2") return Theorem::C2;
  if (text == "C3") return Theorem::C3;
  throw std::invalid_argument("unknown theorem '" + text + "' (expected T1, T2, C2 or C3)");
}

DesignCheckReport check_design(const Matrix& PA, const Matrix& PSR, double sn_S, double sp_S, Theorem theorem) {
  const int n_z = log2_exact(PA.cols());
  if (n_z < 2) throw std::invalid_argument("P(A|S^P0) must have 2^n_z columns with n_z >= 2");
  if (PSR.rows() != PA.cols()) throw std::invalid_argument("P(S^P0|R) must have 2^n_z rows");
  if (PSR.cols() < 1 || PA.rows() < 1) throw std::invalid_argument("empty design matrix");
  check_simplex_columns(PA, "P(A|S^P0)");
  check_simplex_columns(PSR, "P(S^P0|R)");

  const int R = 1 << n_z;
  DesignCheckReport rep;
  rep.theorem = theorem;
  rep.n_z = n_z;
  rep.n_a = static_cast<int>(PA.rows());
  rep.n_r = static_cast<int>(PSR.cols());
  rep.krank_required = R - 1;
  rep.rank_required = R;

  if (theorem == Theorem::C2 && n_z != 2) {
    rep.messages.push_back("C2 applies to two-arm designs only (n_z = 2)");
  }

  const auto kd = kruskal_rank_detail(PA);
  rep.krank_A = kd.rank;
  rep.krank_margin = kd.margin;
  rep.rank_SR = numerical_rank(PSR);

  bool ok = theorem != Theorem::C2 || n_z == 2;
  const std::string a_name = theorem == Theorem::C3 ? "P(A~|S^P0)" : "P(A|S^P0)";
  if (rep.krank_A < rep.krank_required) {
    std::ostringstream os;
    os << "Kruskal rank of " << a_name << " < " << rep.krank_required << " (got " << rep.krank_A << ")";
    rep.messages.push_back(os.str());
    ok = false;
  } else if (kd.near_deficient()) {
    rep.near_deficient = true;
    std::ostringstream os;
    os << "warning: " << a_name << " is close to Kruskal-rank deficient (margin " << kd.margin << ")";
    rep.messages.push_back(os.str());
  }
  if (rep.rank_SR < rep.rank_required) {
    std::ostringstream os;
    os << "rank of P(S^P0|R) < " << rep.rank_required << " (got " << rep.rank_SR << ")";
    rep.messages.push_back(os.str());
    ok = false;
  }
  const auto md = minimum_design(n_z);
  if (rep.n_r < md.min_sites || rep.n_a < md.min_covariate_levels) {
    std::ostringstream os;
    os << "design has " << rep.n_r << " sites and " << rep.n_a << " covariate levels; minimum for n_z = " << n_z
       << " is (" << md.min_sites << ", " << md.min_covariate_levels << ")";
    rep.messages.push_back(os.str());
    ok = false;
  }
  if (theorem == Theorem::T2 || theorem == Theorem::C3) {
    rep.half_interval_ok = half_interval_ok(sn_S, sp_S);
    if (!rep.half_interval_ok) {
      std::ostringstream os;
      os << "sn_S = " << sn_S << " and sp_S = " << sp_S << " do not lie in a common half-interval";
      rep.messages.push_back(os.str());
      ok = false;
    }
  }
  rep.passed = ok;
  return rep;
}

MinimumDesign minimum_design(int n_z) {
  if (n_z < 2 || n_z > 30) throw std::invalid_argument("minimum_design: n_z out of range");
  return {1 << n_z, (1 << n_z) - 1};
}

namespace {

struct JointLayout {
  Eigen::Index I, J, K, R;
  Eigen::Index size() const { return 2 + J * (R - 1) + (K - 1) * R; }

  Vector pack(double sn, double sp, const Matrix& B, const Matrix& C) const {
    Vector x(size());
    Eigen::Index p = 0;
    x(p++) = sn;
    x(p++) = sp;
    for (Eigen::Index r = 0; r < R - 1; ++r)
      for (Eigen::Index j = 0; j < J; ++j) x(p++) = B(j, r);
    for (Eigen::Index r = 0; r < R; ++r)
      for (Eigen::Index k = 0; k < K - 1; ++k) x(p++) = C(k, r);
    return x;
  }

  void unpack(const Vector& x, double& sn, double& sp, Matrix& B, Matrix& C) const {
    Eigen::Index p = 0;
    sn = x(p++);
    sp = x(p++);
    B.resize(J, R);
    C.resize(K, R);
    for (Eigen::Index r = 0; r < R - 1; ++r)
      for (Eigen::Index j = 0; j < J; ++j) B(j, r) = x(p++);
    for (Eigen::Index j = 0; j < J; ++j) B(j, R - 1) = 1.0 - B.row(j).head(R - 1).sum();
    for (Eigen::Index r = 0; r < R; ++r)
      for (Eigen::Index k = 0; k < K - 1; ++k) C(k, r) = x(p++);
    for (Eigen::Index r = 0; r < R; ++r) C(K - 1, r) = 1.0 - C.col(r).head(K - 1).sum();
  }
};

Matrix stilde_unchecked(int n_z, double sn, double sp) {
  const int R = 1 << n_z;
  Matrix M(2 * n_z, R);
  for (int u = 0; u < R; ++u)
    for (int i = 0; i < n_z; ++i) {
      const bool inf = (u >> i) & 1;
      M(i, u) = inf ? sn : 1.0 - sp;
      M(i + n_z, u) = inf ? 1.0 - sn : sp;
    }
  return M;
}

struct JointFit {
  double sn, sp;
  Matrix B, C;
  double residual;
};

JointFit joint_fit(const ThreeWayArray& X, int n_z, double sn0, double sp0, const Matrix& B0, const Matrix& C0,
                   int lm_iter, double xnorm) {
  const JointLayout L{X.dim_i(), X.dim_j(), X.dim_k(), B0.cols()};
  const Matrix dA_sn = Stilde_dsn(n_z), dA_sp = Stilde_dsp(n_z);
  const Eigen::Index I = L.I, J = L.J, K = L.K, R = L.R;
  auto problem = [&](const Vector& x, Vector& res, Matrix* Jac) {
    double sn, sp;
    Matrix B, C;
    L.unpack(x, sn, sp, B, C);
    const Matrix A = stilde_unchecked(n_z, sn, sp);
    res.resize(I * J * K);
    if (Jac) Jac->setZero(I * J * K, L.size());
    for (Eigen::Index i = 0; i < I; ++i)
      for (Eigen::Index j = 0; j < J; ++j)
        for (Eigen::Index k = 0; k < K; ++k) {
          const Eigen::Index row = (i * J + j) * K + k;
          double s = 0.0;
          for (Eigen::Index r = 0; r < R; ++r) s += A(i, r) * B(j, r) * C(k, r);
          res(row) = s - X(static_cast<int>(i), static_cast<int>(j), static_cast<int>(k));
          if (!Jac) continue;
          double dsn = 0.0, dsp = 0.0;
          for (Eigen::Index r = 0; r < R; ++r) {
            const double bc = B(j, r) * C(k, r);
            dsn += dA_sn(i, r) * bc;
            dsp += dA_sp(i, r) * bc;
          }
          (*Jac)(row, 0) = dsn;
          (*Jac)(row, 1) = dsp;
          Eigen::Index p = 2;
          for (Eigen::Index r = 0; r < R - 1; ++r)
            (*Jac)(row, p + r * J + j) = A(i, r) * C(k, r) - A(i, R - 1) * C(k, R - 1);
          p += J * (R - 1);
          for (Eigen::Index r = 0; r < R; ++r) {
            const double ab = A(i, r) * B(j, r);
            if (k < K - 1)
              (*Jac)(row, p + r * (K - 1) + k) += ab;
            else
              for (Eigen::Index kk = 0; kk < K - 1; ++kk) (*Jac)(row, p + r * (K - 1) + kk) -= ab;
          }
        }
  };
  LmOptions lo;
  lo.max_iter = lm_iter;
  const LmResult lm = levenberg_marquardt(problem, L.pack(sn0, sp0, B0, C0), lo);
  JointFit out;
  L.unpack(lm.x, out.sn, out.sp, out.B, out.C);
  out.residual = std::sqrt(2.0 * lm.cost) / xnorm;
  if (!std::isfinite(out.residual)) out.residual = std::numeric_limits<double>::infinity();
  return out;
}

CpFactors random_bc(Rng& rng, int J, int K, int R) {
  CpFactors f;
  const std::vector<double> aR(static_cast<std::size_t>(R), 1.0), aK(static_cast<std::size_t>(K), 1.0);
  f.B.resize(J, R);
  for (int j = 0; j < J; ++j) {
    const auto row = rng.dirichlet(aR);
    for (int r = 0; r < R; ++r) f.B(j, r) = row[static_cast<std::size_t>(r)];
  }
  f.C.resize(K, R);
  for (int r = 0; r < R; ++r) {
    const auto col = rng.dirichlet(aK);
    for (int k = 0; k < K; ++k) f.C(k, r) = col[static_cast<std::size_t>(k)];
  }
  return f;
}

}  // namespace

StructuredCpResult structured_cp(const ThreeWayArray& X, int n_z, const StructuredCpOptions& opts) {
  check_nz(n_z);
  const int R = 1 << n_z;
  if (X.dim_i() != 2 * n_z) throw std::invalid_argument("structured_cp: first mode must have 2 n_z rows");
  if (!X.all_finite()) throw std::invalid_argument("structured_cp: non-finite entries");
  const int J = X.dim_j(), K = X.dim_k();
  const double xnorm = X.frobenius_norm();
  if (!(xnorm > 0.0)) throw std::invalid_argument("structured_cp: zero array");

  CpConstraints cons;
  cons.columns_of_C_sum_to_one = true;
  cons.rows_of_B_sum_to_one = true;
  cons.nonneg = true;
  CpOptions als;
  als.max_iter = opts.grid_als_iter;
  als.polish = false;
  als.conv_tol = opts.conv_tol;

  struct Candidate {
    double sn, sp, residual;
    Matrix B, C;
  };
  std::vector<Candidate> grid;
  const int G = std::max(1, opts.grid);
  for (int a = 1; a <= G; ++a)
    for (int b = 1; b <= G; ++b) {
      const double sn = 0.5 + 0.5 * a / G, sp = 0.5 + 0.5 * b / G;
      Rng rng(opts.seed, {0u, static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(b)});
      CpFactors init = random_bc(rng, J, K, R);
      cons.fixed_A = build_Stilde_matrix(n_z, sn, sp);
      CpFactors f = cp_refine(X, cons, std::move(init), als);
      grid.push_back({sn, sp, f.residual, std::move(f.B), std::move(f.C)});
    }
  std::stable_sort(grid.begin(), grid.end(),
                   [](const Candidate& x, const Candidate& y) { return x.residual < y.residual; });

  JointFit best{1.0, 1.0, Matrix(), Matrix(), std::numeric_limits<double>::infinity()};
  int used = 0;
  auto accept = [&](JointFit jf) {
    if (jf.residual > opts.conv_tol && (jf.B.minCoeff() < 0.0 || jf.C.minCoeff() < 0.0)) {
      // Fits that settle on sign-flipped columns of a near-empty stratum; retry from the reflection.
      Matrix B = jf.B.cwiseAbs(), C = jf.C.cwiseAbs();
      for (Eigen::Index j = 0; j < B.rows(); ++j) B.row(j) /= B.row(j).sum();
      for (Eigen::Index r = 0; r < C.cols(); ++r) C.col(r) /= C.col(r).sum();
      JointFit again = joint_fit(X, n_z, jf.sn, jf.sp, B, C, opts.lm_iter, xnorm);
      if (again.residual < jf.residual) jf = std::move(again);
    }
    if (jf.residual < best.residual) best = jf;
    return jf.residual <= opts.conv_tol;
  };
  bool done = false;
  const int ncand = std::min<int>(opts.candidates, static_cast<int>(grid.size()));
  for (int c = 0; c < ncand && used < opts.max_restarts && !done; ++c, ++used) {
    const auto& g = grid[static_cast<std::size_t>(c)];
    done = accept(joint_fit(X, n_z, g.sn, g.sp, g.B, g.C, opts.lm_iter, xnorm));
  }
  for (; used < opts.max_restarts && !done; ++used) {
    Rng rng(opts.seed, {1u, static_cast<std::uint64_t>(used)});
    const double sn = 0.5 + 0.5 * rng.uniform_open(), sp = 0.5 + 0.5 * rng.uniform_open();
    CpFactors init = random_bc(rng, J, K, R);
    cons.fixed_A = build_Stilde_matrix(n_z, sn, sp);
    CpOptions longer = als;
    longer.max_iter = 4 * opts.grid_als_iter;
    CpFactors f = cp_refine(X, cons, std::move(init), longer);
    done = accept(joint_fit(X, n_z, sn, sp, f.B, f.C, opts.lm_iter, xnorm));
  }

  StructuredCpResult out;
  out.restarts = used;
  out.residual = best.residual;
  if (!done) {
    CpFactors bf;
    bf.B = best.B;
    bf.C = best.C;
    bf.residual = best.residual;
    if (best.B.size() > 0) bf.A = stilde_unchecked(n_z, best.sn, best.sp);
    std::ostringstream os;
    os << "structured decomposition did not reach tolerance " << opts.conv_tol << " (best relative residual "
       << best.residual << " after " << used << " restarts)";
    throw CpConvergenceError(os.str(), best.residual, bf);
  }
  out.sn = best.sn;
  out.sp = best.sp;
  out.B = best.B;
  out.C = best.C;
  const bool in_upper = out.sn > 0.5 && out.sp > 0.5;
  const bool in_lower = out.sn < 0.5 && out.sp < 0.5;
  if ((opts.upper_half && in_lower) || (!opts.upper_half && in_upper)) {
    // Relabel u -> complement(u); Stilde(sn, sp) P = Stilde(1 - sp, 1 - sn).
    const double sn = 1.0 - out.sp, sp = 1.0 - out.sn;
    Matrix B(out.B.rows(), R), C(out.C.rows(), R);
    for (int u = 0; u < R; ++u) {
      B.col(u) = out.B.col(R - 1 - u);
      C.col(u) = out.C.col(R - 1 - u);
    }
    out.sn = sn;
    out.sp = sp;
    out.B = std::move(B);
    out.C = std::move(C);
    out.permutation_resolved = true;
  }
  return out;
}

}  // namespace strata
