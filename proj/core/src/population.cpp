#include "strata_id/population.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace strata {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require_simplex(const Vector& v, const std::string& name, double tol = kSimplexTol) {
  if (v.size() == 0 || v.minCoeff() < -tol || std::abs(v.sum() - 1.0) > tol)
    throw std::invalid_argument(name + " is not on the probability simplex");
}

void require_prob(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string(name) + " must lie in [0, 1]");
}

bool bit(std::size_t u, int j) { return (u >> j) & 1u; }

Vector uniform(Eigen::Index n) { return Vector::Constant(n, 1.0 / static_cast<double>(n)); }

}  // namespace

PopulationParams PopulationParams::zeros(const TrialShape& shape) {
  shape.validate();
  PopulationParams p;
  p.shape = shape;
  const auto R = static_cast<Eigen::Index>(shape.strata());
  p.theta.assign(static_cast<std::size_t>(shape.n_x), Matrix::Constant(R, shape.n_r, 1.0 / static_cast<double>(R)));
  p.a.assign(static_cast<std::size_t>(shape.n_x), Matrix::Constant(shape.n_a, R, 1.0 / shape.n_a));
  p.beta.assign(static_cast<std::size_t>(shape.n_x), std::vector<Matrix>(static_cast<std::size_t>(shape.n_z)));
  for (auto& bx : p.beta)
    for (int j = 0; j < shape.n_z; ++j) {
      Matrix m(shape.n_a, R);
      for (Eigen::Index u = 0; u < R; ++u)
        for (int k = 0; k < shape.n_a; ++k) m(k, u) = bit(static_cast<std::size_t>(u), j) ? 0.0 : kNaN;
      bx[static_cast<std::size_t>(j)] = m;
    }
  p.x_dist = uniform(shape.n_x);
  p.z_dist = uniform(shape.n_z);
  p.site_dist = uniform(shape.n_r);
  return p;
}

void PopulationParams::validate() const {
  shape.validate();
  const auto R = static_cast<Eigen::Index>(shape.strata());
  const auto nx = static_cast<std::size_t>(shape.n_x);
  if (theta.size() != nx || a.size() != nx || beta.size() != nx)
    throw std::invalid_argument("parameter tables must have one entry per x level");
  for (std::size_t x = 0; x < nx; ++x) {
    if (theta[x].rows() != R || theta[x].cols() != shape.n_r)
      throw std::invalid_argument("theta has the wrong shape");
    if (a[x].rows() != shape.n_a || a[x].cols() != R) throw std::invalid_argument("a has the wrong shape");
    for (int r = 0; r < shape.n_r; ++r) require_simplex(theta[x].col(r), "theta column");
    for (Eigen::Index u = 0; u < R; ++u) require_simplex(a[x].col(u), "a column");
    if (beta[x].size() != static_cast<std::size_t>(shape.n_z))
      throw std::invalid_argument("beta must have one table per arm");
    for (int j = 0; j < shape.n_z; ++j) {
      const Matrix& b = beta[x][static_cast<std::size_t>(j)];
      if (b.rows() != shape.n_a || b.cols() != R) throw std::invalid_argument("beta has the wrong shape");
      for (Eigen::Index u = 0; u < R; ++u)
        for (int k = 0; k < shape.n_a; ++k) {
          const double v = b(k, u);
          if (bit(static_cast<std::size_t>(u), j)) {
            if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("beta entries must lie in [0, 1]");
          } else if (!std::isnan(v)) {
            throw std::invalid_argument("beta is undefined (NaN) where u_j = 0");
          }
        }
    }
  }
  require_prob(sn_S, "sn_S");
  require_prob(sp_S, "sp_S");
  require_prob(sn_Y, "sn_Y");
  require_prob(sp_Y, "sp_Y");
  if (x_dist.size() != shape.n_x) throw std::invalid_argument("x_dist has the wrong length");
  if (z_dist.size() != shape.n_z) throw std::invalid_argument("z_dist has the wrong length");
  if (site_dist.size() != shape.n_r) throw std::invalid_argument("site_dist has the wrong length");
  require_simplex(x_dist, "x_dist");
  require_simplex(z_dist, "z_dist");
  require_simplex(site_dist, "site_dist");
  if (a_kernel) {
    if (a_kernel->rows() != shape.n_a || a_kernel->cols() != shape.n_a)
      throw std::invalid_argument("A~ kernel must be N_a x N_a");
    for (int k = 0; k < shape.n_a; ++k) require_simplex(a_kernel->row(k).transpose(), "A~ kernel row");
  }
}

ObservableCells ObservableCells::zeros(const TrialShape& shape) {
  ObservableCells c;
  c.shape = shape;
  const std::size_t n = static_cast<std::size_t>(shape.n_x) * static_cast<std::size_t>(shape.n_z) *
                        static_cast<std::size_t>(shape.n_r) * 4u * static_cast<std::size_t>(shape.n_a);
  c.p.assign(n, 0.0);
  c.q.assign(n, 0.0);
  return c;
}

std::size_t ObservableCells::index(int x, int z, int r, int s, int y, int k) const {
  return ((((static_cast<std::size_t>(x) * static_cast<std::size_t>(shape.n_z) + static_cast<std::size_t>(z)) *
                static_cast<std::size_t>(shape.n_r) +
            static_cast<std::size_t>(r)) *
               2u +
           static_cast<std::size_t>(s)) *
              2u +
          static_cast<std::size_t>(y)) *
             static_cast<std::size_t>(shape.n_a) +
         static_cast<std::size_t>(k);
}

namespace {

// Error-free (p11, p10, p0) per covariate level for one (x, z, r) block.
void p_parts(const PopulationParams& P, int x, int z, int r, double* p11, double* p10, double* p0) {
  const auto R = P.shape.strata();
  const Matrix& th = P.theta[static_cast<std::size_t>(x)];
  const Matrix& a = P.a[static_cast<std::size_t>(x)];
  const Matrix& b = P.beta[static_cast<std::size_t>(x)][static_cast<std::size_t>(z)];
  for (int k = 0; k < P.shape.n_a; ++k) {
    double s11 = 0.0, s10 = 0.0, s0 = 0.0;
    for (std::size_t u = 0; u < R; ++u) {
      const double w = a(k, static_cast<Eigen::Index>(u)) * th(static_cast<Eigen::Index>(u), r);
      if (bit(u, z)) {
        const double be = b(k, static_cast<Eigen::Index>(u));
        s11 += w * be;
        s10 += w * (1.0 - be);
      } else {
        s0 += w;
      }
    }
    p11[k] = s11;
    p10[k] = s10;
    p0[k] = s0;
  }
}

}  // namespace

void q_block(const PopulationParams& P, int x, int z, int r, double* out) {
  const int na = P.shape.n_a;
  std::vector<double> p11(static_cast<std::size_t>(na)), p10(static_cast<std::size_t>(na)),
      p0(static_cast<std::size_t>(na));
  p_parts(P, x, z, r, p11.data(), p10.data(), p0.data());
  const double snS = P.sn_S, spS = P.sp_S, snY = P.sn_Y, spY = P.sp_Y;
  std::vector<double> q(4u * static_cast<std::size_t>(na));
  for (int s = 0; s < 2; ++s)
    for (int y = 0; y < 2; ++y) {
      const double fs1 = s ? snS : 1.0 - snS;  // P(S~=s | S=1)
      const double fs0 = s ? 1.0 - spS : spS;  // P(S~=s | S=0)
      const double fy1 = y ? snY : 1.0 - snY;  // P(Y~=y | Y=1)
      const double fy0 = y ? 1.0 - spY : spY;  // P(Y~=y | Y=0)
      for (int k = 0; k < na; ++k)
        q[static_cast<std::size_t>((s * 2 + y) * na + k)] =
            fs1 * fy1 * p11[static_cast<std::size_t>(k)] + fs1 * fy0 * p10[static_cast<std::size_t>(k)] +
            fs0 * fy0 * p0[static_cast<std::size_t>(k)];
    }
  if (P.a_kernel) {
    const Matrix& K = *P.a_kernel;
    for (int sy = 0; sy < 4; ++sy)
      for (int kt = 0; kt < na; ++kt) {
        double v = 0.0;
        for (int k = 0; k < na; ++k) v += K(k, kt) * q[static_cast<std::size_t>(sy * na + k)];
        out[sy * na + kt] = v;
      }
  } else {
    std::copy(q.begin(), q.end(), out);
  }
}

ObservableCells forward_probabilities(const PopulationParams& P) {
  P.validate();
  const TrialShape& sh = P.shape;
  ObservableCells c = ObservableCells::zeros(sh);
  const int na = sh.n_a;
  std::vector<double> p11(static_cast<std::size_t>(na)), p10(static_cast<std::size_t>(na)),
      p0(static_cast<std::size_t>(na)), blk(4u * static_cast<std::size_t>(na));
  for (int x = 0; x < sh.n_x; ++x)
    for (int z = 0; z < sh.n_z; ++z)
      for (int r = 0; r < sh.n_r; ++r) {
        p_parts(P, x, z, r, p11.data(), p10.data(), p0.data());
        for (int k = 0; k < na; ++k) {
          c.p_at(x, z, r, 1, 1, k) = p11[static_cast<std::size_t>(k)];
          c.p_at(x, z, r, 1, 0, k) = p10[static_cast<std::size_t>(k)];
          c.p_at(x, z, r, 0, 0, k) = p0[static_cast<std::size_t>(k)];
        }
        q_block(P, x, z, r, blk.data());
        for (int s = 0; s < 2; ++s)
          for (int y = 0; y < 2; ++y)
            for (int k = 0; k < na; ++k) c.q_at(x, z, r, s, y, k) = blk[static_cast<std::size_t>((s * 2 + y) * na + k)];
      }
  return c;
}

RegionResult identification_region(const std::vector<double>& p_tilde, double sp_Y) {
  if (p_tilde.empty()) throw std::invalid_argument("identification_region: no p~ entries");
  if (!(sp_Y > 0.0 && sp_Y <= 1.0)) throw std::invalid_argument("identification_region: sp_Y must lie in (0, 1]");
  const double floor = 1.0 - sp_Y;
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : p_tilde) {
    if (!std::isfinite(v)) throw std::invalid_argument("identification_region: non-finite p~");
    if (v < floor - 1e-9) throw std::invalid_argument("identification_region: p~ below 1 - sp_Y");
    mx = std::max(mx, v);
  }
  if (mx >= 1.0) throw std::invalid_argument("identification_region: max p~ >= 1 (inconsistent inputs)");
  RegionResult out;
  out.sn_Y = {mx, 1.0};
  const double upper_den = mx + sp_Y - 1.0;
  out.beta.reserve(p_tilde.size());
  for (double v : p_tilde) {
    const double num = v - floor;
    out.beta.push_back({num / sp_Y, upper_den > 0.0 ? num / upper_den : 1.0});
  }
  return out;
}

std::string to_string(IdentifyMode m) {
  switch (m) {
    case IdentifyMode::Auto: return "auto";
    case IdentifyMode::Theorem1: return "theorem1";
    case IdentifyMode::Theorem2: return "theorem2";
  }
  return "?";
}

EstimandBasis IdentifiedQuantities::basis(const Vector& xw, const Vector& sw) const {
  EstimandBasis b;
  b.shape = shape;
  b.theta = theta_hat;
  b.a = a_hat;
  b.x_weights = xw.size() ? xw : uniform(shape.n_x);
  b.site_weights = sw.size() ? sw : uniform(shape.n_r);
  const auto R = static_cast<Eigen::Index>(shape.strata());
  const double floor = 1.0 - sp_Y_hat;
  b.outcome.assign(static_cast<std::size_t>(shape.n_x), std::vector<Matrix>(static_cast<std::size_t>(shape.n_z)));
  for (int x = 0; x < shape.n_x; ++x)
    for (int j = 0; j < shape.n_z; ++j) {
      Matrix m = p_tilde[static_cast<std::size_t>(x)][static_cast<std::size_t>(j)].array() - floor;
      if (sn_Y_known) m /= (*sn_Y_known + sp_Y_hat - 1.0);
      for (Eigen::Index u = 0; u < R; ++u)
        if (!bit(static_cast<std::size_t>(u), j)) m.col(u).setConstant(kNaN);
      b.outcome[static_cast<std::size_t>(x)][static_cast<std::size_t>(j)] = m;
    }
  b.outcome_scaled = !sn_Y_known.has_value();
  return b;
}

namespace {

struct LevelFit {
  double sn, sp;
  Matrix theta, a;
  double residual;
  int restarts;
  bool permuted;
  IdentifyMode mode;
};

ThreeWayArray infection_array(const ObservableCells& c, int x) {
  const TrialShape& sh = c.shape;
  ThreeWayArray X(2 * sh.n_z, sh.n_r, sh.n_a);
  for (int z = 0; z < sh.n_z; ++z)
    for (int r = 0; r < sh.n_r; ++r)
      for (int k = 0; k < sh.n_a; ++k) {
        X(z, r, k) = c.q_at(x, z, r, 1, 0, k) + c.q_at(x, z, r, 1, 1, k);
        X(z + sh.n_z, r, k) = c.q_at(x, z, r, 0, 0, k) + c.q_at(x, z, r, 0, 1, k);
      }
  return X;
}

std::optional<LevelFit> try_theorem1(const ThreeWayArray& X, int n_z, const StructuredCpOptions& o, int restarts) {
  CpConstraints cons;
  cons.fixed_A = build_S_matrix(n_z);
  cons.columns_of_C_sum_to_one = true;
  cons.rows_of_B_sum_to_one = true;
  cons.nonneg = true;
  CpOptions co;
  co.restarts = restarts;
  co.conv_tol = o.conv_tol;
  co.seed = o.seed ^ 0x7431u;
  co.max_iter = 400;
  try {
    CpFactors f = cp_decompose(X, 1 << n_z, cons, co);
    return LevelFit{1.0, 1.0, f.B.transpose(), f.C, f.residual, f.restart + 1, false, IdentifyMode::Theorem1};
  } catch (const CpConvergenceError&) {
    return std::nullopt;
  }
}

}  // namespace

IdentifiedQuantities identify_from_population(const ObservableCells& cells, const IdentifyOptions& opts) {
  const TrialShape& sh = cells.shape;
  sh.validate();
  if (sh.n_z > 4) throw std::invalid_argument("identification supports n_z <= 4");
  if (cells.q.size() != ObservableCells::zeros(sh).q.size()) throw std::invalid_argument("cell table has the wrong size");
  const int R = static_cast<int>(sh.strata());
  const auto md = minimum_design(sh.n_z);
  if (sh.n_r < md.min_sites || sh.n_a < md.min_covariate_levels) {
    std::ostringstream os;
    os << "identification hypotheses violated: need at least " << md.min_sites << " sites and "
       << md.min_covariate_levels << " covariate levels for n_z = " << sh.n_z;
    throw IdentificationError(os.str());
  }

  IdentifiedQuantities out;
  out.shape = sh;
  std::vector<LevelFit> fits;
  for (int x = 0; x < sh.n_x; ++x) {
    const ThreeWayArray X = infection_array(cells, x);
    std::optional<LevelFit> fit;
    if (opts.mode == IdentifyMode::Theorem1) {
      fit = try_theorem1(X, sh.n_z, opts.cp, opts.cp.max_restarts);
      if (!fit) throw CpConvergenceError("noiseless decomposition did not converge", kNaN, {});
    } else if (opts.mode == IdentifyMode::Auto) {
      fit = try_theorem1(X, sh.n_z, opts.cp, 2);
    }
    if (!fit) {
      StructuredCpResult s = structured_cp(X, sh.n_z, opts.cp);
      fit = LevelFit{s.sn, s.sp, s.B.transpose(), s.C, s.residual, s.restarts, s.permutation_resolved,
                     IdentifyMode::Theorem2};
    }
    fit->sn = std::min(fit->sn, 1.0);
    fit->sp = std::min(fit->sp, 1.0);
    if (!half_interval_ok(fit->sn, fit->sp)) {
      std::ostringstream os;
      os << "identification hypotheses violated: recovered (sn_S, sp_S) = (" << fit->sn << ", " << fit->sp
         << ") outside a common half-interval";
      throw IdentificationError(os.str());
    }
    const int rk = numerical_rank(fit->theta, 1e-8);
    if (rk < R) {
      std::ostringstream os;
      os << "identification hypotheses violated: rank of P(S^P0|R) is " << rk << " < " << R;
      throw IdentificationError(os.str());
    }
    const int kr = kruskal_rank(fit->a, 1e-8);
    if (kr < R - 1) {
      std::ostringstream os;
      os << "identification hypotheses violated: Kruskal rank of P(A|S^P0) is " << kr << " < " << R - 1;
      throw IdentificationError(os.str());
    }
    fits.push_back(std::move(*fit));
  }

  double sn = 0.0, sp = 0.0;
  for (const auto& f : fits) {
    if (std::abs(f.sn - fits[0].sn) > opts.consistency_tol || std::abs(f.sp - fits[0].sp) > opts.consistency_tol)
      throw IdentificationError("identification hypotheses violated: (sn_S, sp_S) differ across x levels");
    sn += f.sn;
    sp += f.sp;
    out.max_residual = std::max(out.max_residual, f.residual);
    out.cp_restarts = std::max(out.cp_restarts, f.restarts);
    out.permutation_resolved = out.permutation_resolved || f.permuted;
  }
  out.sn_S_hat = std::min(1.0, sn / static_cast<double>(fits.size()));
  out.sp_S_hat = std::min(1.0, sp / static_cast<double>(fits.size()));
  out.mode_used = fits[0].mode;

  out.theta_hat.resize(static_cast<std::size_t>(sh.n_x));
  out.a_hat.resize(static_cast<std::size_t>(sh.n_x));
  out.p_tilde.assign(static_cast<std::size_t>(sh.n_x), std::vector<Matrix>(static_cast<std::size_t>(sh.n_z)));
  double spY_sum = 0.0;
  int spY_n = 0;
  for (int x = 0; x < sh.n_x; ++x) {
    auto& f = fits[static_cast<std::size_t>(x)];
    f.theta = f.theta.cwiseMax(0.0);
    f.a = f.a.cwiseMax(0.0);
    out.theta_hat[static_cast<std::size_t>(x)] = f.theta;
    out.a_hat[static_cast<std::size_t>(x)] = f.a;
    const Matrix pinv = pseudoinverse(f.theta);  // N_r x R
    for (int j = 0; j < sh.n_z; ++j) {
      Matrix pt(sh.n_a, R);
      for (int k = 0; k < sh.n_a; ++k) {
        Eigen::RowVectorXd yrow(sh.n_r);
        for (int r = 0; r < sh.n_r; ++r) yrow(r) = cells.q_at(x, j, r, 0, 1, k) + cells.q_at(x, j, r, 1, 1, k);
        const Eigen::RowVectorXd g = yrow * pinv;
        for (int u = 0; u < R; ++u) {
          const double ak = f.a(k, u);
          pt(k, u) = ak > 1e-12 ? g(u) / ak : kNaN;
        }
      }
      out.p_tilde[static_cast<std::size_t>(x)][static_cast<std::size_t>(j)] = pt;
    }
    const Matrix& p0 = out.p_tilde[static_cast<std::size_t>(x)][0];
    for (int k = 0; k < sh.n_a; ++k)
      if (std::isfinite(p0(k, 0))) {
        spY_sum += 1.0 - p0(k, 0);
        ++spY_n;
      }
  }
  if (spY_n == 0) throw IdentificationError("sp_Y is not recoverable: P(A|S^P0 = none infected) vanishes");
  out.sp_Y_hat = std::min(1.0, spY_sum / spY_n);
  out.sn_Y_known = opts.known_sn_Y;

  std::vector<double> flat;
  for (int x = 0; x < sh.n_x; ++x)
    for (int j = 0; j < sh.n_z; ++j)
      for (int u = 0; u < R; ++u)
        if (bit(static_cast<std::size_t>(u), j))
          for (int k = 0; k < sh.n_a; ++k) {
            const double v = out.p_tilde[static_cast<std::size_t>(x)][static_cast<std::size_t>(j)](k, u);
            if (std::isfinite(v)) flat.push_back(std::max(v, 1.0 - out.sp_Y_hat));
          }
  out.beta_lo.assign(static_cast<std::size_t>(sh.n_x), std::vector<Matrix>(static_cast<std::size_t>(sh.n_z)));
  out.beta_hi = out.beta_lo;
  if (!flat.empty()) {
    const RegionResult reg = identification_region(flat, out.sp_Y_hat);
    out.snY_region = reg.sn_Y;
    std::size_t n = 0;
    for (int x = 0; x < sh.n_x; ++x)
      for (int j = 0; j < sh.n_z; ++j) {
        Matrix lo = Matrix::Constant(sh.n_a, R, kNaN), hi = lo;
        for (int u = 0; u < R; ++u)
          if (bit(static_cast<std::size_t>(u), j))
            for (int k = 0; k < sh.n_a; ++k) {
              const double v = out.p_tilde[static_cast<std::size_t>(x)][static_cast<std::size_t>(j)](k, u);
              if (!std::isfinite(v)) continue;
              lo(k, u) = reg.beta[n].lo;
              hi(k, u) = reg.beta[n].hi;
              ++n;
            }
        out.beta_lo[static_cast<std::size_t>(x)][static_cast<std::size_t>(j)] = lo;
        out.beta_hi[static_cast<std::size_t>(x)][static_cast<std::size_t>(j)] = hi;
      }
  }

  const EstimandBasis b = out.basis(opts.x_weights, opts.site_weights);
  if (out.sn_Y_known) {
    out.beta_hat = b.outcome;
  }
  out.ve = ve_estimands(b);
  return out;
}

TwoArmSensitivity two_arm_sensitivity(const TwoArmObserved& p, double b10, double b01, double t11, double phi10) {
  TwoArmSensitivity s;
  const double p1p0 = p.p110 + p.p100;
  const double p1p1 = p.p111 + p.p101;
  auto flag = [&](bool bad, const std::string& what) {
    if (bad) {
      s.feasible = false;
      s.violations.push_back(what);
    }
  };
  flag(!(t11 > 0.0), "theta_(1,1) must be positive");
  flag(b10 < 0.0 || b10 > 1.0, "beta^(1,0)_1 outside [0, 1]");
  flag(b01 < 0.0 || b01 > 1.0, "beta^(0,1)_2 outside [0, 1]");
  flag(phi10 < 0.0 || phi10 > 1.0, "phi_10 outside [0, 1]");
  s.phi_10 = phi10;
  s.theta_01 = p1p0 - t11;
  s.theta_10 = p1p1 - t11;
  if (t11 != 0.0) {
    s.phi_11 = (p.p111 - b10 * p1p1) / t11 - phi10 + b10;
    s.phi_01 = (p.p110 + b10 * p1p1 - b01 * p1p0 - p.p111) / t11 + phi10 + b01 - b10;
  } else {
    s.phi_11 = s.phi_01 = kNaN;
  }
  s.phi_00 = 1.0 - s.phi_11 - s.phi_10 - s.phi_01;
  const double num = p.p111 + b10 * (t11 - p1p1);
  const double den = p.p110 + b01 * (t11 - p1p0);
  s.ve = den != 0.0 ? 1.0 - num / den : kNaN;
  flag(!(s.theta_01 >= 0.0 && s.theta_01 <= 1.0), "theta_(0,1) outside [0, 1]");
  flag(!(s.theta_10 >= 0.0 && s.theta_10 <= 1.0), "theta_(1,0) outside [0, 1]");
  flag(!(s.phi_11 >= 0.0 && s.phi_11 <= 1.0), "phi_11 outside [0, 1]");
  flag(!(s.phi_01 >= 0.0 && s.phi_01 <= 1.0), "phi_01 outside [0, 1]");
  flag(!(s.phi_00 >= 0.0), "phi_00 negative");
  flag(!(den > 0.0), "estimand denominator is not positive");
  return s;
}

TwoArmObserved two_arm_forward(const TwoArmParams& t) {
  TwoArmObserved p;
  p.p110 = t.theta_01 * t.beta_01_2 + t.theta_11 * t.beta_11_2;
  p.p111 = t.theta_10 * t.beta_10_1 + t.theta_11 * t.beta_11_1;
  p.p100 = t.theta_01 * (1.0 - t.beta_01_2) + t.theta_11 * (1.0 - t.beta_11_2);
  p.p101 = t.theta_10 * (1.0 - t.beta_10_1) + t.theta_11 * (1.0 - t.beta_11_1);
  return p;
}

}  // namespace strata
