#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "strata_id/inference.hpp"

namespace strata {

namespace {

bool bit(std::size_t u, int j) { return (u >> j) & 1u; }

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double normal_logpdf(double v, double mean, double sd) {
  const double z = (v - mean) / sd;
  return -0.5 * z * z - std::log(sd) - kLogSqrt2Pi;
}

Vector uniform(Eigen::Index n) { return Vector::Constant(n, 1.0 / static_cast<double>(n)); }

// Softmax with an implicit trailing zero.
void softmax_ref(const double* v, int L, double* out) {
  double m = 0.0;
  for (int i = 0; i < L; ++i) m = std::max(m, v[i]);
  double s = std::exp(-m);
  for (int i = 0; i < L; ++i) s += (out[i] = std::exp(v[i] - m));
  out[L] = std::exp(-m);
  for (int i = 0; i <= L; ++i) out[i] /= s;
}

const ShiftedBeta& rate_prior(const PriorConfig& p, int i) {
  switch (i) {
    case 0: return p.sn_S;
    case 1: return p.sp_S;
    case 2: return p.sn_Y;
    default: return p.sp_Y;
  }
}

LogLikelihood loglik_unchecked(const PopulationParams& P, const CellCounts& counts) {
  const TrialShape& sh = P.shape;
  const int na = sh.n_a;
  std::vector<double> blk(4u * static_cast<std::size_t>(na));
  LogLikelihood out;
  for (int x = 0; x < sh.n_x; ++x)
    for (int z = 0; z < sh.n_z; ++z)
      for (int r = 0; r < sh.n_r; ++r) {
        const std::size_t base = counts.index(x, z, r, 0, 0, 0);
        bool any = false;
        for (int c = 0; c < 4 * na && !any; ++c) any = counts.n[base + static_cast<std::size_t>(c)] > 0.0;
        if (!any) continue;
        q_block(P, x, z, r, blk.data());
        for (int c = 0; c < 4 * na; ++c) {
          const double n = counts.n[base + static_cast<std::size_t>(c)];
          if (n <= 0.0) continue;
          const double q = blk[static_cast<std::size_t>(c)];
          if (!(q > 0.0)) {
            out.zero_probability = true;
            out.value = kLogZeroSentinel;
            return out;
          }
          out.value += n * std::log(q);
        }
      }
  return out;
}

// Same cell probabilities as q_block, computed straight from the unconstrained
// vector with reused buffers; this is the sampler's hot path.
LogLikelihood loglik_direct(const ModelSpec& spec, const ParamLayout& L, const Vector& t, const CellCounts& counts) {
  const TrialShape& sh = spec.shape;
  const int R = static_cast<int>(sh.strata()), na = sh.n_a, nz = sh.n_z;
  thread_local std::vector<double> theta, a, beta, v, sm, q, qk;
  theta.resize(static_cast<std::size_t>(R));
  a.resize(static_cast<std::size_t>(na * R));
  beta.resize(static_cast<std::size_t>(nz * na * R));
  v.resize(static_cast<std::size_t>(std::max(R, na)));
  sm.resize(v.size());
  q.resize(4u * static_cast<std::size_t>(na));
  qk.resize(q.size());
  const double snS = rate_from_unconstrained(spec.priors.sn_S, t(0));
  const double spS = rate_from_unconstrained(spec.priors.sp_S, t(1));
  const double snY = rate_from_unconstrained(spec.priors.sn_Y, t(2));
  const double spY = rate_from_unconstrained(spec.priors.sp_Y, t(3));
  LogLikelihood out;
  for (int x = 0; x < sh.n_x; ++x) {
    for (int u = 0; u < R; ++u) {
      for (int k = 0; k < na - 1; ++k) v[static_cast<std::size_t>(k)] = t(L.nu(u, k)) + (x > 0 ? t(L.gamma(x, k)) : 0.0);
      softmax_ref(v.data(), na - 1, sm.data());
      for (int k = 0; k < na; ++k) a[static_cast<std::size_t>(k * R + u)] = sm[static_cast<std::size_t>(k)];
      for (int j = 0; j < nz; ++j) {
        if (!bit(static_cast<std::size_t>(u), j)) continue;
        const double w = x > 0 ? t(L.omega(x, j)) : 0.0;
        for (int k = 0; k < na; ++k)
          beta[static_cast<std::size_t>((j * na + k) * R + u)] = inv_logit(t(L.alpha(u, j, k)) + w);
      }
    }
    for (int r = 0; r < sh.n_r; ++r) {
      bool site_used = false;
      for (int z = 0; z < nz && !site_used; ++z) {
        const std::size_t base = counts.index(x, z, r, 0, 0, 0);
        for (int c = 0; c < 4 * na && !site_used; ++c) site_used = counts.n[base + static_cast<std::size_t>(c)] > 0.0;
      }
      if (!site_used) continue;
      for (int u = 0; u < R - 1; ++u) v[static_cast<std::size_t>(u)] = t(L.mu(r, u)) + (x > 0 ? t(L.eta(x, u)) : 0.0);
      softmax_ref(v.data(), R - 1, theta.data());
      for (int z = 0; z < nz; ++z) {
        const std::size_t base = counts.index(x, z, r, 0, 0, 0);
        for (int k = 0; k < na; ++k) {
          double s11 = 0.0, s10 = 0.0, s0 = 0.0;
          const double* ak = &a[static_cast<std::size_t>(k * R)];
          const double* bk = &beta[static_cast<std::size_t>((z * na + k) * R)];
          for (int u = 0; u < R; ++u) {
            const double w = ak[u] * theta[static_cast<std::size_t>(u)];
            if (bit(static_cast<std::size_t>(u), z)) {
              s11 += w * bk[u];
              s10 += w * (1.0 - bk[u]);
            } else {
              s0 += w;
            }
          }
          for (int s = 0; s < 2; ++s)
            for (int y = 0; y < 2; ++y) {
              const double fs1 = s ? snS : 1.0 - snS, fs0 = s ? 1.0 - spS : spS;
              const double fy1 = y ? snY : 1.0 - snY, fy0 = y ? 1.0 - spY : spY;
              q[static_cast<std::size_t>((s * 2 + y) * na + k)] = fs1 * fy1 * s11 + fs1 * fy0 * s10 + fs0 * fy0 * s0;
            }
        }
        const std::vector<double>* cells = &q;
        if (spec.a_kernel) {
          const Matrix& K = *spec.a_kernel;
          for (int sy = 0; sy < 4; ++sy)
            for (int kt = 0; kt < na; ++kt) {
              double acc = 0.0;
              for (int k = 0; k < na; ++k) acc += K(k, kt) * q[static_cast<std::size_t>(sy * na + k)];
              qk[static_cast<std::size_t>(sy * na + kt)] = acc;
            }
          cells = &qk;
        }
        for (int c = 0; c < 4 * na; ++c) {
          const double n = counts.n[base + static_cast<std::size_t>(c)];
          if (n <= 0.0) continue;
          const double pc = (*cells)[static_cast<std::size_t>(c)];
          if (!(pc > 0.0)) {
            out.zero_probability = true;
            out.value = kLogZeroSentinel;
            return out;
          }
          out.value += n * std::log(pc);
        }
      }
    }
  }
  return out;
}

}  // namespace

double ShiftedBeta::log_density(double v) const {
  if (!(v > lo && v < hi)) return -std::numeric_limits<double>::infinity();
  const double w = hi - lo, chi = (v - lo) / w;
  return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * std::log(chi) +
         (b - 1.0) * std::log1p(-chi) - std::log(w);
}

void ShiftedBeta::validate(const char* name) const {
  if (!(lo >= 0.0 && hi <= 1.0 && lo < hi) || !(a > 0.0 && b > 0.0)) {
    std::ostringstream os;
    os << "prior for " << name << " needs 0 <= lo < hi <= 1 and positive shapes";
    throw std::invalid_argument(os.str());
  }
}

void PriorConfig::validate() const {
  sn_S.validate("sn_S");
  sp_S.validate("sp_S");
  sn_Y.validate("sn_Y");
  sp_Y.validate("sp_Y");
  for (double s : {sd_alpha, sd_nu_wide, sd_nu, sd_gamma, sd_eta, sd_omega, sd_mu})
    if (!(s > 0.0)) throw std::invalid_argument("prior standard deviations must be positive");
}

std::vector<std::size_t> PriorConfig::wide_nu_strata(int n_z) {
  const std::size_t R = std::size_t{1} << n_z;
  return {0, 1, R - 1};
}

void ModelSpec::validate() const {
  shape.validate();
  priors.validate();
  if (a_kernel) {
    const Matrix& K = *a_kernel;
    if (K.rows() != shape.n_a || K.cols() != shape.n_a) throw std::invalid_argument("A~ kernel must be N_a x N_a");
    for (int k = 0; k < shape.n_a; ++k)
      if (K.row(k).minCoeff() < 0.0 || std::abs(K.row(k).sum() - 1.0) > 1e-9)
        throw std::invalid_argument("A~ kernel rows must sum to 1");
  }
}

ParamLayout::ParamLayout(const TrialShape& shape) : shape_(shape) {
  shape.validate();
  const int R = static_cast<int>(shape.strata());
  const int nz = shape.n_z, na = shape.n_a, nx = shape.n_x, nr = shape.n_r;
  auto add_block = [&](const char* name, int size) {
    if (size > 0) blocks_.push_back({name, size_, size});
    const int begin = size_;
    size_ += size;
    return begin;
  };
  add_block("rates", 4);
  mu_ = add_block("mu", nr * (R - 1));
  eta_ = add_block("eta", (nx - 1) * (R - 1));
  nu_ = add_block("nu", R * (na - 1));
  gamma_ = add_block("gamma", (nx - 1) * (na - 1));
  int n_alpha = 0;
  alpha_offset_.assign(static_cast<std::size_t>(R * nz), -1);
  for (int u = 0; u < R; ++u)
    for (int j = 0; j < nz; ++j)
      if (bit(static_cast<std::size_t>(u), j)) {
        alpha_offset_[static_cast<std::size_t>(u * nz + j)] = n_alpha;
        n_alpha += na;
      }
  alpha_ = add_block("alpha", n_alpha);
  omega_ = add_block("omega", (nx - 1) * nz);
}

std::vector<std::string> ParamLayout::names() const {
  const int R = static_cast<int>(shape_.strata());
  const int nz = shape_.n_z, na = shape_.n_a, nx = shape_.n_x, nr = shape_.n_r;
  auto st = [nz](int u) { return stratum_from_index(static_cast<std::size_t>(u), nz).to_string(); };
  auto num = [](int i) { return std::to_string(i + 1); };
  std::vector<std::string> out = {"sn_S", "sp_S", "sn_Y", "sp_Y"};
  out.reserve(static_cast<std::size_t>(size_));
  for (int r = 0; r < nr; ++r)
    for (int u = 0; u < R - 1; ++u) out.push_back("mu[" + num(r) + "," + st(u) + "]");
  for (int x = 1; x < nx; ++x)
    for (int u = 0; u < R - 1; ++u) out.push_back("eta[" + num(x) + "," + st(u) + "]");
  for (int u = 0; u < R; ++u)
    for (int k = 0; k < na - 1; ++k) out.push_back("nu[" + st(u) + "," + num(k) + "]");
  for (int x = 1; x < nx; ++x)
    for (int k = 0; k < na - 1; ++k) out.push_back("gamma[" + num(x) + "," + num(k) + "]");
  for (int u = 0; u < R; ++u)
    for (int j = 0; j < nz; ++j)
      if (bit(static_cast<std::size_t>(u), j))
        for (int k = 0; k < na; ++k) out.push_back("alpha[" + st(u) + "," + num(j) + "," + num(k) + "]");
  for (int x = 1; x < nx; ++x)
    for (int j = 0; j < nz; ++j) out.push_back("omega[" + num(x) + "," + num(j) + "]");
  return out;
}

int ParamLayout::mu(int r, int u) const { return mu_ + r * (static_cast<int>(shape_.strata()) - 1) + u; }
int ParamLayout::eta(int x, int u) const { return eta_ + (x - 1) * (static_cast<int>(shape_.strata()) - 1) + u; }
int ParamLayout::nu(int u, int k) const { return nu_ + u * (shape_.n_a - 1) + k; }
int ParamLayout::gamma(int x, int k) const { return gamma_ + (x - 1) * (shape_.n_a - 1) + k; }
int ParamLayout::omega(int x, int j) const { return omega_ + (x - 1) * shape_.n_z + j; }

int ParamLayout::alpha(int u, int j, int k) const {
  const int off = alpha_offset_[static_cast<std::size_t>(u * shape_.n_z + j)];
  return off < 0 ? -1 : alpha_ + off + k;
}

double rate_from_unconstrained(const ShiftedBeta& s, double t) { return s.lo + (s.hi - s.lo) * inv_logit(t); }

double rate_to_unconstrained(const ShiftedBeta& s, double v) { return logit((v - s.lo) / (s.hi - s.lo)); }

PopulationParams to_population(const ModelSpec& spec, const Vector& t, const Vector& xw, const Vector& sw) {
  const TrialShape& sh = spec.shape;
  const ParamLayout L(sh);
  if (t.size() != L.size()) throw std::invalid_argument("parameter vector has the wrong length");
  const int R = static_cast<int>(sh.strata()), na = sh.n_a;
  PopulationParams P = PopulationParams::zeros(sh);
  std::vector<double> v(static_cast<std::size_t>(std::max(R, na))), out(v.size());
  for (int x = 0; x < sh.n_x; ++x) {
    const auto xs = static_cast<std::size_t>(x);
    for (int r = 0; r < sh.n_r; ++r) {
      for (int u = 0; u < R - 1; ++u)
        v[static_cast<std::size_t>(u)] = t(L.mu(r, u)) + (x > 0 ? t(L.eta(x, u)) : 0.0);
      softmax_ref(v.data(), R - 1, out.data());
      for (int u = 0; u < R; ++u) P.theta[xs](u, r) = out[static_cast<std::size_t>(u)];
    }
    for (int u = 0; u < R; ++u) {
      for (int k = 0; k < na - 1; ++k) v[static_cast<std::size_t>(k)] = t(L.nu(u, k)) + (x > 0 ? t(L.gamma(x, k)) : 0.0);
      softmax_ref(v.data(), na - 1, out.data());
      for (int k = 0; k < na; ++k) P.a[xs](k, u) = out[static_cast<std::size_t>(k)];
    }
    for (int j = 0; j < sh.n_z; ++j) {
      const double w = x > 0 ? t(L.omega(x, j)) : 0.0;
      Matrix& b = P.beta[xs][static_cast<std::size_t>(j)];
      for (int u = 0; u < R; ++u)
        if (bit(static_cast<std::size_t>(u), j))
          for (int k = 0; k < na; ++k) b(k, u) = inv_logit(t(L.alpha(u, j, k)) + w);
    }
  }
  P.sn_S = rate_from_unconstrained(spec.priors.sn_S, t(0));
  P.sp_S = rate_from_unconstrained(spec.priors.sp_S, t(1));
  P.sn_Y = rate_from_unconstrained(spec.priors.sn_Y, t(2));
  P.sp_Y = rate_from_unconstrained(spec.priors.sp_Y, t(3));
  if (xw.size()) P.x_dist = xw;
  if (sw.size()) P.site_dist = sw;
  P.a_kernel = spec.a_kernel;
  return P;
}

Vector pack_regression(const ModelSpec& spec, const RegressionParams& reg, const Misclassification& m) {
  const TrialShape& sh = spec.shape;
  const ParamLayout L(sh);
  const int R = static_cast<int>(sh.strata()), na = sh.n_a;
  Vector t = Vector::Zero(L.size());
  t(0) = rate_to_unconstrained(spec.priors.sn_S, m.sn_S);
  t(1) = rate_to_unconstrained(spec.priors.sp_S, m.sp_S);
  t(2) = rate_to_unconstrained(spec.priors.sn_Y, m.sn_Y);
  t(3) = rate_to_unconstrained(spec.priors.sp_Y, m.sp_Y);
  // Reference entries are subtracted so non-zero references still map exactly.
  for (int r = 0; r < sh.n_r; ++r)
    for (int u = 0; u < R - 1; ++u) t(L.mu(r, u)) = reg.mu(r, u) - reg.mu(r, R - 1) + reg.eta(0, u) - reg.eta(0, R - 1);
  for (int x = 1; x < sh.n_x; ++x)
    for (int u = 0; u < R - 1; ++u)
      t(L.eta(x, u)) = reg.eta(x, u) - reg.eta(x, R - 1) - (reg.eta(0, u) - reg.eta(0, R - 1));
  for (int u = 0; u < R; ++u)
    for (int k = 0; k < na - 1; ++k)
      t(L.nu(u, k)) = reg.nu(u, k) - reg.nu(u, na - 1) + reg.gamma(0, k) - reg.gamma(0, na - 1);
  for (int x = 1; x < sh.n_x; ++x)
    for (int k = 0; k < na - 1; ++k)
      t(L.gamma(x, k)) = reg.gamma(x, k) - reg.gamma(x, na - 1) - (reg.gamma(0, k) - reg.gamma(0, na - 1));
  const EffectSettings& e = reg.effects;
  for (int u = 0; u < R; ++u)
    for (int j = 0; j < sh.n_z; ++j)
      if (bit(static_cast<std::size_t>(u), j))
        for (int k = 0; k < na; ++k)
          t(L.alpha(u, j, k)) = e.alpha[static_cast<std::size_t>(u)][static_cast<std::size_t>(j)] +
                                e.delta[static_cast<std::size_t>(u)][static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] +
                                e.omega(0, j);
  for (int x = 1; x < sh.n_x; ++x)
    for (int j = 0; j < sh.n_z; ++j) t(L.omega(x, j)) = e.omega(x, j) - e.omega(0, j);
  return t;
}

Vector prior_center(const ModelSpec& spec) {
  const ParamLayout L(spec.shape);
  Vector t = Vector::Zero(L.size());
  for (int i = 0; i < 4; ++i) {
    const ShiftedBeta& s = rate_prior(spec.priors, i);
    t(i) = rate_to_unconstrained(s, s.mean());
  }
  const int R = static_cast<int>(spec.shape.strata());
  for (int r = 0; r < spec.shape.n_r; ++r)
    for (int u = 0; u < std::min(2, R - 1); ++u) t(L.mu(r, u)) = spec.priors.mu_lead_mean;
  return t;
}

Vector draw_prior(const ModelSpec& spec, Rng& rng) {
  const TrialShape& sh = spec.shape;
  const ParamLayout L(sh);
  const PriorConfig& p = spec.priors;
  const int R = static_cast<int>(sh.strata()), na = sh.n_a;
  Vector t(L.size());
  for (int i = 0; i < 4; ++i) {
    const ShiftedBeta& s = rate_prior(p, i);
    const double chi = std::clamp(rng.beta(s.a, s.b), 1e-12, 1.0 - 1e-12);
    t(i) = logit(chi);
  }
  for (int r = 0; r < sh.n_r; ++r)
    for (int u = 0; u < R - 1; ++u) t(L.mu(r, u)) = rng.normal(u < 2 ? p.mu_lead_mean : 0.0, p.sd_mu);
  for (int x = 1; x < sh.n_x; ++x)
    for (int u = 0; u < R - 1; ++u) t(L.eta(x, u)) = rng.normal(0.0, p.sd_eta);
  const auto wide = PriorConfig::wide_nu_strata(sh.n_z);
  for (int u = 0; u < R; ++u) {
    const bool w = std::find(wide.begin(), wide.end(), static_cast<std::size_t>(u)) != wide.end();
    for (int k = 0; k < na - 1; ++k) t(L.nu(u, k)) = rng.normal(0.0, w ? p.sd_nu_wide : p.sd_nu);
  }
  for (int x = 1; x < sh.n_x; ++x)
    for (int k = 0; k < na - 1; ++k) t(L.gamma(x, k)) = rng.normal(0.0, p.sd_gamma);
  for (int u = 0; u < R; ++u)
    for (int j = 0; j < sh.n_z; ++j)
      if (bit(static_cast<std::size_t>(u), j))
        for (int k = 0; k < na; ++k) t(L.alpha(u, j, k)) = rng.normal(0.0, p.sd_alpha);
  for (int x = 1; x < sh.n_x; ++x)
    for (int j = 0; j < sh.n_z; ++j) t(L.omega(x, j)) = rng.normal(0.0, p.sd_omega);
  return t;
}

double log_prior(const ModelSpec& spec, const Vector& t) {
  const TrialShape& sh = spec.shape;
  const ParamLayout L(sh);
  if (t.size() != L.size()) throw std::invalid_argument("parameter vector has the wrong length");
  const PriorConfig& p = spec.priors;
  const int R = static_cast<int>(sh.strata()), na = sh.n_a;
  double lp = 0.0;
  for (int i = 0; i < 4; ++i) {
    const ShiftedBeta& s = rate_prior(p, i);
    // Beta density of chi = sigmoid(t) times d chi / d t.
    const double ls = -std::log1p(std::exp(-t(i))), l1s = -std::log1p(std::exp(t(i)));
    const double lp_chi = std::lgamma(s.a + s.b) - std::lgamma(s.a) - std::lgamma(s.b);
    if (!std::isfinite(ls) || !std::isfinite(l1s)) return -std::numeric_limits<double>::infinity();
    lp += lp_chi + s.a * ls + s.b * l1s;
  }
  for (int r = 0; r < sh.n_r; ++r)
    for (int u = 0; u < R - 1; ++u) lp += normal_logpdf(t(L.mu(r, u)), u < 2 ? p.mu_lead_mean : 0.0, p.sd_mu);
  for (int x = 1; x < sh.n_x; ++x)
    for (int u = 0; u < R - 1; ++u) lp += normal_logpdf(t(L.eta(x, u)), 0.0, p.sd_eta);
  const auto wide = PriorConfig::wide_nu_strata(sh.n_z);
  for (int u = 0; u < R; ++u) {
    const bool w = std::find(wide.begin(), wide.end(), static_cast<std::size_t>(u)) != wide.end();
    for (int k = 0; k < na - 1; ++k) lp += normal_logpdf(t(L.nu(u, k)), 0.0, w ? p.sd_nu_wide : p.sd_nu);
  }
  for (int x = 1; x < sh.n_x; ++x)
    for (int k = 0; k < na - 1; ++k) lp += normal_logpdf(t(L.gamma(x, k)), 0.0, p.sd_gamma);
  for (int u = 0; u < R; ++u)
    for (int j = 0; j < sh.n_z; ++j)
      if (bit(static_cast<std::size_t>(u), j))
        for (int k = 0; k < na; ++k) lp += normal_logpdf(t(L.alpha(u, j, k)), 0.0, p.sd_alpha);
  for (int x = 1; x < sh.n_x; ++x)
    for (int j = 0; j < sh.n_z; ++j) lp += normal_logpdf(t(L.omega(x, j)), 0.0, p.sd_omega);
  return lp;
}

LogLikelihood log_likelihood(const PopulationParams& params, const CellCounts& counts) {
  params.validate();
  if (!(params.shape == counts.shape)) throw std::invalid_argument("params and counts shapes differ");
  for (double n : counts.n)
    if (!(n >= 0.0)) throw std::invalid_argument("counts must be nonnegative");
  return loglik_unchecked(params, counts);
}

LogLikelihood log_likelihood(const ModelSpec& spec, const Vector& t, const CellCounts& counts) {
  if (!(spec.shape == counts.shape)) throw std::invalid_argument("model and counts shapes differ");
  const ParamLayout L(spec.shape);
  if (t.size() != L.size()) throw std::invalid_argument("parameter vector has the wrong length");
  return loglik_direct(spec, L, t, counts);
}

double log_posterior(const ModelSpec& spec, const Vector& t, const CellCounts& counts) {
  if (!t.allFinite()) return -std::numeric_limits<double>::infinity();
  const double lp = log_prior(spec, t);
  if (!std::isfinite(lp)) return lp;
  const LogLikelihood ll = log_likelihood(spec, t, counts);
  if (ll.zero_probability) return -std::numeric_limits<double>::infinity();
  return lp + ll.value;
}

Vector empirical_x_weights(const CellCounts& c) {
  const TrialShape& sh = c.shape;
  Vector w = Vector::Zero(sh.n_x);
  const std::size_t block = c.n.size() / static_cast<std::size_t>(sh.n_x);
  for (int x = 0; x < sh.n_x; ++x)
    for (std::size_t i = 0; i < block; ++i) w(x) += c.n[static_cast<std::size_t>(x) * block + i];
  const double s = w.sum();
  return s > 0.0 ? Vector(w / s) : uniform(sh.n_x);
}

Vector empirical_site_weights(const CellCounts& c) {
  const TrialShape& sh = c.shape;
  Vector w = Vector::Zero(sh.n_r);
  const std::size_t cells = 4u * static_cast<std::size_t>(sh.n_a);
  for (int x = 0; x < sh.n_x; ++x)
    for (int z = 0; z < sh.n_z; ++z)
      for (int r = 0; r < sh.n_r; ++r) {
        const std::size_t base = c.index(x, z, r, 0, 0, 0);
        for (std::size_t i = 0; i < cells; ++i) w(r) += c.n[base + i];
      }
  const double s = w.sum();
  return s > 0.0 ? Vector(w / s) : uniform(sh.n_r);
}

}  // namespace strata
