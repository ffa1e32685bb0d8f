#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

#include "strata_id/inference.hpp"

namespace strata {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Objective {
  const ModelSpec& spec;
  const CellCounts& counts;

  // Negative log posterior; +inf outside the support.
  double operator()(const Vector& x) const {
    const double v = -log_posterior(spec, x, counts);
    return std::isfinite(v) ? v : kInf;
  }

  Vector gradient(const Vector& x, double h0 = 1e-5) const {
    Vector g(x.size());
    Vector xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double h = h0 * (1.0 + std::abs(x(i)));
      xp(i) = x(i) + h;
      const double fp = (*this)(xp);
      xp(i) = x(i) - h;
      const double fm = (*this)(xp);
      xp(i) = x(i);
      g(i) = (fp - fm) / (2.0 * h);
    }
    return g;
  }
};

Matrix covariance_from_hessian(Matrix H, double min_eig) {
  H = 0.5 * (H + H.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(H);
  Vector ev = es.eigenvalues().cwiseMax(min_eig);
  return es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

Matrix cholesky_lower(const Matrix& cov) {
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (cov + cov.transpose()));
  const Vector ev = es.eigenvalues().cwiseMax(1e-10);
  return es.eigenvectors() * ev.cwiseSqrt().asDiagonal();
}

struct MhBlock {
  std::vector<int> idx;
  Matrix L;
  double log_scale = 0.0;
  long accepted = 0, proposed = 0;
};

// Sub-blocks move along their conditional covariance (inverse of the precision sub-block).
void set_block_factors(std::vector<MhBlock>& blocks, const Matrix& cov) {
  const Matrix prec = cov.ldlt().solve(Matrix::Identity(cov.rows(), cov.cols()));
  for (auto& b : blocks) {
    const auto d = static_cast<Eigen::Index>(b.idx.size());
    if (d == cov.rows()) {
      b.L = cholesky_lower(cov);
      continue;
    }
    Matrix sub(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) sub(i, j) = prec(b.idx[static_cast<std::size_t>(i)], b.idx[static_cast<std::size_t>(j)]);
    b.L = cholesky_lower(sub.ldlt().solve(Matrix::Identity(d, d)));
  }
}

struct ChainOutput {
  Matrix draws;
  long accepted = 0, proposed = 0;
};

ChainOutput run_chain(const ModelSpec& spec, const CellCounts& counts, const SamplerConfig& cfg, int chain,
                      const MapResult& map) {
  ChainOutput out;
  const Objective f{spec, counts};
  const ParamLayout layout(spec.shape);
  const int d = layout.size();
  Rng rng(cfg.seed, {static_cast<std::uint64_t>(chain)});
  const Matrix L0 = cholesky_lower(map.covariance);

  Vector x;
  double lp = -kInf;
  for (int attempt = 0; attempt < 100 && !std::isfinite(lp); ++attempt) {
    if (cfg.optimize_init) {
      Vector e(d);
      for (int i = 0; i < d; ++i) e(i) = rng.normal();
      x = map.x + L0 * e;
    } else {
      x = draw_prior(spec, rng);
      const Vector c = prior_center(spec);
      for (int r = 0; r < spec.shape.n_r; ++r)
        for (int u = 0; u + 1 < static_cast<int>(spec.shape.strata()); ++u) x(layout.mu(r, u)) = c(layout.mu(r, u));
    }
    lp = -f(x);
  }
  if (!std::isfinite(lp)) throw std::runtime_error("sampler: non-finite target at every initialization attempt");

  std::vector<MhBlock> blocks;
  {
    MhBlock full;
    for (int i = 0; i < d; ++i) full.idx.push_back(i);
    blocks.push_back(std::move(full));
    for (const auto& g : layout.blocks()) {
      MhBlock b;
      for (int i = 0; i < g.size; ++i) b.idx.push_back(g.begin + i);
      blocks.push_back(std::move(b));
    }
    for (auto& b : blocks) b.log_scale = std::log(2.38 / std::sqrt(static_cast<double>(b.idx.size())));
  }
  Matrix cov = map.covariance;
  set_block_factors(blocks, cov);

  const int total = cfg.warmup + cfg.iters;
  out.draws.resize(cfg.iters, d);
  Matrix warm(cfg.warmup, d);
  // Covariance refreshed ten times during warmup from the second half of the states so far.
  const int adapt_every = cfg.warmup / 10;
  Vector prop(d);
  for (int it = 0; it < total; ++it) {
    const bool warmup = it < cfg.warmup;
    for (auto& b : blocks) {
      const auto bd = static_cast<Eigen::Index>(b.idx.size());
      Vector e(bd);
      for (Eigen::Index i = 0; i < bd; ++i) e(i) = rng.normal();
      const Vector step = std::exp(b.log_scale) * (b.L * e);
      prop = x;
      for (Eigen::Index i = 0; i < bd; ++i) prop(b.idx[static_cast<std::size_t>(i)]) += step(i);
      const double lp_new = -f(prop);
      const double log_ratio = lp_new - lp;
      const double acc = std::isfinite(lp_new) ? std::min(1.0, std::exp(std::min(0.0, log_ratio))) : 0.0;
      const bool take = std::isfinite(lp_new) && std::log(rng.uniform_open()) < log_ratio;
      if (take) {
        x = prop;
        lp = lp_new;
      }
      if (warmup) {
        b.log_scale += (acc - cfg.target_accept) * std::pow(1.0 + it, -0.6);
      } else {
        ++b.proposed;
        if (take) ++b.accepted;
      }
    }
    if (warmup) {
      warm.row(it) = x.transpose();
      if (adapt_every > 0 && (it + 1) % adapt_every == 0 && it + 1 < cfg.warmup) {
        const int from = (it + 1) / 2, n = it + 1 - from;
        if (n > d + 10) {
          const Matrix S = warm.middleRows(from, n);
          const Vector mean = S.colwise().mean().transpose();
          const Matrix C = S.rowwise() - mean.transpose();
          const Matrix emp = (C.transpose() * C) / static_cast<double>(n - 1);
          const double wt = static_cast<double>(n) / (n + 20.0);
          cov = wt * emp + (1.0 - wt) * cov;
          cov.diagonal().array() += 1e-10;
          set_block_factors(blocks, cov);
        }
      }
    } else {
      out.draws.row(it - cfg.warmup) = x.transpose();
    }
  }
  for (const auto& b : blocks) {
    out.accepted += b.accepted;
    out.proposed += b.proposed;
  }
  return out;
}

}  // namespace

void SamplerConfig::validate() const {
  if (chains < 1) throw std::invalid_argument("chains must be >= 1");
  if (warmup < 0) throw std::invalid_argument("warmup must be >= 0");
  if (iters < 1) throw std::invalid_argument("iters must be >= 1");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  if (!(target_accept > 0.0 && target_accept < 1.0)) throw std::invalid_argument("target_accept must lie in (0, 1)");
}

MapResult find_map(const ModelSpec& spec, const CellCounts& counts, const Vector& start, int max_iter,
                   bool with_covariance) {
  spec.validate();
  const Objective f{spec, counts};
  const auto d = start.size();
  MapResult res;
  Vector x = start;
  double fx = f(x);
  if (!std::isfinite(fx)) throw std::runtime_error("find_map: non-finite target at the starting point");
  Vector g = f.gradient(x);
  Matrix Hinv = Matrix::Identity(d, d);
  bool first = true;
  int small_steps = 0;
  for (int it = 0; it < max_iter; ++it) {
    res.iterations = it + 1;
    if (g.lpNorm<Eigen::Infinity>() < 1e-6 * (1.0 + std::abs(fx))) {
      res.converged = true;
      break;
    }
    Vector p = -Hinv * g;
    if (p.dot(g) >= 0.0) {
      Hinv.setIdentity();
      p = -g;
    }
    double step = 1.0, fn = kInf;
    Vector xn;
    for (int ls = 0; ls < 50; ++ls) {
      xn = x + step * p;
      fn = f(xn);
      if (std::isfinite(fn) && fn <= fx + 1e-4 * step * p.dot(g)) break;
      step *= 0.5;
    }
    if (!std::isfinite(fn) || fn > fx) break;
    const Vector gn = f.gradient(xn);
    const Vector s = xn - x, y = gn - g;
    const double sy = s.dot(y);
    if (sy > 1e-12) {
      if (first) {
        Hinv *= sy / y.squaredNorm();
        first = false;
      }
      const double rho = 1.0 / sy;
      const Matrix I = Matrix::Identity(d, d);
      Hinv = (I - rho * s * y.transpose()) * Hinv * (I - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    const double df = fx - fn;
    x = xn;
    g = gn;
    fx = fn;
    small_steps = df < 1e-10 * (1.0 + std::abs(fx)) ? small_steps + 1 : 0;
    if (small_steps >= 5) {
      res.converged = true;
      break;
    }
  }
  res.x = x;
  res.log_posterior = -fx;
  if (with_covariance) {
    Matrix H(d, d);
    Vector xp = x;
    for (Eigen::Index i = 0; i < d; ++i) {
      const double h = 1e-4 * (1.0 + std::abs(x(i)));
      xp(i) = x(i) + h;
      const Vector gp = f.gradient(xp);
      xp(i) = x(i) - h;
      const Vector gm = f.gradient(xp);
      xp(i) = x(i);
      H.col(i) = (gp - gm) / (2.0 * h);
    }
    res.covariance = covariance_from_hessian(H, 0.05);
  }
  return res;
}

std::vector<EstimandSpec> default_estimands(const TrialShape& shape) {
  shape.validate();
  const int nz = shape.n_z;
  const StratumVector all = stratum_from_index(shape.strata() - 1, nz);
  std::vector<EstimandSpec> out;
  for (int j = nz - 1; j > 0; --j)
    for (int k = 0; k < j; ++k) {
      EstimandSpec vi;
      vi.kind = EstimandKind::VeIMarginal;
      vi.stratum = all;
      vi.arm_j = j;
      vi.arm_k = k;
      out.push_back(vi);
      EstimandSpec vs = vi;
      vs.kind = EstimandKind::VeS;
      out.push_back(vs);
    }
  if (nz == 2) {
    EstimandSpec vt;
    vt.kind = EstimandKind::VeTransmission;
    vt.stratum = all;
    vt.arm_j = 1;
    vt.arm_k = 0;
    out.push_back(vt);
  }
  return out;
}

FitResult sample_posterior(const ModelSpec& spec, const CellCounts& counts, const SamplerConfig& cfg,
                           std::vector<EstimandSpec> estimands) {
  spec.validate();
  cfg.validate();
  if (!(spec.shape == counts.shape)) throw std::invalid_argument("model and counts shapes differ");
  if (estimands.empty()) estimands = default_estimands(spec.shape);
  for (const auto& e : estimands) e.validate(spec.shape.n_z);

  const ParamLayout layout(spec.shape);
  const MapResult map = find_map(spec, counts, prior_center(spec));

  std::vector<ChainOutput> outs(static_cast<std::size_t>(cfg.chains));
  const int nthreads = std::min(cfg.threads, cfg.chains);
  if (nthreads <= 1) {
    for (int c = 0; c < cfg.chains; ++c) outs[static_cast<std::size_t>(c)] = run_chain(spec, counts, cfg, c, map);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(cfg.chains));
    for (int t = 0; t < nthreads; ++t)
      pool.emplace_back([&, t] {
        for (int c = t; c < cfg.chains; c += nthreads) {
          try {
            outs[static_cast<std::size_t>(c)] = run_chain(spec, counts, cfg, c, map);
          } catch (...) {
            errors[static_cast<std::size_t>(c)] = std::current_exception();
          }
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  FitResult fit;
  fit.shape = spec.shape;
  fit.names = layout.names();
  fit.chains = cfg.chains;
  fit.iters = cfg.iters;
  fit.point = map.x;
  fit.point_log_posterior = map.log_posterior;
  fit.wide_nu_strata = PriorConfig::wide_nu_strata(spec.shape.n_z);
  const int d = layout.size();
  fit.draws.resize(static_cast<Eigen::Index>(cfg.chains) * cfg.iters, d);
  long acc = 0, prop = 0;
  for (int c = 0; c < cfg.chains; ++c) {
    const auto& o = outs[static_cast<std::size_t>(c)];
    fit.draws.middleRows(static_cast<Eigen::Index>(c) * cfg.iters, cfg.iters) = o.draws;
    acc += o.accepted;
    prop += o.proposed;
  }

  fit.estimands = estimands;
  const Vector xw = empirical_x_weights(counts), sw = empirical_site_weights(counts);
  fit.estimand_draws.resize(fit.draws.rows(), static_cast<Eigen::Index>(estimands.size()));
  for (Eigen::Index i = 0; i < fit.draws.rows(); ++i) {
    const EstimandBasis basis = basis_from_params(to_population(spec, fit.draws.row(i).transpose(), xw, sw));
    for (std::size_t e = 0; e < estimands.size(); ++e) {
      double v;
      try {
        v = basis.evaluate(estimands[e]);
      } catch (const UndefinedEstimand&) {
        v = std::numeric_limits<double>::quiet_NaN();
      }
      fit.estimand_draws(i, static_cast<Eigen::Index>(e)) = v;
    }
  }

  fit.diagnostics = compute_diagnostics(fit.draws, cfg.chains);
  fit.diagnostics.acceptance_rate = prop > 0 ? static_cast<double>(acc) / static_cast<double>(prop) : 0.0;

  // sn_Y is flagged when its posterior spread stays near the prior spread.
  const ShiftedBeta& p = spec.priors.sn_Y;
  const double prior_var = (p.hi - p.lo) * (p.hi - p.lo) * p.a * p.b / ((p.a + p.b) * (p.a + p.b) * (p.a + p.b + 1.0));
  Vector sn(fit.draws.rows());
  for (Eigen::Index i = 0; i < sn.size(); ++i) sn(i) = rate_from_unconstrained(p, fit.draws(i, ParamLayout::SnY));
  const double m = sn.mean();
  const double post_var = (sn.array() - m).square().sum() / std::max<Eigen::Index>(1, sn.size() - 1);
  fit.sn_Y_prior_dominated = post_var > 0.25 * prior_var;
  return fit;
}

}  // namespace strata
