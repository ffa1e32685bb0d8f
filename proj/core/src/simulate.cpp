#include "strata_id/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

#include "strata_id/rng.hpp"

namespace strata {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::uint64_t kTagStrata = 1, kTagEta = 2, kTagCovariate = 3, kTagGamma = 4, kTagData = 5;
constexpr double kThetaFloor = 1e-12;

bool bit(std::size_t u, int j) { return (u >> j) & 1u; }

EffectSettings empty_effects(const TrialShape& sh) {
  EffectSettings e;
  const auto R = sh.strata();
  e.alpha.assign(R, std::vector<double>(static_cast<std::size_t>(sh.n_z), kNaN));
  e.delta.assign(R, std::vector<std::vector<double>>(static_cast<std::size_t>(sh.n_z),
                                                     std::vector<double>(static_cast<std::size_t>(sh.n_a), 0.0)));
  e.omega = Matrix::Zero(sh.n_x, sh.n_z);
  for (int x = 0; x < sh.n_x; ++x)
    for (int j = 0; j < sh.n_z; ++j) e.omega(x, j) = x * std::log(1.1);
  return e;
}

void set_alpha(EffectSettings& e, std::size_t u, int j, double p, double delta_ratio = 1.0) {
  e.alpha[u][static_cast<std::size_t>(j)] = logit(p);
  auto& d = e.delta[u][static_cast<std::size_t>(j)];
  for (std::size_t k = 0; k < d.size(); ++k) d[k] = static_cast<double>(k) * std::log(delta_ratio);
}

}  // namespace

double logit(double p) { return std::log(p) - std::log1p(-p); }

double inv_logit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Vector softmax(const Vector& v) {
  Vector out(v.size());
  const double m = v.maxCoeff();
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (out(i) = std::exp(v(i) - m));
  return out / s;
}

Vector softmax_inverse(const Vector& theta) {
  const Eigen::Index L = theta.size() - 1;
  Vector out(L);
  for (Eigen::Index i = 0; i < L; ++i) out(i) = std::log(theta(i)) - std::log(theta(L));
  return out;
}

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::TwoArmSevere: return "two_arm_severe";
    case Scenario::ThreeArmSevere: return "three_arm_severe";
    case Scenario::TwoArmTransmission: return "two_arm_transmission";
    case Scenario::TwoArmNull: return "two_arm_null";
    case Scenario::ThreeArmNull: return "three_arm_null";
    case Scenario::TwoArmTransmissionNull: return "two_arm_transmission_null";
    case Scenario::Custom: return "custom";
  }
  return "?";
}

Scenario parse_scenario(const std::string& t) {
  for (Scenario s : {Scenario::TwoArmSevere, Scenario::ThreeArmSevere, Scenario::TwoArmTransmission,
                     Scenario::TwoArmNull, Scenario::ThreeArmNull, Scenario::TwoArmTransmissionNull,
                     Scenario::Custom})
    if (to_string(s) == t) return s;
  throw std::invalid_argument("unknown scenario '" + t + "'");
}

Matrix default_a_kernel(int n_a) {
  double diag, side, edge_diag, edge_side;
  if (n_a == 7) {
    diag = 0.5, side = 0.25, edge_diag = 0.5, edge_side = 0.5;
  } else if (n_a == 3) {
    diag = 0.75, side = 0.125, edge_diag = 0.75, edge_side = 0.25;
  } else {
    throw std::invalid_argument("no default A~ kernel for this number of covariate levels; supply one");
  }
  Matrix K = Matrix::Zero(n_a, n_a);
  for (int a = 0; a < n_a; ++a) {
    if (a == 0) {
      K(a, a) = edge_diag;
      K(a, a + 1) = edge_side;
    } else if (a == n_a - 1) {
      K(a, a) = edge_diag;
      K(a, a - 1) = edge_side;
    } else {
      K(a, a) = diag;
      K(a, a - 1) = K(a, a + 1) = side;
    }
  }
  return K;
}

SimConfig scenario_config(Scenario s, long n, std::uint64_t seed, bool a_error) {
  SimConfig c;
  c.scenario = s;
  c.n = n;
  c.seed = seed;
  c.measure_A_with_error = a_error;
  const bool three = s == Scenario::ThreeArmSevere || s == Scenario::ThreeArmNull;
  c.shape = three ? TrialShape{3, 8, 7, 3} : TrialShape{2, 4, 3, 3};
  c.dirichlet_strata = three ? std::vector<double>{91, 5, 0.1, 0.1, 0.1, 0.1, 0.1, 3.5}
                             : std::vector<double>{91, 5, 0.5, 3.5};
  c.effects = empty_effects(c.shape);
  EffectSettings& e = c.effects;
  switch (s) {
    case Scenario::TwoArmSevere:
    case Scenario::TwoArmNull: {
      const bool null = s == Scenario::TwoArmNull;
      set_alpha(e, 3, 0, 0.3, 0.925);
      if (null)
        set_alpha(e, 3, 1, 0.3, 0.925);
      else {
        set_alpha(e, 3, 1, 0.3, 0.825);
        e.alpha[3][1] = logit(0.3) + std::log(0.4);
      }
      set_alpha(e, 1, 0, 0.15, 0.925);
      set_alpha(e, 2, 1, 0.2);
      c.misclass = {0.8, 0.99, 0.99, 0.9};
      break;
    }
    case Scenario::ThreeArmSevere:
    case Scenario::ThreeArmNull: {
      const bool null = s == Scenario::ThreeArmNull;
      set_alpha(e, 7, 0, 0.3, 0.925);
      set_alpha(e, 7, 1, 0.3, 0.925);
      set_alpha(e, 7, 2, 0.3, 0.925);
      if (!null) e.alpha[7][2] = logit(0.3) + std::log(0.4);
      set_alpha(e, 5, 0, 0.2);
      set_alpha(e, 5, 2, 0.1);
      set_alpha(e, 3, 0, 0.3);
      set_alpha(e, 3, 1, 0.15);
      set_alpha(e, 6, 1, 0.25);
      set_alpha(e, 6, 2, 0.08);
      set_alpha(e, 4, 2, 0.25);
      set_alpha(e, 2, 1, 0.25);
      set_alpha(e, 1, 0, 0.1);
      c.misclass = {0.8, 0.99, 0.99, 0.9};
      break;
    }
    case Scenario::TwoArmTransmission:
    case Scenario::TwoArmTransmissionNull: {
      const bool null = s == Scenario::TwoArmTransmissionNull;
      set_alpha(e, 3, 0, 0.4);
      set_alpha(e, 3, 1, null ? 0.4 : 0.24);
      set_alpha(e, 1, 0, 0.3);
      set_alpha(e, 2, 1, 0.2);
      c.misclass = {0.8, 0.99, 0.8, 0.99};
      c.households = true;
      break;
    }
    case Scenario::Custom:
      break;
  }
  if (a_error) c.a_error_kernel = default_a_kernel(c.shape.n_a);
  return c;
}

SimConfig household_mapping(const SimConfig& config) {
  if (config.scenario != Scenario::TwoArmTransmission && config.scenario != Scenario::TwoArmTransmissionNull)
    throw std::invalid_argument("household mapping applies to the two-arm transmission scenario");
  SimConfig c = config;
  c.households = true;
  c.misclass.sn_Y = c.misclass.sn_S;
  c.misclass.sp_Y = c.misclass.sp_S;
  return c;
}

void SimConfig::validate() const {
  shape.validate();
  if (n < 1) throw std::invalid_argument("n must be positive");
  const auto R = shape.strata();
  if (dirichlet_strata.size() != R) throw std::invalid_argument("strata Dirichlet needs 2^n_z entries");
  for (double v : dirichlet_strata)
    if (!(v > 0.0)) throw std::invalid_argument("Dirichlet concentrations must be positive");
  if (!(dirichlet_covariate > 0.0)) throw std::invalid_argument("covariate Dirichlet concentration must be positive");
  if (effects.alpha.size() != R || effects.delta.size() != R) throw std::invalid_argument("effect tables need 2^n_z strata");
  for (std::size_t u = 0; u < R; ++u) {
    if (effects.alpha[u].size() != static_cast<std::size_t>(shape.n_z))
      throw std::invalid_argument("alpha needs one entry per arm");
    for (int j = 0; j < shape.n_z; ++j) {
      const double a = effects.alpha[u][static_cast<std::size_t>(j)];
      if (bit(u, j) && !std::isfinite(a)) throw std::invalid_argument("alpha missing for an infected stratum/arm");
      if (effects.delta[u][static_cast<std::size_t>(j)].size() != static_cast<std::size_t>(shape.n_a))
        throw std::invalid_argument("delta needs one entry per covariate level");
    }
  }
  if (effects.omega.rows() != shape.n_x || effects.omega.cols() != shape.n_z)
    throw std::invalid_argument("omega must be N_x x N_z");
  for (double v : {misclass.sn_S, misclass.sp_S, misclass.sn_Y, misclass.sp_Y})
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("misclassification rates must lie in [0, 1]");
  if (measure_A_with_error) {
    if (!a_error_kernel) throw std::invalid_argument("measure_A_with_error requires an A~ kernel");
    const Matrix& K = *a_error_kernel;
    if (K.rows() != shape.n_a || K.cols() != shape.n_a) throw std::invalid_argument("A~ kernel must be N_a x N_a");
    for (int k = 0; k < shape.n_a; ++k)
      if (K.row(k).minCoeff() < 0.0 || std::abs(K.row(k).sum() - 1.0) > 1e-9)
        throw std::invalid_argument("A~ kernel rows must sum to 1");
  }
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
}

GeneratedParams gen_params(const SimConfig& cfg) {
  cfg.validate();
  const TrialShape& sh = cfg.shape;
  const auto R = static_cast<Eigen::Index>(sh.strata());
  GeneratedParams g;
  RegressionParams& reg = g.regression;
  reg.effects = cfg.effects;
  reg.mu = Matrix::Zero(sh.n_r, R);
  reg.eta = Matrix::Zero(sh.n_x, R);
  reg.nu = Matrix::Zero(R, sh.n_a);
  reg.gamma = Matrix::Zero(sh.n_x, sh.n_a);

  for (int r = 0; r < sh.n_r; ++r) {
    Rng rng(cfg.seed, {kTagStrata, static_cast<std::uint64_t>(r)});
    std::vector<double> th = rng.dirichlet(cfg.dirichlet_strata);
    for (double& t : th) t = std::max(t, kThetaFloor);
    Vector v = Eigen::Map<Vector>(th.data(), R);
    v /= v.sum();
    reg.mu.row(r).head(R - 1) = softmax_inverse(v).transpose();
  }
  for (int x = 1; x < sh.n_x; ++x) {
    Rng rng(cfg.seed, {kTagEta, static_cast<std::uint64_t>(x)});
    for (Eigen::Index u = 0; u + 1 < R; ++u) reg.eta(x, u) = rng.normal();
  }
  const std::vector<double> conc(static_cast<std::size_t>(sh.n_a), cfg.dirichlet_covariate);
  for (Eigen::Index u = 0; u < R; ++u) {
    Rng rng(cfg.seed, {kTagCovariate, static_cast<std::uint64_t>(u)});
    std::vector<double> av = rng.dirichlet(conc);
    for (double& t : av) t = std::max(t, kThetaFloor);
    Vector v = Eigen::Map<Vector>(av.data(), sh.n_a);
    v /= v.sum();
    if (sh.n_a > 1) reg.nu.row(u).head(sh.n_a - 1) = softmax_inverse(v).transpose();
  }
  for (int x = 1; x < sh.n_x; ++x) {
    Rng rng(cfg.seed, {kTagGamma, static_cast<std::uint64_t>(x)});
    for (int k = 0; k + 1 < sh.n_a; ++k) reg.gamma(x, k) = rng.normal();
  }

  PopulationParams& P = g.population;
  P = PopulationParams::zeros(sh);
  for (int x = 0; x < sh.n_x; ++x) {
    for (int r = 0; r < sh.n_r; ++r)
      P.theta[static_cast<std::size_t>(x)].col(r) = softmax((reg.mu.row(r) + reg.eta.row(x)).transpose());
    for (Eigen::Index u = 0; u < R; ++u)
      P.a[static_cast<std::size_t>(x)].col(u) = softmax((reg.nu.row(u) + reg.gamma.row(x)).transpose());
    for (int j = 0; j < sh.n_z; ++j) {
      Matrix& b = P.beta[static_cast<std::size_t>(x)][static_cast<std::size_t>(j)];
      for (Eigen::Index u = 0; u < R; ++u) {
        if (!bit(static_cast<std::size_t>(u), j)) continue;
        for (int k = 0; k < sh.n_a; ++k)
          b(k, u) = inv_logit(cfg.effects.alpha[static_cast<std::size_t>(u)][static_cast<std::size_t>(j)] +
                              cfg.effects.delta[static_cast<std::size_t>(u)][static_cast<std::size_t>(j)]
                                               [static_cast<std::size_t>(k)] +
                              cfg.effects.omega(x, j));
      }
    }
  }
  P.sn_S = cfg.misclass.sn_S;
  P.sp_S = cfg.misclass.sp_S;
  P.sn_Y = cfg.misclass.sn_Y;
  P.sp_Y = cfg.misclass.sp_Y;
  if (cfg.measure_A_with_error) P.a_kernel = cfg.a_error_kernel;
  P.validate();
  return g;
}

TrialDataset simulate_dataset(const PopulationParams& P, const SimConfig& cfg) {
  P.validate();
  cfg.validate();
  if (!(P.shape == cfg.shape)) throw std::invalid_argument("params and config shapes differ");
  const TrialShape& sh = P.shape;
  const auto R = static_cast<Eigen::Index>(sh.strata());
  TrialDataset ds;
  ds.shape = sh;
  ds.households = cfg.households;
  ds.records.resize(static_cast<std::size_t>(cfg.n));

  // Alias tables for every categorical the participants draw from.
  std::vector<AliasTable> strata_tab(static_cast<std::size_t>(sh.n_x * sh.n_r));
  std::vector<AliasTable> cov_tab(static_cast<std::size_t>(sh.n_x * R));
  for (int x = 0; x < sh.n_x; ++x) {
    for (int r = 0; r < sh.n_r; ++r) {
      const Vector col = P.theta[static_cast<std::size_t>(x)].col(r);
      strata_tab[static_cast<std::size_t>(x * sh.n_r + r)] = AliasTable(std::span<const double>(col.data(), col.size()));
    }
    for (Eigen::Index u = 0; u < R; ++u) {
      const Vector col = P.a[static_cast<std::size_t>(x)].col(u);
      cov_tab[static_cast<std::size_t>(x * R + u)] = AliasTable(std::span<const double>(col.data(), col.size()));
    }
  }
  std::vector<double> zw(P.z_dist.data(), P.z_dist.data() + P.z_dist.size());
  std::vector<double> xw(P.x_dist.data(), P.x_dist.data() + P.x_dist.size());
  std::vector<std::vector<double>> kern;
  if (P.a_kernel)
    for (int k = 0; k < sh.n_a; ++k) {
      const Eigen::RowVectorXd row = P.a_kernel->row(k);
      kern.emplace_back(row.data(), row.data() + row.size());
    }

  const std::uint64_t data_seed = derive_seed(cfg.seed, {kTagData});
  auto work = [&](long lo, long hi) {
    for (long i = lo; i < hi; ++i) {
      Rng rng(data_seed, {static_cast<std::uint64_t>(i)});
      ParticipantRecord& rec = ds.records[static_cast<std::size_t>(i)];
      rec.r = static_cast<std::int32_t>((static_cast<long double>(i) * sh.n_r) / cfg.n);
      rec.z = rng.categorical(zw);
      rec.x = rng.categorical(xw);
      rec.stratum = strata_tab[static_cast<std::size_t>(rec.x * sh.n_r + rec.r)].sample(rng);
      rec.a_true = cov_tab[static_cast<std::size_t>(rec.x * R + rec.stratum)].sample(rng);
      const bool infected = bit(static_cast<std::size_t>(rec.stratum), rec.z);
      rec.s_true = infected ? 1 : 0;
      if (infected) {
        const double b = P.beta[static_cast<std::size_t>(rec.x)][static_cast<std::size_t>(rec.z)](rec.a_true, rec.stratum);
        rec.y_true = rng.bernoulli(b) ? 1 : 0;
      } else {
        rec.y_true = 0;
      }
      rec.s_obs = rng.bernoulli(infected ? P.sn_S : 1.0 - P.sp_S) ? 1 : 0;
      rec.y_obs = rng.bernoulli(rec.y_true ? P.sn_Y : 1.0 - P.sp_Y) ? 1 : 0;
      rec.a_obs = P.a_kernel ? rng.categorical(kern[static_cast<std::size_t>(rec.a_true)]) : rec.a_true;
    }
  };
  const int T = std::max(1, std::min<int>(cfg.threads, static_cast<int>(std::max<long>(1, cfg.n / 10000))));
  if (T == 1) {
    work(0, cfg.n);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < T; ++t) {
      const long lo = cfg.n * t / T, hi = cfg.n * (t + 1) / T;
      pool.emplace_back(work, lo, hi);
    }
    for (auto& th : pool) th.join();
  }
  return ds;
}

CellCounts CellCounts::zeros(const TrialShape& shape) {
  CellCounts c;
  c.shape = shape;
  c.n.assign(ObservableCells::zeros(shape).q.size(), 0.0);
  return c;
}

std::size_t CellCounts::index(int x, int z, int r, int s, int y, int k) const {
  const auto nz = static_cast<std::size_t>(shape.n_z), nr = static_cast<std::size_t>(shape.n_r),
             na = static_cast<std::size_t>(shape.n_a);
  return ((((static_cast<std::size_t>(x) * nz + static_cast<std::size_t>(z)) * nr + static_cast<std::size_t>(r)) * 2u +
           static_cast<std::size_t>(s)) * 2u + static_cast<std::size_t>(y)) * na + static_cast<std::size_t>(k);
}

double CellCounts::total() const {
  double t = 0.0;
  for (double v : n) t += v;
  return t;
}

CellCounts count_cells(const TrialDataset& data) {
  CellCounts c = CellCounts::zeros(data.shape);
  for (const auto& rec : data.records) c.n[c.index(rec.x, rec.z, rec.r, rec.s_obs, rec.y_obs, rec.a_obs)] += 1.0;
  return c;
}

PopulationParams random_population(const TrialShape& shape, std::uint64_t seed) {
  PopulationParams p = PopulationParams::zeros(shape);
  Rng rng(seed);
  const auto R = static_cast<Eigen::Index>(shape.strata());
  const std::vector<double> onesR(static_cast<std::size_t>(R), 1.0), onesA(static_cast<std::size_t>(shape.n_a), 1.0);
  for (int x = 0; x < shape.n_x; ++x) {
    const auto xs = static_cast<std::size_t>(x);
    for (int r = 0; r < shape.n_r; ++r) {
      const auto col = rng.dirichlet(onesR);
      for (Eigen::Index u = 0; u < R; ++u) p.theta[xs](u, r) = col[static_cast<std::size_t>(u)];
    }
    for (Eigen::Index u = 0; u < R; ++u) {
      const auto col = rng.dirichlet(onesA);
      for (int k = 0; k < shape.n_a; ++k) p.a[xs](k, u) = col[static_cast<std::size_t>(k)];
    }
    for (int j = 0; j < shape.n_z; ++j)
      for (Eigen::Index u = 0; u < R; ++u)
        if (bit(static_cast<std::size_t>(u), j))
          for (int k = 0; k < shape.n_a; ++k) p.beta[xs][static_cast<std::size_t>(j)](k, u) = 0.05 + 0.9 * rng.uniform();
  }
  p.sn_S = 0.6 + 0.4 * rng.uniform_open();
  p.sp_S = 0.6 + 0.4 * rng.uniform_open();
  p.sn_Y = 0.6 + 0.4 * rng.uniform_open();
  p.sp_Y = 0.6 + 0.4 * rng.uniform_open();
  const auto xd = rng.dirichlet(std::vector<double>(static_cast<std::size_t>(shape.n_x), 2.0));
  for (int x = 0; x < shape.n_x; ++x) p.x_dist(x) = xd[static_cast<std::size_t>(x)];
  return p;
}

}  // namespace strata
