#pragma once

// Independent reference computations used by the tests. Nothing here calls
// the library routine it is checking; each oracle is written from the
// defining formula with plain loops.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "strata_id/population.hpp"
#include "strata_id/simulate.hpp"

namespace oracle {

using strata::Matrix;
using strata::Vector;

/// Binary digits of j by repeated division by two, least significant first.
inline std::vector<std::uint8_t> digits_by_division(std::size_t j, int m) {
  std::vector<std::uint8_t> d;
  for (int i = 0; i < m; ++i) {
    d.push_back(static_cast<std::uint8_t>(j % 2));
    j /= 2;
  }
  return d;
}

/// Rank from a full-pivot LU with a relative threshold.
inline int lu_rank(const Matrix& M, double tol = 1e-9) {
  if (M.size() == 0) return 0;
  Eigen::FullPivLU<Matrix> lu(M);
  lu.setThreshold(tol);
  return static_cast<int>(lu.rank());
}

/// Kruskal rank by checking every column subset, smallest first.
inline int subset_kruskal_rank(const Matrix& B, double tol = 1e-9) {
  const int n = static_cast<int>(B.cols());
  int best = 0;
  for (int k = 1; k <= n; ++k) {
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
      if (__builtin_popcount(mask) != k) continue;
      Matrix sub(B.rows(), k);
      int c = 0;
      for (int i = 0; i < n; ++i)
        if (mask & (1u << i)) sub.col(c++) = B.col(i);
      if (lu_rank(sub, tol) < k) return best;
    }
    best = k;
  }
  return best;
}

inline double naive_triple(const Matrix& A, const Matrix& B, const Matrix& C, int i, int j, int k) {
  double s = 0.0;
  for (Eigen::Index r = 0; r < A.cols(); ++r) s += A(i, r) * B(j, r) * C(k, r);
  return s;
}

/// P(S~=s, Y~=y, observed level = k | x, z, r) by summing over every latent
/// stratum, true covariate level, true infection and true outcome.
inline double cell_probability(const strata::PopulationParams& P, int x, int z, int r, int s, int y, int k) {
  const int R = 1 << P.shape.n_z;
  double total = 0.0;
  for (int u = 0; u < R; ++u) {
    const double pu = P.theta[x](u, r);
    const int infected = (u >> z) & 1;
    for (int a = 0; a < P.shape.n_a; ++a) {
      const double pa = P.a[x](a, u);
      const double pk = P.a_kernel ? (*P.a_kernel)(a, k) : (a == k ? 1.0 : 0.0);
      if (pk == 0.0) continue;
      for (int ytrue = 0; ytrue <= 1; ++ytrue) {
        double py;
        if (infected) {
          const double b = P.beta[x][z](a, u);
          py = ytrue ? b : 1.0 - b;
        } else {
          py = ytrue ? 0.0 : 1.0;
        }
        if (py == 0.0) continue;
        const double ps = infected ? (s ? P.sn_S : 1.0 - P.sn_S) : (s ? 1.0 - P.sp_S : P.sp_S);
        const double pyo = ytrue ? (y ? P.sn_Y : 1.0 - P.sn_Y) : (y ? 1.0 - P.sp_Y : P.sp_Y);
        total += pu * pa * pk * py * ps * pyo;
      }
    }
  }
  return total;
}

/// Sum of n * log(cell probability) over every cell with a positive count.
inline double log_likelihood(const strata::PopulationParams& P, const strata::CellCounts& c) {
  const auto& s = c.shape;
  double ll = 0.0;
  for (int x = 0; x < s.n_x; ++x)
    for (int z = 0; z < s.n_z; ++z)
      for (int r = 0; r < s.n_r; ++r)
        for (int sv = 0; sv < 2; ++sv)
          for (int y = 0; y < 2; ++y)
            for (int k = 0; k < s.n_a; ++k) {
              const double n = c.n[c.index(x, z, r, sv, y, k)];
              if (n > 0.0) ll += n * std::log(cell_probability(P, x, z, r, sv, y, k));
            }
  return ll;
}

/// Log density of lo + (hi - lo) * Beta(a, b).
inline double shifted_beta_logpdf(double v, double lo, double hi, double a, double b) {
  if (!(v > lo && v < hi)) return -INFINITY;
  const double w = (v - lo) / (hi - lo);
  return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * std::log(w) + (b - 1.0) * std::log1p(-w) -
         std::log(hi - lo);
}

inline double normal_logpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * M_PI);
}

/// Effective sample size with autocovariances summed directly (no FFT),
/// Geyer's initial positive sequence and its monotone correction.
inline double ess_direct(const std::vector<Vector>& chains) {
  const std::size_t M = chains.size();
  const Eigen::Index N = chains[0].size();
  std::vector<double> means(M), vars(M);
  std::vector<std::vector<double>> acov(M, std::vector<double>(static_cast<std::size_t>(N)));
  for (std::size_t m = 0; m < M; ++m) {
    const Vector& c = chains[m];
    means[m] = c.mean();
    for (Eigen::Index t = 0; t < N; ++t) {
      double s = 0.0;
      for (Eigen::Index i = 0; i + t < N; ++i) s += (c(i) - means[m]) * (c(i + t) - means[m]);
      acov[m][static_cast<std::size_t>(t)] = s / static_cast<double>(N);
    }
    vars[m] = acov[m][0] * N / (N - 1.0);
  }
  const double W = std::accumulate(vars.begin(), vars.end(), 0.0) / static_cast<double>(M);
  double grand = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(M);
  double B_over_n = 0.0;
  for (double mu : means) B_over_n += (mu - grand) * (mu - grand);
  B_over_n = M > 1 ? B_over_n / static_cast<double>(M - 1) : 0.0;
  const double var_plus = W * (N - 1.0) / N + B_over_n;
  auto rho = [&](Eigen::Index t) {
    double s = 0.0;
    for (std::size_t m = 0; m < M; ++m) s += acov[m][static_cast<std::size_t>(t)];
    return 1.0 - (W - s / static_cast<double>(M)) / var_plus;
  };
  std::vector<double> r(static_cast<std::size_t>(N) + 2, 0.0);
  r[0] = 1.0;
  double even = 1.0, odd = rho(1);
  r[1] = odd;
  Eigen::Index s = 1;
  while (s < N - 4 && even + odd > 0.0) {
    even = rho(s + 1);
    odd = rho(s + 2);
    if (even + odd >= 0.0) {
      r[static_cast<std::size_t>(s + 1)] = even;
      r[static_cast<std::size_t>(s + 2)] = odd;
    }
    s += 2;
  }
  const auto last = static_cast<std::size_t>(s);
  if (even > 0.0) r[last + 1] = even;
  for (std::size_t t = 1; t + 3 <= last; t += 2)
    if (r[t + 1] + r[t + 2] > r[t - 1] + r[t]) r[t + 1] = r[t + 2] = 0.5 * (r[t - 1] + r[t]);
  double tau = -1.0 + r[last + 1];
  for (std::size_t t = 0; t <= last; ++t) tau += 2.0 * r[t];
  const double total = static_cast<double>(M) * static_cast<double>(N);
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

}  // namespace oracle
