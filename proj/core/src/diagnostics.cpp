#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <boost/math/distributions/normal.hpp>
#include <unsupported/Eigen/FFT>

#include "strata_id/inference.hpp"

namespace strata {

namespace {

void check_chains(const std::vector<Vector>& chains) {
  if (chains.empty()) throw std::invalid_argument("diagnostics: no chains");
  const auto n = chains.front().size();
  if (n < 4) throw std::invalid_argument("diagnostics: need at least 4 draws per chain");
  for (const auto& c : chains)
    if (c.size() != n) throw std::invalid_argument("diagnostics: chains differ in length");
}

std::vector<Vector> split(const std::vector<Vector>& chains) {
  std::vector<Vector> out;
  for (const auto& c : chains) {
    const auto half = c.size() / 2;
    out.push_back(c.head(half));
    out.push_back(c.tail(half));
  }
  return out;
}

// Biased autocovariance of one chain via FFT.
Vector autocovariance(const Vector& x) {
  const auto n = x.size();
  std::size_t nfft = 1;
  while (nfft < 2 * static_cast<std::size_t>(n)) nfft <<= 1;
  const double mean = x.mean();
  std::vector<std::complex<double>> buf(nfft, 0.0), freq;
  for (Eigen::Index i = 0; i < n; ++i) buf[static_cast<std::size_t>(i)] = x(i) - mean;
  Eigen::FFT<double> fft;
  fft.fwd(freq, buf);
  for (auto& c : freq) c = std::norm(c);
  fft.inv(buf, freq);
  Vector ac(n);
  for (Eigen::Index i = 0; i < n; ++i) ac(i) = buf[static_cast<std::size_t>(i)].real() / static_cast<double>(n);
  return ac;
}

double rhat_basic(const std::vector<Vector>& chains) {
  const double M = static_cast<double>(chains.size());
  const double N = static_cast<double>(chains.front().size());
  Vector means(chains.size()), vars(chains.size());
  for (std::size_t m = 0; m < chains.size(); ++m) {
    means(static_cast<Eigen::Index>(m)) = chains[m].mean();
    vars(static_cast<Eigen::Index>(m)) = (chains[m].array() - chains[m].mean()).square().sum() / (N - 1.0);
  }
  const double W = vars.mean();
  const double B = M > 1 ? N * (means.array() - means.mean()).square().sum() / (M - 1.0) : 0.0;
  if (W <= 0.0) return B <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double var_plus = (N - 1.0) / N * W + B / N;
  return std::sqrt(var_plus / W);
}

std::vector<Vector> rank_normalize(const std::vector<Vector>& chains) {
  std::vector<double> all;
  for (const auto& c : chains) all.insert(all.end(), c.data(), c.data() + c.size());
  const std::size_t S = all.size();
  std::vector<std::size_t> order(S);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return all[a] < all[b]; });
  std::vector<double> rank(S);
  for (std::size_t i = 0; i < S;) {
    std::size_t j = i;
    while (j + 1 < S && all[order[j + 1]] == all[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  const boost::math::normal nd;
  std::vector<Vector> out;
  std::size_t p = 0;
  for (const auto& c : chains) {
    Vector z(c.size());
    for (Eigen::Index i = 0; i < c.size(); ++i, ++p)
      z(i) = boost::math::quantile(nd, (rank[p] - 0.375) / (static_cast<double>(S) + 0.25));
    out.push_back(std::move(z));
  }
  return out;
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<double> pooled(const std::vector<Vector>& chains) {
  std::vector<double> all;
  for (const auto& c : chains) all.insert(all.end(), c.data(), c.data() + c.size());
  return all;
}

}  // namespace

double ess_basic(const std::vector<Vector>& chains) {
  check_chains(chains);
  const auto M = chains.size();
  const auto N = chains.front().size();
  const double num_total = static_cast<double>(M) * static_cast<double>(N);
  std::vector<Vector> acov;
  Vector means(static_cast<Eigen::Index>(M));
  for (std::size_t m = 0; m < M; ++m) {
    acov.push_back(autocovariance(chains[m]));
    means(static_cast<Eigen::Index>(m)) = chains[m].mean();
  }
  const double Nd = static_cast<double>(N);
  double mean_var = 0.0;
  for (const auto& a : acov) mean_var += a(0) * Nd / (Nd - 1.0);
  mean_var /= static_cast<double>(M);
  double var_plus = mean_var * (Nd - 1.0) / Nd;
  if (M > 1) var_plus += (means.array() - means.mean()).square().sum() / static_cast<double>(M - 1);
  if (!(var_plus > 0.0)) return num_total;

  auto mean_acov = [&](Eigen::Index t) {
    double s = 0.0;
    for (const auto& a : acov) s += a(t);
    return s / static_cast<double>(M);
  };
  Vector rho = Vector::Zero(N);
  rho(0) = 1.0;
  double even = 1.0, odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
  rho(1) = odd;
  Eigen::Index s = 1;
  while (s < N - 4 && even + odd > 0.0) {
    even = 1.0 - (mean_var - mean_acov(s + 1)) / var_plus;
    odd = 1.0 - (mean_var - mean_acov(s + 2)) / var_plus;
    if (even + odd >= 0.0) {
      rho(s + 1) = even;
      rho(s + 2) = odd;
    }
    s += 2;
  }
  const Eigen::Index max_s = s;
  if (even > 0.0) rho(max_s + 1) = even;
  // Initial monotone sequence.
  for (Eigen::Index t = 1; t <= max_s - 3; t += 2) {
    if (rho(t + 1) + rho(t + 2) > rho(t - 1) + rho(t)) {
      rho(t + 1) = 0.5 * (rho(t - 1) + rho(t));
      rho(t + 2) = rho(t + 1);
    }
  }
  double tau = -1.0 + 2.0 * rho.head(max_s + 1).sum() + rho(max_s + 1);
  tau = std::max(tau, 1.0 / std::log10(num_total));
  return num_total / tau;
}

double split_rhat(const std::vector<Vector>& chains) {
  check_chains(chains);
  const auto sp = split(chains);
  const double bulk = rhat_basic(rank_normalize(sp));
  const double med = quantile(pooled(chains), 0.5);
  std::vector<Vector> folded;
  for (const auto& c : sp) folded.push_back((c.array() - med).abs().matrix());
  const double tail = rhat_basic(rank_normalize(folded));
  return std::max(bulk, tail);
}

double ess_bulk(const std::vector<Vector>& chains) {
  check_chains(chains);
  return ess_basic(rank_normalize(split(chains)));
}

double ess_tail(const std::vector<Vector>& chains) {
  check_chains(chains);
  const auto sp = split(chains);
  const auto all = pooled(chains);
  double out = std::numeric_limits<double>::infinity();
  for (double q : {0.05, 0.95}) {
    const double cut = quantile(all, q);
    std::vector<Vector> ind;
    for (const auto& c : sp) ind.push_back((c.array() <= cut).cast<double>().matrix());
    out = std::min(out, ess_basic(ind));
  }
  return out;
}

Diagnostics compute_diagnostics(const Matrix& draws, int chains) {
  if (chains < 1 || draws.rows() % chains != 0) throw std::invalid_argument("diagnostics: rows must split evenly into chains");
  const Eigen::Index n = draws.rows() / chains;
  Diagnostics d;
  d.rhat.resize(draws.cols());
  d.ess_bulk.resize(draws.cols());
  d.ess_tail.resize(draws.cols());
  for (Eigen::Index p = 0; p < draws.cols(); ++p) {
    std::vector<Vector> ch;
    for (int c = 0; c < chains; ++c) ch.push_back(draws.col(p).segment(c * n, n));
    d.rhat(p) = split_rhat(ch);
    d.ess_bulk(p) = ess_bulk(ch);
    d.ess_tail(p) = ess_tail(ch);
  }
  return d;
}

double Diagnostics::max_rhat() const { return rhat.size() ? rhat.maxCoeff() : 1.0; }
double Diagnostics::min_ess_bulk() const { return ess_bulk.size() ? ess_bulk.minCoeff() : 0.0; }
double Diagnostics::min_ess_tail() const { return ess_tail.size() ? ess_tail.minCoeff() : 0.0; }

}  // namespace strata
