#include <cmath>
#include <limits>
#include <sstream>

#include "strata_id/population.hpp"

namespace strata {

namespace {

bool bit(std::size_t u, int j) { return (u >> j) & 1u; }

Vector uniform(Eigen::Index n) { return Vector::Constant(n, 1.0 / static_cast<double>(n)); }

double ratio_effect(double num, double den, const char* what) {
  if (den == 0.0 || !std::isfinite(den)) {
    std::ostringstream os;
    os << what << " is undefined: zero denominator";
    throw UndefinedEstimand(os.str());
  }
  return 1.0 - num / den;
}

}  // namespace

double EstimandBasis::infection_risk(int j) const {
  double risk = 0.0;
  const auto R = shape.strata();
  for (int x = 0; x < shape.n_x; ++x)
    for (int r = 0; r < shape.n_r; ++r) {
      const double w = x_weights(x) * site_weights(r);
      for (std::size_t u = 0; u < R; ++u)
        if (bit(u, j)) risk += w * theta[static_cast<std::size_t>(x)](static_cast<Eigen::Index>(u), r);
    }
  return risk;
}

double EstimandBasis::stratum_share(std::size_t u) const {
  double s = 0.0;
  for (int x = 0; x < shape.n_x; ++x)
    for (int r = 0; r < shape.n_r; ++r)
      s += x_weights(x) * site_weights(r) * theta[static_cast<std::size_t>(x)](static_cast<Eigen::Index>(u), r);
  return s;
}

double EstimandBasis::mean_outcome(std::size_t u, int j, int level) const {
  if (!bit(u, j)) throw std::invalid_argument("outcome mean undefined: stratum not infected under arm");
  const auto uu = static_cast<Eigen::Index>(u);
  double num = 0.0, den = 0.0;
  for (int x = 0; x < shape.n_x; ++x) {
    double wx = 0.0;
    for (int r = 0; r < shape.n_r; ++r) wx += site_weights(r) * theta[static_cast<std::size_t>(x)](uu, r);
    wx *= x_weights(x);
    const Matrix& a_x = a[static_cast<std::size_t>(x)];
    const Matrix& o = outcome[static_cast<std::size_t>(x)][static_cast<std::size_t>(j)];
    if (level >= 0) {
      num += wx * a_x(level, uu) * o(level, uu);
      den += wx * a_x(level, uu);
    } else {
      double m = 0.0;
      for (int k = 0; k < shape.n_a; ++k) m += a_x(k, uu) * o(k, uu);
      num += wx * m;
      den += wx;
    }
  }
  if (den <= 0.0) throw UndefinedEstimand("outcome mean undefined: stratum has zero mass");
  return num / den;
}

double EstimandBasis::evaluate(const EstimandSpec& spec) const {
  spec.validate(shape.n_z);
  const std::size_t u = spec.stratum.index();
  const int level = spec.covariate_level ? *spec.covariate_level : -1;
  switch (spec.kind) {
    case EstimandKind::VeS:
      return ratio_effect(infection_risk(spec.arm_j), infection_risk(spec.arm_k), "VE_S");
    case EstimandKind::VeIMarginal:
      return ratio_effect(mean_outcome(u, spec.arm_j), mean_outcome(u, spec.arm_k), "VE_I");
    case EstimandKind::VeIConditional:
      return ratio_effect(mean_outcome(u, spec.arm_j, level), mean_outcome(u, spec.arm_k, level), "VE_I");
    case EstimandKind::Composite: {
      const auto& c = *spec.composite_arms;
      const double ref = mean_outcome(u, c.ref, level);
      if (ref == 0.0) throw UndefinedEstimand("composite estimand undefined: zero reference mean");
      return (mean_outcome(u, c.j, level) - mean_outcome(u, c.k, level)) / ref;
    }
    case EstimandKind::VeTransmission:
      if (outcome_scaled)
        throw UndefinedEstimand("VE_T is a risk difference and needs sn_Y; outcome is only known up to r_Y");
      return mean_outcome(u, spec.arm_k, level) - mean_outcome(u, spec.arm_j, level);
  }
  throw std::logic_error("unhandled estimand kind");
}

EstimandBasis basis_from_params(const PopulationParams& P) {
  EstimandBasis b;
  b.shape = P.shape;
  b.theta = P.theta;
  b.a = P.a;
  b.outcome = P.beta;
  b.x_weights = P.x_dist.size() ? P.x_dist : uniform(P.shape.n_x);
  b.site_weights = P.site_dist.size() ? P.site_dist : uniform(P.shape.n_r);
  b.outcome_scaled = false;
  return b;
}

VeTable ve_estimands(const EstimandBasis& b) {
  VeTable t;
  const int nz = b.shape.n_z;
  t.ve_S = Matrix::Zero(nz, nz);
  for (int j = 0; j < nz; ++j)
    for (int k = 0; k < nz; ++k) {
      if (j == k) continue;
      try {
        t.ve_S(j, k) = ratio_effect(b.infection_risk(j), b.infection_risk(k), "VE_S");
      } catch (const UndefinedEstimand&) {
        t.ve_S(j, k) = std::numeric_limits<double>::quiet_NaN();
      }
    }
  const auto R = b.shape.strata();
  for (std::size_t u = 0; u < R; ++u) {
    const StratumVector sv = stratum_from_index(u, nz);
    for (int j = 0; j < nz; ++j)
      for (int k = 0; k < nz; ++k) {
        if (j == k || !bit(u, j) || !bit(u, k)) continue;
        EstimandSpec s;
        s.kind = EstimandKind::VeIMarginal;
        s.stratum = sv;
        s.arm_j = j;
        s.arm_k = k;
        double v;
        try {
          v = b.evaluate(s);
        } catch (const UndefinedEstimand&) {
          v = std::numeric_limits<double>::quiet_NaN();
        }
        t.ve_I.push_back({s, v});
        for (int lvl = 0; lvl < b.shape.n_a; ++lvl) {
          EstimandSpec c = s;
          c.kind = EstimandKind::VeIConditional;
          c.covariate_level = lvl;
          double cv;
          try {
            cv = b.evaluate(c);
          } catch (const UndefinedEstimand&) {
            cv = std::numeric_limits<double>::quiet_NaN();
          }
          t.ve_I_cond.push_back({c, cv});
        }
      }
  }
  return t;
}

VeTable ve_estimands(const PopulationParams& params) {
  params.validate();
  return ve_estimands(basis_from_params(params));
}

}  // namespace strata
