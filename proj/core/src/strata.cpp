#include "strata_id/strata.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <stdexcept>

namespace strata {

std::size_t num_strata(int n_z) {
  if (n_z < 1 || n_z > 62) throw std::out_of_range("number of treatments out of range");
  return std::size_t{1} << n_z;
}

StratumVector::StratumVector(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  if (bits_.empty() || bits_.size() > 62) throw std::invalid_argument("stratum length out of range");
  for (auto b : bits_)
    if (b > 1) throw std::invalid_argument("stratum bits must be 0 or 1");
  index_ = stratum_index(bits_);
}

StratumVector StratumVector::from_index(std::size_t index, int n_z) {
  return stratum_from_index(index, n_z);
}

int StratumVector::infected_count() const {
  return static_cast<int>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::string StratumVector::to_string() const {
  std::string out = "(";
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (i) out += ',';
    out += static_cast<char>('0' + bits_[i]);
  }
  out += ')';
  return out;
}

StratumVector stratum_from_index(std::size_t j, int m) {
  if (m < 1 || m > 62) throw std::out_of_range("stratum length out of range");
  if (j >= (std::size_t{1} << m)) throw std::out_of_range("stratum index out of range");
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) bits[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>((j >> i) & 1u);
  return StratumVector(std::move(bits));
}

std::size_t stratum_index(std::span<const std::uint8_t> bits) {
  std::size_t idx = 0;
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) idx |= std::size_t{1} << i;
  return idx;
}

StratumVector parse_stratum(const std::string& text) {
  std::vector<std::uint8_t> bits;
  for (char c : text) {
    if (c == '0' || c == '1')
      bits.push_back(static_cast<std::uint8_t>(c - '0'));
    else if (c == '(' || c == ')' || c == ',' || std::isspace(static_cast<unsigned char>(c)))
      continue;
    else
      throw std::invalid_argument("bad stratum literal: " + text);
  }
  return StratumVector(std::move(bits));
}

std::vector<StratumVector> comparable_strata(int n_z, std::span<const int> arms) {
  if (arms.empty()) throw std::invalid_argument("comparable_strata: empty arm set");
  std::size_t mask = 0;
  for (int a : arms) {
    if (a < 0 || a >= n_z) throw std::invalid_argument("comparable_strata: arm out of range");
    mask |= std::size_t{1} << a;
  }
  std::vector<StratumVector> out;
  for (std::size_t j = 0; j < num_strata(n_z); ++j)
    if ((j & mask) == mask) out.push_back(stratum_from_index(j, n_z));
  return out;
}

void TrialShape::validate() const {
  if (n_z < 2 || n_z > kMaxTreatments) throw std::invalid_argument("n_z must be in [2, 16]");
  if (n_r < 1 || n_a < 1 || n_x < 1) throw std::invalid_argument("n_r, n_a, n_x must be >= 1");
}

ParameterCounts count_params_and_dof(const TrialShape& shape) {
  shape.validate();
  const long R = static_cast<long>(shape.strata());
  ParameterCounts c;
  c.infection_covariate = shape.n_r * (R - 1) + R * (shape.n_a - 1);
  c.outcome = shape.n_a * (R - 1);
  c.dof = static_cast<long>(shape.n_r) * shape.n_z * (2L * shape.n_a - 1);
  return c;
}

namespace {
long binomial(int n, int k) {
  long r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}
}  // namespace

BasicModelCounts count_basic_model(int n_z) {
  if (n_z < 2 || n_z > kMaxTreatments) throw std::invalid_argument("n_z must be in [2, 16]");
  BasicModelCounts c;
  c.params = static_cast<long>(num_strata(n_z)) - 1;
  for (int j = 1; j <= n_z; ++j) c.params += binomial(n_z, j) * ((1L << j) - 1);
  c.dof = 2L * n_z;
  return c;
}

std::string to_string(EstimandKind kind) {
  switch (kind) {
    case EstimandKind::VeS: return "ve_s";
    case EstimandKind::VeIConditional: return "ve_i_conditional";
    case EstimandKind::VeIMarginal: return "ve_i";
    case EstimandKind::Composite: return "composite";
    case EstimandKind::VeTransmission: return "ve_t";
  }
  return "unknown";
}

EstimandKind parse_estimand_kind(const std::string& text) {
  if (text == "ve_s") return EstimandKind::VeS;
  if (text == "ve_i_conditional") return EstimandKind::VeIConditional;
  if (text == "ve_i" || text == "ve_i_marginal") return EstimandKind::VeIMarginal;
  if (text == "composite") return EstimandKind::Composite;
  if (text == "ve_t") return EstimandKind::VeTransmission;
  throw std::invalid_argument("unknown estimand kind: " + text);
}

void EstimandSpec::validate(int n_z) const {
  auto arm_ok = [n_z](int a) { return a >= 0 && a < n_z; };
  if (!arm_ok(arm_j) || !arm_ok(arm_k)) throw std::invalid_argument("estimand arm out of range");
  if (kind == EstimandKind::VeS) return;
  if (stratum.size() != n_z) throw std::invalid_argument("estimand stratum has wrong length");
  if (kind == EstimandKind::Composite) {
    if (!composite_arms) throw std::invalid_argument("composite estimand needs (j, k, ref)");
    for (int a : {composite_arms->j, composite_arms->k, composite_arms->ref}) {
      if (!arm_ok(a)) throw std::invalid_argument("composite arm out of range");
      if (!stratum.infected_under(a))
        throw std::invalid_argument("composite estimand undefined on stratum " + stratum.to_string());
    }
    return;
  }
  if (!stratum.infected_under(arm_j) || !stratum.infected_under(arm_k))
    throw std::invalid_argument("principal effect undefined on stratum " + stratum.to_string());
  if (kind == EstimandKind::VeIConditional && !covariate_level)
    throw std::invalid_argument("conditional estimand needs a covariate level");
}

std::string EstimandSpec::label() const {
  std::ostringstream os;
  os << to_string(kind);
  if (kind != EstimandKind::VeS) os << '[' << stratum.to_string() << ']';
  if (kind == EstimandKind::Composite && composite_arms)
    os << '(' << composite_arms->j + 1 << ',' << composite_arms->k + 1 << ';' << composite_arms->ref + 1 << ')';
  else
    os << '(' << arm_j + 1 << ',' << arm_k + 1 << ')';
  if (covariate_level) os << "@a" << *covariate_level + 1;
  return os.str();
}

}  // namespace strata
