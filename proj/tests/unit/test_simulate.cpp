#include "doctest.h"
#include "oracles.hpp"

#include "strata_id/rng.hpp"
#include "strata_id/simulate.hpp"

#include <cmath>
#include <stdexcept>

using namespace strata;

TEST_CASE("softmax and its inverse") {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const int L = 2 + static_cast<int>(rng.uniform_int(8));
    const auto th = rng.dirichlet(std::vector<double>(static_cast<std::size_t>(L), 0.7));
    Vector v = Eigen::Map<const Vector>(th.data(), L);
    v = v.cwiseMax(1e-12);
    v /= v.sum();
    Vector logits = Vector::Zero(L);
    logits.head(L - 1) = softmax_inverse(v);
    const Vector back = softmax(logits);
    CHECK((back - v).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(softmax_inverse(v).size() == L - 1);
  }
  Vector big(3);
  big << 800.0, 799.0, 0.0;
  const Vector s = softmax(big);
  CHECK(std::isfinite(s.sum()));
  CHECK(s.sum() == doctest::Approx(1.0));
  CHECK(inv_logit(logit(0.3)) == doctest::Approx(0.3).epsilon(1e-15));
}

TEST_CASE("default covariate error kernels") {
  const Matrix K7 = default_a_kernel(7);
  CHECK(K7(3, 3) == 0.5);
  CHECK(K7(3, 2) == 0.25);
  CHECK(K7(3, 4) == 0.25);
  const Matrix K3 = default_a_kernel(3);
  for (const Matrix* K : {&K7, &K3})
    for (int r = 0; r < K->rows(); ++r) CHECK(K->row(r).sum() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(default_a_kernel(4), std::invalid_argument);
}

TEST_CASE("scenario infection incidence matches the Dirichlet mean") {
  // infection under the second arm covers strata (0,1) and (1,1): Beta(0.5 + 3.5, 96) mean 0.04
  double sum = 0.0, sum2 = 0.0;
  int m = 0;
  for (std::uint64_t seed = 1; seed <= 2000; ++seed) {
    const auto g = gen_params(scenario_config(Scenario::TwoArmSevere, 100, seed));
    for (int r = 0; r < 4; ++r) {
      const double v = g.population.theta[0](2, r) + g.population.theta[0](3, r);
      sum += v;
      sum2 += v * v;
      ++m;
    }
  }
  const double mean = sum / m;
  const double se = std::sqrt((sum2 / m - mean * mean) / m);
  CHECK(std::abs(mean - 0.04) < 4.0 * se);
}

TEST_CASE("three-arm scenario draws eight strata at eight sites") {
  const auto cfg = scenario_config(Scenario::ThreeArmSevere, 100, 5);
  CHECK(cfg.shape == TrialShape{3, 8, 7, 3});
  CHECK(cfg.dirichlet_strata.size() == 8);
  CHECK(cfg.dirichlet_strata.front() == 91.0);
  CHECK(cfg.dirichlet_strata.back() == 3.5);
  const auto g = gen_params(cfg);
  CHECK(g.population.theta[0].rows() == 8);
  CHECK(g.population.theta[0].cols() == 8);
  CHECK_NOTHROW(g.population.validate());
}

TEST_CASE("effect tables use the stated logits") {
  const auto g = gen_params(scenario_config(Scenario::TwoArmSevere, 100, 5));
  const auto& e = g.regression.effects;
  CHECK(e.alpha[3][0] == doctest::Approx(std::log(0.3 / 0.7)).epsilon(1e-14));
  CHECK(e.alpha[3][1] == doctest::Approx(std::log(0.3 / 0.7) + std::log(0.4)).epsilon(1e-14));
  CHECK(std::isnan(e.alpha[1][1]));
  for (int x = 0; x < 3; ++x) CHECK(e.omega(x, 0) == doctest::Approx(x * std::log(1.1)).epsilon(1e-14));
}

TEST_CASE("regression parameters reproduce the population tables") {
  const auto g = gen_params(scenario_config(Scenario::TwoArmSevere, 100, 8));
  const auto& reg = g.regression;
  for (int x = 0; x < 3; ++x)
    for (int r = 0; r < 4; ++r) {
      Vector lin(4);
      for (int u = 0; u < 4; ++u) lin(u) = reg.mu(r, u) + reg.eta(x, u);
      Vector e = lin.array().exp();
      e /= e.sum();
      CHECK((e - g.population.theta[x].col(r)).cwiseAbs().maxCoeff() < 1e-13);
    }
}

TEST_CASE("simulation is deterministic and independent of thread count") {
  auto cfg = scenario_config(Scenario::TwoArmSevere, 5000, 77, true);
  const auto P = gen_params(cfg).population;
  const auto a = simulate_dataset(P, cfg);
  cfg.threads = 4;
  const auto b = simulate_dataset(P, cfg);
  REQUIRE(a.records.size() == b.records.size());
  bool same = true;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto& x = a.records[i];
    const auto& y = b.records[i];
    same = same && x.z == y.z && x.r == y.r && x.x == y.x && x.a_true == y.a_true && x.a_obs == y.a_obs &&
           x.stratum == y.stratum && x.s_obs == y.s_obs && x.y_obs == y.y_obs && x.y_true == y.y_true;
  }
  CHECK(same);
  cfg.seed = 78;
  const auto c = simulate_dataset(P, cfg);
  int differ = 0;
  for (std::size_t i = 0; i < a.records.size(); ++i) differ += a.records[i].z != c.records[i].z;
  CHECK(differ > 0);
}

TEST_CASE("simulated records are internally consistent") {
  const auto cfg = scenario_config(Scenario::TwoArmSevere, 20000, 3);
  const auto P = gen_params(cfg).population;
  const auto d = simulate_dataset(P, cfg);
  for (const auto& r : d.records) {
    const bool inf = ((r.stratum >> r.z) & 1) != 0;
    CHECK(r.s_true == (inf ? 1 : 0));
    if (!inf) CHECK(r.y_true == 0);
    CHECK(r.a_obs == r.a_true);  // no covariate error requested
  }
  const CellCounts c = count_cells(d);
  CHECK(c.total() == doctest::Approx(20000.0));
}

TEST_CASE("household mapping ties the outcome test to the infection test") {
  const auto cfg = scenario_config(Scenario::TwoArmTransmission, 1000, 1);
  const auto h = household_mapping(cfg);
  CHECK(h.households);
  CHECK(h.misclass.sn_Y == cfg.misclass.sn_S);
  CHECK(h.misclass.sp_Y == cfg.misclass.sp_S);
  CHECK_THROWS_AS(household_mapping(scenario_config(Scenario::TwoArmSevere, 1000, 1)), std::invalid_argument);
}

TEST_CASE("scenario names round trip") {
  for (auto s : {Scenario::TwoArmSevere, Scenario::ThreeArmSevere, Scenario::TwoArmTransmission, Scenario::TwoArmNull,
                 Scenario::ThreeArmNull, Scenario::TwoArmTransmissionNull, Scenario::Custom})
    CHECK(parse_scenario(to_string(s)) == s);
  CHECK_THROWS(parse_scenario("four_arm"));
}

TEST_CASE("rng streams") {
  Rng a(42, {1, 2}), b(42, {1, 2}), c(42, {2, 1});
  bool same = true, differ = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a(), y = b(), z = c();
    same = same && x == y;
    differ = differ || x != z;
  }
  CHECK(same);
  CHECK(differ);
  // moments of a few samplers
  Rng r(9);
  double s1 = 0.0, s2 = 0.0, g = 0.0, bt = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s1 += z;
    s2 += z * z;
    g += r.gamma(2.5);
    bt += r.beta(2.0, 6.0);
  }
  CHECK(std::abs(s1 / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
  CHECK(std::abs(g / n - 2.5) < 0.02);
  CHECK(std::abs(bt / n - 0.25) < 0.005);
  AliasTable t(std::vector<double>{1.0, 3.0});
  int ones = 0;
  for (int i = 0; i < n; ++i) ones += t.sample(r);
  CHECK(std::abs(static_cast<double>(ones) / n - 0.75) < 0.005);
}
