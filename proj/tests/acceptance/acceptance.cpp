// Acceptance runner: prints one PASS/FAIL line per criterion.
//
//   strata_acceptance [--only 1,2] [--skip 7] [--cli path/to/strata-id] [--jobs N]

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "commands.hpp"
#include "formats.hpp"
#include "oracles.hpp"
#include "strata_id/identifiability.hpp"
#include "strata_id/inference.hpp"
#include "strata_id/linalg.hpp"
#include "strata_id/population.hpp"
#include "strata_id/rng.hpp"
#include "strata_id/simulate.hpp"

using namespace strata;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

bool infected(int u, int j) { return ((u >> j) & 1) != 0; }

Matrix direct_Stilde(int n_z, double sn, double sp) {
  const int R = 1 << n_z;
  Matrix M(2 * n_z, R);
  for (int u = 0; u < R; ++u) {
    const auto d = oracle::digits_by_division(static_cast<std::size_t>(u), n_z);
    for (int z = 0; z < n_z; ++z) {
      const bool inf = d[static_cast<std::size_t>(z)] == 1;
      M(z, u) = inf ? sn : 1.0 - sp;
      M(n_z + z, u) = inf ? 1.0 - sn : sp;
    }
  }
  return M;
}

// E[Y(z_j) | u] and infection risks by enumerating the joint over (x, r, u, A)
double mixture_mean(const PopulationParams& P, int u, int j) {
  double joint = 0.0, mass = 0.0;
  for (int x = 0; x < P.shape.n_x; ++x)
    for (int r = 0; r < P.shape.n_r; ++r) {
      const double w = P.x_dist(x) * P.site_dist(r) * P.theta[x](u, r);
      mass += w;
      for (int a = 0; a < P.shape.n_a; ++a) joint += w * P.a[x](a, u) * P.beta[x][j](a, u);
    }
  return joint / mass;
}

double mixture_risk(const PopulationParams& P, int j) {
  double risk = 0.0;
  for (int x = 0; x < P.shape.n_x; ++x)
    for (int r = 0; r < P.shape.n_r; ++r)
      for (int u = 0; u < (1 << P.shape.n_z); ++u)
        if (infected(u, j)) risk += P.x_dist(x) * P.site_dist(r) * P.theta[x](u, r);
  return risk;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::ostringstream os;
  for (int n_z = 2; n_z <= 4; ++n_z) {
    const Matrix S = build_S_matrix(n_z);
    const int k = kruskal_rank(S), r = numerical_rank(S);
    ok = ok && k == 3 && r == n_z + 1;
    os << "n_z=" << n_z << " krank=" << k << " rank=" << r << "; ";
  }
  const double secs = seconds_since(t0);
  // cross-check against exhaustive subsets and LU rank (not timed)
  for (int n_z = 2; n_z <= 4; ++n_z) {
    const Matrix S = direct_Stilde(n_z, 1.0, 1.0);
    ok = ok && oracle::subset_kruskal_rank(S) == 3 && oracle::lu_rank(S) == n_z + 1;
  }
  ok = ok && secs < 1.0;
  os << "time " << fmt(secs) << " s";
  return {ok, os.str()};
}

Outcome criterion2() {
  const auto t0 = Clock::now();
  Rng rng(20260102);
  int bad_rank = 0, bad_minor = 0, pairs = 0;
  double worst = 0.0;
  while (pairs < 200) {
    const double sn = rng.uniform(), sp = rng.uniform();
    if (std::abs(1.0 - sn - sp) < 0.01) continue;
    ++pairs;
    for (int n_z = 2; n_z <= 3; ++n_z) {
      const Matrix M = build_Stilde_matrix(n_z, sn, sp);
      if (kruskal_rank(M) != 3 || numerical_rank(M) != n_z + 1) ++bad_rank;
    }
    const Matrix M = build_Stilde_matrix(2, sn, sp);
    const double expect = (1.0 - sn - sp) * (1.0 - sn - sp);
    for (int drop_col = 0; drop_col < 4; ++drop_col)
      for (int drop_row = 0; drop_row < 4; ++drop_row) {
        Matrix sub(3, 3);
        int rr = 0;
        for (int r = 0; r < 4; ++r) {
          if (r == drop_row) continue;
          int cc = 0;
          for (int c = 0; c < 4; ++c)
            if (c != drop_col) sub(rr, cc++) = M(r, c);
          ++rr;
        }
        // minors are +/-(1-sn-sp)^2 depending on which column is dropped
        const double gap = std::abs(std::abs(sub.determinant()) - expect);
        worst = std::max(worst, gap);
        if (gap > 1e-12) ++bad_minor;
      }
  }
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << pairs << " (sn,sp) pairs, rank failures " << bad_rank << ", minor failures " << bad_minor
     << ", worst |minor| gap " << fmt(worst) << ", time " << fmt(secs) << " s";
  return {bad_rank == 0 && bad_minor == 0 && secs < 10.0, os.str()};
}

Outcome criterion3() {
  const auto t0 = Clock::now();
  int lib_matches = 0, oracle_matches = 0, checked = 0;
  std::vector<int> perm{0, 1, 2, 3};
  std::vector<std::vector<int>> perms;
  do {
    if (perm != std::vector<int>{0, 1, 2, 3}) perms.push_back(perm);
  } while (std::next_permutation(perm.begin(), perm.end()));
  for (int i = 1; i <= 21; ++i)
    for (int j = 1; j <= 21; ++j) {
      const double sn = 0.5 + 0.5 * i / 21.0, sp = 0.5 + 0.5 * j / 21.0;
      const Matrix M = build_Stilde_matrix(2, sn, sp);
      for (const auto& p : perms) {
        Matrix Mp(4, 4);
        for (int c = 0; c < 4; ++c) Mp.col(c) = M.col(p[static_cast<std::size_t>(c)]);
        ++checked;
        if (match_in_family(Mp, 2, 1e-9)) ++lib_matches;
        // independent read-off: sn from the all-infected column, sp from the none-infected column
        const double sn2 = Mp(0, 3), sp2 = 1.0 - Mp(0, 0);
        if (sn2 > 0.5 && sn2 <= 1.0 && sp2 > 0.5 && sp2 <= 1.0 &&
            (Mp - direct_Stilde(2, sn2, sp2)).cwiseAbs().maxCoeff() <= 1e-9)
          ++oracle_matches;
      }
    }
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << checked << " permuted matrices (441 grid points x " << perms.size() << " permutations), matches: library "
     << lib_matches << ", oracle " << oracle_matches << ", time " << fmt(secs) << " s";
  return {lib_matches == 0 && oracle_matches == 0 && secs < 30.0, os.str()};
}

struct RoundTrip {
  double err = 0.0;
  int restarts = 0;
  std::string failure;
};

RoundTrip identify_round_trip(const PopulationParams& P) {
  RoundTrip out;
  IdentifyOptions o;
  o.x_weights = P.x_dist;
  o.site_weights = P.site_dist;
  o.cp.max_restarts = 20;
  try {
    const auto id = identify_from_population(forward_probabilities(P), o);
    out.restarts = id.cp_restarts;
    double e = 0.0;
    for (int x = 0; x < P.shape.n_x; ++x) {
      e = std::max(e, (id.theta_hat[x] - P.theta[x]).cwiseAbs().maxCoeff());
      e = std::max(e, (id.a_hat[x] - P.a[x]).cwiseAbs().maxCoeff());
    }
    e = std::max({e, std::abs(id.sn_S_hat - P.sn_S), std::abs(id.sp_S_hat - P.sp_S), std::abs(id.sp_Y_hat - P.sp_Y)});
    const int nz = P.shape.n_z;
    for (int j = 0; j < nz; ++j)
      for (int k = 0; k < nz; ++k)
        if (j != k) e = std::max(e, std::abs(id.ve.ve_S(j, k) - (1.0 - mixture_risk(P, j) / mixture_risk(P, k))));
    for (const auto& v : id.ve.ve_I) {
      const int u = static_cast<int>(v.spec.stratum.index());
      const double truth = 1.0 - mixture_mean(P, u, v.spec.arm_j) / mixture_mean(P, u, v.spec.arm_k);
      e = std::max(e, std::abs(v.value - truth));
    }
    std::size_t expected_ve_i = 0;
    for (int u = 0; u < (1 << nz); ++u) {
      int ones = 0;
      for (int j = 0; j < nz; ++j) ones += infected(u, j);
      expected_ve_i += static_cast<std::size_t>(ones * (ones - 1));
    }
    if (id.ve.ve_I.size() != expected_ve_i) out.failure = "missing VE_I entries";
    out.err = e;
  } catch (const std::exception& ex) {
    out.failure = ex.what();
    out.err = INFINITY;
  }
  return out;
}

Outcome criterion4() {
  const auto t0 = Clock::now();
  double worst2 = 0.0, worst3 = 0.0;
  int max_restarts = 0, failures = 0;
  std::string first_failure;
  auto run = [&](const TrialShape& s, int count, std::uint64_t base, double& worst) {
    for (int i = 0; i < count; ++i) {
      const auto rt = identify_round_trip(random_population(s, base + static_cast<std::uint64_t>(i)));
      worst = std::max(worst, rt.err);
      max_restarts = std::max(max_restarts, rt.restarts);
      if (!rt.failure.empty() || !(rt.err <= 1e-4)) {
        ++failures;
        if (first_failure.empty()) first_failure = rt.failure.empty() ? "error " + fmt(rt.err) : rt.failure;
      }
    }
  };
  run(TrialShape{2, 4, 3, 1}, 50, 4000, worst2);
  run(TrialShape{3, 8, 7, 1}, 10, 4100, worst3);
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << "50 two-arm max error " << fmt(worst2) << ", 10 three-arm max error " << fmt(worst3) << ", failures "
     << failures << ", max CP restarts " << max_restarts << ", time " << fmt(secs) << " s";
  if (!first_failure.empty()) os << ", first failure: " << first_failure;
  return {failures == 0 && max_restarts <= 20 && secs < 300.0, os.str()};
}

Outcome criterion5() {
  const auto t0 = Clock::now();
  auto cfg = scenario_config(Scenario::TwoArmSevere, 1000000, 5);
  cfg.threads = std::max(1u, std::thread::hardware_concurrency());
  const PopulationParams P = gen_params(cfg).population;
  const CellCounts c = count_cells(simulate_dataset(P, cfg));
  const ObservableCells q = forward_probabilities(P);
  const auto& s = P.shape;
  int cells = 0, outside = 0;
  double worst = 0.0;
  for (int x = 0; x < s.n_x; ++x)
    for (int z = 0; z < s.n_z; ++z)
      for (int r = 0; r < s.n_r; ++r) {
        double nb = 0.0;
        for (int sv = 0; sv < 2; ++sv)
          for (int y = 0; y < 2; ++y)
            for (int k = 0; k < s.n_a; ++k) nb += c.n[c.index(x, z, r, sv, y, k)];
        for (int sv = 0; sv < 2; ++sv)
          for (int y = 0; y < 2; ++y)
            for (int k = 0; k < s.n_a; ++k) {
              const double p = q.q_at(x, z, r, sv, y, k);
              const double obs = c.n[c.index(x, z, r, sv, y, k)];
              ++cells;
              if (p <= 0.0) {
                if (obs > 0.0) ++outside;
                continue;
              }
              const double se = std::sqrt(nb * p * (1.0 - p));
              const double zscore = std::abs(obs - nb * p) / se;
              worst = std::max(worst, zscore);
              if (zscore > 4.0) ++outside;
            }
      }
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << cells << " cells from " << static_cast<long>(c.total()) << " participants, max |z| " << fmt(worst)
     << ", cells beyond 4 SE " << outside << ", time " << fmt(secs) << " s";
  return {outside == 0 && secs < 60.0, os.str()};
}

Outcome criterion6() {
  Rng rng(606);
  int configs = 0, bad = 0;
  double worst = 0.0;
  for (int t = 0; t < 40; ++t) {
    const TrialShape s{2, 1 + static_cast<int>(rng.uniform_int(2)), 1 + static_cast<int>(rng.uniform_int(2)),
                       1 + static_cast<int>(rng.uniform_int(2))};
    ModelSpec spec;
    spec.shape = s;
    const Vector th = draw_prior(spec, rng);
    CellCounts c = CellCounts::zeros(s);
    for (auto& v : c.n) v = static_cast<double>(rng.uniform_int(50));
    const double n = std::max(1.0, c.total());
    const double expect = oracle::log_likelihood(to_population(spec, th), c);
    const double got = log_likelihood(spec, th, c).value;
    const double gap = std::abs(got - expect) / n;
    worst = std::max(worst, gap);
    if (!(gap <= 1e-10)) ++bad;
    ++configs;
  }
  std::ostringstream os;
  os << configs << " configurations (N_z=2, N_a<=2, N_r<=2), worst per-observation gap " << fmt(worst) << ", failures "
     << bad;
  return {bad == 0 && configs >= 20, os.str()};
}

Outcome criterion7(int jobs) {
  const auto t0 = Clock::now();
  PowerConfig alt;
  alt.scenario = Scenario::TwoArmSevere;
  alt.n_grid = {10000, 40000};
  alt.replicates = 20;
  alt.master_seed = 7007;
  alt.jobs = jobs;
  const PowerResult ra = power_study(alt);

  PowerConfig null = alt;
  null.scenario = Scenario::TwoArmNull;
  null.n_grid = {4000};
  null.master_seed = 7008;
  const PowerResult rn = power_study(null);

  int covered = 0, ok40 = 0, fail_total = 0;
  for (const auto& r : ra.replicates) {
    if (!r.ok) ++fail_total;
    if (r.n == 40000 && r.ok) {
      ++ok40;
      covered += r.covered;
    }
  }
  for (const auto& r : rn.replicates)
    if (!r.ok) ++fail_total;
  const PowerRow& lo = ra.rows[0];
  const PowerRow& hi = ra.rows[1];
  const PowerRow& nr = rn.rows[0];
  const bool a = covered >= 15;
  const bool b = hi.power > lo.power;
  const bool c = nr.rejections <= 2;
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << "(a) coverage " << covered << "/" << ok40 << (a ? " ok" : " FAIL") << "; (b) power " << fmt(lo.power)
     << " at 10000 vs " << fmt(hi.power) << " at 40000" << (b ? " ok" : " FAIL") << "; (c) null rejections "
     << nr.rejections << "/" << nr.replicates - nr.failures << (c ? " ok" : " FAIL") << "; failed fits " << fail_total
     << ", time " << fmt(secs / 60.0) << " min";
  return {a && b && c && fail_total == 0, os.str()};
}

Outcome criterion8() {
  Rng rng(808);
  double worst_map = 0.0, worst_mono = 0.0;
  int infeasible = 0;
  for (int t = 0; t < 100; ++t) {
    TwoArmParams tp;
    const auto th = rng.dirichlet(std::vector<double>{2, 2, 2, 2});  // 00, 10, 01, 11
    tp.theta_10 = th[1];
    tp.theta_01 = th[2];
    tp.theta_11 = th[3];
    tp.beta_10_1 = rng.uniform();
    tp.beta_01_2 = rng.uniform();
    const auto phi = rng.dirichlet(std::vector<double>{2, 2, 2, 2});  // 00, 10, 01, 11
    tp.beta_11_1 = phi[3] + phi[1];
    tp.beta_11_2 = phi[3] + phi[2];
    const TwoArmObserved p = two_arm_forward(tp);
    // forward display written out independently
    const double p110 = tp.theta_01 * tp.beta_01_2 + tp.theta_11 * tp.beta_11_2;
    const double p111 = tp.theta_10 * tp.beta_10_1 + tp.theta_11 * tp.beta_11_1;
    worst_map = std::max({worst_map, std::abs(p.p110 - p110), std::abs(p.p111 - p111)});
    const auto s = two_arm_sensitivity(p, tp.beta_10_1, tp.beta_01_2, tp.theta_11, phi[1]);
    if (!s.feasible) ++infeasible;
    worst_map = std::max({worst_map, std::abs(s.theta_01 - tp.theta_01), std::abs(s.theta_10 - tp.theta_10),
                          std::abs(s.phi_11 - phi[3]), std::abs(s.phi_01 - phi[2]), std::abs(s.phi_00 - phi[0]),
                          std::abs(s.ve - (1.0 - tp.beta_11_1 / tp.beta_11_2))});

    // monotonicity: no (1,0) stratum, theta_11 = p_{1+1}, the estimand depends on beta^(0,1)_2 only
    TwoArmParams mono = tp;
    mono.theta_10 = 0.0;
    mono.theta_11 = th[1] + th[3];
    const TwoArmObserved pm = two_arm_forward(mono);
    const double p1p1 = pm.p111 + pm.p101, p1p0 = pm.p110 + pm.p100;
    const double reduced = 1.0 - pm.p111 / (pm.p110 + mono.beta_01_2 * (p1p1 - p1p0));
    for (double b10 : {0.0, 0.3, 0.9}) {
      const auto sm = two_arm_sensitivity(pm, b10, mono.beta_01_2, p1p1, phi[1]);
      worst_mono = std::max(worst_mono, std::abs(sm.ve - reduced));
    }
    worst_mono = std::max(worst_mono, std::abs(reduced - (1.0 - mono.beta_11_1 / mono.beta_11_2)));
  }
  std::ostringstream os;
  os << "100 random points, worst round-trip gap " << fmt(worst_map) << ", worst monotonicity-reduction gap "
     << fmt(worst_mono) << ", infeasible " << infeasible;
  return {worst_map <= 1e-12 && worst_mono <= 1e-12 && infeasible == 0, os.str()};
}

Outcome criterion9() {
  int fixtures = 0, sn_missed = 0, beta_missed = 0, errors = 0;
  double worst_endpoint = 0.0;
  for (std::uint64_t seed = 9000; fixtures < 50; ++seed) {
    const PopulationParams P = random_population(TrialShape{2, 4, 3, 1}, seed);
    ++fixtures;
    IdentifyOptions o;
    o.x_weights = P.x_dist;
    o.site_weights = P.site_dist;
    o.known_sn_Y = P.sn_Y;
    IdentifiedQuantities id;
    try {
      id = identify_from_population(forward_probabilities(P), o);
    } catch (const std::exception&) {
      ++errors;
      continue;
    }
    if (!id.snY_region.contains(P.sn_Y, 1e-9)) ++sn_missed;
    const double floor = 1.0 - id.sp_Y_hat;
    double mx = -INFINITY;
    for (int j = 0; j < 2; ++j)
      for (int u = 0; u < 4; ++u)
        if (infected(u, j))
          for (int k = 0; k < 3; ++k) mx = std::max(mx, std::max(id.p_tilde[0][j](k, u), floor));
    worst_endpoint = std::max(worst_endpoint, std::abs(id.snY_region.lo - mx));
    worst_endpoint = std::max(worst_endpoint, std::abs(id.snY_region.hi - 1.0));
    for (int j = 0; j < 2; ++j)
      for (int u = 0; u < 4; ++u)
        if (infected(u, j))
          for (int k = 0; k < 3; ++k) {
            const double pt = std::max(id.p_tilde[0][j](k, u), floor);
            const double lo = (pt - floor) / id.sp_Y_hat;
            const double hi = (pt - floor) / (mx + id.sp_Y_hat - 1.0);
            const double blo = id.beta_lo[0][j](k, u), bhi = id.beta_hi[0][j](k, u);
            worst_endpoint = std::max({worst_endpoint, std::abs(blo - lo), std::abs(bhi - hi)});
            const double b = P.beta[0][j](k, u);
            if (b < blo - 1e-9 || b > bhi + 1e-9) ++beta_missed;
          }
  }
  std::ostringstream os;
  os << fixtures << " fixtures, sn_Y outside region " << sn_missed << ", beta outside region " << beta_missed
     << ", identification errors " << errors << ", worst endpoint gap " << fmt(worst_endpoint);
  return {sn_missed == 0 && beta_missed == 0 && errors == 0 && worst_endpoint <= 1e-12, os.str()};
}

int invoke(const std::string& cli, const std::vector<std::string>& args) {
  if (cli.empty()) {
    std::ostringstream out, err;
    return cli::run(args, out, err);
  }
  std::string cmd = "\"" + cli + "\"";
  for (const auto& s : args) cmd += " \"" + s + "\"";
  cmd += " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return rc == 0 ? 0 : (WIFEXITED(rc) ? WEXITSTATUS(rc) : 1);
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  return fs::exists(a) && fs::exists(b) && cli::read_text_file(a) == cli::read_text_file(b);
}

// manifests differ only in wall-clock time and output paths
bool same_manifest(const fs::path& a, const fs::path& b) {
  auto strip = [](cli::json j) {
    j.erase("wall_clock_seconds");
    for (auto& o : j["outputs"]) o["path"] = fs::path(o["path"].get<std::string>()).filename().string();
    for (auto key : {"out", "output"})
      if (j.contains("config") && j["config"].is_object()) j["config"].erase(key);
    return j;
  };
  const auto ja = strip(cli::read_json_file(a)), jb = strip(cli::read_json_file(b));
  return ja["outputs"] == jb["outputs"] && ja["master_seed"] == jb["master_seed"];
}

Outcome criterion10(const std::string& cli) {
  const fs::path root = fs::temp_directory_path() / "strata_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  std::vector<std::string> failures;
  int rc = 0;
  for (const char* d : {"sim_a", "sim_b"})
    rc |= invoke(cli, {"simulate", "--scenario", "two_arm_severe", "--n", "20000", "--seed", "31", "--a-error",
                       "--oracle", "--cells", "--out", (root / d).string()});
  for (const char* f : {"dataset.csv", "params.json", "cells.json"})
    if (!same_bytes(root / "sim_a" / f, root / "sim_b" / f)) failures.push_back(std::string("simulate ") + f);
  if (!same_manifest(root / "sim_a" / "manifest.json", root / "sim_b" / "manifest.json"))
    failures.push_back("simulate manifest digests");

  const std::vector<std::string> power_args{"power", "--scenario", "two_arm_severe", "--n-grid", "2000,4000",
                                            "--reps", "2", "--chains", "2", "--warmup", "400", "--iters", "400",
                                            "--seed", "32"};
  auto pa = power_args, pb = power_args;
  pa.insert(pa.end(), {"--jobs", "1", "--out", (root / "pow_a").string()});
  pb.insert(pb.end(), {"--jobs", "2", "--out", (root / "pow_b").string()});
  rc |= invoke(cli, pa);
  rc |= invoke(cli, pb);
  for (const char* f : {"power.csv", "replicates.csv"})
    if (!same_bytes(root / "pow_a" / f, root / "pow_b" / f)) failures.push_back(std::string("power ") + f);
  if (!same_manifest(root / "pow_a" / "manifest.json", root / "pow_b" / "manifest.json"))
    failures.push_back("power manifest digests");

  std::ostringstream os;
  os << (cli.empty() ? "in-process" : "binary") << " runs: simulate x2 (dataset.csv, params.json, cells.json), power x2"
     << " with 1 and 2 jobs (power.csv, replicates.csv); exit status " << rc;
  if (failures.empty())
    os << ", all byte-identical";
  else
    for (const auto& f : failures) os << ", differs: " << f;
  return {rc == 0 && failures.empty(), os.str()};
}

std::vector<int> parse_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string only, skip, cli_path;
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  app.add_option("--only", only, "Comma-separated criteria to run");
  app.add_option("--skip", skip, "Comma-separated criteria to skip");
  app.add_option("--cli", cli_path, "strata-id binary for the determinism check");
  app.add_option("--jobs", jobs, "Parallel replicates for the calibration check");
  CLI11_PARSE(app, argc, argv);

  const auto only_v = parse_list(only), skip_v = parse_list(skip);
  auto selected = [&](int n) {
    if (!only_v.empty() && std::find(only_v.begin(), only_v.end(), n) == only_v.end()) return false;
    return std::find(skip_v.begin(), skip_v.end(), n) == skip_v.end();
  };

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, criterion1},
      {2, criterion2},
      {3, criterion3},
      {4, criterion4},
      {5, criterion5},
      {6, criterion6},
      {7, [jobs] { return criterion7(jobs); }},
      {8, criterion8},
      {9, criterion9},
      {10, [cli_path] { return criterion10(cli_path); }},
  };
  int failed = 0;
  for (const auto& [n, fn] : criteria) {
    if (!selected(n)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << "criterion " << n << ' ' << (o.pass ? "PASS" : "FAIL") << " (" << o.detail << ")" << std::endl;
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
