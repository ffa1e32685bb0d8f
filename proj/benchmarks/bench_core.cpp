#include <benchmark/benchmark.h>

#include "strata_id/identifiability.hpp"
#include "strata_id/inference.hpp"
#include "strata_id/linalg.hpp"
#include "strata_id/population.hpp"
#include "strata_id/simulate.hpp"

using namespace strata;

namespace {

struct TwoArmFixture {
  ModelSpec spec;
  CellCounts counts;
  Vector t;

  TwoArmFixture() {
    SimConfig cfg = scenario_config(Scenario::TwoArmSevere, 40000, 11);
    GeneratedParams g = gen_params(cfg);
    counts = count_cells(simulate_dataset(g.population, cfg));
    spec.shape = cfg.shape;
    t = pack_regression(spec, g.regression, cfg.misclass);
  }
};

const TwoArmFixture& two_arm() {
  static const TwoArmFixture f;
  return f;
}

}  // namespace

static void BM_LogLikelihood(benchmark::State& state) {
  const auto& f = two_arm();
  for (auto _ : state) benchmark::DoNotOptimize(log_likelihood(f.spec, f.t, f.counts).value);
}
BENCHMARK(BM_LogLikelihood);

static void BM_LogPosterior(benchmark::State& state) {
  const auto& f = two_arm();
  for (auto _ : state) benchmark::DoNotOptimize(log_posterior(f.spec, f.t, f.counts));
}
BENCHMARK(BM_LogPosterior);

static void BM_ForwardProbabilities(benchmark::State& state) {
  const TrialShape sh = state.range(0) == 2 ? TrialShape{2, 4, 3, 3} : TrialShape{3, 8, 7, 3};
  const PopulationParams P = random_population(sh, 5);
  for (auto _ : state) benchmark::DoNotOptimize(forward_probabilities(P).q.data());
}
BENCHMARK(BM_ForwardProbabilities)->Arg(2)->Arg(3);

static void BM_KruskalRank(benchmark::State& state) {
  const int n_z = static_cast<int>(state.range(0));
  const Matrix S = build_Stilde_matrix(n_z, 0.8, 0.95);
  for (auto _ : state) benchmark::DoNotOptimize(kruskal_rank(S));
}
BENCHMARK(BM_KruskalRank)->DenseRange(2, 4);

static void BM_IdentifyTwoArm(benchmark::State& state) {
  const PopulationParams P = random_population(TrialShape{2, 4, 3, 1}, 21);
  const ObservableCells cells = forward_probabilities(P);
  for (auto _ : state) benchmark::DoNotOptimize(identify_from_population(cells).sn_S_hat);
}
BENCHMARK(BM_IdentifyTwoArm)->Unit(benchmark::kMillisecond);

static void BM_SimulateDataset(benchmark::State& state) {
  SimConfig cfg = scenario_config(Scenario::TwoArmSevere, state.range(0), 3);
  const GeneratedParams g = gen_params(cfg);
  for (auto _ : state) benchmark::DoNotOptimize(simulate_dataset(g.population, cfg).records.data());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SimulateDataset)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);

static void BM_EssBulk(benchmark::State& state) {
  Rng rng(9);
  std::vector<Vector> chains(4, Vector(state.range(0)));
  for (auto& c : chains) {
    double x = 0.0;
    for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = x = 0.9 * x + rng.normal();
  }
  for (auto _ : state) benchmark::DoNotOptimize(ess_bulk(chains));
}
BENCHMARK(BM_EssBulk)->Arg(1000)->Arg(6000);

BENCHMARK_MAIN();
