#include <benchmark/benchmark.h>

#include <random>

#include "lossada/engine.hpp"

using namespace lossada;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor t(Shape{r, c});
  for (double& v : t.values()) v = u(rng);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const Tensor a = random_matrix(n, n, rng), b = random_matrix(n, n, rng);
  for (auto _ : state) {
    Graph g;
    benchmark::DoNotOptimize(matmul(g.constant(a), g.constant(b)).value().values().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

// Pretrained bundle and a partly annotated blobs pool.
struct Setup {
  RunConfig cfg;
  ModelBundle model;
  PoolState pool;
  Setup() {
    BlobsParams p;
    p.seed = 3;
    const DomainPair data = gen_blobs_shift(p);
    cfg.dims.num_classes = data.num_classes;
    cfg.pretrain_iters = 200;
    model = init_bundle(cfg.dims, 3);
    std::mt19937_64 rng(3);
    pretrain(model, data.source, cfg, rng);
    pool = PoolState(data, 5.0);
    std::vector<std::int64_t> ids;
    for (std::size_t i = 0; i < 30; ++i) ids.push_back(pool.unlabeled_target()[i * 13].id);
    pool.annotate(ids);
  }
};

void BM_S2Iteration(benchmark::State& state) {
  Setup s;
  s.cfg.s2_iters = 1;
  Optimizers opt = make_optimizers(s.model, s.cfg);
  std::mt19937_64 rng(4);
  for (auto _ : state) stage_s2(s.model, opt, s.pool, s.cfg, rng);
}
BENCHMARK(BM_S2Iteration)->Unit(benchmark::kMillisecond);

void BM_SelectQueries(benchmark::State& state) {
  Setup s;
  const Dataset pool = s.pool.unlabeled_target();
  const auto k = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(select_queries(s.model, pool, k));
}
BENCHMARK(BM_SelectQueries)->Arg(12)->Arg(60)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
