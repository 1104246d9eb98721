// Serial reference kernels against their OpenMP variants, plus one full
// training-step gradient on a toy scene.

#include <benchmark/benchmark.h>

#include <vector>

#ifdef HPNET_HAVE_OPENMP
#include <omp.h>
#endif

#include "hpnet/kernels.hpp"
#include "hpnet/rng.hpp"
#include "hpnet/synth.hpp"
#include "hpnet/train.hpp"

using namespace hpnet;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0)), k = static_cast<std::size_t>(state.range(1)), n = k;
  const auto a = random_values(m * k, 1), b = random_values(k * n, 2), bias = random_values(n, 3);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::parallel::gemm(a.data(), b.data(), bias.data(), c.data(), m, k, n);
    else kernels::serial::gemm(a.data(), b.data(), bias.data(), c.data(), m, k, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * k * n));
}

template <bool Parallel>
void BM_LayerNorm(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), cols = static_cast<std::size_t>(state.range(1));
  const auto x = random_values(rows * cols, 4), g = random_values(cols, 5), b = random_values(cols, 6);
  std::vector<double> y(rows * cols), xhat(rows * cols), inv(rows);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::parallel::layer_norm(x.data(), g.data(), b.data(), y.data(), xhat.data(), inv.data(), rows, cols, 1e-5);
    else kernels::serial::layer_norm(x.data(), g.data(), b.data(), y.data(), xhat.data(), inv.data(), rows, cols, 1e-5);
    benchmark::DoNotOptimize(y.data());
  }
}

// every query attends to `fan` keys
template <bool Parallel>
void BM_Attention(benchmark::State& state) {
  const auto queries = static_cast<std::size_t>(state.range(0)), fan = static_cast<std::size_t>(state.range(1));
  const std::size_t dim = 32, heads = 2, keys = queries;
  const auto q = random_values(queries * dim, 7), ks = random_values(keys * dim, 8), vs = random_values(keys * dim, 9);
  const auto ke = random_values(queries * fan * dim, 10), ve = random_values(queries * fan * dim, 11);
  std::vector<int> offsets{0}, src, eid;
  Rng rng(12);
  for (std::size_t i = 0; i < queries; ++i) {
    for (std::size_t j = 0; j < fan; ++j) {
      src.push_back(static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(keys) - 1)));
      eid.push_back(static_cast<int>(src.size() - 1));
    }
    offsets.push_back(static_cast<int>(src.size()));
  }
  kernels::AttentionArgs args;
  args.num_queries = queries;
  args.dim = dim;
  args.heads = heads;
  args.q = q.data();
  args.key_src = ks.data();
  args.key_edge = ke.data();
  args.val_src = vs.data();
  args.val_edge = ve.data();
  args.edges = {offsets, src, eid};
  std::vector<double> out(queries * dim), w(src.size() * heads);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::parallel::attention_forward(args, out.data(), w.data());
    else kernels::serial::attention_forward(args, out.data(), w.data());
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * src.size()));
}

void BM_SceneGradient(benchmark::State& state) {
  kernels::set_parallel(state.range(0) != 0);
  const ModelConfig mc = ModelConfig::toy();
  TrainConfig tc = TrainConfig::toy();
  const HpnetModel model(mc, 1);
  ScenarioSpec spec;
  spec.seed = 3;
  const Scene scene = generate(spec);
  for (auto _ : state) benchmark::DoNotOptimize(scene_gradient(model, scene, tc, true, 7).parts.total);
  kernels::set_parallel(true);
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Args({1200, 32})->Args({4800, 64})->Name("gemm/serial");
BENCHMARK(BM_Gemm<true>)->Args({1200, 32})->Args({4800, 64})->Name("gemm/openmp");
BENCHMARK(BM_LayerNorm<false>)->Args({4800, 32})->Name("layer_norm/serial");
BENCHMARK(BM_LayerNorm<true>)->Args({4800, 32})->Name("layer_norm/openmp");
BENCHMARK(BM_Attention<false>)->Args({1200, 8})->Args({4800, 20})->Name("attention/serial");
BENCHMARK(BM_Attention<true>)->Args({1200, 8})->Args({4800, 20})->Name("attention/openmp");
BENCHMARK(BM_SceneGradient)->Arg(0)->Arg(1)->Name("scene_gradient/parallel_flag")->Unit(benchmark::kMillisecond);

int main(int argc, char** argv) {
#ifdef HPNET_HAVE_OPENMP
  benchmark::AddCustomContext("omp_max_threads", std::to_string(omp_get_max_threads()));
#endif
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
