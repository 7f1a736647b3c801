#include "regtr/error.hpp"
#include "regtr/geom.hpp"
#include "regtr/grid_index.hpp"
#include "regtr/model.hpp"
#include "regtr/solver.hpp"
#include "regtr/synth.hpp"
#include "regtr/tensor.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using namespace regtr;

std::vector<Correspondence> random_bundle(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  const RigidTransform gt = RigidTransform::from_axis_angle(Vec3(1, 1, 0).normalized(), 0.6, Vec3(0.2, 0, -0.1));
  std::vector<Correspondence> c(n);
  for (auto& x : c) {
    x.source_point = Vec3(u(rng), u(rng), u(rng));
    x.target_point = gt(x.source_point);
    x.weight = 0.5 + 0.5 * u(rng);
  }
  return c;
}

void BM_WeightedKabsch(benchmark::State& state) {
  const auto c = random_bundle(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(weighted_kabsch(c));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_WeightedKabsch)->Arg(16)->Arg(256)->Arg(4096);

void BM_Ransac200(benchmark::State& state) {
  const auto c = random_bundle(200, 2);
  RansacOptions o;
  o.iterations = 200;
  for (auto _ : state) benchmark::DoNotOptimize(ransac_estimate(c, o));
}
BENCHMARK(BM_Ransac200);

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-1, 1);
  std::vector<float> a(n * n), b(n * n);
  for (auto& v : a) v = u(rng);
  for (auto& v : b) v = u(rng);
  const auto ta = ad::Tensor<float>::from(n, n, a), tb = ad::Tensor<float>::from(n, n, b);
  for (auto _ : state) benchmark::DoNotOptimize(ad::matmul(ta, tb));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0) * state.range(0));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_NearestNeighborGrid(benchmark::State& state) {
  synth::Rng rng(4);
  const PointCloud pc = synth::generate_shape(synth::ShapeKind::kCompositeRoom, 4096, rng);
  const GridIndex index(pc);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Vec3> queries(1024);
  for (auto& q : queries) q = Vec3(u(rng), u(rng), u(rng));
  for (auto _ : state) {
    for (const Vec3& q : queries) benchmark::DoNotOptimize(index.nearest(q));
  }
  state.SetItemsProcessed(state.iterations() * 1024);
}
BENCHMARK(BM_NearestNeighborGrid);

void BM_RegisterPairDesk(benchmark::State& state) {
  ModelConfig cfg;
  cfg.d = 48;
  cfg.heads = 4;
  cfg.layers = 2;
  cfg.ffn_hidden = 96;
  cfg.feature_dim = 48;
  cfg.backbone_hidden = 32;
  const ModelParams<float> params = init_params<float>(cfg, 1);
  synth::Rng rng(5);
  const auto pair = synth::make_modelnet_style_pair(synth::generate_shape(synth::ShapeKind::kBox, 1024, rng), 0.7, rng);
  for (auto _ : state) {
    try {
      benchmark::DoNotOptimize(register_pair(pair.source, pair.target, cfg, params, {}));
    } catch (const NumericalError&) {
    }
  }
}
BENCHMARK(BM_RegisterPairDesk)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
