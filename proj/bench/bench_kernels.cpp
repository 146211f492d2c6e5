// Serial reference vs OpenMP kernels, plus batch loss evaluation.

#include <benchmark/benchmark.h>

#include "eet/diffusion.hpp"
#include "eet/kernels.hpp"
#include "eet/synthdata.hpp"

using namespace eet;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  return gaussian(r, c, 1.0, rng);
}

template <Matrix (*F)(const Matrix&, const Matrix&)>
void bm_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(F(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

struct MeshFixture {
  face::BlendshapeModel model;
  Matrix frames, other;
  explicit MeshFixture(std::size_t grid, std::size_t t) {
    face::SyntheticModelConfig cfg;
    cfg.grid = grid;
    model = face::make_synthetic_model(cfg);
    frames = face::decode_sequence(model, random_matrix(t, model.param_dim(), 3)).frames;
    other = face::decode_sequence(model, random_matrix(t, model.param_dim(), 4)).frames;
  }
};

template <bool Parallel>
void bm_normals(benchmark::State& state) {
  const MeshFixture f(static_cast<std::size_t>(state.range(0)), 64);
  for (auto _ : state) {
    if constexpr (Parallel) {
      benchmark::DoNotOptimize(kernels::omp::vertex_normals(f.frames, f.model.faces));
    } else {
      benchmark::DoNotOptimize(kernels::serial::vertex_normals(f.frames, f.model.faces));
    }
  }
}

template <bool Parallel>
void bm_distances(benchmark::State& state) {
  const MeshFixture f(static_cast<std::size_t>(state.range(0)), 64);
  for (auto _ : state) {
    if constexpr (Parallel) {
      benchmark::DoNotOptimize(kernels::omp::vertex_distances(f.frames, f.other));
    } else {
      benchmark::DoNotOptimize(kernels::serial::vertex_distances(f.frames, f.other));
    }
  }
}

template <diffusion::Execution Exec>
void bm_evaluate_batch(benchmark::State& state) {
  synth::SynthConfig scfg;
  scfg.per_class = 4;
  const auto ds = synth::gen_dataset(scfg, face::SyntheticModelConfig{});
  diffusion::DenoiserConfig dcfg;
  ParamStore params;
  Rng rng(5);
  diffusion::init_denoiser(params, dcfg, rng, false);
  losses::init_mapping(params, {}, rng);
  const auto schedule = diffusion::build_schedule(50, 1e-4, 0.2);
  const Matrix basis = ds.model.stacked_basis();
  std::vector<diffusion::Conditioning> conds;
  std::vector<diffusion::TrainSample> batch;
  for (std::size_t i = 0; i < 8; ++i) {
    const auto& s = ds.samples[i];
    conds.push_back({s.audio, s.e_gt, ds.world.identities.row_vector(s.identity)});
  }
  for (std::size_t i = 0; i < 8; ++i) batch.push_back({&ds.samples[i].params_gt, &conds[i], ds.samples[i].mask});
  const diffusion::TrainContext ctx{&dcfg, &ds.model, &basis, nullptr, &schedule};
  diffusion::TrainConfig tcfg;
  tcfg.dual_train = false;
  const auto draws = diffusion::draw_batch(batch, ctx, tcfg, rng);
  for (auto _ : state) {
    params.zero_grad();
    benchmark::DoNotOptimize(diffusion::evaluate_batch(params, batch, draws, ctx, tcfg, Exec));
  }
}

}  // namespace

BENCHMARK(bm_matmul<kernels::serial::matmul>)->Name("matmul/serial")->Arg(64)->Arg(256);
BENCHMARK(bm_matmul<kernels::omp::matmul>)->Name("matmul/omp")->Arg(64)->Arg(256);
BENCHMARK(bm_normals<false>)->Name("vertex_normals/serial")->Arg(16)->Arg(48);
BENCHMARK(bm_normals<true>)->Name("vertex_normals/omp")->Arg(16)->Arg(48);
BENCHMARK(bm_distances<false>)->Name("vertex_distances/serial")->Arg(16)->Arg(48);
BENCHMARK(bm_distances<true>)->Name("vertex_distances/omp")->Arg(16)->Arg(48);
BENCHMARK(bm_evaluate_batch<diffusion::Execution::Serial>)->Name("evaluate_batch/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(bm_evaluate_batch<diffusion::Execution::Parallel>)->Name("evaluate_batch/omp")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
