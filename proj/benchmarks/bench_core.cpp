#include <benchmark/benchmark.h>

#include <random>

#include "tta/dab.hpp"
#include "tta/dataset.hpp"
#include "tta/search.hpp"

using namespace tta;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = u(rng);
  return t;
}

// Untrained models: the cost of a pass does not depend on the weights.
struct Models {
  TaskArch arch;
  TaskModel task{arch, 1};
  ReconSuite suite{arch, 3};
  Tensor x = clean_image(arch.image_size, 5);
};

const Models& models() {
  static const Models m;
  return m;
}

void BM_Conv2dForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int s = static_cast<int>(state.range(1));
  const Tensor x = random_tensor({c, s, s}, 1);
  const Tensor k = random_tensor({c, c, 3, 3}, 2);
  const Tensor b({c}, 0.0f);
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(conv2d(tape.constant_ref(x), tape.constant_ref(k), tape.constant_ref(b), 1, 1).value());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * c * c * 9 * s * s);
}
BENCHMARK(BM_Conv2dForward)->Args({16, 32})->Args({32, 16})->Args({64, 8})->Unit(benchmark::kMicrosecond);

void BM_Conv2dBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int s = static_cast<int>(state.range(1));
  const Tensor x = random_tensor({c, s, s}, 1);
  Parameter k("k", random_tensor({c, c, 3, 3}, 2));
  Parameter b("b", Tensor({c}, 0.0f));
  for (auto _ : state) {
    Tape tape;
    tape.backward(mean(conv2d(tape.constant_ref(x), tape.parameter(k), tape.parameter(b), 1, 1)));
    k.zero_grad();
    b.zero_grad();
  }
}
BENCHMARK(BM_Conv2dBackward)->Args({16, 32})->Args({64, 8})->Unit(benchmark::kMicrosecond);

void BM_TaskForward(benchmark::State& state) {
  const Models& m = models();
  for (auto _ : state) benchmark::DoNotOptimize(translate(m.task, m.x).output());
}
BENCHMARK(BM_TaskForward)->Unit(benchmark::kMicrosecond);

void BM_UnadaptedError(benchmark::State& state) {
  const Models& m = models();
  for (auto _ : state) benchmark::DoNotOptimize(unadapted_output_error(m.suite, m.task, m.x));
}
BENCHMARK(BM_UnadaptedError)->Unit(benchmark::kMicrosecond);

/// One configuration adapted for M = range(0) steps.
void BM_AdaptSteps(benchmark::State& state) {
  const Models& m = models();
  AdaptOptions opt;
  opt.steps = static_cast<int>(state.range(0));
  const Configuration omega = static_cast<Configuration>(state.range(1));
  for (auto _ : state) {
    AdaptorSet a(m.task, 7);
    benchmark::DoNotOptimize(adapt_steps(m.task, m.suite, a, omega, m.x, opt).best_eps_y);
  }
  state.SetItemsProcessed(state.iterations() * opt.steps);
}
BENCHMARK(BM_AdaptSteps)->Args({1, 0b001})->Args({5, 0b001})->Args({5, 0b111})->Unit(benchmark::kMillisecond);

/// Full per-sample search with the default M.
void BM_StrategyPerSample(benchmark::State& state) {
  const Models& m = models();
  const auto strategy = static_cast<Strategy>(state.range(0));
  SearchSettings settings;
  const TtaContext ctx{&m.task, &m.suite, settings, 11};
  const auto [y0, eps0] = unadapted(ctx, m.x);
  for (auto _ : state) benchmark::DoNotOptimize(run_triggered(ctx, m.x, 1, strategy, y0, eps0).eps_best);
  state.SetLabel(std::string(strategy_name(strategy)));
}
BENCHMARK(BM_StrategyPerSample)
    ->Arg(static_cast<int>(Strategy::Grid))
    ->Arg(static_cast<int>(Strategy::ForwardSelection))
    ->Arg(static_cast<int>(Strategy::BackwardElimination))
    ->Arg(static_cast<int>(Strategy::StaticAll))
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
