#include <benchmark/benchmark.h>

#include "attrprompt/model.hpp"
#include "attrprompt/ot.hpp"
#include "attrprompt/rng.hpp"

namespace {

using namespace attrprompt;

ot::CostMatrix random_cost(std::size_t m, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor c = Tensor::matrix(m, n);
  for (double& x : c.data()) x = rng.uniform(0.0, 2.0);
  return {std::move(c)};
}

// args: size, gamma in thousandths, max_iter
void BM_Sinkhorn(benchmark::State& state) {
  const auto size = static_cast<std::size_t>(state.range(0));
  const double gamma = static_cast<double>(state.range(1)) / 1000.0;
  const ot::CostMatrix c = random_cost(size, size, 1);
  const ot::SinkhornOptions opt{gamma, static_cast<int>(state.range(2)), 1e-6};
  const auto marg = ot::Marginals::uniform(size, size);
  int iters = 0;
  for (auto _ : state) {
    auto plan = ot::sinkhorn(c, marg, opt);
    iters = plan.iterations_used;
    benchmark::DoNotOptimize(plan.plan.data().data());
  }
  state.counters["sweeps"] = iters;
}
BENCHMARK(BM_Sinkhorn)
    ->Args({4, 100, 100})      // training default, M = N = 4
    ->Args({16, 100, 100})
    ->Args({4, 10, 100})       // log domain
    ->Args({16, 10, 100});

void BM_SinkhornNewton(benchmark::State& state) {
  const ot::CostMatrix c = random_cost(3, 3, 7);
  const ot::SinkhornOptions opt{0.01, 20000, 1e-9, static_cast<int>(state.range(0))};
  const auto marg = ot::Marginals::uniform(3, 3);
  for (auto _ : state) benchmark::DoNotOptimize(ot::sinkhorn(c, marg, opt).marginal_violation);
}
BENCHMARK(BM_SinkhornNewton)->Arg(0)->Arg(50);

void BM_SinkhornUnrolled(benchmark::State& state) {
  Rng rng(2);
  Tensor s = Tensor::matrix(4, 4);
  for (double& x : s.data()) x = rng.uniform(-1.0, 1.0);
  const auto marg = ot::Marginals::uniform(4, 4);
  for (auto _ : state) {
    ad::Tape tape;
    auto plan = sinkhorn_unrolled(tape.constant(s), marg, 0.1, static_cast<int>(state.range(0)));
    benchmark::DoNotOptimize(plan.value().data().data());
  }
}
BENCHMARK(BM_SinkhornUnrolled)->Arg(20)->Arg(100);

}  // namespace
