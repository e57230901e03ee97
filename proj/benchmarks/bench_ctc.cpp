#include <benchmark/benchmark.h>

#include <random>

#include "mtlcf/ctc.hpp"
#include "mtlcf/tensor.hpp"

using namespace mtlcf;

namespace {

Tensor random_logprobs(std::size_t t, std::size_t v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  std::vector<double> logits(t * v);
  for (double& x : logits) x = dist(rng);
  return log_softmax(Tensor::from_values({t, v}, std::move(logits)));
}

LabelSequence labels_for(std::size_t t, int vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> sym(1, vocab - 1);
  LabelSequence labels(t / 3);
  for (int& s : labels) s = sym(rng);
  return labels;
}

void BM_CtcLossWithGrad(benchmark::State& state) {
  const std::size_t t = static_cast<std::size_t>(state.range(0));
  const std::size_t v = 12;
  Tensor lp = random_logprobs(t, v, 1);
  LabelSequence labels = labels_for(t, static_cast<int>(v), 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ctc_loss(lp, labels).loss);
  }
}
BENCHMARK(BM_CtcLossWithGrad)->Arg(10)->Arg(30)->Arg(100)->Arg(300);

void BM_CtcLossValueOnly(benchmark::State& state) {
  const std::size_t t = static_cast<std::size_t>(state.range(0));
  const std::size_t v = 12;
  Tensor lp = random_logprobs(t, v, 1);
  LabelSequence labels = labels_for(t, static_cast<int>(v), 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ctc_loss_value(lp, labels));
  }
}
BENCHMARK(BM_CtcLossValueOnly)->Arg(10)->Arg(30)->Arg(100)->Arg(300);

void BM_GreedyDecode(benchmark::State& state) {
  Tensor lp = random_logprobs(static_cast<std::size_t>(state.range(0)), 12, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(greedy_decode(lp));
  }
}
BENCHMARK(BM_GreedyDecode)->Arg(30)->Arg(300);

}  // namespace
