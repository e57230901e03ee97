#include <benchmark/benchmark.h>

#include <random>

#include "mtlcf/losses.hpp"
#include "mtlcf/model.hpp"
#include "mtlcf/trainer.hpp"

using namespace mtlcf;

namespace {

Tensor random_features(std::size_t t, std::size_t f, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(t * f);
  for (double& x : v) x = dist(rng);
  return Tensor::from_values({t, f}, std::move(v));
}

void BM_ForwardNoGrad(benchmark::State& state) {
  ModelParams model = init_model(ModelConfig{});
  model.set_frozen(true);
  Tensor x = random_features(static_cast<std::size_t>(state.range(0)), 24, 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.forward(x).values().data());
  }
}
BENCHMARK(BM_ForwardNoGrad)->Arg(9)->Arg(16)->Arg(32);

void BM_ForwardBackwardCtc(benchmark::State& state) {
  ModelParams model = init_model(ModelConfig{});
  Tensor x = random_features(static_cast<std::size_t>(state.range(0)), 24, 7);
  LabelSequence labels = {1, 2, 3};
  for (auto _ : state) {
    Tensor loss = ctc_loss_node(model.forward(x), labels);
    backward(loss);
    model.zero_grads();
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_ForwardBackwardCtc)->Arg(9)->Arg(16);

void BM_AdamStep(benchmark::State& state) {
  ModelParams model = init_model(ModelConfig{});
  std::vector<Tensor> params = model.parameters();
  OptimizerState opt = OptimizerState::init(AdamConfig{}, params);
  Tensor x = random_features(9, 24, 7);
  Tensor loss = ctc_loss_node(model.forward(x), {1, 2});
  backward(loss);
  for (auto _ : state) {
    adam_step(params, opt);
  }
}
BENCHMARK(BM_AdamStep);

void BM_DistillKl(benchmark::State& state) {
  ModelParams teacher = init_model(ModelConfig{});
  teacher.set_frozen(true);
  ModelParams student = init_model(ModelConfig{});
  Tensor x = random_features(9, 24, 7);
  Tensor t_out = teacher.forward(x);
  for (auto _ : state) {
    Tensor s_out = student.forward(x);
    Tensor kl = distill_kl(s_out, t_out, 1.0);
    backward(kl);
    student.zero_grads();
    benchmark::DoNotOptimize(kl.item());
  }
}
BENCHMARK(BM_DistillKl);

}  // namespace
