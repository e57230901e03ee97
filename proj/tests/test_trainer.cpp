#include <doctest.h>

#include <cmath>
#include <set>

#include "mtlcf/errors.hpp"
#include "mtlcf/eval.hpp"
#include "mtlcf/trainer.hpp"

using namespace mtlcf;

namespace {

DomainSpec tiny_domain(int domain_id, double shift, std::uint64_t seed) {
  DomainSpec s;
  s.domain_id = domain_id;
  s.vocab_size = 6;
  s.raw_feature_dim = 4;
  s.utterance_len_min = 3;
  s.utterance_len_max = 5;
  s.prototype_shift = shift;
  s.noise_sigma = 0.3;
  s.seed = seed;
  s.train_utterances = 24;
  s.dev_utterances = 6;
  s.test_utterances = 6;
  return s;
}

ModelConfig tiny_model(std::uint64_t seed = 3) {
  ModelConfig c;
  c.input_dim = 12;
  c.lstm_layers = 1;
  c.lstm_cells = 8;
  c.relu_units = 16;
  c.vocab_size = 6;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("adam matches a hand-computed recurrence on a scalar parameter") {
  std::vector<Tensor> params = {Tensor::scalar(1.0, true)};
  AdamConfig cfg;
  OptimizerState state = OptimizerState::init(cfg, params);

  adam_step(params, {{0.3}}, state);
  adam_step(params, {{-0.1}}, state);

  // independent scalar recurrence
  double w = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    const double g = t == 1 ? 0.3 : -0.1;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mhat = m / (1.0 - std::pow(0.9, t));
    const double vhat = v / (1.0 - std::pow(0.999, t));
    w -= 0.001 * mhat / (std::sqrt(vhat) + 1e-8);
  }
  CHECK(params[0].item() == doctest::Approx(w).epsilon(1e-15));
  CHECK(state.step_count == 2);
}

TEST_CASE("gradients are clipped elementwise into the configured interval") {
  AdamConfig cfg;
  std::vector<Tensor> a = {Tensor::scalar(0.0, true)};
  OptimizerState sa = OptimizerState::init(cfg, a);
  adam_step(a, {{7.2}}, sa);

  std::vector<Tensor> b = {Tensor::scalar(0.0, true)};
  OptimizerState sb = OptimizerState::init(cfg, b);
  adam_step(b, {{5.0}}, sb);

  CHECK(a[0].item() == b[0].item());  // 7.2 treated as 5.0
  CHECK(sa.observed_clip_max == 5.0);

  std::vector<Tensor> c = {Tensor::scalar(0.0, true)};
  OptimizerState sc = OptimizerState::init(cfg, c);
  adam_step(c, {{-123.0}}, sc);
  CHECK(sc.observed_clip_min == -5.0);
}

TEST_CASE("zero gradients leave parameters unchanged") {
  std::vector<Tensor> params = {Tensor::from_values({3}, {1.0, -2.0, 0.5}, true)};
  OptimizerState state = OptimizerState::init(AdamConfig{}, params);
  adam_step(params, {{0.0, 0.0, 0.0}}, state);
  CHECK(params[0].values()[0] == 1.0);
  CHECK(params[0].values()[1] == -2.0);
  CHECK(params[0].values()[2] == 0.5);
}

TEST_CASE("non-finite gradients are rejected") {
  std::vector<Tensor> params = {Tensor::scalar(0.0, true)};
  OptimizerState state = OptimizerState::init(AdamConfig{}, params);
  CHECK_THROWS_AS(adam_step(params, {{std::nan("")}}, state), NumericError);
}

TEST_CASE("halving rule including the exact-10% boundary") {
  ScheduleConfig sched;
  std::vector<Tensor> params = {Tensor::scalar(0.0, true)};
  OptimizerState state = OptimizerState::init(AdamConfig{}, params);

  CHECK_FALSE(schedule_step({1.0, 0.85}, state, sched));  // 15% drop
  CHECK(state.learning_rate == 0.001);

  CHECK(schedule_step({1.0, 0.95}, state, sched));  // 5% drop -> halve
  CHECK(state.learning_rate == 0.0005);
  CHECK(state.halvings_done == 1);

  // a drop of exactly 10% satisfies "at least 10%": no halve
  CHECK_FALSE(schedule_step({1.0, 1.0 - 0.10}, state, sched));
  CHECK(state.halvings_done == 1);

  CHECK_THROWS_AS(schedule_step({1.0}, state, sched), std::invalid_argument);
}

TEST_CASE("learning rate always equals initial times 2^-halvings") {
  ScheduleConfig sched;
  std::vector<Tensor> params = {Tensor::scalar(0.0, true)};
  OptimizerState state = OptimizerState::init(AdamConfig{}, params);
  std::vector<double> losses = {1.0};
  for (int k = 0; k < 3; ++k) {
    losses.push_back(losses.back());  // no improvement
    schedule_step(losses, state, sched);
  }
  CHECK(state.halvings_done == 3);
  CHECK(state.learning_rate == 0.001 * std::pow(2.0, -3));
}

TEST_CASE("convergence detection") {
  ScheduleConfig sched;
  std::vector<Tensor> params = {Tensor::scalar(0.0, true)};
  OptimizerState state = OptimizerState::init(AdamConfig{}, params);
  CHECK_FALSE(check_converged({1.0}, state, sched));

  state.halvings_done = 4;
  CHECK(check_converged({1.0, 0.9}, state, sched));

  state.halvings_done = 0;
  std::vector<double> long_history(31, 1.0);  // 30 epochs done
  CHECK(check_converged(long_history, state, sched));
}

TEST_CASE("overfitting a single utterance drives its cer to zero") {
  DomainSpec spec = tiny_domain(0, 0.0, 41);
  spec.train_utterances = 1;
  spec.dev_utterances = 1;
  spec.test_utterances = 1;
  DatasetSplit data = gen_domain(spec);

  ModelParams model = init_model(tiny_model());
  std::vector<Tensor> params = model.parameters();
  OptimizerState state = OptimizerState::init(AdamConfig{.learning_rate = 0.01}, params);
  const Tensor stacked = stack_lfr(data.train[0].frames);
  for (int step = 0; step < 120; ++step) {
    Tensor loss = ctc_loss_node(model.forward(stacked), data.train[0].labels);
    backward(loss);
    adam_step(params, state);
    model.zero_grads();
  }
  EvalReport report = evaluate(model, data.train, "train");
  CHECK(report.mean_cer == 0.0);
}

TEST_CASE("ft smoke run: deterministic, structured history") {
  DatasetSplit data1 = gen_domain(tiny_domain(1, 1.0, 42));
  DatasetSplit data0 = gen_domain(tiny_domain(0, 0.0, 43));
  ModelParams base = init_model(tiny_model());

  HyperParams hyper;
  hyper.batch_size = 6;
  TrainOptions opts;
  opts.seed = 5;
  opts.schedule.max_epochs = 2;
  opts.test_org = &data0.test;
  opts.test_tar = &data1.test;

  TrainRun a = train_ft(base, data1, hyper, opts);
  TrainRun b = train_ft(base, data1, hyper, opts);

  REQUIRE(a.history.size() == 3);  // epoch 0 + 2 epochs
  CHECK(a.history[0].epoch == 0);
  CHECK(a.history[0].lr == 0.001);
  CHECK(a.scale_tar == 24);
  CHECK(a.steps.size() == 2 * 4);  // ceil(24/6) batches per epoch

  // identical seeds -> identical runs
  CHECK(params_fingerprint(a.final_model) == params_fingerprint(b.final_model));
  for (std::size_t i = 0; i < a.history.size(); ++i)
    CHECK(a.history[i].csv_row() == b.history[i].csv_row());

  // training loss fell over two epochs
  CHECK(a.history.back().dev_loss < a.history.front().dev_loss);
}

TEST_CASE("mtlcf teacher is byte-identical before and after training") {
  DatasetSplit data0 = gen_domain(tiny_domain(0, 0.0, 50));
  DatasetSplit data1 = gen_domain(tiny_domain(1, 1.2, 51));
  ModelParams base = init_model(tiny_model());

  HyperParams hyper;
  hyper.batch_size = 6;
  TrainOptions opts;
  opts.seed = 9;
  opts.schedule.max_epochs = 2;

  TrainRun run = train_mtlcf(base, data0, data1, hyper, opts);
  REQUIRE_FALSE(run.teacher_before.empty());
  CHECK(run.teacher_before == run.teacher_after);
  // the student must have moved
  CHECK(params_fingerprint(run.final_model) != params_fingerprint(base));
  // breakdown identities hold on every recorded step
  for (const LossBreakdown& b : run.steps) {
    CHECK(std::abs(b.loss1 - (0.5 * b.sub_loss1 + 0.5 * b.sub_loss2)) < 1e-12);
    CHECK(std::abs(b.total - (0.5 * b.loss1 + 0.5 * b.loss2)) < 1e-12);
    CHECK(b.sub_loss1 >= 0.0);
    CHECK(b.sub_loss2 >= 0.0);
    CHECK(b.loss2 >= 0.0);
  }
}

TEST_CASE("mtlcf with beta=0 walks the ft trajectory exactly") {
  DatasetSplit data0 = gen_domain(tiny_domain(0, 0.0, 60));
  DatasetSplit data1 = gen_domain(tiny_domain(1, 1.2, 61));
  ModelParams base = init_model(tiny_model());

  HyperParams hyper;
  hyper.batch_size = 6;
  hyper.beta = 0.0;
  TrainOptions opts;
  opts.seed = 12;
  opts.schedule.max_epochs = 2;
  opts.record_trajectory = true;

  TrainRun mtlcf_run = train_mtlcf(base, data0, data1, hyper, opts);

  HyperParams ft_hyper = hyper;
  TrainRun ft_run = train_ft(base, data1, ft_hyper, opts);

  REQUIRE(mtlcf_run.trajectory.size() == ft_run.trajectory.size());
  double max_diff = 0.0;
  for (std::size_t e = 0; e < ft_run.trajectory.size(); ++e) {
    REQUIRE(mtlcf_run.trajectory[e].size() == ft_run.trajectory[e].size());
    for (std::size_t i = 0; i < ft_run.trajectory[e].size(); ++i)
      max_diff = std::max(max_diff,
                          std::abs(mtlcf_run.trajectory[e][i] - ft_run.trajectory[e][i]));
  }
  CHECK(max_diff < 1e-12);
}

TEST_CASE("rt trains from fresh initialization on pooled batches of both domains") {
  DatasetSplit data0 = gen_domain(tiny_domain(0, 0.0, 70));
  DatasetSplit data1 = gen_domain(tiny_domain(1, 1.2, 71));
  DatasetSplit pooled = pool_datasets(data0, data1);
  CHECK(pooled.train.size() == 48);

  std::set<int> domains;
  auto batches = make_batches(pooled.train, 6, 1);
  for (const auto& batch : batches)
    for (std::size_t idx : batch) domains.insert(pooled.train[idx].domain_id);
  CHECK(domains == std::set<int>{0, 1});

  HyperParams hyper;
  hyper.batch_size = 6;
  TrainOptions opts;
  opts.seed = 2;
  opts.schedule.max_epochs = 1;
  TrainRun a = train_rt(pooled, tiny_model(99), hyper, opts);
  TrainRun b = train_rt(pooled, tiny_model(99), hyper, opts);
  CHECK(params_fingerprint(a.final_model) == params_fingerprint(b.final_model));
  CHECK(a.steps.size() == 8);  // ceil(48/6)
}

TEST_CASE("history and steps serialize with pinned headers") {
  CHECK(EpochRecord::csv_header() == "epoch,lr,dev_loss,cer_org,cer_tar,sub_loss1,sub_loss2,loss2");
  EpochRecord r;
  r.epoch = 2;
  r.lr = 0.0005;
  CHECK(r.csv_row().rfind("2,0.0005", 0) == 0);
}

}  // TEST_SUITE
