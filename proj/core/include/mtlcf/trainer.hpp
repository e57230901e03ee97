#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mtlcf/data.hpp"
#include "mtlcf/losses.hpp"
#include "mtlcf/model.hpp"

namespace mtlcf {

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_low = -5.0;
  double clip_high = 5.0;
};

struct ScheduleConfig {
  double min_rel_improvement = 0.10;  // halve unless dev loss drops by at least this
  int max_halvings = 4;
  int max_epochs = 30;
};

struct OptimizerState {
  AdamConfig config;
  double learning_rate = 0.0;  // always config.learning_rate * 2^-halvings_done
  std::size_t step_count = 0;
  int halvings_done = 0;
  std::vector<std::vector<double>> moment1;  // shaped like the parameters
  std::vector<std::vector<double>> moment2;
  // post-clip extrema observed across all steps, for conformance checks
  double observed_clip_min = 0.0;
  double observed_clip_max = 0.0;
  bool observed_any = false;

  static OptimizerState init(const AdamConfig& config, const std::vector<Tensor>& params);
};

// One optimizer step: clip each gradient element into [clip_low, clip_high],
// then apply a bias-corrected Adam update at the current learning rate.
// Rejects non-finite gradients.
void adam_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads,
               OptimizerState& state);
// Convenience overload reading gradients from the tensors (absent buffer = zeros).
void adam_step(std::vector<Tensor>& params, OptimizerState& state);

// Applies the halving rule to the last two dev losses: halve when the new
// loss fails to improve by at least min_rel_improvement (a drop of exactly
// 10% still counts as improved). Returns whether the rate was halved.
bool schedule_step(const std::vector<double>& dev_loss_history, OptimizerState& state,
                   const ScheduleConfig& schedule);

// Converged when max_halvings is exhausted or the epoch cap is reached.
// dev_loss_history holds the epoch-0 entry plus one entry per epoch.
bool check_converged(const std::vector<double>& dev_loss_history,
                     const OptimizerState& state, const ScheduleConfig& schedule);

enum class TrainMethod { ft, rt, mtlcf };
std::string method_name(TrainMethod method);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double dev_loss = 0.0;
  double cer_org = 0.0;
  double cer_tar = 0.0;
  double sub_loss1 = 0.0;
  double sub_loss2 = 0.0;
  double loss2 = 0.0;

  static std::string csv_header();  // epoch,lr,dev_loss,cer_org,cer_tar,sub_loss1,sub_loss2,loss2
  std::string csv_row() const;
};

struct TrainRun {
  TrainMethod method = TrainMethod::ft;
  HyperParams hyper;
  std::uint64_t seed = 0;
  std::size_t scale_tar = 0;  // target-domain training utterances
  std::vector<EpochRecord> history;  // entry 0 is the initial model's evaluation
  std::vector<LossBreakdown> steps;
  ModelParams final_model;
  // serialized frozen teacher before the first and after the last step
  std::vector<std::uint8_t> teacher_before;
  std::vector<std::uint8_t> teacher_after;
  // flattened parameters after each epoch, when recording is enabled
  std::vector<std::vector<double>> trajectory;
  std::uint64_t test_org_fingerprint = 0;
  std::uint64_t test_tar_fingerprint = 0;
};

struct TrainOptions {
  AdamConfig adam;
  ScheduleConfig schedule;
  std::uint64_t seed = 7;
  const std::vector<FeatureSequence>* test_org = nullptr;
  const std::vector<FeatureSequence>* test_tar = nullptr;
  std::string run_dir;  // when set, writes history.csv, steps.csv and checkpoints
  bool record_trajectory = false;
};

// Dual-batch multi-task training against a frozen copy of `model0`: each step
// samples one batch per domain, mixes the distillation and CTC terms, and
// updates only the student. The teacher is bit-identical before and after.
TrainRun train_mtlcf(const ModelParams& model0, const DatasetSplit& data0,
                     const DatasetSplit& data1, const HyperParams& hyper,
                     const TrainOptions& opts);

// Fine-tuning: a copy of `model0` trained with pure CTC on the target domain.
TrainRun train_ft(const ModelParams& model0, const DatasetSplit& data1,
                  const HyperParams& hyper, const TrainOptions& opts);

// Retraining: a freshly initialized model trained with CTC on pooled data.
// `pooled.train` / `pooled.dev` hold both domains' utterances.
TrainRun train_rt(const DatasetSplit& pooled, const ModelConfig& config,
                  const HyperParams& hyper, const TrainOptions& opts);

// Concatenates two datasets' train and dev splits (tests left empty).
DatasetSplit pool_datasets(const DatasetSplit& a, const DatasetSplit& b);

void write_history_csv(const TrainRun& run, const std::string& path);
void write_steps_csv(const TrainRun& run, const std::string& path);

}  // namespace mtlcf
