#include "mtlcf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "mtlcf/errors.hpp"
#include "mtlcf/eval.hpp"

namespace mtlcf {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

void adam_apply(std::span<double> values, std::span<const double> grads,
                std::vector<double>& m1, std::vector<double>& m2, OptimizerState& state,
                double bias1, double bias2) {
  const AdamConfig& c = state.config;
  for (std::size_t j = 0; j < values.size(); ++j) {
    double g = grads[j];
    if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient element");
    g = std::clamp(g, c.clip_low, c.clip_high);
    if (!state.observed_any) {
      state.observed_clip_min = g;
      state.observed_clip_max = g;
      state.observed_any = true;
    } else {
      state.observed_clip_min = std::min(state.observed_clip_min, g);
      state.observed_clip_max = std::max(state.observed_clip_max, g);
    }
    m1[j] = c.beta1 * m1[j] + (1.0 - c.beta1) * g;
    m2[j] = c.beta2 * m2[j] + (1.0 - c.beta2) * g * g;
    const double mhat = m1[j] / bias1;
    const double vhat = m2[j] / bias2;
    values[j] -= state.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
  }
}

std::vector<Tensor> stack_all(const std::vector<FeatureSequence>& split) {
  std::vector<Tensor> out;
  out.reserve(split.size());
  for (const FeatureSequence& u : split) out.push_back(stack_lfr(u.frames));
  return out;
}

std::vector<double> flatten_params(const ModelParams& params) {
  std::vector<double> out;
  for (const Tensor& t : params.parameters())
    out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

struct EngineSetup {
  TrainMethod method = TrainMethod::ft;
  ModelParams student;
  std::optional<ModelParams> teacher;  // frozen, mtlcf only
  const std::vector<FeatureSequence>* train_primary = nullptr;
  const std::vector<FeatureSequence>* train_support = nullptr;
  const std::vector<FeatureSequence>* dev_primary = nullptr;
  const std::vector<FeatureSequence>* dev_support = nullptr;
  std::size_t scale_tar = 0;
};

class Engine {
 public:
  Engine(EngineSetup setup, const HyperParams& hyper, const TrainOptions& opts)
      : setup_(std::move(setup)), hyper_(hyper), opts_(opts) {
    hyper_.validate();
    params_ = setup_.student.parameters();
    state_ = OptimizerState::init(opts_.adam, params_);
    stacked_primary_ = stack_all(*setup_.train_primary);
    stacked_dev_primary_ = stack_all(*setup_.dev_primary);
    if (setup_.method == TrainMethod::mtlcf) {
      stacked_support_ = stack_all(*setup_.train_support);
      stacked_dev_support_ = stack_all(*setup_.dev_support);
      // the teacher is frozen, so its outputs per utterance never change
      NoGradGuard no_grad;
      teacher_train_.reserve(stacked_support_.size());
      for (const Tensor& x : stacked_support_) teacher_train_.push_back(setup_.teacher->forward(x));
      teacher_dev_.reserve(stacked_dev_support_.size());
      for (const Tensor& x : stacked_dev_support_) teacher_dev_.push_back(setup_.teacher->forward(x));
    }
  }

  TrainRun run() {
    TrainRun out;
    out.method = setup_.method;
    out.hyper = hyper_;
    out.seed = opts_.seed;
    out.scale_tar = setup_.scale_tar;
    if (opts_.test_org != nullptr) out.test_org_fingerprint = split_fingerprint(*opts_.test_org);
    if (opts_.test_tar != nullptr) out.test_tar_fingerprint = split_fingerprint(*opts_.test_tar);
    if (setup_.teacher.has_value()) out.teacher_before = serialize_params(*setup_.teacher);

    if (!opts_.run_dir.empty())
      std::filesystem::create_directories(opts_.run_dir + "/checkpoints");

    BatchStream primary(*setup_.train_primary, hyper_.batch_size, mix(opts_.seed, 1));
    std::optional<BatchStream> support;
    if (setup_.method == TrainMethod::mtlcf) {
      const auto mode = setup_.train_support->size() < setup_.train_primary->size()
                            ? BatchStream::Refill::resample
                            : BatchStream::Refill::reshuffle;
      support.emplace(*setup_.train_support, hyper_.batch_size, mix(opts_.seed, 0), mode);
    }

    std::vector<double> dev_losses;
    record_epoch(out, 0, dev_losses);

    int epoch = 0;
    while (!check_converged(dev_losses, state_, opts_.schedule)) {
      ++epoch;
      const std::size_t steps = primary.batches_per_pass();
      for (std::size_t s = 0; s < steps; ++s) {
        const auto batch1 = primary.next();
        LossBreakdown breakdown;
        try {
          if (setup_.method == TrainMethod::mtlcf) {
            breakdown = step_mtlcf(support->next(), batch1);
          } else {
            breakdown = step_ctc(batch1);
          }
        } catch (const NumericError& e) {
          dump_abort(e.what(), epoch, breakdown);
          throw;
        }
        out.steps.push_back(breakdown);
      }
      record_epoch(out, epoch, dev_losses);
      schedule_step(dev_losses, state_, opts_.schedule);
      if (opts_.record_trajectory) out.trajectory.push_back(flatten_params(setup_.student));
      if (!opts_.run_dir.empty()) {
        char name[64];
        std::snprintf(name, sizeof(name), "/checkpoints/epoch_%03d.ckpt", epoch);
        save_checkpoint(setup_.student, opts_.run_dir + name);
      }
    }

    if (setup_.teacher.has_value()) out.teacher_after = serialize_params(*setup_.teacher);
    out.final_model = std::move(setup_.student);
    if (!opts_.run_dir.empty()) {
      save_checkpoint(out.final_model, opts_.run_dir + "/final.ckpt");
      write_history_csv(out, opts_.run_dir + "/history.csv");
      write_steps_csv(out, opts_.run_dir + "/steps.csv");
    }
    return out;
  }

 private:
  LossBreakdown step_mtlcf(const std::vector<std::size_t>& batch0,
                           const std::vector<std::size_t>& batch1) {
    std::vector<Tensor> kl_terms, ctc0_terms, ctc1_terms;
    kl_terms.reserve(batch0.size());
    ctc0_terms.reserve(batch0.size());
    ctc1_terms.reserve(batch1.size());
    for (std::size_t idx : batch0) {
      Tensor student_out = setup_.student.forward(stacked_support_[idx]);
      try {
        ctc0_terms.push_back(ctc_loss_node(student_out, (*setup_.train_support)[idx].labels));
      } catch (const InfeasibleUtterance& e) {
        warn_skip(e.what());
        continue;
      }
      kl_terms.push_back(distill_kl(student_out, teacher_train_[idx], hyper_.temperature));
    }
    for (std::size_t idx : batch1) {
      Tensor student_out = setup_.student.forward(stacked_primary_[idx]);
      try {
        ctc1_terms.push_back(ctc_loss_node(student_out, (*setup_.train_primary)[idx].labels));
      } catch (const InfeasibleUtterance& e) {
        warn_skip(e.what());
      }
    }
    if (kl_terms.empty() || ctc1_terms.empty())
      throw NumericError("training step: batch has no feasible utterances");

    Tensor sub1 = aggregate_terms(kl_terms, hyper_.aggregate);
    Tensor sub2 = aggregate_terms(ctc0_terms, hyper_.aggregate);
    Tensor loss2 = aggregate_terms(ctc1_terms, hyper_.aggregate);
    TotalResult res = compose_objective(sub1, sub2, loss2, hyper_);
    backward(res.value);
    adam_step(params_, state_);
    setup_.student.zero_grads();
    return res.breakdown;
  }

  LossBreakdown step_ctc(const std::vector<std::size_t>& batch) {
    std::vector<Tensor> terms;
    terms.reserve(batch.size());
    for (std::size_t idx : batch) {
      Tensor out = setup_.student.forward(stacked_primary_[idx]);
      try {
        terms.push_back(ctc_loss_node(out, (*setup_.train_primary)[idx].labels));
      } catch (const InfeasibleUtterance& e) {
        warn_skip(e.what());
      }
    }
    if (terms.empty()) throw NumericError("training step: batch has no feasible utterances");
    Tensor loss = aggregate_terms(terms, hyper_.aggregate);
    LossBreakdown breakdown;
    breakdown.loss2 = loss.item();
    breakdown.total = breakdown.loss2;
    if (!std::isfinite(breakdown.total)) throw NumericError("training step: non-finite loss");
    backward(loss);
    adam_step(params_, state_);
    setup_.student.zero_grads();
    return breakdown;
  }

  LossBreakdown dev_breakdown() {
    NoGradGuard no_grad;
    if (setup_.method == TrainMethod::mtlcf) {
      std::vector<Tensor> kl_terms, ctc0_terms, ctc1_terms;
      for (std::size_t i = 0; i < stacked_dev_support_.size(); ++i) {
        Tensor out = setup_.student.forward(stacked_dev_support_[i]);
        kl_terms.push_back(distill_kl(out, teacher_dev_[i], hyper_.temperature));
        ctc0_terms.push_back(ctc_loss_node(out, (*setup_.dev_support)[i].labels));
      }
      for (std::size_t i = 0; i < stacked_dev_primary_.size(); ++i) {
        Tensor out = setup_.student.forward(stacked_dev_primary_[i]);
        ctc1_terms.push_back(ctc_loss_node(out, (*setup_.dev_primary)[i].labels));
      }
      TotalResult res = compose_objective(aggregate_terms(kl_terms, hyper_.aggregate),
                                          aggregate_terms(ctc0_terms, hyper_.aggregate),
                                          aggregate_terms(ctc1_terms, hyper_.aggregate), hyper_);
      return res.breakdown;
    }
    std::vector<Tensor> terms;
    for (std::size_t i = 0; i < stacked_dev_primary_.size(); ++i) {
      Tensor out = setup_.student.forward(stacked_dev_primary_[i]);
      terms.push_back(ctc_loss_node(out, (*setup_.dev_primary)[i].labels));
    }
    LossBreakdown breakdown;
    breakdown.loss2 = aggregate_terms(terms, hyper_.aggregate).item();
    breakdown.total = breakdown.loss2;
    return breakdown;
  }

  void record_epoch(TrainRun& out, int epoch, std::vector<double>& dev_losses) {
    LossBreakdown dev = dev_breakdown();
    if (!std::isfinite(dev.total)) {
      dump_abort("non-finite dev loss", epoch, dev);
      throw NumericError("dev loss is non-finite at epoch " + std::to_string(epoch));
    }
    dev_losses.push_back(dev.total);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = state_.learning_rate;
    rec.dev_loss = dev.total;
    rec.sub_loss1 = dev.sub_loss1;
    rec.sub_loss2 = dev.sub_loss2;
    rec.loss2 = dev.loss2;
    if (opts_.test_org != nullptr)
      rec.cer_org = evaluate(setup_.student, *opts_.test_org, "test_org").mean_cer;
    if (opts_.test_tar != nullptr)
      rec.cer_tar = evaluate(setup_.student, *opts_.test_tar, "test_tar").mean_cer;
    out.history.push_back(rec);
  }

  void warn_skip(const char* what) {
    if (++skipped_ <= 3)
      std::cerr << "[mtlcf] warning: skipping infeasible utterance: " << what << "\n";
  }

  void dump_abort(const std::string& reason, int epoch, const LossBreakdown& breakdown) {
    std::cerr << "[mtlcf] numeric abort at epoch " << epoch << " step " << state_.step_count
              << " lr " << state_.learning_rate << ": " << reason << "\n";
    if (opts_.run_dir.empty()) return;
    std::ofstream dump(opts_.run_dir + "/abort_dump.txt");
    dump << "reason: " << reason << "\n"
         << "epoch: " << epoch << "\n"
         << "step: " << state_.step_count << "\n"
         << "learning_rate: " << state_.learning_rate << "\n"
         << "halvings_done: " << state_.halvings_done << "\n"
         << LossBreakdown::csv_header() << "\n"
         << breakdown.csv_row(state_.step_count) << "\n";
  }

  EngineSetup setup_;
  HyperParams hyper_;
  TrainOptions opts_;
  std::vector<Tensor> params_;
  OptimizerState state_;
  std::vector<Tensor> stacked_primary_, stacked_support_;
  std::vector<Tensor> stacked_dev_primary_, stacked_dev_support_;
  std::vector<Tensor> teacher_train_, teacher_dev_;
  int skipped_ = 0;
};

}  // namespace

OptimizerState OptimizerState::init(const AdamConfig& config, const std::vector<Tensor>& params) {
  OptimizerState s;
  s.config = config;
  s.learning_rate = config.learning_rate;
  s.moment1.reserve(params.size());
  s.moment2.reserve(params.size());
  for (const Tensor& p : params) {
    s.moment1.emplace_back(p.size(), 0.0);
    s.moment2.emplace_back(p.size(), 0.0);
  }
  return s;
}

void adam_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads,
               OptimizerState& state) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adam_step: params/grads size mismatch");
  state.step_count += 1;
  const double bias1 = 1.0 - std::pow(state.config.beta1, static_cast<double>(state.step_count));
  const double bias2 = 1.0 - std::pow(state.config.beta2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].size())
      throw std::invalid_argument("adam_step: gradient shape mismatch at parameter " +
                                  std::to_string(i));
    adam_apply(params[i].values_mut(), grads[i], state.moment1[i], state.moment2[i], state,
               bias1, bias2);
  }
}

void adam_step(std::vector<Tensor>& params, OptimizerState& state) {
  state.step_count += 1;
  const double bias1 = 1.0 - std::pow(state.config.beta1, static_cast<double>(state.step_count));
  const double bias2 = 1.0 - std::pow(state.config.beta2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].has_grad()) {
      adam_apply(params[i].values_mut(), params[i].grad(), state.moment1[i], state.moment2[i],
                 state, bias1, bias2);
    } else {
      std::vector<double> zeros(params[i].size(), 0.0);
      adam_apply(params[i].values_mut(), zeros, state.moment1[i], state.moment2[i], state,
                 bias1, bias2);
    }
  }
}

bool schedule_step(const std::vector<double>& dev_loss_history, OptimizerState& state,
                   const ScheduleConfig& schedule) {
  if (dev_loss_history.size() < 2)
    throw std::invalid_argument("schedule_step: need at least one prior epoch's dev loss");
  const double prev = dev_loss_history[dev_loss_history.size() - 2];
  const double cur = dev_loss_history.back();
  // a drop of exactly min_rel_improvement still counts as improved
  if (cur > (1.0 - schedule.min_rel_improvement) * prev) {
    state.learning_rate *= 0.5;
    state.halvings_done += 1;
    return true;
  }
  return false;
}

bool check_converged(const std::vector<double>& dev_loss_history, const OptimizerState& state,
                     const ScheduleConfig& schedule) {
  if (state.halvings_done >= schedule.max_halvings) return true;
  const int epochs_done = dev_loss_history.empty()
                              ? 0
                              : static_cast<int>(dev_loss_history.size()) - 1;
  return epochs_done >= schedule.max_epochs;
}

std::string method_name(TrainMethod method) {
  switch (method) {
    case TrainMethod::ft: return "ft";
    case TrainMethod::rt: return "rt";
    case TrainMethod::mtlcf: return "mtlcf";
  }
  return "unknown";
}

std::string EpochRecord::csv_header() {
  return "epoch,lr,dev_loss,cer_org,cer_tar,sub_loss1,sub_loss2,loss2";
}

std::string EpochRecord::csv_row() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", epoch, lr,
                dev_loss, cer_org, cer_tar, sub_loss1, sub_loss2, loss2);
  return buf;
}

TrainRun train_mtlcf(const ModelParams& model0, const DatasetSplit& data0,
                     const DatasetSplit& data1, const HyperParams& hyper,
                     const TrainOptions& opts) {
  EngineSetup setup;
  setup.method = TrainMethod::mtlcf;
  setup.student = model0.clone();
  setup.student.set_frozen(false);
  setup.teacher = model0.clone();
  setup.teacher->set_frozen(true);
  setup.train_primary = &data1.train;
  setup.train_support = &data0.train;
  setup.dev_primary = &data1.dev;
  setup.dev_support = &data0.dev;
  setup.scale_tar = data1.train.size();
  return Engine(std::move(setup), hyper, opts).run();
}

TrainRun train_ft(const ModelParams& model0, const DatasetSplit& data1,
                  const HyperParams& hyper, const TrainOptions& opts) {
  EngineSetup setup;
  setup.method = TrainMethod::ft;
  setup.student = model0.clone();
  setup.student.set_frozen(false);
  setup.train_primary = &data1.train;
  setup.dev_primary = &data1.dev;
  setup.scale_tar = data1.train.size();
  return Engine(std::move(setup), hyper, opts).run();
}

TrainRun train_rt(const DatasetSplit& pooled, const ModelConfig& config,
                  const HyperParams& hyper, const TrainOptions& opts) {
  EngineSetup setup;
  setup.method = TrainMethod::rt;
  setup.student = init_model(config);
  setup.train_primary = &pooled.train;
  setup.dev_primary = &pooled.dev;
  std::size_t tar = 0;
  for (const FeatureSequence& u : pooled.train)
    if (u.domain_id != 0) ++tar;
  setup.scale_tar = tar;
  return Engine(std::move(setup), hyper, opts).run();
}

DatasetSplit pool_datasets(const DatasetSplit& a, const DatasetSplit& b) {
  DatasetSplit pooled;
  pooled.train = a.train;
  pooled.train.insert(pooled.train.end(), b.train.begin(), b.train.end());
  pooled.dev = a.dev;
  pooled.dev.insert(pooled.dev.end(), b.dev.begin(), b.dev.end());
  return pooled;
}

void write_history_csv(const TrainRun& run, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write history csv: " + path);
  out << EpochRecord::csv_header() << "\n";
  for (const EpochRecord& r : run.history) out << r.csv_row() << "\n";
}

void write_steps_csv(const TrainRun& run, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write steps csv: " + path);
  out << LossBreakdown::csv_header() << "\n";
  for (std::size_t i = 0; i < run.steps.size(); ++i) out << run.steps[i].csv_row(i + 1) << "\n";
}

}  // namespace mtlcf
