#pragma once

#include <string>
#include <vector>

#include "mtlcf/ctc.hpp"
#include "mtlcf/tensor.hpp"

namespace mtlcf {

enum class BatchAggregate { mean, sum };

struct HyperParams {
  double alpha = 0.5;        // weight of the distillation term inside task 1
  double beta = 0.5;         // weight of task 1 against the target-domain task
  double temperature = 1.0;  // distillation sharpness
  std::size_t batch_size = 8;
  BatchAggregate aggregate = BatchAggregate::mean;

  void validate() const;
};

// Scalar values of one step's objective decomposition.
struct LossBreakdown {
  double sub_loss1 = 0.0;  // distillation term
  double sub_loss2 = 0.0;  // CTC on original-domain data
  double loss1 = 0.0;      // alpha mix
  double loss2 = 0.0;      // CTC on target-domain data
  double total = 0.0;      // beta mix

  static std::string csv_header();  // step,sub_loss1,sub_loss2,loss1,loss2,total
  std::string csv_row(std::size_t step) const;
};

// T^2 * mean over frames of KL(softmax(student/T) || softmax(teacher/T)).
// The teacher input must not require grad; gradient flows into the student.
Tensor distill_kl(const Tensor& student_logits, const Tensor& teacher_logits,
                  double temperature);

// alpha * distill + (1 - alpha) * ctc(student_out0, labels0), one utterance.
struct Task1Result {
  Tensor value;
  double distill = 0.0;
  double ctc = 0.0;
};
Task1Result loss_task1(const Tensor& student_out0, const Tensor& teacher_out0,
                       const LabelSequence& labels0, const HyperParams& hyper);

// beta * loss1 + (1 - beta) * loss2 with the full breakdown. Rejects
// non-finite inputs before they can reach an optimizer step.
struct TotalResult {
  Tensor value;
  LossBreakdown breakdown;
};
TotalResult loss_total(const Task1Result& task1, const Tensor& ctc_on_data1,
                       const HyperParams& hyper);

// Scalar fold over per-utterance loss terms (mean by default).
Tensor aggregate_terms(const std::vector<Tensor>& terms, BatchAggregate mode);

// Batch-level objective from aggregated sub-terms; used by the trainer.
TotalResult compose_objective(const Tensor& sub1, const Tensor& sub2,
                              const Tensor& loss2, const HyperParams& hyper);

}  // namespace mtlcf
