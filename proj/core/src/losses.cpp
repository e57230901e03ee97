#include "mtlcf/losses.hpp"

#include <cmath>
#include <cstdio>

#include "mtlcf/errors.hpp"

namespace mtlcf {

void HyperParams::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("hyper: alpha must be in [0, 1]");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("hyper: beta must be in [0, 1]");
  if (!(temperature > 0.0)) throw ConfigError("hyper: temperature must be positive");
  if (batch_size < 1) throw ConfigError("hyper: batch_size must be >= 1");
}

std::string LossBreakdown::csv_header() {
  return "step,sub_loss1,sub_loss2,loss1,loss2,total";
}

std::string LossBreakdown::csv_row(std::size_t step) const {
  char buf[192];
  std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g", step,
                sub_loss1, sub_loss2, loss1, loss2, total);
  return buf;
}

Tensor distill_kl(const Tensor& student_logits, const Tensor& teacher_logits,
                  double temperature) {
  if (student_logits.shape() != teacher_logits.shape())
    throw std::invalid_argument("distill_kl: shape mismatch " +
                                shape_to_string(student_logits.shape()) + " vs " +
                                shape_to_string(teacher_logits.shape()));
  if (teacher_logits.requires_grad())
    throw std::invalid_argument("distill_kl: teacher must not require grad");
  if (!(temperature > 0.0)) throw std::invalid_argument("distill_kl: temperature must be positive");

  const double inv_t = 1.0 / temperature;
  Tensor ls_student = log_softmax(scale(student_logits, inv_t));
  Tensor ls_teacher = log_softmax(scale(teacher_logits, inv_t));
  Tensor kl_elems = mul(exp(ls_student), sub(ls_student, ls_teacher));
  const double frames = static_cast<double>(student_logits.rows());
  return scale(sum(kl_elems), temperature * temperature / frames);
}

Task1Result loss_task1(const Tensor& student_out0, const Tensor& teacher_out0,
                       const LabelSequence& labels0, const HyperParams& hyper) {
  hyper.validate();
  Tensor distill = distill_kl(student_out0, teacher_out0, hyper.temperature);
  Tensor ctc = ctc_loss_node(student_out0, labels0);
  Task1Result r;
  r.distill = distill.item();
  r.ctc = ctc.item();
  r.value = add(scale(distill, hyper.alpha), scale(ctc, 1.0 - hyper.alpha));
  return r;
}

TotalResult loss_total(const Task1Result& task1, const Tensor& ctc_on_data1,
                       const HyperParams& hyper) {
  hyper.validate();
  const double l1 = task1.value.item();
  const double l2 = ctc_on_data1.item();
  if (!std::isfinite(l1) || !std::isfinite(l2))
    throw NumericError("loss_total: non-finite input (loss1=" + std::to_string(l1) +
                       ", loss2=" + std::to_string(l2) + ")");
  TotalResult r;
  r.value = add(scale(task1.value, hyper.beta), scale(ctc_on_data1, 1.0 - hyper.beta));
  r.breakdown.sub_loss1 = task1.distill;
  r.breakdown.sub_loss2 = task1.ctc;
  r.breakdown.loss1 = l1;
  r.breakdown.loss2 = l2;
  r.breakdown.total = r.value.item();
  return r;
}

Tensor aggregate_terms(const std::vector<Tensor>& terms, BatchAggregate mode) {
  if (terms.empty()) throw std::invalid_argument("aggregate_terms: empty batch");
  Tensor acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  if (mode == BatchAggregate::mean)
    acc = scale(acc, 1.0 / static_cast<double>(terms.size()));
  return acc;
}

TotalResult compose_objective(const Tensor& sub1, const Tensor& sub2,
                              const Tensor& loss2, const HyperParams& hyper) {
  hyper.validate();
  Task1Result task1;
  task1.distill = sub1.item();
  task1.ctc = sub2.item();
  task1.value = add(scale(sub1, hyper.alpha), scale(sub2, 1.0 - hyper.alpha));
  return loss_total(task1, loss2, hyper);
}

}  // namespace mtlcf
