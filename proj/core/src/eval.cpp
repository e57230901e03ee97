#include "mtlcf/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

namespace mtlcf {

std::size_t edit_distance(const LabelSequence& a, const LabelSequence& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double cer(const LabelSequence& hyp, const LabelSequence& ref) {
  if (ref.empty()) return hyp.empty() ? 0.0 : static_cast<double>(hyp.size());
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

std::string EvalReport::csv_header() { return "dataset_id,utterance_count,mean_cer"; }

std::string EvalReport::csv_row() const {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%s,%zu,%.17g", dataset_id.c_str(), utterance_count, mean_cer);
  return buf;
}

EvalReport evaluate(const ModelParams& model, const std::vector<FeatureSequence>& split,
                    const std::string& dataset_id) {
  NoGradGuard no_grad;
  EvalReport report;
  report.dataset_id = dataset_id;
  report.utterance_count = split.size();
  report.per_utterance.reserve(split.size());
  double acc = 0.0;
  for (const FeatureSequence& u : split) {
    Tensor logprobs = model.forward(stack_lfr(u.frames));
    const double c = cer(greedy_decode(logprobs), u.labels);
    report.per_utterance.push_back(c);
    acc += c;
  }
  report.mean_cer = split.empty() ? 0.0 : acc / static_cast<double>(split.size());
  return report;
}

}  // namespace mtlcf
