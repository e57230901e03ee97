#include "mtlcf/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace mtlcf {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b), lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

void check_inputs(const Tensor& logprobs, const LabelSequence& labels) {
  if (logprobs.shape().size() != 2)
    throw std::invalid_argument("ctc: logprobs must be [T x V], got " +
                                shape_to_string(logprobs.shape()));
  const int v = static_cast<int>(logprobs.cols());
  for (int sym : labels) {
    if (sym < 1 || sym >= v)
      throw std::invalid_argument("ctc: label symbol " + std::to_string(sym) +
                                  " outside [1, " + std::to_string(v - 1) + "]");
  }
  if (!ctc_feasible(logprobs.rows(), labels))
    throw InfeasibleUtterance("ctc: " + std::to_string(logprobs.rows()) +
                              " frames cannot carry " + std::to_string(labels.size()) +
                              " labels (need >= " + std::to_string(ctc_min_frames(labels)) + ")");
}

}  // namespace

std::size_t ctc_min_frames(const LabelSequence& labels) {
  std::size_t repeats = 0;
  for (std::size_t i = 1; i < labels.size(); ++i)
    if (labels[i] == labels[i - 1]) ++repeats;
  return labels.size() + repeats;
}

bool ctc_feasible(std::size_t frames, const LabelSequence& labels) {
  return frames >= ctc_min_frames(labels);
}

CtcResult ctc_loss(const Tensor& logprobs, const LabelSequence& labels) {
  check_inputs(logprobs, labels);
  const std::size_t t_len = logprobs.rows();
  const std::size_t v = logprobs.cols();
  const auto lp = logprobs.values();

  // blank-augmented state sequence: blank, l1, blank, l2, ..., blank
  const std::size_t s_len = 2 * labels.size() + 1;
  std::vector<int> aug(s_len, kBlank);
  for (std::size_t i = 0; i < labels.size(); ++i) aug[2 * i + 1] = labels[i];

  auto emit = [&](std::size_t t, std::size_t s) { return lp[t * v + aug[s]]; };
  // a diagonal skip into state s is legal when s holds a label that differs
  // from the label two states back
  auto can_skip = [&](std::size_t s) {
    return aug[s] != kBlank && s >= 2 && aug[s] != aug[s - 2];
  };

  std::vector<double> alpha(t_len * s_len, kNegInf);
  alpha[0] = emit(0, 0);
  if (s_len > 1) alpha[1] = emit(0, 1);
  for (std::size_t t = 1; t < t_len; ++t) {
    for (std::size_t s = 0; s < s_len; ++s) {
      double acc = alpha[(t - 1) * s_len + s];
      if (s >= 1) acc = log_add(acc, alpha[(t - 1) * s_len + s - 1]);
      if (can_skip(s)) acc = log_add(acc, alpha[(t - 1) * s_len + s - 2]);
      alpha[t * s_len + s] = acc == kNegInf ? kNegInf : acc + emit(t, s);
    }
  }

  double log_z = alpha[(t_len - 1) * s_len + s_len - 1];
  if (s_len > 1) log_z = log_add(log_z, alpha[(t_len - 1) * s_len + s_len - 2]);
  if (log_z == kNegInf)
    throw InfeasibleUtterance("ctc: zero-probability instance");

  // beta includes the frame-t emission, mirroring alpha
  std::vector<double> beta(t_len * s_len, kNegInf);
  beta[(t_len - 1) * s_len + s_len - 1] = emit(t_len - 1, s_len - 1);
  if (s_len > 1) beta[(t_len - 1) * s_len + s_len - 2] = emit(t_len - 1, s_len - 2);
  for (std::size_t t = t_len - 1; t-- > 0;) {
    for (std::size_t s = 0; s < s_len; ++s) {
      double acc = beta[(t + 1) * s_len + s];
      if (s + 1 < s_len) acc = log_add(acc, beta[(t + 1) * s_len + s + 1]);
      if (s + 2 < s_len && can_skip(s + 2)) acc = log_add(acc, beta[(t + 1) * s_len + s + 2]);
      beta[t * s_len + s] = acc == kNegInf ? kNegInf : acc + emit(t, s);
    }
  }

  // d(-log Z)/d logprob(t,k) = -exp(logsumexp_{s: aug[s]=k}(alpha+beta) - logprob(t,k) - log Z)
  CtcResult result;
  result.loss = -log_z;
  result.grad_logprobs.assign(t_len * v, 0.0);
  std::vector<double> mass(v);
  for (std::size_t t = 0; t < t_len; ++t) {
    std::fill(mass.begin(), mass.end(), kNegInf);
    for (std::size_t s = 0; s < s_len; ++s) {
      const double ab = alpha[t * s_len + s] == kNegInf || beta[t * s_len + s] == kNegInf
                            ? kNegInf
                            : alpha[t * s_len + s] + beta[t * s_len + s];
      if (ab != kNegInf) mass[aug[s]] = log_add(mass[aug[s]], ab);
    }
    for (std::size_t k = 0; k < v; ++k) {
      if (mass[k] == kNegInf) continue;
      result.grad_logprobs[t * v + k] = -std::exp(mass[k] - lp[t * v + k] - log_z);
    }
  }
  return result;
}

double ctc_loss_value(const Tensor& logprobs, const LabelSequence& labels) {
  check_inputs(logprobs, labels);
  const std::size_t t_len = logprobs.rows();
  const std::size_t v = logprobs.cols();
  const auto lp = logprobs.values();
  const std::size_t s_len = 2 * labels.size() + 1;
  std::vector<int> aug(s_len, kBlank);
  for (std::size_t i = 0; i < labels.size(); ++i) aug[2 * i + 1] = labels[i];
  auto emit = [&](std::size_t t, std::size_t s) { return lp[t * v + aug[s]]; };
  auto can_skip = [&](std::size_t s) {
    return aug[s] != kBlank && s >= 2 && aug[s] != aug[s - 2];
  };

  std::vector<double> prev(s_len, kNegInf), cur(s_len, kNegInf);
  prev[0] = emit(0, 0);
  if (s_len > 1) prev[1] = emit(0, 1);
  for (std::size_t t = 1; t < t_len; ++t) {
    for (std::size_t s = 0; s < s_len; ++s) {
      double acc = prev[s];
      if (s >= 1) acc = log_add(acc, prev[s - 1]);
      if (can_skip(s)) acc = log_add(acc, prev[s - 2]);
      cur[s] = acc == kNegInf ? kNegInf : acc + emit(t, s);
    }
    std::swap(prev, cur);
  }
  double log_z = prev[s_len - 1];
  if (s_len > 1) log_z = log_add(log_z, prev[s_len - 2]);
  if (log_z == kNegInf) throw InfeasibleUtterance("ctc: zero-probability instance");
  return -log_z;
}

Tensor ctc_loss_node(const Tensor& logprobs, const LabelSequence& labels) {
  if (!grad_enabled() || !logprobs.requires_grad()) {
    return Tensor::scalar(ctc_loss_value(logprobs, labels));
  }
  CtcResult r = ctc_loss(logprobs, labels);
  auto grad = std::make_shared<std::vector<double>>(std::move(r.grad_logprobs));
  return make_node({1}, {r.loss}, {logprobs}, [logprobs, grad](detail::Node& self) {
    detail::Node* in = logprobs.node();
    if (in == nullptr || !in->requires_grad) return;
    in->ensure_grad();
    const double up = self.grad[0];
    for (std::size_t i = 0; i < grad->size(); ++i) in->grad[i] += up * (*grad)[i];
  });
}

double ctc_brute_force(const Tensor& logprobs, const LabelSequence& labels) {
  if (logprobs.shape().size() != 2)
    throw std::invalid_argument("ctc_brute_force: logprobs must be [T x V]");
  const std::size_t t_len = logprobs.rows();
  const std::size_t v = logprobs.cols();
  double paths = std::pow(static_cast<double>(v), static_cast<double>(t_len));
  if (paths > 1e7) throw std::invalid_argument("ctc_brute_force: instance too large");
  const auto lp = logprobs.values();

  double total = kNegInf;
  std::vector<int> path(t_len, 0);
  std::vector<int> collapsed;
  collapsed.reserve(t_len);
  const auto n_paths = static_cast<std::size_t>(paths);
  for (std::size_t code = 0; code < n_paths; ++code) {
    std::size_t rem = code;
    for (std::size_t t = 0; t < t_len; ++t) {
      path[t] = static_cast<int>(rem % v);
      rem /= v;
    }
    collapsed.clear();
    int prev = -1;
    for (int sym : path) {
      if (sym != prev && sym != kBlank) collapsed.push_back(sym);
      prev = sym;
    }
    if (collapsed.size() != labels.size() ||
        !std::equal(collapsed.begin(), collapsed.end(), labels.begin()))
      continue;
    double logp = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) logp += lp[t * v + path[t]];
    total = log_add(total, logp);
  }
  if (total == kNegInf)
    throw InfeasibleUtterance("ctc_brute_force: no path collapses to the labels");
  return -total;
}

LabelSequence greedy_decode(const Tensor& logprobs) {
  if (logprobs.shape().size() != 2)
    throw std::invalid_argument("greedy_decode: logprobs must be [T x V]");
  const std::size_t t_len = logprobs.rows();
  const std::size_t v = logprobs.cols();
  const auto lp = logprobs.values();
  LabelSequence out;
  int prev = -1;
  for (std::size_t t = 0; t < t_len; ++t) {
    int best = 0;
    double best_lp = lp[t * v];
    for (std::size_t k = 1; k < v; ++k) {
      if (lp[t * v + k] > best_lp) {
        best_lp = lp[t * v + k];
        best = static_cast<int>(k);
      }
    }
    if (best != prev && best != kBlank) out.push_back(best);
    prev = best;
  }
  return out;
}

}  // namespace mtlcf
