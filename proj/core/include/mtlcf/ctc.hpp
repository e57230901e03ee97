#pragma once

#include <stdexcept>
#include <vector>

#include "mtlcf/tensor.hpp"

namespace mtlcf {

// Label symbols are ints in [1, V-1]; index 0 is the reserved blank.
using LabelSequence = std::vector<int>;

constexpr int kBlank = 0;

// A label sequence of length L with r adjacent repeats needs at least
// L + r frames to be reachable.
std::size_t ctc_min_frames(const LabelSequence& labels);
bool ctc_feasible(std::size_t frames, const LabelSequence& labels);

class InfeasibleUtterance : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CtcResult {
  double loss = 0.0;                 // -log P(labels | logprobs)
  std::vector<double> grad_logprobs; // [T x V], d loss / d logprobs
};

// Negative log likelihood of `labels` under per-frame log-distributions,
// marginalized over every alignment that collapses (remove repeats, then
// blanks) to `labels`. Forward-backward over the 2L+1 blank-augmented
// lattice, entirely in log space; the gradient is exact.
CtcResult ctc_loss(const Tensor& logprobs, const LabelSequence& labels);

// Loss value only (single alpha pass), for evaluation loops.
double ctc_loss_value(const Tensor& logprobs, const LabelSequence& labels);

// Same loss as a graph node: gradient flows into `logprobs` on backward().
// Skips the gradient pass when `logprobs` carries no grad.
Tensor ctc_loss_node(const Tensor& logprobs, const LabelSequence& labels);

// Enumeration oracle: sums the probability of every length-T path that
// collapses to `labels`. Guarded to V^T <= 10^7.
double ctc_brute_force(const Tensor& logprobs, const LabelSequence& labels);

// Per-frame argmax (ties to the lowest index), collapse adjacent repeats,
// then drop blanks.
LabelSequence greedy_decode(const Tensor& logprobs);

}  // namespace mtlcf
