#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mtlcf/ctc.hpp"
#include "mtlcf/tensor.hpp"

namespace mtlcf {

// Low-frame-rate transform defaults: stack two left-context frames onto the
// current frame and keep every third frame.
constexpr std::size_t kLfrLeftContext = 2;
constexpr std::size_t kLfrDecimation = 3;

struct DomainSpec {
  int domain_id = 0;
  int vocab_size = 12;       // shared across domains, includes blank 0
  int raw_feature_dim = 8;   // pre-stacking dimension
  int frames_per_symbol_min = 2;
  int frames_per_symbol_max = 4;
  int utterance_len_min = 5;   // symbols
  int utterance_len_max = 12;
  double prototype_shift = 0.0;  // 0 for the original domain by convention
  double noise_sigma = 0.35;
  std::uint64_t seed = 1;
  int train_utterances = 2000;
  int dev_utterances = 200;
  int test_utterances = 200;

  void validate() const;
};

struct FeatureSequence {
  Tensor frames;  // [T_raw x raw_feature_dim]
  LabelSequence labels;
  int domain_id = 0;
};

struct DatasetSplit {
  std::vector<FeatureSequence> train;
  std::vector<FeatureSequence> dev;
  std::vector<FeatureSequence> test;
};

// Gaussian class prototypes shared across domains; a per-symbol shift vector
// of magnitude prototype_shift moves them for the target domain. Every
// utterance stays CTC-feasible after LFR decimation.
DatasetSplit gen_domain(const DomainSpec& spec);

// Output frame k stacks raw frames [3k-2, 3k-1, 3k] (1-indexed, current frame
// last), replicating the first frame where the left context underflows.
// Output: [ceil(T_raw/decimation) x F*(left_context+1)].
Tensor stack_lfr(const Tensor& frames, std::size_t left_context = kLfrLeftContext,
                 std::size_t decimation = kLfrDecimation);

// Length-sorted consecutive batches of m (last may be smaller), batch order
// shuffled with the seeded generator. Returns indices into `split`.
std::vector<std::vector<std::size_t>> make_batches(
    const std::vector<FeatureSequence>& split, std::size_t m, std::uint64_t seed);

// Persistent batch supply across epochs. `resample` refills by drawing
// utterances with replacement, so a smaller dataset can feed one batch per
// step indefinitely; `reshuffle` replays the split with a fresh batch order.
class BatchStream {
 public:
  enum class Refill { reshuffle, resample };

  BatchStream(const std::vector<FeatureSequence>& split, std::size_t m,
              std::uint64_t seed, Refill mode = Refill::reshuffle);

  std::vector<std::size_t> next();
  std::size_t batches_per_pass() const { return batches_per_pass_; }

 private:
  void refill();

  const std::vector<FeatureSequence>* split_;
  std::size_t m_;
  std::mt19937_64 rng_;
  Refill mode_;
  std::size_t batches_per_pass_ = 0;
  std::vector<std::vector<std::size_t>> queue_;
  std::size_t cursor_ = 0;
};

// Line-delimited dataset files: one utterance per line, decimal floats with
// 17 significant digits (round-trip exact).
void save_split_file(const std::vector<FeatureSequence>& utterances, const std::string& path);
std::vector<FeatureSequence> load_split_file(const std::string& path);

void save_dataset(const DatasetSplit& split, const std::string& dir, const std::string& stem);
DatasetSplit load_dataset(const std::string& dir, const std::string& stem);

std::uint64_t split_fingerprint(const std::vector<FeatureSequence>& utterances);

}  // namespace mtlcf
