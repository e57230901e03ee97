#pragma once

#include <string>
#include <vector>

#include "mtlcf/ctc.hpp"
#include "mtlcf/data.hpp"
#include "mtlcf/model.hpp"

namespace mtlcf {

// Unit-cost Levenshtein distance.
std::size_t edit_distance(const LabelSequence& a, const LabelSequence& b);

// edit_distance(hyp, ref) / |ref|. Empty reference: 0 if hyp is empty too,
// otherwise |hyp| (normalizer 1). May exceed 1 on insertions, never negative.
double cer(const LabelSequence& hyp, const LabelSequence& ref);

struct EvalReport {
  std::string dataset_id;
  std::size_t utterance_count = 0;
  double mean_cer = 0.0;
  std::vector<double> per_utterance;

  static std::string csv_header();  // dataset_id,utterance_count,mean_cer
  std::string csv_row() const;
};

// Greedy-decode every utterance (LFR-stacked) and aggregate CER.
EvalReport evaluate(const ModelParams& model, const std::vector<FeatureSequence>& split,
                    const std::string& dataset_id = "");

}  // namespace mtlcf
