#pragma once

#include <string>
#include <vector>

#include "mtlcf/trainer.hpp"

namespace mtlcf {

struct ComparisonRow {
  std::string method;
  std::size_t scale_tar = 0;
  double cer_org = 0.0;
  double cer_tar = 0.0;
};

// One row per run with its final CERs, preceded by an epoch-0 reference row
// taken from the first run that starts from the original model. Runs must
// share both test sets.
std::vector<ComparisonRow> build_comparison(const std::vector<const TrainRun*>& runs);

std::string comparison_csv_header();  // method,scale_tar,cer_org,cer_tar
std::string comparison_csv_row(const ComparisonRow& row);
void write_comparison_csv(const std::vector<ComparisonRow>& rows, const std::string& path);

// Plot-ready learning curve: epoch,cer_org,cer_tar.
void write_curve_csv(const TrainRun& run, const std::string& path);

}  // namespace mtlcf
