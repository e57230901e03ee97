#include "mtlcf/report.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace mtlcf {

std::vector<ComparisonRow> build_comparison(const std::vector<const TrainRun*>& runs) {
  if (runs.empty()) throw std::invalid_argument("build_comparison: no runs");
  for (const TrainRun* r : runs) {
    if (r->history.empty()) throw std::invalid_argument("build_comparison: run without history");
    if (r->test_org_fingerprint != runs.front()->test_org_fingerprint ||
        r->test_tar_fingerprint != runs.front()->test_tar_fingerprint)
      throw std::invalid_argument("build_comparison: runs evaluate mismatched test sets");
  }

  std::vector<ComparisonRow> rows;
  // epoch-0 reference: the original model's CERs, from a run that starts there
  const TrainRun* reference = runs.front();
  for (const TrainRun* r : runs)
    if (r->method != TrainMethod::rt) {
      reference = r;
      break;
    }
  rows.push_back({"initial", 0, reference->history.front().cer_org,
                  reference->history.front().cer_tar});
  for (const TrainRun* r : runs)
    rows.push_back({method_name(r->method), r->scale_tar, r->history.back().cer_org,
                    r->history.back().cer_tar});
  return rows;
}

std::string comparison_csv_header() { return "method,scale_tar,cer_org,cer_tar"; }

std::string comparison_csv_row(const ComparisonRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s,%zu,%.17g,%.17g", row.method.c_str(), row.scale_tar,
                row.cer_org, row.cer_tar);
  return buf;
}

void write_comparison_csv(const std::vector<ComparisonRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write comparison csv: " + path);
  out << comparison_csv_header() << "\n";
  for (const ComparisonRow& r : rows) out << comparison_csv_row(r) << "\n";
}

void write_curve_csv(const TrainRun& run, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write curve csv: " + path);
  out << "epoch,cer_org,cer_tar\n";
  char buf[128];
  for (const EpochRecord& r : run.history) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g", r.epoch, r.cer_org, r.cer_tar);
    out << buf << "\n";
  }
}

}  // namespace mtlcf
