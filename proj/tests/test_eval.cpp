#include <doctest.h>

#include <cmath>
#include <functional>
#include <map>
#include <random>

#include "mtlcf/eval.hpp"
#include "mtlcf/report.hpp"

using namespace mtlcf;

namespace {

// independent oracle: memoized recursion on (i, j) suffixes
std::size_t recursive_edit_distance(const LabelSequence& a, const LabelSequence& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    const auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    std::size_t best = go(i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
    best = std::min(best, go(i + 1, j) + 1);
    best = std::min(best, go(i, j + 1) + 1);
    memo[key] = best;
    return best;
  };
  return go(0, 0);
}

void enumerate_sequences(std::size_t max_len, int alphabet,
                         const std::function<void(const LabelSequence&)>& fn) {
  LabelSequence cur;
  std::function<void(std::size_t)> go = [&](std::size_t len) {
    fn(cur);
    if (len == max_len) return;
    for (int s = 1; s <= alphabet; ++s) {
      cur.push_back(s);
      go(len + 1);
      cur.pop_back();
    }
  };
  go(0);
}

TrainRun fake_run(TrainMethod method, double final_org, double final_tar,
                  std::uint64_t fp_org = 11, std::uint64_t fp_tar = 22) {
  TrainRun run;
  run.method = method;
  run.scale_tar = 40;
  run.test_org_fingerprint = fp_org;
  run.test_tar_fingerprint = fp_tar;
  EpochRecord initial;
  initial.epoch = 0;
  initial.cer_org = 0.1;
  initial.cer_tar = 0.9;
  EpochRecord last;
  last.epoch = 1;
  last.cer_org = final_org;
  last.cer_tar = final_tar;
  run.history = {initial, last};
  return run;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("cer basics") {
  CHECK(cer({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(cer({1, 9, 3}, {1, 2, 3}) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  // full DP table by hand: 1 substitution + 2 insertions over a 1-symbol ref
  CHECK(cer({7, 8, 9}, {1}) == 3.0);
  // empty-reference convention
  CHECK(cer({}, {}) == 0.0);
  CHECK(cer({1, 2}, {}) == 2.0);
}

TEST_CASE("edit distance matches the memoized oracle exhaustively (length <= 4)") {
  std::vector<LabelSequence> all;
  enumerate_sequences(4, 3, [&all](const LabelSequence& s) { all.push_back(s); });
  for (const auto& a : all)
    for (const auto& b : all) REQUIRE(edit_distance(a, b) == recursive_edit_distance(a, b));
}

TEST_CASE("edit distance is symmetric and satisfies the triangle inequality") {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> len(0, 8);
  std::uniform_int_distribution<int> sym(1, 4);
  auto make = [&]() {
    LabelSequence s(len(rng));
    for (int& x : s) x = sym(rng);
    return s;
  };
  for (int i = 0; i < 200; ++i) {
    LabelSequence a = make(), b = make(), c = make();
    CHECK(edit_distance(a, b) == edit_distance(b, a));
    CHECK(edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c));
    CHECK(edit_distance(a, a) == 0);
  }
}

TEST_CASE("evaluate aggregates per-utterance cers deterministically") {
  DomainSpec spec;
  spec.vocab_size = 6;
  spec.raw_feature_dim = 4;
  spec.train_utterances = 4;
  spec.dev_utterances = 1;
  spec.test_utterances = 12;
  spec.utterance_len_min = 3;
  spec.utterance_len_max = 5;
  spec.seed = 4;
  DatasetSplit data = gen_domain(spec);

  ModelConfig mc;
  mc.input_dim = 12;
  mc.lstm_layers = 1;
  mc.lstm_cells = 8;
  mc.relu_units = 16;
  mc.vocab_size = 6;
  mc.seed = 3;
  ModelParams model = init_model(mc);

  EvalReport a = evaluate(model, data.test, "test");
  EvalReport b = evaluate(model, data.test, "test");
  CHECK(a.per_utterance == b.per_utterance);
  CHECK(a.utterance_count == 12);

  double mean = 0.0;
  for (double c : a.per_utterance) mean += c;
  mean /= static_cast<double>(a.per_utterance.size());
  CHECK(std::abs(a.mean_cer - mean) < 1e-12);
  CHECK(a.mean_cer >= 0.0);

  // untrained random model decodes close to nothing useful
  CHECK(a.mean_cer == doctest::Approx(1.0).epsilon(0.35));
}

TEST_CASE("comparison table layout and validation") {
  TrainRun ft = fake_run(TrainMethod::ft, 0.8, 0.2);
  TrainRun rt = fake_run(TrainMethod::rt, 0.3, 0.3);
  TrainRun mt = fake_run(TrainMethod::mtlcf, 0.1, 0.25);
  auto rows = build_comparison({&ft, &rt, &mt});
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].method == "initial");
  CHECK(rows[0].cer_org == 0.1);
  CHECK(rows[0].cer_tar == 0.9);
  CHECK(rows[1].method == "ft");
  CHECK(rows[1].cer_org == 0.8);
  CHECK(rows[3].method == "mtlcf");
  CHECK(rows[3].cer_tar == 0.25);

  TrainRun other = fake_run(TrainMethod::ft, 0.5, 0.5, 99, 22);
  CHECK_THROWS_AS(build_comparison({&ft, &other}), std::invalid_argument);

  CHECK(comparison_csv_header() == "method,scale_tar,cer_org,cer_tar");
  CHECK(comparison_csv_row(rows[1]) == "ft,40,0.80000000000000004,0.20000000000000001");
}

}  // TEST_SUITE
