#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "mtlcf/ctc.hpp"
#include "mtlcf/tensor.hpp"

using namespace mtlcf;

namespace {

Tensor random_logprobs(std::size_t t, std::size_t v, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  std::vector<double> logits(t * v);
  for (double& x : logits) x = dist(rng);
  return log_softmax(Tensor::from_values({t, v}, std::move(logits)));
}

Tensor logprobs_from_probs(std::size_t t, std::size_t v, const std::vector<double>& probs) {
  std::vector<double> lp(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) lp[i] = std::log(probs[i]);
  return Tensor::from_values({t, v}, std::move(lp));
}

LabelSequence random_feasible_labels(std::size_t t, std::size_t v, std::size_t max_len,
                                     std::mt19937_64& rng) {
  for (;;) {
    std::uniform_int_distribution<std::size_t> len_dist(0, max_len);
    LabelSequence labels(len_dist(rng));
    std::uniform_int_distribution<int> sym_dist(1, static_cast<int>(v) - 1);
    for (int& s : labels) s = sym_dist(rng);
    if (ctc_feasible(t, labels)) return labels;
  }
}

}  // namespace

TEST_SUITE("ctc") {

TEST_CASE("single-frame single path") {
  // T=1, p(a)=0.6 -> only path is "a", loss = -ln 0.6
  Tensor lp = logprobs_from_probs(1, 2, {0.4, 0.6});
  CtcResult r = ctc_loss(lp, {1});
  CHECK(r.loss == doctest::Approx(0.5108256237659907).epsilon(1e-12));
}

TEST_CASE("empty labels take the all-blank path") {
  Tensor lp = logprobs_from_probs(2, 2, {0.7, 0.3, 0.9, 0.1});
  CtcResult r = ctc_loss(lp, {});
  CHECK(r.loss == doctest::Approx(-(std::log(0.7) + std::log(0.9))).epsilon(1e-12));
}

TEST_CASE("three valid alignments under uniform frames") {
  // T=2, uniform over {blank, a}: paths aa, a-, -a each 0.25 -> loss = -ln 0.75
  Tensor lp = logprobs_from_probs(2, 2, {0.5, 0.5, 0.5, 0.5});
  CtcResult r = ctc_loss(lp, {1});
  CHECK(r.loss == doctest::Approx(0.2876820724517809).epsilon(1e-12));
  CHECK(r.loss == doctest::Approx(ctc_brute_force(lp, {1})).epsilon(1e-12));
}

TEST_CASE("brute force enumerates both paths at T=1, V=2") {
  Tensor lp = logprobs_from_probs(1, 2, {0.25, 0.75});
  CHECK(ctc_brute_force(lp, {1}) == doctest::Approx(-std::log(0.75)).epsilon(1e-14));
  CHECK(ctc_brute_force(lp, {}) == doctest::Approx(-std::log(0.25)).epsilon(1e-14));
}

TEST_CASE("infeasible instances are explicit errors") {
  Tensor lp = logprobs_from_probs(1, 3, {0.2, 0.4, 0.4});
  CHECK_THROWS_AS(ctc_loss(lp, {1, 2}), InfeasibleUtterance);
  CHECK_THROWS_AS(ctc_brute_force(lp, {1, 2}), InfeasibleUtterance);
  // adjacent repeat needs a separating blank frame
  Tensor lp2 = logprobs_from_probs(2, 2, {0.5, 0.5, 0.5, 0.5});
  CHECK_THROWS_AS(ctc_loss(lp2, {1, 1}), InfeasibleUtterance);
  CHECK(ctc_min_frames({1, 1}) == 3);
  CHECK(ctc_min_frames({1, 2, 2, 3}) == 5);
}

TEST_CASE("invalid label symbols are rejected") {
  Tensor lp = logprobs_from_probs(2, 2, {0.5, 0.5, 0.5, 0.5});
  CHECK_THROWS_AS(ctc_loss(lp, {0}), std::invalid_argument);
  CHECK_THROWS_AS(ctc_loss(lp, {2}), std::invalid_argument);
  CHECK_THROWS_AS(ctc_loss(lp, {-1}), std::invalid_argument);
}

TEST_CASE("matches brute-force oracle across a random sweep") {
  std::mt19937_64 rng(2024);
  int cases = 0;
  while (cases < 500) {
    std::uniform_int_distribution<std::size_t> t_dist(1, 6), v_dist(2, 4);
    const std::size_t t = t_dist(rng), v = v_dist(rng);
    Tensor lp = random_logprobs(t, v, rng);
    LabelSequence labels = random_feasible_labels(t, v, 3, rng);
    const double fast = ctc_loss(lp, labels).loss;
    const double slow = ctc_brute_force(lp, labels);
    CHECK(std::abs(fast - slow) < 1e-9);
    ++cases;
  }
}

TEST_CASE("gradient matches central finite differences") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> t_dist(2, 7), v_dist(2, 5);
    const std::size_t t = t_dist(rng), v = v_dist(rng);
    Tensor lp = random_logprobs(t, v, rng);
    LabelSequence labels = random_feasible_labels(t, v, 3, rng);
    CtcResult r = ctc_loss(lp, labels);

    const double eps = 1e-6;
    auto base = lp.values();
    for (std::size_t i = 0; i < lp.size(); ++i) {
      std::vector<double> plus(base.begin(), base.end());
      std::vector<double> minus(base.begin(), base.end());
      plus[i] += eps;
      minus[i] -= eps;
      const double fp = ctc_loss(Tensor::from_values(lp.shape(), std::move(plus)), labels).loss;
      const double fm = ctc_loss(Tensor::from_values(lp.shape(), std::move(minus)), labels).loss;
      const double fd = (fp - fm) / (2 * eps);
      CHECK(std::abs(r.grad_logprobs[i] - fd) / std::max(1.0, std::abs(r.grad_logprobs[i])) < 1e-5);
    }
  }
}

TEST_CASE("graph node routes gradient into logprobs") {
  std::mt19937_64 rng(5);
  Tensor logits = Tensor::from_values({3, 3}, {0.5, -0.2, 0.1, 0.3, 0.9, -0.4, -0.6, 0.2, 0.8}, true);
  LabelSequence labels = {1, 2};
  auto f = [&labels](const Tensor& x) { return ctc_loss_node(log_softmax(x), labels); };
  CHECK(finite_difference_check(f, logits, 1e-6) < 1e-6);
}

TEST_CASE("loss is nonnegative, zero only for a certain alignment") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor lp = random_logprobs(4, 3, rng);
    LabelSequence labels = random_feasible_labels(4, 3, 3, rng);
    CHECK(ctc_loss(lp, labels).loss >= 0.0);
  }
  // single alignment with probability 1
  Tensor certain = logprobs_from_probs(1, 2, {1e-300, 1.0});
  CHECK(ctc_loss(certain, {1}).loss == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("non-participating symbols carry no probability mass") {
  // permuting probabilities among symbols absent from the labels leaves the
  // loss unchanged; moving their mass onto a required symbol never hurts
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t t = 5, v = 5;
    Tensor lp = random_logprobs(t, v, rng);
    LabelSequence labels = {1, 2};  // symbols 3 and 4 never participate
    const double base = ctc_loss(lp, labels).loss;

    std::vector<double> probs(lp.size());
    for (std::size_t i = 0; i < lp.size(); ++i) probs[i] = std::exp(lp.values()[i]);

    std::uniform_int_distribution<std::size_t> frame_dist(0, t - 1);
    const std::size_t f = frame_dist(rng);

    // permutation invariance: swap p(3) and p(4) at one frame
    std::vector<double> swapped = probs;
    std::swap(swapped[f * v + 3], swapped[f * v + 4]);
    CHECK(ctc_loss(logprobs_from_probs(t, v, swapped), labels).loss ==
          doctest::Approx(base).epsilon(1e-10));

    // transfer all of symbol 3's mass to a required symbol
    std::vector<double> boosted = probs;
    const double moved = boosted[f * v + 3] * 0.9;
    boosted[f * v + 3] -= moved;
    boosted[f * v + 1] += moved;
    CHECK(ctc_loss(logprobs_from_probs(t, v, boosted), labels).loss <= base + 1e-10);
  }
}

TEST_CASE("greedy decode collapse rules") {
  // argmax sequence a, a, blank, b -> [a, b]
  Tensor lp1 = logprobs_from_probs(4, 3, {0.1, 0.8, 0.1, 0.2, 0.7, 0.1, 0.6, 0.2, 0.2, 0.1, 0.2, 0.7});
  CHECK(greedy_decode(lp1) == LabelSequence{1, 2});

  // all blank -> empty
  Tensor lp2 = logprobs_from_probs(3, 2, {0.9, 0.1, 0.8, 0.2, 0.7, 0.3});
  CHECK(greedy_decode(lp2).empty());

  // a, blank, a -> [a, a]
  Tensor lp3 = logprobs_from_probs(3, 2, {0.1, 0.9, 0.8, 0.2, 0.3, 0.7});
  CHECK(greedy_decode(lp3) == LabelSequence{1, 1});

  // ties resolve to the lowest index
  Tensor lp4 = logprobs_from_probs(1, 3, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  CHECK(greedy_decode(lp4).empty());
}

}  // TEST_SUITE
