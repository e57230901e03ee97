#include <doctest.h>

#include <cmath>
#include <random>

#include "mtlcf/errors.hpp"
#include "mtlcf/losses.hpp"

using namespace mtlcf;

namespace {

Tensor random_logits(std::size_t t, std::size_t v, std::uint64_t seed, bool requires_grad = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  std::vector<double> x(t * v);
  for (double& e : x) e = dist(rng);
  return Tensor::from_values({t, v}, std::move(x), requires_grad);
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("kl of identical distributions is zero") {
  Tensor s = random_logits(4, 5, 1);
  Tensor t = Tensor::from_values(s.shape(), {s.values().begin(), s.values().end()});
  CHECK(distill_kl(s, t, 1.0).item() == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("kl hand example at T=1") {
  // student (1,0) vs teacher (0,1): p1=(0.73106,0.26894), KL = 0.46212
  Tensor s = Tensor::from_values({1, 2}, {1.0, 0.0});
  Tensor t = Tensor::from_values({1, 2}, {0.0, 1.0});
  CHECK(distill_kl(s, t, 1.0).item() == doctest::Approx(0.4621171572600098).epsilon(1e-12));
}

TEST_CASE("softened distributions converge to uniform as T grows") {
  Tensor s = random_logits(3, 6, 2);
  Tensor t = random_logits(3, 6, 3);
  const double temp = 1e3;
  const double raw_kl = distill_kl(s, t, temp).item() / (temp * temp);
  CHECK(raw_kl >= 0.0);
  CHECK(raw_kl < 1e-4);
}

TEST_CASE("kl is nonnegative and rejects mismatched shapes") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor s = random_logits(5, 4, seed * 2 + 10);
    Tensor t = random_logits(5, 4, seed * 2 + 11);
    CHECK(distill_kl(s, t, 1.0).item() >= 0.0);
  }
  CHECK_THROWS_AS(distill_kl(random_logits(2, 3, 1), random_logits(3, 2, 1), 1.0),
                  std::invalid_argument);
}

TEST_CASE("kl rejects a grad-carrying teacher and backpropagates into the student") {
  Tensor s = random_logits(3, 4, 5, true);
  Tensor t_grad = random_logits(3, 4, 6, true);
  CHECK_THROWS_AS(distill_kl(s, t_grad, 1.0), std::invalid_argument);

  Tensor t = random_logits(3, 4, 6);
  auto f = [&t](const Tensor& x) { return distill_kl(x, t, 1.0); };
  CHECK(finite_difference_check(f, random_logits(3, 4, 7), 1e-5) < 1e-6);

  auto f2 = [&t](const Tensor& x) { return distill_kl(x, t, 2.5); };
  CHECK(finite_difference_check(f2, random_logits(3, 4, 8), 1e-5) < 1e-6);
}

TEST_CASE("task1 mix reduces to its components at degenerate alpha") {
  Tensor teacher = log_softmax(random_logits(4, 4, 21));
  Tensor student = log_softmax(random_logits(4, 4, 22));
  LabelSequence labels = {1, 2};

  HyperParams h;
  h.alpha = 1.0;
  Task1Result r1 = loss_task1(student, teacher, labels, h);
  CHECK(r1.value.item() == distill_kl(student, teacher, 1.0).item());

  h.alpha = 0.0;
  Task1Result r0 = loss_task1(student, teacher, labels, h);
  CHECK(r0.value.item() == ctc_loss(student, labels).loss);

  h.alpha = 0.5;
  Task1Result rh = loss_task1(student, teacher, labels, h);
  CHECK(rh.value.item() == doctest::Approx(0.5 * r1.value.item() + 0.5 * r0.value.item()).epsilon(1e-14));
}

TEST_CASE("total mix arithmetic and breakdown identities") {
  HyperParams h;
  h.alpha = 0.5;
  h.beta = 0.5;
  // headline configuration: sub1=0.2, sub2=0.4, loss2=0.6 -> loss1=0.3, total=0.45
  TotalResult r = compose_objective(Tensor::scalar(0.2), Tensor::scalar(0.4),
                                    Tensor::scalar(0.6), h);
  CHECK(r.breakdown.loss1 == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(r.breakdown.total == doctest::Approx(0.45).epsilon(1e-15));

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> val(0.0, 3.0), weight(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    HyperParams hp;
    hp.alpha = weight(rng);
    hp.beta = weight(rng);
    const double s1 = val(rng), s2 = val(rng), l2 = val(rng);
    TotalResult t = compose_objective(Tensor::scalar(s1), Tensor::scalar(s2),
                                      Tensor::scalar(l2), hp);
    CHECK(std::abs(t.breakdown.loss1 - (hp.alpha * s1 + (1 - hp.alpha) * s2)) < 1e-12);
    CHECK(std::abs(t.breakdown.total - (hp.beta * t.breakdown.loss1 + (1 - hp.beta) * l2)) < 1e-12);
    // convex combination stays inside the hull
    const double lo = std::min(t.breakdown.loss1, l2), hi = std::max(t.breakdown.loss1, l2);
    CHECK(t.breakdown.total >= lo - 1e-12);
    CHECK(t.breakdown.total <= hi + 1e-12);
  }
}

TEST_CASE("degenerate beta reduces exactly") {
  HyperParams h;
  h.alpha = 1.0;
  h.beta = 1.0;
  TotalResult r = compose_objective(Tensor::scalar(0.7), Tensor::scalar(0.3),
                                    Tensor::scalar(0.9), h);
  CHECK(r.breakdown.total == 0.7);  // pure distillation

  h.beta = 0.0;
  TotalResult r2 = compose_objective(Tensor::scalar(0.7), Tensor::scalar(0.3),
                                     Tensor::scalar(0.9), h);
  CHECK(r2.breakdown.total == 0.9);  // pure new-domain objective
}

TEST_CASE("non-finite losses are rejected before the optimizer") {
  HyperParams h;
  Task1Result bad;
  bad.value = Tensor::scalar(std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(loss_total(bad, Tensor::scalar(1.0), h), NumericError);

  Task1Result ok;
  ok.value = Tensor::scalar(1.0);
  CHECK_THROWS_AS(loss_total(ok, Tensor::scalar(std::numeric_limits<double>::infinity()), h),
                  NumericError);
}

TEST_CASE("gradient partition across the two data paths") {
  Tensor teacher = log_softmax(random_logits(3, 4, 31));
  LabelSequence labels0 = {1};
  LabelSequence labels1 = {2, 3};

  auto build = [&](double beta, Tensor& x0, Tensor& x1) {
    HyperParams h;
    h.alpha = 0.5;
    h.beta = beta;
    Tensor out0 = log_softmax(x0);
    Tensor out1 = log_softmax(x1);
    Task1Result t1 = loss_task1(out0, teacher, labels0, h);
    TotalResult total = loss_total(t1, ctc_loss_node(out1, labels1), h);
    backward(total.value);
  };

  {
    Tensor x0 = random_logits(3, 4, 32, true);
    Tensor x1 = random_logits(3, 4, 33, true);
    build(1.0, x0, x1);  // no gradient may flow from the target-domain batch
    for (double g : x1.grad()) CHECK(g == 0.0);
    double sum0 = 0.0;
    for (double g : x0.grad()) sum0 += std::abs(g);
    CHECK(sum0 > 0.0);
  }
  {
    Tensor x0 = random_logits(3, 4, 34, true);
    Tensor x1 = random_logits(3, 4, 35, true);
    build(0.0, x0, x1);  // no gradient may flow from the original-domain batch
    for (double g : x0.grad()) CHECK(g == 0.0);
    double sum1 = 0.0;
    for (double g : x1.grad()) sum1 += std::abs(g);
    CHECK(sum1 > 0.0);
  }
}

TEST_CASE("aggregate_terms mean and sum") {
  std::vector<Tensor> terms = {Tensor::scalar(1.0), Tensor::scalar(2.0), Tensor::scalar(6.0)};
  CHECK(aggregate_terms(terms, BatchAggregate::mean).item() == doctest::Approx(3.0));
  CHECK(aggregate_terms(terms, BatchAggregate::sum).item() == doctest::Approx(9.0));
  CHECK_THROWS_AS(aggregate_terms({}, BatchAggregate::mean), std::invalid_argument);
}

TEST_CASE("breakdown csv row format") {
  CHECK(LossBreakdown::csv_header() == "step,sub_loss1,sub_loss2,loss1,loss2,total");
  LossBreakdown b;
  b.sub_loss1 = 0.25;
  b.sub_loss2 = 0.5;
  b.loss1 = 0.375;
  b.loss2 = 1.5;
  b.total = 0.9375;
  CHECK(b.csv_row(7) == "7,0.25,0.5,0.375,1.5,0.9375");
}

TEST_CASE("hyper validation") {
  HyperParams h;
  h.alpha = 1.5;
  CHECK_THROWS_AS(h.validate(), ConfigError);
  h = HyperParams{};
  h.temperature = 0.0;
  CHECK_THROWS_AS(h.validate(), ConfigError);
  h = HyperParams{};
  h.batch_size = 0;
  CHECK_THROWS_AS(h.validate(), ConfigError);
}

}  // TEST_SUITE
