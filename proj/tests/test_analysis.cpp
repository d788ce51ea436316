#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "groupdro/analysis.hpp"
#include "groupdro/rng.hpp"

using namespace groupdro;

namespace {

GroupedDataset random_dataset(Rng& rng, int m, int d, int k) {
  std::vector<Example> ex;
  for (int g = 0; g < m; ++g) {
    const std::size_t n_g = 3 + rng.uniform_index(8);
    for (std::size_t i = 0; i < n_g; ++i) {
      Example e;
      e.group = g;
      e.label = rng.uniform_int(k);
      e.features.resize(d);
      for (double& v : e.features) v = rng.uniform(-2.0, 2.0);
      ex.push_back(std::move(e));
    }
  }
  return GroupedDataset(std::move(ex), m, k);
}

}  // namespace

TEST_CASE("a perfect predictor scores one everywhere") {
  // Linearly separable by the sign of x0 with a wide margin.
  std::vector<Example> ex;
  for (int g = 0; g < 2; ++g)
    for (int i = 0; i < 5; ++i) {
      const int y = (i + g) % 2;
      ex.push_back(Example{{y == 1 ? 4.0 : -4.0}, y, g});
    }
  const GroupedDataset data(ex, 2, 2);
  ModelParams p = zero_params(Arch::logistic_binary(1));
  p.theta = {3.0, 0.0};
  const GroupMetrics metrics = evaluate(p, data);
  CHECK(metrics.per_group_accuracy == std::vector<double>{1.0, 1.0});
  CHECK(metrics.worst_group_accuracy == 1.0);
  CHECK(metrics.average_accuracy == 1.0);
}

TEST_CASE("a constant predictor splits balanced binary groups into zero and one") {
  // Group 0 holds only label 0, group 1 only label 1; theta = 0 predicts
  // class 0 everywhere by the tie rule.
  std::vector<Example> ex;
  for (int i = 0; i < 4; ++i) ex.push_back(Example{{0.5}, 0, 0});
  for (int i = 0; i < 4; ++i) ex.push_back(Example{{0.5}, 1, 1});
  const GroupedDataset data(ex, 2, 2);
  const GroupMetrics metrics = evaluate(zero_params(Arch::logistic_binary(1)), data);
  CHECK(metrics.per_group_accuracy[0] == 1.0);
  CHECK(metrics.per_group_accuracy[1] == 0.0);
  CHECK(metrics.worst_group_accuracy == 0.0);
  CHECK(metrics.worst_group == 1);
}

TEST_CASE("evaluate agrees with a naive recount") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const GroupedDataset data = random_dataset(rng, 3, 2, 2);
    ModelParams p = zero_params(Arch::logistic_binary(2));
    for (double& v : p.theta) v = rng.uniform(-2.0, 2.0);
    const GroupMetrics metrics = evaluate(p, data);

    std::vector<std::size_t> correct(3, 0), total(3, 0);
    std::vector<double> loss_sum(3, 0.0);
    for (const Example& ex : data.examples()) {
      ++total[ex.group];
      loss_sum[ex.group] += loss(p, ex);
      if (predict(p, ex.features) == ex.label) ++correct[ex.group];
    }
    double worst = 2.0;
    std::size_t all_correct = 0;
    for (int g = 0; g < 3; ++g) {
      const double acc = static_cast<double>(correct[g]) / total[g];
      CHECK(metrics.per_group_accuracy[g] == acc);
      CHECK(metrics.per_group_loss[g] ==
            Catch::Approx(loss_sum[g] / total[g]).margin(1e-12));
      worst = std::min(worst, acc);
      all_correct += correct[g];
    }
    CHECK(metrics.worst_group_accuracy == worst);
    CHECK(metrics.average_accuracy ==
          Catch::Approx(static_cast<double>(all_correct) / data.size()).margin(1e-15));
  }
}

TEST_CASE("evaluate is invariant to example permutation") {
  Rng rng(11);
  const GroupedDataset data = random_dataset(rng, 3, 2, 2);
  std::vector<Example> shuffled = data.examples();
  Rng shuffler(5);
  shuffler.shuffle(shuffled);
  const GroupedDataset data2(shuffled, 3, 2);
  ModelParams p = zero_params(Arch::logistic_binary(2));
  for (double& v : p.theta) v = rng.uniform(-1.0, 1.0);
  const GroupMetrics a = evaluate(p, data);
  const GroupMetrics b = evaluate(p, data2);
  CHECK(a.per_group_accuracy == b.per_group_accuracy);
  CHECK(a.worst_group_accuracy == b.worst_group_accuracy);
  for (int g = 0; g < 3; ++g)
    CHECK(a.per_group_loss[g] == Catch::Approx(b.per_group_loss[g]).margin(1e-12));
}

TEST_CASE("weighted average accuracy") {
  GroupMetrics metrics;
  metrics.per_group_accuracy = {1.0, 0.0};

  const std::vector<double> uniform{0.5, 0.5};
  CHECK(weighted_average_accuracy(metrics, uniform) == 0.5);

  const std::vector<double> onehot{0.0, 1.0};
  CHECK(weighted_average_accuracy(metrics, onehot) == 0.0);

  const std::vector<double> skew{0.9, 0.1};
  CHECK(weighted_average_accuracy(metrics, skew) == Catch::Approx(0.9).margin(1e-15));

  const std::vector<double> bad{1.0};
  CHECK_THROWS_AS(weighted_average_accuracy(metrics, bad), std::invalid_argument);
}

TEST_CASE("worst group accuracy never exceeds any weighted average") {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const int m = 2 + rng.uniform_int(4);
    GroupMetrics metrics;
    metrics.per_group_accuracy.resize(m);
    for (double& a : metrics.per_group_accuracy) a = rng.uniform01();
    metrics.worst_group_accuracy = metrics.per_group_accuracy[0];
    for (double a : metrics.per_group_accuracy)
      metrics.worst_group_accuracy = std::min(metrics.worst_group_accuracy, a);

    std::vector<double> fractions(m);
    double sum = 0.0;
    for (double& f : fractions) {
      f = rng.uniform(0.01, 1.0);
      sum += f;
    }
    for (double& f : fractions) f /= sum;
    CHECK(metrics.worst_group_accuracy <=
          weighted_average_accuracy(metrics, fractions) + 1e-12);
  }
}

TEST_CASE("gap report") {
  GroupMetrics train, test;
  train.per_group_accuracy = {1.0, 1.0};
  train.per_group_loss = {0.1, 0.2};
  test.per_group_accuracy = {0.9, 0.6};
  test.per_group_loss = {0.3, 0.7};

  const GapReport gap = gap_report(train, test);
  CHECK(gap.acc_gap[0] == Catch::Approx(0.1).margin(1e-15));
  CHECK(gap.acc_gap[1] == Catch::Approx(0.4).margin(1e-15));
  CHECK(gap.max_acc_gap == Catch::Approx(0.4).margin(1e-15));
  CHECK(gap.loss_gap[0] == Catch::Approx(0.2).margin(1e-15));
  // delta on losses: worst test loss 0.7 minus worst train loss 0.2.
  CHECK(gap.delta_worst_loss == Catch::Approx(0.5).margin(1e-15));

  const GapReport zero = gap_report(train, train);
  CHECK(zero.acc_gap == std::vector<double>{0.0, 0.0});
  CHECK(zero.delta_worst_loss == 0.0);

  GroupMetrics mismatched;
  mismatched.per_group_accuracy = {1.0};
  mismatched.per_group_loss = {0.0};
  CHECK_THROWS_AS(gap_report(train, mismatched), std::invalid_argument);
}

TEST_CASE("delta on losses can be negative and matches a recount") {
  Rng rng(17);
  const GroupedDataset train_set = random_dataset(rng, 2, 2, 2);
  const GroupedDataset test_set = random_dataset(rng, 2, 2, 2);
  ModelParams p = zero_params(Arch::logistic_binary(2));
  for (double& v : p.theta) v = rng.uniform(-1.0, 1.0);
  const GroupMetrics a = evaluate(p, train_set);
  const GroupMetrics b = evaluate(p, test_set);
  const GapReport gap = gap_report(a, b);
  const double worst_train = std::max(a.per_group_loss[0], a.per_group_loss[1]);
  const double worst_test = std::max(b.per_group_loss[0], b.per_group_loss[1]);
  CHECK(gap.delta_worst_loss == Catch::Approx(worst_test - worst_train).margin(1e-12));
}

TEST_CASE("binomial standard deviation") {
  CHECK(binomial_stddev(0.5, 100) == Catch::Approx(0.05).margin(1e-12));
  CHECK(binomial_stddev(0.0, 50) == 0.0);
  CHECK(binomial_stddev(1.0, 50) == 0.0);
  CHECK_THROWS_AS(binomial_stddev(0.5, 0), std::invalid_argument);
}
