#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "groupdro/dataset.hpp"
#include "groupdro/model.hpp"

namespace groupdro {

/// Per-group accuracies and losses on one split. average_accuracy is the
/// plain fraction correct over the split (example-weighted); the
/// training-proportion-weighted average lives in weighted_average_accuracy.
struct GroupMetrics {
  std::vector<double> per_group_accuracy;
  std::vector<double> per_group_loss;
  std::vector<std::size_t> group_sizes;
  double worst_group_accuracy = 0.0;
  int worst_group = 0;  // ties toward the smaller index
  double average_accuracy = 0.0;
};

inline GroupMetrics evaluate(const ModelParams& params, const GroupedDataset& dataset) {
  const int m = dataset.group_count();
  GroupMetrics metrics;
  metrics.per_group_accuracy.assign(m, 0.0);
  metrics.per_group_loss.assign(m, 0.0);
  metrics.group_sizes = dataset.group_sizes();
  std::size_t total_correct = 0;
  for (int g = 0; g < m; ++g) {
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t i : dataset.group_index(g)) {
      const Example& ex = dataset.example(i);
      loss_sum += loss(params, ex);
      if (predict(params, ex.features) == ex.label) ++correct;
    }
    const double n_g = static_cast<double>(dataset.group_size(g));
    metrics.per_group_loss[g] = loss_sum / n_g;
    metrics.per_group_accuracy[g] = static_cast<double>(correct) / n_g;
    total_correct += correct;
  }
  metrics.worst_group = 0;
  for (int g = 1; g < m; ++g)
    if (metrics.per_group_accuracy[g] < metrics.per_group_accuracy[metrics.worst_group])
      metrics.worst_group = g;
  metrics.worst_group_accuracy = metrics.per_group_accuracy[metrics.worst_group];
  metrics.average_accuracy =
      static_cast<double>(total_correct) / static_cast<double>(dataset.size());
  return metrics;
}

/// Group-accuracy average weighted by the given fractions (the reporting
/// convention for balanced evaluation splits: weights are the training
/// group proportions).
inline double weighted_average_accuracy(const GroupMetrics& metrics,
                                        std::span<const double> fractions) {
  if (fractions.size() != metrics.per_group_accuracy.size())
    throw std::invalid_argument("fraction vector does not match the group count");
  double acc = 0.0;
  for (std::size_t g = 0; g < fractions.size(); ++g)
    acc += fractions[g] * metrics.per_group_accuracy[g];
  return acc;
}

/// Train-vs-test gaps: per-group accuracy gaps (train - test), per-group
/// loss gaps (test - train), and the worst-group loss gap delta
/// (worst-group test loss minus worst-group train loss; may be negative).
struct GapReport {
  std::vector<double> acc_gap;
  double max_acc_gap = 0.0;
  std::vector<double> loss_gap;
  double delta_worst_loss = 0.0;
};

inline GapReport gap_report(const GroupMetrics& train, const GroupMetrics& test) {
  const std::size_t m = train.per_group_accuracy.size();
  if (test.per_group_accuracy.size() != m)
    throw std::invalid_argument("gap_report: group counts differ");
  GapReport gap;
  gap.acc_gap.resize(m);
  gap.loss_gap.resize(m);
  for (std::size_t g = 0; g < m; ++g) {
    gap.acc_gap[g] = train.per_group_accuracy[g] - test.per_group_accuracy[g];
    gap.loss_gap[g] = test.per_group_loss[g] - train.per_group_loss[g];
    if (g == 0 || gap.acc_gap[g] > gap.max_acc_gap) gap.max_acc_gap = gap.acc_gap[g];
  }
  double worst_train = train.per_group_loss[0], worst_test = test.per_group_loss[0];
  for (std::size_t g = 1; g < m; ++g) {
    worst_train = std::max(worst_train, train.per_group_loss[g]);
    worst_test = std::max(worst_test, test.per_group_loss[g]);
  }
  gap.delta_worst_loss = worst_test - worst_train;
  return gap;
}

/// Binomial standard deviation sqrt(p (1-p) / n) reported alongside
/// per-group accuracies.
inline double binomial_stddev(double p, std::size_t n) {
  if (n == 0) throw std::invalid_argument("binomial_stddev: n must be positive");
  return std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

}  // namespace groupdro
