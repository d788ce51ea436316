#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "groupdro/dataset.hpp"
#include "groupdro/model.hpp"

namespace groupdro {

/// Per-group losses plus the risk value; for max-type risks, the maximizing
/// group (ties toward the smaller index) and the adjusted per-group values.
struct RiskReport {
  std::vector<double> per_group_loss;
  double value = 0.0;
  std::optional<int> argmax_group;
  std::optional<std::vector<double>> adjusted;

  nlohmann::json to_json() const {
    nlohmann::json j{{"value", value}, {"per_group_loss", per_group_loss}};
    j["argmax_group"] = argmax_group ? nlohmann::json(*argmax_group) : nlohmann::json();
    if (adjusted) j["adjusted"] = *adjusted;
    return j;
  }
};

/// Mean loss of each group, accumulated sequentially in index order so the
/// result does not depend on scheduling.
inline std::vector<double> per_group_mean_loss(const ModelParams& params,
                                               const GroupedDataset& dataset) {
  std::vector<double> mean(dataset.group_count(), 0.0);
  for (int g = 0; g < dataset.group_count(); ++g) {
    double sum = 0.0;
    for (std::size_t i : dataset.group_index(g)) sum += loss(params, dataset.example(i));
    mean[g] = sum / static_cast<double>(dataset.group_size(g));
  }
  return mean;
}

/// Average loss over all examples, unweighted by group.
inline double erm_risk(const ModelParams& params, const GroupedDataset& dataset) {
  double sum = 0.0;
  for (const Example& ex : dataset.examples()) sum += loss(params, ex);
  return sum / static_cast<double>(dataset.size());
}

/// Adjusted worst-group value over explicit per-group losses and sizes:
/// max_g (loss_g + C / sqrt(n_g)), ties toward the smaller group index.
inline std::pair<double, int> adjusted_value(std::span<const double> per_group_loss,
                                             std::span<const std::size_t> group_sizes,
                                             double c) {
  if (c < 0.0) throw std::invalid_argument("adjustment C must be nonnegative");
  if (per_group_loss.empty() || per_group_loss.size() != group_sizes.size())
    throw std::invalid_argument("per-group losses and sizes must match and be nonempty");
  double best = -1.0;
  int best_g = 0;
  for (std::size_t g = 0; g < per_group_loss.size(); ++g) {
    const double v =
        per_group_loss[g] + (c == 0.0 ? 0.0 : c / std::sqrt(static_cast<double>(group_sizes[g])));
    if (g == 0 || v > best) {
      best = v;
      best_g = static_cast<int>(g);
    }
  }
  return {best, best_g};
}

/// Empirical worst-group risk: max over groups of the group's mean loss.
inline RiskReport worst_group_risk(const ModelParams& params, const GroupedDataset& dataset) {
  RiskReport r;
  r.per_group_loss = per_group_mean_loss(params, dataset);
  const auto [value, g] = adjusted_value(r.per_group_loss, dataset.group_sizes(), 0.0);
  r.value = value;
  r.argmax_group = g;
  return r;
}

/// Group-adjusted worst-group risk: max over groups of mean loss + C/sqrt(n_g).
inline RiskReport adjusted_worst_group_risk(const ModelParams& params,
                                            const GroupedDataset& dataset, double c) {
  if (c < 0.0) throw std::invalid_argument("adjustment C must be nonnegative");
  RiskReport r;
  r.per_group_loss = per_group_mean_loss(params, dataset);
  std::vector<double> adjusted(r.per_group_loss);
  if (c != 0.0)
    for (int g = 0; g < dataset.group_count(); ++g)
      adjusted[g] += c / std::sqrt(static_cast<double>(dataset.group_size(g)));
  const auto [value, g] = adjusted_value(r.per_group_loss, dataset.group_sizes(), c);
  r.value = value;
  r.argmax_group = g;
  r.adjusted = std::move(adjusted);
  return r;
}

/// Bilinear mixture risk L(theta, q) = sum_g q_g * mean loss of group g.
/// Per-group means are computed first, then the q-weighted sum.
inline double mixture_risk(const ModelParams& params, const GroupWeights& q,
                           const GroupedDataset& dataset) {
  if (q.size() != dataset.group_count())
    throw std::invalid_argument("group weights do not match dataset group count");
  const std::vector<double> mean = per_group_mean_loss(params, dataset);
  double value = 0.0;
  for (int g = 0; g < dataset.group_count(); ++g) value += q[g] * mean[g];
  return value;
}

/// Importance-weighted risk (1/n) sum_i w_{g(i)} * loss_i.
inline double weighted_risk(const ModelParams& params, std::span<const double> w,
                            const GroupedDataset& dataset) {
  if (static_cast<int>(w.size()) != dataset.group_count())
    throw std::invalid_argument("weight vector does not match dataset group count");
  for (double v : w)
    if (!(v > 0.0)) throw std::invalid_argument("group weights must be positive");
  double sum = 0.0;
  for (const Example& ex : dataset.examples()) sum += w[ex.group] * loss(params, ex);
  return sum / static_cast<double>(dataset.size());
}

}  // namespace groupdro
