#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "groupdro/errors.hpp"
#include "groupdro/rng.hpp"

namespace groupdro {

/// One (x, y, g) training triplet: features, class label, group id.
struct Example {
  std::vector<double> features;
  int label = 0;
  int group = 0;
};

/// Labeled, grouped dataset. Immutable after construction; every group in
/// {0..m-1} is guaranteed nonempty, so per-group means are always defined.
class GroupedDataset {
 public:
  GroupedDataset(std::vector<Example> examples, int group_count, int class_count)
      : examples_(std::move(examples)), m_(group_count), k_(class_count) {
    if (m_ < 1) throw std::invalid_argument("group count must be >= 1");
    if (k_ < 2) throw std::invalid_argument("class count must be >= 2");
    if (examples_.empty()) throw std::invalid_argument("dataset has no examples");
    d_ = static_cast<int>(examples_.front().features.size());
    if (d_ < 1) throw std::invalid_argument("feature dimension must be >= 1");
    group_index_.resize(m_);
    for (std::size_t i = 0; i < examples_.size(); ++i) {
      const Example& ex = examples_[i];
      if (static_cast<int>(ex.features.size()) != d_)
        throw std::invalid_argument("example " + std::to_string(i) +
                                    " has inconsistent feature dimension");
      for (double v : ex.features)
        if (!std::isfinite(v))
          throw std::invalid_argument("example " + std::to_string(i) +
                                      " has a non-finite feature");
      if (ex.label < 0 || ex.label >= k_)
        throw std::invalid_argument("example " + std::to_string(i) +
                                    " has label out of range");
      if (ex.group < 0 || ex.group >= m_)
        throw std::invalid_argument("example " + std::to_string(i) +
                                    " has group out of range");
      group_index_[ex.group].push_back(i);
    }
    group_sizes_.resize(m_);
    for (int g = 0; g < m_; ++g) {
      group_sizes_[g] = group_index_[g].size();
      if (group_sizes_[g] == 0)
        throw std::invalid_argument("group " + std::to_string(g) + " is empty");
    }
  }

  int group_count() const { return m_; }
  int class_count() const { return k_; }
  int feature_dim() const { return d_; }
  std::size_t size() const { return examples_.size(); }

  const Example& example(std::size_t i) const { return examples_[i]; }
  const std::vector<Example>& examples() const { return examples_; }
  const std::vector<std::size_t>& group_index(int g) const { return group_index_[g]; }
  std::size_t group_size(int g) const { return group_sizes_[g]; }
  const std::vector<std::size_t>& group_sizes() const { return group_sizes_; }

 private:
  std::vector<Example> examples_;
  int m_, k_, d_;
  std::vector<std::vector<std::size_t>> group_index_;
  std::vector<std::size_t> group_sizes_;
};

/// Point q on the probability simplex over the m groups. Validated on every
/// construction: entries nonnegative, sum within 1e-9 of one.
class GroupWeights {
 public:
  explicit GroupWeights(std::vector<double> q) : q_(std::move(q)) {
    if (q_.empty()) throw std::invalid_argument("group weights are empty");
    double sum = 0.0;
    for (double v : q_) {
      if (!(v >= 0.0)) throw std::invalid_argument("group weight is negative or NaN");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("group weights sum to " + std::to_string(sum) +
                                  ", not 1");
  }

  int size() const { return static_cast<int>(q_.size()); }
  double operator[](int g) const { return q_[g]; }
  const std::vector<double>& values() const { return q_; }

 private:
  std::vector<double> q_;
};

/// Uniform weights 1/m.
inline GroupWeights uniform_weights(int m) {
  if (m < 1) throw std::invalid_argument("uniform_weights: m must be >= 1");
  return GroupWeights(std::vector<double>(m, 1.0 / m));
}

/// Empirical group fractions n_g / n.
inline std::vector<double> group_fractions(const GroupedDataset& dataset) {
  std::vector<double> f(dataset.group_count());
  const double n = static_cast<double>(dataset.size());
  for (int g = 0; g < dataset.group_count(); ++g)
    f[g] = static_cast<double>(dataset.group_size(g)) / n;
  return f;
}

struct SplitFractions {
  double train = 0.0;
  double val = 0.0;
  double test = 0.0;
};

struct SplitResult {
  GroupedDataset train;
  GroupedDataset val;
  GroupedDataset test;
};

namespace detail {

// Part sizes for one group: floor for train and val, remainder to test.
// When a floor lands on zero but the group is still large enough, one
// example moves over from the largest part so no part is left empty.
inline std::array<std::size_t, 3> split_sizes(std::size_t n_g, const SplitFractions& f,
                                              int group) {
  if (n_g < 3)
    throw SplitInfeasibleError(group, n_g,
                               "group " + std::to_string(group) + " has only " +
                                   std::to_string(n_g) +
                                   " examples; cannot give every split one");
  std::array<std::size_t, 3> sizes{};
  sizes[0] = static_cast<std::size_t>(std::floor(f.train * static_cast<double>(n_g)));
  sizes[1] = static_cast<std::size_t>(std::floor(f.val * static_cast<double>(n_g)));
  sizes[2] = n_g - sizes[0] - sizes[1];
  for (int round = 0; round < 2; ++round) {
    for (int p = 0; p < 3; ++p) {
      if (sizes[p] != 0) continue;
      int largest = 0;
      for (int q = 1; q < 3; ++q)
        if (sizes[q] > sizes[largest]) largest = q;
      --sizes[largest];
      ++sizes[p];
    }
  }
  return sizes;
}

}  // namespace detail

/// Splits each group independently into train/val/test in the given
/// proportions. Deterministic in the seed; the three outputs partition the
/// input. Fractions must be positive and sum to one.
inline SplitResult stratified_split(const GroupedDataset& dataset, const SplitFractions& f,
                                    std::uint64_t seed) {
  if (!(f.train > 0.0) || !(f.val > 0.0) || !(f.test > 0.0))
    throw std::invalid_argument("split fractions must all be positive");
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw std::invalid_argument("split fractions must sum to 1");

  Rng rng(seed);
  std::array<std::vector<std::size_t>, 3> part_positions;
  for (int g = 0; g < dataset.group_count(); ++g) {
    std::vector<std::size_t> positions = dataset.group_index(g);
    rng.shuffle(positions);
    const auto sizes = detail::split_sizes(positions.size(), f, g);
    std::size_t offset = 0;
    for (int p = 0; p < 3; ++p) {
      part_positions[p].insert(part_positions[p].end(), positions.begin() + offset,
                               positions.begin() + offset + sizes[p]);
      offset += sizes[p];
    }
  }

  auto build = [&](std::vector<std::size_t>& positions) {
    std::sort(positions.begin(), positions.end());
    std::vector<Example> part;
    part.reserve(positions.size());
    for (std::size_t i : positions) part.push_back(dataset.example(i));
    return GroupedDataset(std::move(part), dataset.group_count(), dataset.class_count());
  };
  return SplitResult{build(part_positions[0]), build(part_positions[1]),
                     build(part_positions[2])};
}

}  // namespace groupdro
