#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <map>
#include <set>

#include "groupdro/dataset.hpp"

using namespace groupdro;

namespace {

// Small dataset with the requested per-group sizes; features carry the
// original position so splits can be traced back exactly.
GroupedDataset make_dataset(const std::vector<std::size_t>& sizes, int classes = 2) {
  std::vector<Example> ex;
  std::size_t pos = 0;
  for (std::size_t g = 0; g < sizes.size(); ++g)
    for (std::size_t i = 0; i < sizes[g]; ++i, ++pos)
      ex.push_back(Example{{static_cast<double>(pos)}, static_cast<int>(pos % classes),
                           static_cast<int>(g)});
  return GroupedDataset(std::move(ex), static_cast<int>(sizes.size()), classes);
}

std::multiset<double> ids(const GroupedDataset& d) {
  std::multiset<double> s;
  for (const Example& ex : d.examples()) s.insert(ex.features[0]);
  return s;
}

}  // namespace

TEST_CASE("uniform weights") {
  const GroupWeights w4 = uniform_weights(4);
  for (int g = 0; g < 4; ++g) CHECK(w4[g] == 0.25);

  const GroupWeights w1 = uniform_weights(1);
  CHECK(w1[0] == 1.0);

  const GroupWeights w3 = uniform_weights(3);
  double sum = 0.0;
  for (int g = 0; g < 3; ++g) {
    CHECK(w3[g] == Catch::Approx(1.0 / 3.0).margin(1e-15));
    sum += w3[g];
  }
  CHECK(std::abs(sum - 1.0) <= 1e-12);

  CHECK_THROWS_AS(uniform_weights(0), std::invalid_argument);
}

TEST_CASE("group weights validate the simplex invariant") {
  CHECK_THROWS_AS(GroupWeights({0.5, 0.4}), std::invalid_argument);
  CHECK_THROWS_AS(GroupWeights({1.2, -0.2}), std::invalid_argument);
  CHECK_NOTHROW(GroupWeights({0.25, 0.75}));
}

TEST_CASE("dataset construction invariants") {
  CHECK_THROWS_AS(GroupedDataset({}, 1, 2), std::invalid_argument);

  // group 1 empty
  std::vector<Example> ex{{{0.0}, 0, 0}};
  CHECK_THROWS_AS(GroupedDataset(ex, 2, 2), std::invalid_argument);

  // label out of range
  ex = {{{0.0}, 2, 0}};
  CHECK_THROWS_AS(GroupedDataset(ex, 1, 2), std::invalid_argument);

  // inconsistent dimension
  ex = {{{0.0}, 0, 0}, {{0.0, 1.0}, 1, 0}};
  CHECK_THROWS_AS(GroupedDataset(ex, 1, 2), std::invalid_argument);

  // non-finite feature
  ex = {{{std::numeric_limits<double>::quiet_NaN()}, 0, 0}};
  CHECK_THROWS_AS(GroupedDataset(ex, 1, 2), std::invalid_argument);

  const GroupedDataset d = make_dataset({3, 5});
  CHECK(d.size() == 8);
  CHECK(d.group_size(0) == 3);
  CHECK(d.group_size(1) == 5);
  std::size_t total = 0;
  for (int g = 0; g < d.group_count(); ++g) {
    total += d.group_size(g);
    for (std::size_t i : d.group_index(g)) CHECK(d.example(i).group == g);
  }
  CHECK(total == d.size());
}

TEST_CASE("group fractions") {
  const GroupedDataset d = make_dataset({70, 30});
  const std::vector<double> f = group_fractions(d);
  CHECK(f[0] == Catch::Approx(0.7).margin(1e-15));
  CHECK(f[1] == Catch::Approx(0.3).margin(1e-15));

  const std::vector<double> single = group_fractions(make_dataset({17}));
  CHECK(single[0] == 1.0);

  const GroupedDataset four = make_dataset({3513, 1387, 2021, 997});
  const std::vector<double> ff = group_fractions(four);
  double sum = 0.0;
  for (int g = 0; g < 4; ++g) {
    CHECK(ff[g] == Catch::Approx(static_cast<double>(four.group_size(g)) / four.size())
                       .margin(1e-15));
    CHECK(ff[g] >= 0.0);
    sum += ff[g];
  }
  CHECK(std::abs(sum - 1.0) <= 1e-12);
}

TEST_CASE("stratified split proportions and rounding") {
  const GroupedDataset d = make_dataset({10, 20});
  const SplitResult parts = stratified_split(d, {0.5, 0.2, 0.3}, 7);
  CHECK(parts.train.group_size(0) == 5);
  CHECK(parts.val.group_size(0) == 2);
  CHECK(parts.test.group_size(0) == 3);
  CHECK(parts.train.group_size(1) == 10);
  CHECK(parts.val.group_size(1) == 4);
  CHECK(parts.test.group_size(1) == 6);
}

TEST_CASE("stratified split rejects bad fractions") {
  const GroupedDataset d = make_dataset({10});
  CHECK_THROWS_AS(stratified_split(d, {1.0, 0.0, 0.0}, 1), std::invalid_argument);
  CHECK_THROWS_AS(stratified_split(d, {0.5, 0.2, 0.2}, 1), std::invalid_argument);
}

TEST_CASE("stratified split infeasible group is named") {
  const GroupedDataset d = make_dataset({8, 2});
  try {
    stratified_split(d, {0.4, 0.3, 0.3}, 1);
    FAIL("expected SplitInfeasibleError");
  } catch (const SplitInfeasibleError& e) {
    CHECK(e.group() == 1);
    CHECK(e.group_size() == 2);
  }
}

TEST_CASE("stratified split keeps one example per part for tiny groups") {
  // Floor rounding alone would give the val part zero examples here.
  const GroupedDataset d = make_dataset({3, 100});
  const SplitResult parts = stratified_split(d, {0.5, 0.2, 0.3}, 3);
  CHECK(parts.train.group_size(0) >= 1);
  CHECK(parts.val.group_size(0) >= 1);
  CHECK(parts.test.group_size(0) >= 1);
}

TEST_CASE("stratified split is a deterministic partition") {
  const GroupedDataset d = make_dataset({13, 37, 9});
  const SplitResult a = stratified_split(d, {0.6, 0.2, 0.2}, 42);
  const SplitResult b = stratified_split(d, {0.6, 0.2, 0.2}, 42);

  // Same seed, identical split.
  CHECK(ids(a.train) == ids(b.train));
  CHECK(ids(a.val) == ids(b.val));
  CHECK(ids(a.test) == ids(b.test));

  // The parts are disjoint and cover the input.
  std::multiset<double> all = ids(a.train);
  for (double v : ids(a.val)) all.insert(v);
  for (double v : ids(a.test)) all.insert(v);
  CHECK(all == ids(d));
  CHECK(all.size() == d.size());  // multiset equality + size => disjoint

  // A different seed reshuffles membership (overwhelmingly likely).
  const SplitResult c = stratified_split(d, {0.6, 0.2, 0.2}, 43);
  CHECK(ids(c.train) != ids(a.train));
}
