#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "groupdro/dataset.hpp"
#include "groupdro/errors.hpp"
#include "groupdro/model.hpp"
#include "groupdro/objectives.hpp"
#include "groupdro/rng.hpp"

namespace groupdro {

enum class TrainMode { kErm, kUpweight, kGroupDro };
enum class BatchVariant { kPerExample, kMinibatch };

inline std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kErm: return "erm";
    case TrainMode::kUpweight: return "upweight";
    case TrainMode::kGroupDro: return "group_dro";
  }
  return "?";
}

inline TrainMode train_mode_from_string(const std::string& s) {
  if (s == "erm") return TrainMode::kErm;
  if (s == "upweight") return TrainMode::kUpweight;
  if (s == "group_dro") return TrainMode::kGroupDro;
  throw std::invalid_argument("unknown mode '" + s + "' (erm | upweight | group_dro)");
}

struct OptimizerConfig {
  TrainMode mode = TrainMode::kGroupDro;
  BatchVariant variant = BatchVariant::kMinibatch;
  double eta_theta = 0.1;
  double eta_q = 0.01;       // used only in group_dro mode
  double momentum = 0.0;     // heavy-ball coefficient in [0, 1)
  double lambda = 0.0;       // l2 penalty coefficient
  double adjustment_c = 0.0; // C in the C/sqrt(n_g) group adjustment
  int batch_size = 1;
  int epochs = 1;
  std::uint64_t seed = 0;
  /// Overrides the mode's default starting q (uniform for group_dro and
  /// upweight, group fractions for erm). Mainly for equivalence tests.
  std::optional<std::vector<double>> initial_q;

  void validate(int group_count, std::size_t train_size) const {
    if (!(eta_theta >= 0.0) || !std::isfinite(eta_theta))
      throw std::invalid_argument("eta_theta must be finite and >= 0");
    if (mode == TrainMode::kGroupDro && (!(eta_q >= 0.0) || !std::isfinite(eta_q)))
      throw std::invalid_argument("eta_q must be finite and >= 0 for group_dro");
    if (!(momentum >= 0.0) || momentum >= 1.0)
      throw std::invalid_argument("momentum must lie in [0, 1)");
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
    if (!(adjustment_c >= 0.0)) throw std::invalid_argument("adjustment C must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (static_cast<std::size_t>(batch_size) > train_size)
      throw std::invalid_argument("batch size exceeds the training set size");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (initial_q && static_cast<int>(initial_q->size()) != group_count)
      throw std::invalid_argument("initial q does not match the group count");
  }
};

/// Exponentiated-gradient ascent step on q: multiply the observed group's
/// weight by exp(eta_q * (loss + adjustment)) and renormalize the simplex.
inline GroupWeights eg_update(const GroupWeights& q, int g, double observed_loss,
                              double eta_q, double adjustment) {
  if (g < 0 || g >= q.size()) throw std::invalid_argument("eg_update: group out of range");
  if (!std::isfinite(observed_loss))
    throw NumericalError("eg_update: non-finite loss " + std::to_string(observed_loss) +
                         " observed for group " + std::to_string(g));
  std::vector<double> next = q.values();
  next[g] *= std::exp(eta_q * (observed_loss + adjustment));
  double sum = 0.0;
  for (double v : next) sum += v;
  if (!std::isfinite(sum) || sum <= 0.0)
    throw NumericalError("eg_update: weights degenerate after update of group " +
                         std::to_string(g) + " (sum = " + std::to_string(sum) +
                         ", eta_q = " + std::to_string(eta_q) + ")");
  for (double& v : next) v /= sum;
  return GroupWeights(std::move(next));
}

struct TrainState {
  ModelParams params;
  GroupWeights q;
  std::vector<double> velocity;
};

/// The training-loop rng stream for a run seed (model init draws from a
/// separate stream so changing the arch does not shift the sampling).
inline Rng sampler_rng(std::uint64_t seed) { return Rng::derive(seed, 0x5A4D504CULL); }

/// Sampler of the online algorithm: a group uniformly at random, then an
/// example uniformly within that group.
class GroupUniformSampler {
 public:
  GroupUniformSampler(const GroupedDataset& data, Rng rng) : data_(&data), rng_(rng) {}

  const Example& draw() {
    const int g = rng_.uniform_int(data_->group_count());
    const std::size_t pos = rng_.uniform_index(data_->group_size(g));
    return data_->example(data_->group_index(g)[pos]);
  }

 private:
  const GroupedDataset* data_;
  Rng rng_;
};

namespace detail {

inline double group_adjustment(const OptimizerConfig& config, std::size_t n_g) {
  return config.adjustment_c == 0.0
             ? 0.0
             : config.adjustment_c / std::sqrt(static_cast<double>(n_g));
}

// theta <- theta - eta * v with v <- momentum * v + effective_gradient,
// where effective_gradient already includes the 2*lambda*theta term.
inline void heavy_ball_step(TrainState& state, const OptimizerConfig& config,
                            std::span<const double> data_grad) {
  std::vector<double>& theta = state.params.theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double effective = data_grad[i] + 2.0 * config.lambda * theta[i];
    state.velocity[i] = config.momentum * state.velocity[i] + effective;
    theta[i] -= config.eta_theta * state.velocity[i];
  }
}

}  // namespace detail

/// One per-example step of the online algorithm: update q by exponentiated
/// gradient on the sampled example's loss (group_dro mode only), then take a
/// heavy-ball step on theta with effective gradient q_g * grad + 2*lambda*theta.
inline void dro_step(TrainState& state, const Example& sample, const OptimizerConfig& config,
                     std::span<const std::size_t> group_sizes) {
  std::vector<double> g(state.params.theta.size(), 0.0);
  const double sample_loss = add_loss_grad(state.params, sample, 1.0, g);
  if (!std::isfinite(sample_loss))
    throw NumericalError("dro_step: non-finite loss on group " + std::to_string(sample.group));
  if (config.mode == TrainMode::kGroupDro)
    state.q = eg_update(state.q, sample.group, sample_loss, config.eta_q,
                        detail::group_adjustment(config, group_sizes[sample.group]));
  const double w = state.q[sample.group];
  for (double& v : g) v *= w;
  detail::heavy_ball_step(state, config, g);
}

/// One minibatch step: per-example losses and gradients are pooled by
/// group; group_dro then takes one EG step per group present in the batch
/// on that group's within-batch mean loss; finally theta moves along
/// sum_g (q_g / b_g) * sum_{i in g} grad_i plus the l2 term, with the
/// freshly updated q.
inline void minibatch_step(TrainState& state, std::span<const Example* const> batch,
                           const OptimizerConfig& config,
                           std::span<const std::size_t> group_sizes) {
  const std::size_t dim = state.params.theta.size();
  const int m = state.q.size();
  thread_local std::vector<std::vector<double>> group_grad;
  thread_local std::vector<std::size_t> group_hits;
  thread_local std::vector<double> group_loss_sum;
  thread_local std::vector<double> data_grad;
  group_grad.resize(m);
  group_hits.assign(m, 0);
  group_loss_sum.assign(m, 0.0);
  data_grad.assign(dim, 0.0);

  for (const Example* ex : batch) {
    if (group_hits[ex->group] == 0) group_grad[ex->group].assign(dim, 0.0);
    const double sample_loss = add_loss_grad(state.params, *ex, 1.0, group_grad[ex->group]);
    if (!std::isfinite(sample_loss))
      throw NumericalError("minibatch_step: non-finite loss on group " +
                           std::to_string(ex->group));
    group_loss_sum[ex->group] += sample_loss;
    ++group_hits[ex->group];
  }
  if (config.mode == TrainMode::kGroupDro) {
    for (int g = 0; g < m; ++g) {
      if (group_hits[g] == 0) continue;
      const double mean_loss = group_loss_sum[g] / static_cast<double>(group_hits[g]);
      state.q = eg_update(state.q, g, mean_loss, config.eta_q,
                          detail::group_adjustment(config, group_sizes[g]));
    }
  }
  for (int g = 0; g < m; ++g) {
    if (group_hits[g] == 0) continue;
    const double w = state.q[g] / static_cast<double>(group_hits[g]);
    const std::vector<double>& gg = group_grad[g];
    for (std::size_t i = 0; i < dim; ++i) data_grad[i] += w * gg[i];
  }
  detail::heavy_ball_step(state, config, data_grad);
}

/// Per-checkpoint record: snapshots of theta, the running average iterate,
/// q, and per-group losses/accuracies on the train and validation splits.
struct Checkpoint {
  int epoch = 0;
  std::vector<double> theta;
  std::vector<double> theta_bar;
  std::vector<double> q;
  std::vector<double> train_loss, train_acc;
  std::vector<double> val_loss, val_acc;

  double worst_val_acc() const {
    double worst = val_acc.empty() ? 0.0 : val_acc[0];
    for (double a : val_acc) worst = std::min(worst, a);
    return worst;
  }
};

struct TrainHistory {
  Arch arch;
  int group_count = 0;
  std::vector<Checkpoint> checkpoints;
};

namespace detail {

struct SplitStats {
  std::vector<double> loss, acc;
};

inline SplitStats split_stats(const ModelParams& params, const GroupedDataset& data) {
  SplitStats s;
  const int m = data.group_count();
  s.loss.assign(m, 0.0);
  s.acc.assign(m, 0.0);
  for (int g = 0; g < m; ++g) {
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t i : data.group_index(g)) {
      const Example& ex = data.example(i);
      loss_sum += loss(params, ex);
      if (predict(params, ex.features) == ex.label) ++correct;
    }
    const double n_g = static_cast<double>(data.group_size(g));
    s.loss[g] = loss_sum / n_g;
    s.acc[g] = static_cast<double>(correct) / n_g;
  }
  return s;
}

inline GroupWeights initial_weights(const OptimizerConfig& config,
                                    const GroupedDataset& train_set) {
  if (config.initial_q) return GroupWeights(*config.initial_q);
  if (config.mode == TrainMode::kErm) return GroupWeights(group_fractions(train_set));
  return uniform_weights(train_set.group_count());
}

}  // namespace detail

/// Runs the training loop and records a checkpoint at the end of every
/// epoch. All three modes share one loop: groups are sampled uniformly, an
/// example uniformly within the group, and each example's gradient is
/// weighted by its group's q. erm freezes q at the empirical group
/// fractions, upweight freezes it uniform, and group_dro updates it by
/// exponentiated gradient. Deterministic given (config, data, seed).
inline std::pair<ModelParams, TrainHistory> train(const OptimizerConfig& config,
                                                  const GroupedDataset& train_set,
                                                  const GroupedDataset& val_set,
                                                  const Arch& arch) {
  config.validate(train_set.group_count(), train_set.size());
  arch.validate();
  if (arch.input_dim != train_set.feature_dim() || arch.classes < train_set.class_count())
    throw std::invalid_argument("arch does not fit the training set");
  if (val_set.group_count() != train_set.group_count() ||
      val_set.feature_dim() != train_set.feature_dim() ||
      val_set.class_count() != train_set.class_count())
    throw std::invalid_argument("validation set does not match the training set");

  const int m = train_set.group_count();
  const std::size_t n = train_set.size();
  const std::size_t dim = arch.param_count();

  TrainState state{init_params(arch, splitmix64(config.seed)),
                   detail::initial_weights(config, train_set),
                   std::vector<double>(dim, 0.0)};
  GroupUniformSampler sampler(train_set, sampler_rng(config.seed));

  std::vector<double> theta_bar(dim, 0.0);
  std::size_t steps_done = 0;
  auto absorb_iterate = [&]() {
    ++steps_done;
    const double inv = 1.0 / static_cast<double>(steps_done);
    for (std::size_t i = 0; i < dim; ++i)
      theta_bar[i] += (state.params.theta[i] - theta_bar[i]) * inv;
  };

  const bool per_example = config.variant == BatchVariant::kPerExample;
  const std::size_t batch = per_example ? 1 : static_cast<std::size_t>(config.batch_size);
  const std::size_t steps_per_epoch = per_example ? n : (n + batch - 1) / batch;
  std::vector<const Example*> batch_examples(batch);

  TrainHistory history;
  history.arch = arch;
  history.group_count = m;
  history.checkpoints.reserve(config.epochs);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      if (per_example) {
        dro_step(state, sampler.draw(), config, train_set.group_sizes());
      } else {
        for (std::size_t b = 0; b < batch; ++b) batch_examples[b] = &sampler.draw();
        minibatch_step(state, batch_examples, config, train_set.group_sizes());
      }
      absorb_iterate();
    }

    Checkpoint cp;
    cp.epoch = epoch;
    cp.theta = state.params.theta;
    cp.theta_bar = theta_bar;
    cp.q = state.q.values();
    detail::SplitStats tr = detail::split_stats(state.params, train_set);
    detail::SplitStats va = detail::split_stats(state.params, val_set);
    cp.train_loss = std::move(tr.loss);
    cp.train_acc = std::move(tr.acc);
    cp.val_loss = std::move(va.loss);
    cp.val_acc = std::move(va.acc);
    history.checkpoints.push_back(std::move(cp));
  }

  return {std::move(state.params), std::move(history)};
}

/// Index of the checkpoint with the best worst-group validation accuracy;
/// ties go to the earliest checkpoint.
inline std::size_t early_stop_select(const TrainHistory& history) {
  if (history.checkpoints.empty())
    throw std::invalid_argument("early_stop_select: history has no checkpoints");
  std::size_t best = 0;
  double best_acc = -1.0;
  for (std::size_t i = 0; i < history.checkpoints.size(); ++i) {
    const Checkpoint& cp = history.checkpoints[i];
    if (cp.val_acc.empty())
      throw std::invalid_argument("early_stop_select: checkpoint lacks validation metrics");
    const double acc = cp.worst_val_acc();
    if (acc > best_acc) {
      best_acc = acc;
      best = i;
    }
  }
  return best;
}

}  // namespace groupdro
