#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "groupdro/analysis.hpp"
#include "groupdro/optimizer.hpp"

namespace groupdro {

namespace detail {

inline std::string csv_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Training history as tidy CSV: checkpoint,split,group,loss,acc,q_g.
inline std::string history_csv(const TrainHistory& history) {
  std::ostringstream out;
  out << "checkpoint,split,group,loss,acc,q_g\n";
  for (const Checkpoint& cp : history.checkpoints) {
    for (int g = 0; g < history.group_count; ++g)
      out << cp.epoch << ",train," << g << "," << detail::csv_double(cp.train_loss[g]) << ","
          << detail::csv_double(cp.train_acc[g]) << "," << detail::csv_double(cp.q[g]) << "\n";
    for (int g = 0; g < history.group_count; ++g)
      out << cp.epoch << ",val," << g << "," << detail::csv_double(cp.val_loss[g]) << ","
          << detail::csv_double(cp.val_acc[g]) << "," << detail::csv_double(cp.q[g]) << "\n";
  }
  return out.str();
}

/// Per-checkpoint summary with the early-stopping selection.
inline nlohmann::json history_summary_json(const TrainHistory& history) {
  nlohmann::json checkpoints = nlohmann::json::array();
  for (const Checkpoint& cp : history.checkpoints) {
    double worst_train = cp.train_acc.empty() ? 0.0 : cp.train_acc[0];
    for (double a : cp.train_acc) worst_train = std::min(worst_train, a);
    checkpoints.push_back(nlohmann::json{{"epoch", cp.epoch},
                                         {"q", cp.q},
                                         {"train_loss", cp.train_loss},
                                         {"train_acc", cp.train_acc},
                                         {"val_loss", cp.val_loss},
                                         {"val_acc", cp.val_acc},
                                         {"worst_group_train_acc", worst_train},
                                         {"worst_group_val_acc", cp.worst_val_acc()}});
  }
  const std::size_t best = early_stop_select(history);
  return nlohmann::json{{"arch", history.arch.to_string()},
                        {"group_count", history.group_count},
                        {"checkpoints", checkpoints},
                        {"best_checkpoint_index", best},
                        {"best_checkpoint_epoch", history.checkpoints[best].epoch},
                        {"best_worst_group_val_acc", history.checkpoints[best].worst_val_acc()}};
}

inline nlohmann::json metrics_json(const GroupMetrics& metrics) {
  nlohmann::json per_group = nlohmann::json::array();
  for (std::size_t g = 0; g < metrics.per_group_accuracy.size(); ++g)
    per_group.push_back(nlohmann::json{
        {"group", g},
        {"acc", metrics.per_group_accuracy[g]},
        {"loss", metrics.per_group_loss[g]},
        {"n", metrics.group_sizes[g]},
        {"binomial_sd", binomial_stddev(metrics.per_group_accuracy[g], metrics.group_sizes[g])}});
  return nlohmann::json{{"per_group", per_group},
                        {"worst_group_acc", metrics.worst_group_accuracy},
                        {"worst_group", metrics.worst_group},
                        {"average_acc", metrics.average_accuracy}};
}

/// One benchmark row block in the tidy metrics CSV schema:
/// run_id,mode,lambda,C,checkpoint,split,avg_acc,worst_acc,group,acc,loss.
inline void append_metrics_rows(std::ostringstream& out, const std::string& run_id,
                                const std::string& mode, double lambda, double c,
                                int checkpoint_epoch, const std::string& split,
                                const GroupMetrics& metrics, double avg_acc) {
  for (std::size_t g = 0; g < metrics.per_group_accuracy.size(); ++g)
    out << run_id << "," << mode << "," << detail::csv_double(lambda) << ","
        << detail::csv_double(c) << "," << checkpoint_epoch << "," << split << ","
        << detail::csv_double(avg_acc) << ","
        << detail::csv_double(metrics.worst_group_accuracy) << "," << g << ","
        << detail::csv_double(metrics.per_group_accuracy[g]) << ","
        << detail::csv_double(metrics.per_group_loss[g]) << "\n";
}

inline constexpr const char* kMetricsCsvHeader =
    "run_id,mode,lambda,C,checkpoint,split,avg_acc,worst_acc,group,acc,loss\n";

/// Convergence experiment rows: T,seed,eps_T,bound.
struct ConvergenceRow {
  long long steps = 0;
  int seed = 0;
  double eps = 0.0;
  double bound = 0.0;
};

inline std::string convergence_csv(const std::vector<ConvergenceRow>& rows) {
  std::ostringstream out;
  out << "T,seed,eps_T,bound\n";
  for (const ConvergenceRow& r : rows)
    out << r.steps << "," << r.seed << "," << detail::csv_double(r.eps) << ","
        << detail::csv_double(r.bound) << "\n";
  return out.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace groupdro
