#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "groupdro/analysis.hpp"
#include "groupdro/datagen.hpp"
#include "groupdro/dataset.hpp"
#include "groupdro/model.hpp"
#include "groupdro/optimizer.hpp"
#include "groupdro/reports.hpp"

namespace groupdro {

/// Where the train/val/test sets come from: three CSV paths, or a synthetic
/// recipe with per-split sizes. Synthetic val/test default to group-balanced
/// sampling (p_align = 0.5); balanced_eval=false keeps the training skew.
struct DataSource {
  // CSV route
  std::string train_csv, val_csv, test_csv;
  // Synthetic route
  std::optional<SyntheticSpec> spec;
  int n_train = 0, n_val = 0, n_test = 0;
  bool balanced_eval = true;

  bool synthetic() const { return spec.has_value(); }

  static DataSource from_json(const nlohmann::json& j) {
    DataSource src;
    if (j.contains("spec")) {
      SyntheticSpec spec = spec_from_json(j.at("spec"));
      for (const char* field : {"n_train", "n_val", "n_test"})
        if (!j.contains(field))
          throw std::invalid_argument(std::string("data: missing required field: ") + field);
      src.n_train = j.at("n_train").get<int>();
      src.n_val = j.at("n_val").get<int>();
      src.n_test = j.at("n_test").get<int>();
      src.balanced_eval = j.value("balanced_eval", true);
      src.spec = std::move(spec);
      return src;
    }
    for (const char* field : {"train_csv", "val_csv"})
      if (!j.contains(field))
        throw std::invalid_argument(std::string("data: missing required field: ") + field);
    src.train_csv = j.at("train_csv").get<std::string>();
    src.val_csv = j.at("val_csv").get<std::string>();
    src.test_csv = j.value("test_csv", std::string());
    return src;
  }

  nlohmann::json to_json() const {
    if (synthetic())
      return nlohmann::json{{"spec", groupdro::to_json(*spec)},
                            {"n_train", n_train},
                            {"n_val", n_val},
                            {"n_test", n_test},
                            {"balanced_eval", balanced_eval}};
    nlohmann::json j{{"train_csv", train_csv}, {"val_csv", val_csv}};
    if (!test_csv.empty()) j["test_csv"] = test_csv;
    return j;
  }
};

struct LoadedData {
  GroupedDataset train;
  GroupedDataset val;
  std::optional<GroupedDataset> test;
};

/// Synthetic splits draw from per-split derived seeds so the three sets are
/// independent; val/test flip to p_align = 0.5 when balanced_eval is set.
inline LoadedData load_data(const DataSource& src) {
  if (src.synthetic()) {
    SyntheticSpec train_spec = *src.spec;
    train_spec.n_total = src.n_train;

    SyntheticSpec val_spec = train_spec;
    val_spec.n_total = src.n_val;
    val_spec.seed = splitmix64(train_spec.seed ^ 0x76616C0001ULL);
    SyntheticSpec test_spec = train_spec;
    test_spec.n_total = src.n_test;
    test_spec.seed = splitmix64(train_spec.seed ^ 0x746573740002ULL);
    if (src.balanced_eval) {
      val_spec.p_align = 0.5;
      test_spec.p_align = 0.5;
    }
    return LoadedData{generate(train_spec), generate(val_spec), generate(test_spec)};
  }
  GroupedDataset train = read_csv(src.train_csv);
  const int m = train.group_count();
  const int k = train.class_count();
  GroupedDataset val = read_csv(src.val_csv, m, k);
  std::optional<GroupedDataset> test;
  if (!src.test_csv.empty()) test = read_csv(src.test_csv, m, k);
  return LoadedData{std::move(train), std::move(val), std::move(test)};
}

// ---------------------------------------------------------------------------
// Grid benchmark (the three-way comparison across l2 strengths, with group
// adjustments searched only at the designated penalty).

struct GridSpec {
  std::vector<TrainMode> modes{TrainMode::kErm, TrainMode::kUpweight, TrainMode::kGroupDro};
  std::vector<double> lambdas{1e-4};
  // Default adjustment search C in {0..5}; cells with C > 0 are added for
  // group_dro only, and only at adjust_lambda.
  std::vector<double> adjustments{0.0, 1.0, 2.0, 3.0, 4.0, 5.0};
  double adjust_lambda = 0.0;
  std::vector<int> epochs_list{};  // empty: use the base config's epochs

  static GridSpec from_json(const nlohmann::json& j) {
    GridSpec grid;
    if (j.contains("modes")) {
      grid.modes.clear();
      for (const auto& s : j.at("modes")) grid.modes.push_back(train_mode_from_string(s));
    }
    if (j.contains("lambdas")) grid.lambdas = j.at("lambdas").get<std::vector<double>>();
    if (j.contains("adjustments"))
      grid.adjustments = j.at("adjustments").get<std::vector<double>>();
    grid.adjust_lambda = j.value("adjust_lambda", 0.0);
    if (j.contains("epochs")) grid.epochs_list = j.at("epochs").get<std::vector<int>>();
    return grid;
  }
};

struct ExperimentConfig {
  DataSource data;
  Arch arch;
  OptimizerConfig base;
  GridSpec grid;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int jobs = 1;

  void validate() const {
    if (seeds.empty()) throw std::invalid_argument("config: seeds must be nonempty");
    if (jobs < 1) throw std::invalid_argument("config: jobs must be >= 1");
    if (grid.modes.empty()) throw std::invalid_argument("config: grid has no modes");
    if (grid.lambdas.empty()) throw std::invalid_argument("config: grid has no lambdas");
  }
};

inline OptimizerConfig optimizer_config_from_json(const nlohmann::json& j) {
  OptimizerConfig c;
  if (j.contains("mode")) c.mode = train_mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("variant")) {
    const std::string v = j.at("variant").get<std::string>();
    if (v == "per_example")
      c.variant = BatchVariant::kPerExample;
    else if (v == "minibatch")
      c.variant = BatchVariant::kMinibatch;
    else
      throw std::invalid_argument("unknown variant '" + v + "' (per_example | minibatch)");
  }
  c.eta_theta = j.value("eta_theta", c.eta_theta);
  c.eta_q = j.value("eta_q", c.eta_q);
  c.momentum = j.value("momentum", c.momentum);
  c.lambda = j.value("lambda", c.lambda);
  c.adjustment_c = j.value("adjustment_C", c.adjustment_c);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  return c;
}

inline nlohmann::json optimizer_config_to_json(const OptimizerConfig& c) {
  return nlohmann::json{
      {"mode", to_string(c.mode)},
      {"variant", c.variant == BatchVariant::kPerExample ? "per_example" : "minibatch"},
      {"eta_theta", c.eta_theta},
      {"eta_q", c.eta_q},
      {"momentum", c.momentum},
      {"lambda", c.lambda},
      {"adjustment_C", c.adjustment_c},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"seed", c.seed}};
}

struct GridCell {
  TrainMode mode = TrainMode::kErm;
  double lambda = 0.0;
  double adjustment_c = 0.0;
  int epochs = 0;

  std::string id(std::uint64_t seed) const {
    std::ostringstream out;
    out << to_string(mode) << "-l" << lambda << "-C" << adjustment_c << "-e" << epochs << "-s"
        << seed;
    return out.str();
  }
};

/// Grid per the benchmark protocol: every (mode, lambda, epochs) with C = 0,
/// plus group adjustment cells only for group_dro at the designated lambda.
inline std::vector<GridCell> enumerate_cells(const GridSpec& grid, int default_epochs) {
  std::vector<GridCell> cells;
  const std::vector<int> epochs_list =
      grid.epochs_list.empty() ? std::vector<int>{default_epochs} : grid.epochs_list;
  for (TrainMode mode : grid.modes)
    for (int epochs : epochs_list)
      for (double lambda : grid.lambdas) {
        cells.push_back(GridCell{mode, lambda, 0.0, epochs});
        if (mode == TrainMode::kGroupDro && lambda == grid.adjust_lambda)
          for (double c : grid.adjustments)
            if (c > 0.0) cells.push_back(GridCell{mode, lambda, c, epochs});
      }
  return cells;
}

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  int best_epoch = 0;
  double worst_val_acc = 0.0;
  GroupMetrics val_metrics;
  GroupMetrics test_metrics;
  GroupMetrics train_metrics;
};

struct CellResult {
  GridCell cell;
  std::vector<SeedOutcome> outcomes;
  bool failed = false;
  double mean_worst_val_acc = 0.0;
};

struct BenchmarkResult {
  std::vector<CellResult> cells;
  std::vector<int> best_cell_by_mode;  // parallel to config.grid.modes; -1 if none
  std::vector<double> train_fractions;
  bool partial = false;
};

/// Winner per mode: the cell with the highest mean worst-group validation
/// accuracy, ties to the earlier cell; failed cells never win.
inline std::vector<int> select_best_cells(const std::vector<CellResult>& cells,
                                          const std::vector<TrainMode>& modes) {
  std::vector<int> best(modes.size(), -1);
  for (std::size_t mi = 0; mi < modes.size(); ++mi) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (cells[c].cell.mode != modes[mi] || cells[c].failed) continue;
      if (best[mi] < 0 ||
          cells[c].mean_worst_val_acc > cells[best[mi]].mean_worst_val_acc)
        best[mi] = static_cast<int>(c);
    }
  }
  return best;
}

/// One grid cell at one seed: train, early-stop on worst-group validation
/// accuracy, evaluate the selected checkpoint on every split.
inline SeedOutcome run_cell_seed(const GridCell& cell, const OptimizerConfig& base,
                                 const LoadedData& data, const Arch& arch,
                                 std::uint64_t seed) {
  SeedOutcome outcome;
  outcome.seed = seed;
  OptimizerConfig config = base;
  config.mode = cell.mode;
  config.lambda = cell.lambda;
  config.adjustment_c = cell.adjustment_c;
  config.epochs = cell.epochs;
  config.seed = seed;
  const auto [params, history] = train(config, data.train, data.val, arch);
  const std::size_t best = early_stop_select(history);
  outcome.best_epoch = history.checkpoints[best].epoch;
  outcome.worst_val_acc = history.checkpoints[best].worst_val_acc();

  ModelParams best_params{arch, history.checkpoints[best].theta};
  outcome.train_metrics = evaluate(best_params, data.train);
  outcome.val_metrics = evaluate(best_params, data.val);
  if (data.test) outcome.test_metrics = evaluate(best_params, *data.test);
  return outcome;
}

/// Runs the whole grid; cells x seeds execute on up to `jobs` threads, each
/// task an isolated deterministic run on the shared immutable datasets.
inline BenchmarkResult run_benchmark(const ExperimentConfig& config, const LoadedData& data) {
  config.validate();
  const std::vector<GridCell> cells = enumerate_cells(config.grid, config.base.epochs);
  const std::size_t seeds = config.seeds.size();

  struct Task {
    std::size_t cell_index;
    std::size_t seed_index;
  };
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < cells.size(); ++c)
    for (std::size_t s = 0; s < seeds; ++s) tasks.push_back(Task{c, s});

  std::vector<SeedOutcome> outcomes(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const Task& task = tasks[i];
      try {
        outcomes[i] = run_cell_seed(cells[task.cell_index], config.base, data, config.arch,
                                    config.seeds[task.seed_index]);
      } catch (const std::exception& e) {
        outcomes[i].seed = config.seeds[task.seed_index];
        outcomes[i].failed = true;
        outcomes[i].error = e.what();
      }
    }
  };
  const int thread_count =
      std::min<int>(config.jobs, static_cast<int>(std::max<std::size_t>(tasks.size(), 1)));
  if (thread_count <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < thread_count; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  BenchmarkResult result;
  result.train_fractions = group_fractions(data.train);
  result.cells.resize(cells.size());
  for (std::size_t c = 0; c < cells.size(); ++c) {
    CellResult& cr = result.cells[c];
    cr.cell = cells[c];
    cr.outcomes.assign(outcomes.begin() + c * seeds, outcomes.begin() + (c + 1) * seeds);
    double sum = 0.0;
    for (const SeedOutcome& o : cr.outcomes) {
      if (o.failed) cr.failed = true;
      sum += o.worst_val_acc;
    }
    cr.mean_worst_val_acc = cr.failed ? 0.0 : sum / static_cast<double>(seeds);
    if (cr.failed) result.partial = true;
  }

  result.best_cell_by_mode = select_best_cells(result.cells, config.grid.modes);
  return result;
}

/// Tidy metrics CSV for every cell/seed at its selected checkpoint.
inline std::string benchmark_metrics_csv(const ExperimentConfig& config,
                                         const BenchmarkResult& result, bool with_test) {
  std::ostringstream out;
  out << kMetricsCsvHeader;
  for (const CellResult& cr : result.cells) {
    for (const SeedOutcome& o : cr.outcomes) {
      if (o.failed) continue;
      const std::string run_id = cr.cell.id(o.seed);
      const std::string mode = to_string(cr.cell.mode);
      append_metrics_rows(out, run_id, mode, cr.cell.lambda, cr.cell.adjustment_c,
                          o.best_epoch, "train", o.train_metrics,
                          o.train_metrics.average_accuracy);
      append_metrics_rows(out, run_id, mode, cr.cell.lambda, cr.cell.adjustment_c,
                          o.best_epoch, "val", o.val_metrics,
                          weighted_average_accuracy(o.val_metrics, result.train_fractions));
      if (with_test)
        append_metrics_rows(out, run_id, mode, cr.cell.lambda, cr.cell.adjustment_c,
                            o.best_epoch, "test", o.test_metrics,
                            weighted_average_accuracy(o.test_metrics, result.train_fractions));
    }
  }
  return out.str();
}

/// The comparison table: one row per mode with the winning cell's test
/// metrics (mean over seeds) and binomial standard deviations.
inline std::string benchmark_table(const ExperimentConfig& config,
                                   const BenchmarkResult& result, bool with_test) {
  std::ostringstream out;
  out << "mode,lambda,C,epochs,val_worst_acc,test_avg_acc,test_avg_sd,test_worst_acc,"
         "test_worst_sd\n";
  char buf[64];
  for (std::size_t mi = 0; mi < config.grid.modes.size(); ++mi) {
    const int ci = result.best_cell_by_mode[mi];
    if (ci < 0) {
      out << to_string(config.grid.modes[mi]) << ",,,,failed,,,,\n";
      continue;
    }
    const CellResult& cr = result.cells[ci];
    double test_avg = 0.0, test_worst = 0.0;
    std::size_t worst_group_n = 0, test_n = 0;
    for (const SeedOutcome& o : cr.outcomes) {
      if (!with_test) continue;
      test_avg += weighted_average_accuracy(o.test_metrics, result.train_fractions);
      test_worst += o.test_metrics.worst_group_accuracy;
      worst_group_n = o.test_metrics.group_sizes[o.test_metrics.worst_group];
      test_n = 0;
      for (std::size_t n_g : o.test_metrics.group_sizes) test_n += n_g;
    }
    const double count = static_cast<double>(cr.outcomes.size());
    test_avg /= count;
    test_worst /= count;
    const double avg_sd = with_test && test_n ? binomial_stddev(test_avg, test_n) : 0.0;
    const double worst_sd =
        with_test && worst_group_n ? binomial_stddev(test_worst, worst_group_n) : 0.0;
    std::snprintf(buf, sizeof(buf), "%g,%g,%d,%.4f,%.4f,%.4f,%.4f,%.4f", cr.cell.lambda,
                  cr.cell.adjustment_c, cr.cell.epochs, cr.mean_worst_val_acc, test_avg,
                  avg_sd, test_worst, worst_sd);
    out << to_string(cr.cell.mode) << "," << buf << "\n";
  }
  return out.str();
}

}  // namespace groupdro
