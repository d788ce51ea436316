// Command-line surface: dataset generation, single training runs, grid
// benchmarks, the theory verification suite, and report emission.
//
// Exit codes: 0 success, 1 usage/config error, 2 runtime/numerical error,
// 3 benchmark finished with failed cells (partial results).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "groupdro/analysis.hpp"
#include "groupdro/datagen.hpp"
#include "groupdro/experiment.hpp"
#include "groupdro/optimizer.hpp"
#include "groupdro/reports.hpp"
#include "groupdro/theory.hpp"
#include "groupdro/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace groupdro;

namespace {

std::string default_out(const std::string& leaf) {
  const char* root = std::getenv("GROUPDRO_OUT_ROOT");
  return (fs::path(root ? root : ".") / leaf).string();
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  json j;
  in >> j;
  return j;
}

void write_json_file(const std::string& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
  std::string spec_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool skewed_eval = false;
};

int cmd_generate(const GenerateArgs& args) {
  json j = load_json_file(args.spec_path);
  DataSource src = DataSource::from_json(j);
  if (!src.synthetic())
    throw std::invalid_argument("generate expects a synthetic data spec (field 'spec')");
  if (args.seed) src.spec->seed = *args.seed;
  if (args.skewed_eval) src.balanced_eval = false;

  const LoadedData data = load_data(src);
  fs::create_directories(args.out_dir);
  const fs::path out(args.out_dir);
  write_csv(data.train, (out / "train.csv").string());
  write_csv(data.val, (out / "val.csv").string());
  write_csv(*data.test, (out / "test.csv").string());

  json sidecar = src.to_json();
  sidecar["version"] = kVersionString;
  write_json_file((out / "spec.json").string(), sidecar);

  std::cout << "wrote train/val/test csv (" << data.train.size() << "/" << data.val.size()
            << "/" << data.test->size() << " examples, m = " << data.train.group_count()
            << ") to " << args.out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config_path;
  std::string out_dir;
  bool dry_run = false;
  int snapshot_every = 0;
  // flag overrides; only applied when set
  std::optional<std::string> mode, variant, arch;
  std::optional<double> eta_theta, eta_q, momentum, lambda, adjustment_c;
  std::optional<int> batch_size, epochs;
  std::optional<std::uint64_t> seed;
};

struct ResolvedTrain {
  DataSource data;
  Arch arch;
  OptimizerConfig optimizer;
};

ResolvedTrain resolve_train_config(const TrainArgs& args) {
  const json j = load_json_file(args.config_path);
  if (!j.contains("data")) throw std::invalid_argument("config: missing required field: data");
  if (!j.contains("arch")) throw std::invalid_argument("config: missing required field: arch");
  ResolvedTrain r{DataSource::from_json(j.at("data")),
                  Arch::parse(j.at("arch").get<std::string>()),
                  optimizer_config_from_json(j.value("optimizer", json::object()))};
  if (args.arch) r.arch = Arch::parse(*args.arch);
  if (args.mode) r.optimizer.mode = train_mode_from_string(*args.mode);
  if (args.variant)
    r.optimizer.variant =
        *args.variant == "per_example" ? BatchVariant::kPerExample : BatchVariant::kMinibatch;
  if (args.eta_theta) r.optimizer.eta_theta = *args.eta_theta;
  if (args.eta_q) r.optimizer.eta_q = *args.eta_q;
  if (args.momentum) r.optimizer.momentum = *args.momentum;
  if (args.lambda) r.optimizer.lambda = *args.lambda;
  if (args.adjustment_c) r.optimizer.adjustment_c = *args.adjustment_c;
  if (args.batch_size) r.optimizer.batch_size = *args.batch_size;
  if (args.epochs) r.optimizer.epochs = *args.epochs;
  if (args.seed) r.optimizer.seed = *args.seed;
  return r;
}

json resolved_train_json(const ResolvedTrain& r) {
  return json{{"data", r.data.to_json()},
              {"arch", r.arch.to_string()},
              {"optimizer", optimizer_config_to_json(r.optimizer)},
              {"version", kVersionString}};
}

int cmd_train(const TrainArgs& args) {
  const ResolvedTrain r = resolve_train_config(args);
  if (args.dry_run) {
    std::cout << resolved_train_json(r).dump(2) << "\n";
    return 0;
  }

  const LoadedData data = load_data(r.data);
  const auto [params, history] = train(r.optimizer, data.train, data.val, r.arch);
  const std::size_t best = early_stop_select(history);
  ModelParams best_params{r.arch, history.checkpoints[best].theta};

  fs::create_directories(args.out_dir);
  const fs::path out(args.out_dir);
  write_json_file((out / "config.json").string(), resolved_train_json(r));
  write_text_file((out / "history.csv").string(), history_csv(history));

  json summary = history_summary_json(history);
  summary["mode"] = to_string(r.optimizer.mode);
  summary["train_fractions"] = group_fractions(data.train);
  summary["metrics"] = json::object();
  const std::vector<double> fractions = group_fractions(data.train);
  summary["metrics"]["train"] = metrics_json(evaluate(best_params, data.train));
  summary["metrics"]["val"] = metrics_json(evaluate(best_params, data.val));
  if (data.test) {
    const GroupMetrics test_metrics = evaluate(best_params, *data.test);
    json test_json = metrics_json(test_metrics);
    test_json["weighted_average_acc"] = weighted_average_accuracy(test_metrics, fractions);
    summary["metrics"]["test"] = test_json;
  }
  summary["version"] = kVersionString;
  write_json_file((out / "summary.json").string(), summary);

  write_json_file((out / "model_final.json").string(), to_json(params));
  write_json_file((out / "model_best.json").string(), to_json(best_params));

  if (args.snapshot_every > 0) {
    fs::create_directories(out / "snapshots");
    for (const Checkpoint& cp : history.checkpoints) {
      if (cp.epoch % args.snapshot_every != 0) continue;
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%06d.json", cp.epoch);
      write_json_file((out / "snapshots" / name).string(),
                      to_json(ModelParams{r.arch, cp.theta}));
    }
  }

  std::cout << "run complete: best epoch " << history.checkpoints[best].epoch
            << ", worst-group val acc "
            << history.checkpoints[best].worst_val_acc() << "; outputs in " << args.out_dir
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// benchmark

struct BenchmarkArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<int> jobs;
};

int cmd_benchmark(const BenchmarkArgs& args) {
  const json j = load_json_file(args.config_path);
  for (const char* field : {"data", "arch"})
    if (!j.contains(field))
      throw std::invalid_argument(std::string("config: missing required field: ") + field);

  ExperimentConfig config;
  config.data = DataSource::from_json(j.at("data"));
  config.arch = Arch::parse(j.at("arch").get<std::string>());
  config.base = optimizer_config_from_json(j.value("optimizer", json::object()));
  config.grid = GridSpec::from_json(j.value("grid", json::object()));
  if (j.contains("seeds")) config.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  config.jobs = j.value("jobs", 1);
  if (args.jobs) config.jobs = *args.jobs;
  config.validate();

  const LoadedData data = load_data(config.data);
  const bool with_test = data.test.has_value();
  const BenchmarkResult result = run_benchmark(config, data);

  fs::create_directories(args.out_dir);
  const fs::path out(args.out_dir);
  json resolved = j;
  resolved["jobs"] = config.jobs;
  resolved["version"] = kVersionString;
  write_json_file((out / "benchmark_config.json").string(), resolved);
  write_text_file((out / "cells.csv").string(),
                  benchmark_metrics_csv(config, result, with_test));
  const std::string table = benchmark_table(config, result, with_test);
  write_text_file((out / "table.csv").string(), table);

  std::cout << table;
  for (const CellResult& cr : result.cells)
    for (const SeedOutcome& o : cr.outcomes)
      if (o.failed)
        std::cerr << "cell " << cr.cell.id(o.seed) << " failed: " << o.error << "\n";
  if (result.partial) {
    std::cerr << "benchmark finished with failures; results are partial\n";
    return 3;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// theory

struct TheoryArgs {
  std::string out_dir;
  std::string only;  // empty = all; convergence | prop1 | counterexample
  double tol = 1e-6;
  int replicate_seeds = 20;
};

struct TheoryStatus {
  bool all_pass = true;

  void report(bool pass, const std::string& line) {
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << line << "\n";
    if (!pass) all_pass = false;
  }
};

void theory_convergence(const TheoryArgs& args, TheoryStatus& status, json& out_json,
                        std::vector<ConvergenceRow>& rows) {
  const ConvexProblem problem = ConvexProblem::certified_instance();
  const double saddle_value = reference_saddle(problem, 1e-9).value;

  std::vector<double> log_t, log_eps;
  json per_t = json::array();
  for (long long steps : {100LL, 1000LL, 10000LL}) {
    const double bound = convergence_bound(problem.certified_constants(steps));
    double mean_eps = 0.0;
    for (int seed = 0; seed < args.replicate_seeds; ++seed) {
      const Alg1Run run = run_alg1(problem, designed_alg1_options(problem, steps, seed));
      const double eps = convergence_error(run.theta_bar, problem, saddle_value);
      rows.push_back(ConvergenceRow{steps, seed, eps, bound});
      mean_eps += eps;
    }
    mean_eps /= args.replicate_seeds;
    char line[160];
    std::snprintf(line, sizeof(line),
                  "convergence: T=%lld mean eps_T=%.6f <= bound %.6f", steps, mean_eps,
                  bound);
    status.report(mean_eps <= bound, line);
    per_t.push_back(json{{"T", steps}, {"mean_eps", mean_eps}, {"bound", bound}});
    log_t.push_back(std::log(static_cast<double>(steps)));
    log_eps.push_back(std::log(std::max(mean_eps, 1e-300)));
  }

  double mean_x = 0.0, mean_y = 0.0;
  for (std::size_t i = 0; i < log_t.size(); ++i) {
    mean_x += log_t[i];
    mean_y += log_eps[i];
  }
  mean_x /= static_cast<double>(log_t.size());
  mean_y /= static_cast<double>(log_t.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < log_t.size(); ++i) {
    sxy += (log_t[i] - mean_x) * (log_eps[i] - mean_y);
    sxx += (log_t[i] - mean_x) * (log_t[i] - mean_x);
  }
  const double slope = sxy / sxx;
  char line[120];
  std::snprintf(line, sizeof(line), "convergence: log-log slope %.3f in [-0.75, -0.30]",
                slope);
  status.report(slope >= -0.75 && slope <= -0.30, line);
  out_json["convergence"] = json{{"per_T", per_t}, {"slope", slope}};
}

void theory_prop1(const TheoryArgs& args, TheoryStatus& status, json& out_json) {
  struct Instance {
    const char* name;
    ConvexProblem problem;
  };
  const std::vector<Instance> instances{
      {"symmetric_quadratics", ConvexProblem::symmetric_quadratics()},
      {"asymmetric_quadratics", ConvexProblem::asymmetric_quadratics()},
      {"single_group", ConvexProblem::single_quadratic(0.7)}};
  json results = json::array();
  for (const Instance& inst : instances) {
    const Prop1Result r = check_prop1(inst.problem, args.tol);
    char line[160];
    std::snprintf(line, sizeof(line), "prop1: %s weighted-gradient gap %.3g <= %.3g",
                  inst.name, r.stationarity_gap, args.tol);
    status.report(r.stationarity_gap <= args.tol, line);
    results.push_back(json{{"instance", inst.name},
                           {"q_star", r.q_star},
                           {"gap", r.stationarity_gap},
                           {"boundary", r.on_boundary}});
  }
  out_json["prop1"] = results;
}

std::string sweep_csv(const CounterexampleReport& report) {
  std::ostringstream out;
  out << "w1,w2,minimizer_theta,weighted_value,tie_worst_case_min,tie_worst_case_max\n";
  for (const WeightedSweepCell& cell : report.weighted)
    out << detail::csv_double(cell.w1) << "," << detail::csv_double(cell.w2) << ","
        << detail::csv_double(cell.minimizer_theta) << ","
        << detail::csv_double(cell.weighted_value) << ","
        << detail::csv_double(cell.tie_worst_case_min) << ","
        << detail::csv_double(cell.tie_worst_case_max) << "\n";
  return out.str();
}

void theory_counterexample(TheoryStatus& status, json& out_json, std::string& sweep_out) {
  const CounterexampleReport report = counterexample_sweep(1001, 101);
  sweep_out = sweep_csv(report);
  bool weighted_fail_everywhere = true;
  for (const WeightedSweepCell& cell : report.weighted)
    if (std::abs(cell.tie_worst_case_min - 1.0) > 1e-9 ||
        std::abs(cell.tie_worst_case_max - 1.0) > 1e-9)
      weighted_fail_everywhere = false;
  status.report(weighted_fail_everywhere,
                "counterexample: every weighted minimizer has worst-case loss 1.0");
  const bool dro_ok =
      std::abs(report.dro_theta - 0.5) <= 1e-9 && std::abs(report.dro_value - 0.6) <= 1e-9;
  char line[120];
  std::snprintf(line, sizeof(line), "counterexample: robust optimum (theta=%.3f, value=%.3f)",
                report.dro_theta, report.dro_value);
  status.report(dro_ok, line);
  out_json["counterexample"] =
      json{{"dro_theta", report.dro_theta}, {"dro_value", report.dro_value}};
}

int cmd_theory(const TheoryArgs& args) {
  TheoryStatus status;
  json out_json{{"version", kVersionString}};
  std::vector<ConvergenceRow> rows;
  std::string sweep;
  if (args.only.empty() || args.only == "convergence")
    theory_convergence(args, status, out_json, rows);
  if (args.only.empty() || args.only == "prop1") theory_prop1(args, status, out_json);
  if (args.only.empty() || args.only == "counterexample")
    theory_counterexample(status, out_json, sweep);

  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    const fs::path out(args.out_dir);
    if (!rows.empty())
      write_text_file((out / "convergence.csv").string(), convergence_csv(rows));
    if (!sweep.empty()) write_text_file((out / "sweep.csv").string(), sweep);
    write_json_file((out / "theory.json").string(), out_json);
  }
  return status.all_pass ? 0 : 2;
}

// ---------------------------------------------------------------------------
// report

int cmd_report(const std::string& run_dir, const std::string& out_csv) {
  const fs::path dir(run_dir);
  if (fs::exists(dir / "table.csv")) {
    std::ifstream in(dir / "table.csv");
    std::cout << in.rdbuf();
    return 0;
  }
  if (!fs::exists(dir / "summary.json"))
    throw std::invalid_argument("no summary.json or table.csv under: " + run_dir);
  const json summary = load_json_file((dir / "summary.json").string());
  std::ostringstream csv;
  csv << "epoch,worst_group_val_acc,worst_group_train_acc\n";
  std::cout << "epoch  worst-val-acc  worst-train-acc\n";
  for (const json& cp : summary.at("checkpoints")) {
    char line[80];
    std::snprintf(line, sizeof(line), "%5d  %13.4f  %15.4f", cp.at("epoch").get<int>(),
                  cp.at("worst_group_val_acc").get<double>(),
                  cp.at("worst_group_train_acc").get<double>());
    std::cout << line << "\n";
    csv << cp.at("epoch").get<int>() << ","
        << detail::csv_double(cp.at("worst_group_val_acc").get<double>()) << ","
        << detail::csv_double(cp.at("worst_group_train_acc").get<double>()) << "\n";
  }
  std::cout << "best checkpoint epoch: " << summary.at("best_checkpoint_epoch") << "\n";
  if (!out_csv.empty()) write_text_file(out_csv, csv.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"group DRO at desk scale: data generation, training, benchmarks, theory"};
  app.set_version_flag("--version", kVersionString);
  app.require_subcommand(1);

  GenerateArgs gen;
  CLI::App* generate = app.add_subcommand("generate", "generate synthetic grouped csv data");
  generate->add_option("--spec", gen.spec_path, "spec json file")->required();
  generate->add_option("--out", gen.out_dir, "output directory")
      ->default_val(default_out("dataset"));
  generate->add_option("--seed", gen.seed, "override the spec seed");
  generate->add_flag("--skewed-eval", gen.skewed_eval,
                     "keep the training skew in val/test instead of balancing");

  TrainArgs tr;
  CLI::App* train_cmd = app.add_subcommand("train", "run one training configuration");
  train_cmd->add_option("--config", tr.config_path, "config json file")->required();
  train_cmd->add_option("--out", tr.out_dir, "run directory")->default_val(default_out("run"));
  train_cmd->add_flag("--dry-run", tr.dry_run, "print the resolved config and exit");
  train_cmd->add_option("--snapshot-every", tr.snapshot_every,
                        "save a model snapshot every N epochs (0 = off)");
  train_cmd->add_option("--mode", tr.mode, "erm | upweight | group_dro");
  train_cmd->add_option("--variant", tr.variant, "per_example | minibatch")
      ->check(CLI::IsMember({"per_example", "minibatch"}));
  train_cmd->add_option("--arch", tr.arch, "model architecture string");
  train_cmd->add_option("--eta-theta", tr.eta_theta, "theta step size");
  train_cmd->add_option("--eta-q", tr.eta_q, "q step size");
  train_cmd->add_option("--momentum", tr.momentum, "heavy-ball momentum");
  train_cmd->add_option("--lambda", tr.lambda, "l2 penalty coefficient");
  train_cmd->add_option("--adjustment-C", tr.adjustment_c, "group adjustment constant");
  train_cmd->add_option("--batch-size", tr.batch_size, "minibatch size");
  train_cmd->add_option("--epochs", tr.epochs, "training epochs");
  train_cmd->add_option("--seed", tr.seed, "run seed");

  BenchmarkArgs bench;
  CLI::App* benchmark = app.add_subcommand("benchmark", "grid comparison of erm/uw/group_dro");
  benchmark->add_option("--config", bench.config_path, "experiment config json")->required();
  benchmark->add_option("--out", bench.out_dir, "output directory")
      ->default_val(default_out("benchmark"));
  benchmark->add_option("--jobs", bench.jobs, "concurrent grid cells");

  TheoryArgs theory;
  CLI::App* theory_cmd = app.add_subcommand("theory", "run the theory verification suites");
  theory_cmd->add_option("--out", theory.out_dir, "directory for csv/json reports");
  theory_cmd->add_option("--only", theory.only, "convergence | prop1 | counterexample")
      ->check(CLI::IsMember({"convergence", "prop1", "counterexample"}));
  theory_cmd->add_option("--tol", theory.tol, "stationarity gap tolerance");
  theory_cmd->add_option("--seeds", theory.replicate_seeds, "replicate seeds per T");

  std::string report_dir, report_out;
  CLI::App* report = app.add_subcommand("report", "summarize a run or benchmark directory");
  report->add_option("--run", report_dir, "run or benchmark directory")->required();
  report->add_option("--out", report_out, "also write the tidy csv here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*generate) return cmd_generate(gen);
    if (*train_cmd) return cmd_train(tr);
    if (*benchmark) return cmd_benchmark(bench);
    if (*theory_cmd) return cmd_theory(theory);
    if (*report) return cmd_report(report_dir, report_out);
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
