#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommandResult {
  int exit_code = -1;
  std::string output;
};

CommandResult run_cli(const std::string& args) {
  const std::string cmd = std::string(GROUPDRO_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 4096> buffer{};
  CommandResult result;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (std::fgets(buffer.data(), buffer.size(), pipe)) result.output += buffer.data();
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("groupdro_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json small_spec(std::uint64_t seed) {
  return json{{"spec", json{{"d_core", 2},
                            {"d_spu", 2},
                            {"d_noise", 2},
                            {"mu_core", 1.0},
                            {"mu_spu", 2.0},
                            {"sigma", 1.0},
                            {"n_total", 400},
                            {"p_align", 0.9},
                            {"seed", seed}}},
              {"n_train", 400},
              {"n_val", 200},
              {"n_test", 200}};
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

json train_config(const fs::path& dir, const std::string& mode) {
  return json{{"data", small_spec(5)},
              {"arch", "logistic-binary{6}"},
              {"optimizer", json{{"mode", mode},
                                 {"variant", "minibatch"},
                                 {"eta_theta", 0.2},
                                 {"eta_q", 0.05},
                                 {"batch_size", 16},
                                 {"epochs", 5},
                                 {"seed", 3}}}};
}

}  // namespace

TEST_CASE("generate writes three csv files and a sidecar, reproducibly") {
  const fs::path dir = fresh_dir("gen");
  const fs::path spec = dir / "spec_in.json";
  write_json(spec, small_spec(11));

  const fs::path out_a = dir / "a";
  const fs::path out_b = dir / "b";
  const CommandResult first =
      run_cli("generate --spec " + spec.string() + " --out " + out_a.string());
  CAPTURE(first.output);
  REQUIRE(first.exit_code == 0);
  const CommandResult second =
      run_cli("generate --spec " + spec.string() + " --out " + out_b.string());
  REQUIRE(second.exit_code == 0);

  for (const char* name : {"train.csv", "val.csv", "test.csv", "spec.json"}) {
    CHECK(fs::exists(out_a / name));
    CHECK(read_file(out_a / name) == read_file(out_b / name));
  }

  const json sidecar = json::parse(read_file(out_a / "spec.json"));
  CHECK(sidecar.at("balanced_eval").get<bool>());
  CHECK(sidecar.contains("version"));
}

TEST_CASE("generate rejects a spec with a missing field, naming it") {
  const fs::path dir = fresh_dir("gen_bad");
  json spec = small_spec(1);
  spec["spec"].erase("mu_core");
  write_json(dir / "spec.json", spec);
  const CommandResult r =
      run_cli("generate --spec " + (dir / "spec.json").string() + " --out " + dir.string());
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("mu_core") != std::string::npos);
}

TEST_CASE("generate rejects p_align at the boundary") {
  const fs::path dir = fresh_dir("gen_palign");
  json spec = small_spec(1);
  spec["spec"]["p_align"] = 1.0;
  write_json(dir / "spec.json", spec);
  const CommandResult r =
      run_cli("generate --spec " + (dir / "spec.json").string() + " --out " + dir.string());
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("p_align") != std::string::npos);
}

TEST_CASE("train dry run prints the resolved config") {
  const fs::path dir = fresh_dir("train_dry");
  write_json(dir / "config.json", train_config(dir, "group_dro"));
  const CommandResult r = run_cli("train --config " + (dir / "config.json").string() +
                                  " --lambda 0.25 --dry-run");
  CAPTURE(r.output);
  REQUIRE(r.exit_code == 0);
  const json resolved = json::parse(r.output);
  CHECK(resolved.at("optimizer").at("lambda").get<double>() == 0.25);
  CHECK(resolved.at("optimizer").at("mode").get<std::string>() == "group_dro");
}

TEST_CASE("train produces a complete run directory") {
  const fs::path dir = fresh_dir("train_run");
  write_json(dir / "config.json", train_config(dir, "group_dro"));
  const fs::path out = dir / "run";
  const CommandResult r = run_cli("train --config " + (dir / "config.json").string() +
                                  " --out " + out.string() + " --snapshot-every 2");
  CAPTURE(r.output);
  REQUIRE(r.exit_code == 0);

  for (const char* name :
       {"config.json", "history.csv", "summary.json", "model_final.json", "model_best.json"})
    CHECK(fs::exists(out / name));

  const json summary = json::parse(read_file(out / "summary.json"));
  REQUIRE(summary.at("checkpoints").size() == 5);
  for (const json& cp : summary.at("checkpoints")) CHECK(cp.contains("worst_group_val_acc"));
  CHECK(summary.contains("best_checkpoint_epoch"));
  CHECK(summary.at("metrics").contains("test"));

  const std::string history = read_file(out / "history.csv");
  CHECK(history.rfind("checkpoint,split,group,loss,acc,q_g\n", 0) == 0);
  CHECK(fs::exists(out / "snapshots" / "epoch_000002.json"));

  // Deterministic re-run: byte-identical outputs.
  const fs::path out2 = dir / "run2";
  REQUIRE(run_cli("train --config " + (dir / "config.json").string() + " --out " +
                  out2.string())
              .exit_code == 0);
  CHECK(read_file(out / "history.csv") == read_file(out2 / "history.csv"));
  CHECK(read_file(out / "summary.json") == read_file(out2 / "summary.json"));
  CHECK(read_file(out / "model_final.json") == read_file(out2 / "model_final.json"));
}

TEST_CASE("train fails cleanly on a bad dataset path") {
  const fs::path dir = fresh_dir("train_bad");
  json config = train_config(dir, "erm");
  config["data"] = json{{"train_csv", (dir / "missing.csv").string()},
                        {"val_csv", (dir / "missing.csv").string()}};
  write_json(dir / "config.json", config);
  const CommandResult r = run_cli("train --config " + (dir / "config.json").string() +
                                  " --out " + (dir / "out").string());
  CHECK(r.exit_code != 0);
  CHECK(r.output.find("missing.csv") != std::string::npos);
}

TEST_CASE("unknown flags are usage errors") {
  const CommandResult r = run_cli("train --no-such-flag");
  CHECK(r.exit_code == 1);
}

TEST_CASE("benchmark produces a three-row table and is reproducible") {
  const fs::path dir = fresh_dir("bench");
  const json config{{"data", small_spec(21)},
                    {"arch", "logistic-binary{6}"},
                    {"optimizer", json{{"variant", "minibatch"},
                                       {"eta_theta", 0.2},
                                       {"eta_q", 0.05},
                                       {"batch_size", 16},
                                       {"epochs", 4}}},
                    {"grid", json{{"modes", {"erm", "upweight", "group_dro"}},
                                  {"lambdas", {0.001}},
                                  {"adjustments", {1.0}},
                                  {"adjust_lambda", 0.001}}},
                    {"seeds", {1, 2}},
                    {"jobs", 2}};
  write_json(dir / "config.json", config);

  const fs::path out = dir / "out";
  const CommandResult r = run_cli("benchmark --config " + (dir / "config.json").string() +
                                  " --out " + out.string());
  CAPTURE(r.output);
  REQUIRE(r.exit_code == 0);
  CHECK(fs::exists(out / "cells.csv"));
  CHECK(fs::exists(out / "table.csv"));

  const std::string table = read_file(out / "table.csv");
  CHECK(std::count(table.begin(), table.end(), '\n') == 4);  // header + 3 modes
  CHECK(table.find("erm,") != std::string::npos);
  CHECK(table.find("upweight,") != std::string::npos);
  CHECK(table.find("group_dro,") != std::string::npos);

  // cells.csv covers the adjustment cell only for group_dro.
  const std::string cells = read_file(out / "cells.csv");
  CHECK(cells.find("group_dro-l0.001-C1-") != std::string::npos);
  CHECK(cells.find("erm-l0.001-C1-") == std::string::npos);

  // Byte-identical on re-run, including under a different job count.
  const fs::path out2 = dir / "out2";
  REQUIRE(run_cli("benchmark --config " + (dir / "config.json").string() + " --out " +
                  out2.string() + " --jobs 1")
              .exit_code == 0);
  CHECK(read_file(out / "cells.csv") == read_file(out2 / "cells.csv"));
  CHECK(read_file(out / "table.csv") == read_file(out2 / "table.csv"));
}

TEST_CASE("theory subcommand passes its default suites") {
  const fs::path dir = fresh_dir("theory");
  const CommandResult quick =
      run_cli("theory --only counterexample --out " + dir.string());
  CAPTURE(quick.output);
  CHECK(quick.exit_code == 0);
  CHECK(quick.output.find("[PASS]") != std::string::npos);
  CHECK(quick.output.find("[FAIL]") == std::string::npos);
  CHECK(fs::exists(dir / "sweep.csv"));

  const CommandResult prop1 = run_cli("theory --only prop1 --tol 1e-6 --out " + dir.string());
  CAPTURE(prop1.output);
  CHECK(prop1.exit_code == 0);
  CHECK(fs::exists(dir / "theory.json"));
}

TEST_CASE("benchmark reports partial results when cells fail") {
  const fs::path dir = fresh_dir("bench_partial");
  json config{{"data", small_spec(33)},
              {"arch", "logistic-binary{6}"},
              {"optimizer", json{{"variant", "minibatch"},
                                 {"eta_theta", 0.2},
                                 {"batch_size", 100000},  // larger than any split
                                 {"epochs", 2}}},
              {"grid", json{{"modes", {"erm"}}, {"lambdas", {0.001}}}},
              {"seeds", {1}}};
  write_json(dir / "config.json", config);
  const CommandResult r = run_cli("benchmark --config " + (dir / "config.json").string() +
                                  " --out " + (dir / "out").string());
  CAPTURE(r.output);
  CHECK(r.exit_code == 3);
  CHECK(r.output.find("partial") != std::string::npos);
}

TEST_CASE("report summarizes a run directory") {
  const fs::path dir = fresh_dir("report");
  write_json(dir / "config.json", train_config(dir, "erm"));
  const fs::path out = dir / "run";
  REQUIRE(run_cli("train --config " + (dir / "config.json").string() + " --out " +
                  out.string())
              .exit_code == 0);
  const CommandResult r =
      run_cli("report --run " + out.string() + " --out " + (dir / "tidy.csv").string());
  CAPTURE(r.output);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("best checkpoint epoch") != std::string::npos);
  CHECK(fs::exists(dir / "tidy.csv"));

  const CommandResult missing = run_cli("report --run " + (dir / "nowhere").string());
  CHECK(missing.exit_code == 1);
}
