#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "modeq/experiment.hpp"

using namespace modeq;
namespace fs = std::filesystem;

namespace {

const char* cli_path() { return MODEQ_CLI_PATH; }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(cli_path()) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

fs::path temp_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("modeq_cli_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream f(p);
  f << j.dump(2);
}

nlohmann::json tiny_train_config(const fs::path& out) {
  return nlohmann::json{
      {"data",
       {{"n_modalities", 2}, {"dims", {12, 12}}, {"n_classes", 4}, {"m", 400},
        {"informativeness", {0.4, 0.8}}, {"noise", 1.0}, {"seed", 5}}},
      {"model", {{"d_feat", 8}, {"hidden", 16}, {"tau", 0.1}}},
      {"training",
       {{"mode", "ours"}, {"order_policy", "edm"}, {"epochs", 2}, {"batch", 64},
        {"lr", 0.002}, {"seed", 9}}},
      {"out", out.string()}};
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary | std::ios::ate);
  REQUIRE(f.good());
  std::vector<char> buf(static_cast<std::size_t>(f.tellg()));
  f.seekg(0);
  f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

TEST_CASE("unknown config keys are rejected by dotted path", "[cli]") {
  nlohmann::json j = tiny_train_config("/tmp/x");
  j["training"]["batchsize"] = 32;
  REQUIRE_THROWS_MATCHES(parse_config(j), ConfigError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring(
                                 "training.batchsize")));
  nlohmann::json k = tiny_train_config("/tmp/x");
  k["extras"] = 1;
  REQUIRE_THROWS_MATCHES(parse_config(k), ConfigError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("extras")));
}

TEST_CASE("effective config round-trips through parse", "[cli]") {
  const ExperimentConfig cfg = parse_config(tiny_train_config("/tmp/x"));
  const nlohmann::json echoed = config_to_json(cfg);
  const ExperimentConfig back = parse_config(echoed);
  REQUIRE(config_to_json(back) == echoed);
}

TEST_CASE("config validation catches out-of-range values", "[cli]") {
  nlohmann::json j = tiny_train_config("/tmp/x");
  j["model"]["tau"] = 1.5;
  REQUIRE_THROWS_AS(parse_config(j), ConfigError);
  j = tiny_train_config("/tmp/x");
  j["training"]["epochs"] = 0;
  REQUIRE_THROWS_AS(parse_config(j), ConfigError);
  j = tiny_train_config("/tmp/x");
  j["training"]["mode"] = "fancy";
  REQUIRE_THROWS_AS(parse_config(j), ConfigError);
}

// ---------------------------------------------------------------------------
// Subcommands through the real binary
// ---------------------------------------------------------------------------

TEST_CASE("gen-data writes a loadable dataset directory", "[cli]") {
  const fs::path dir = temp_dir("gendata");
  write_json(dir / "cfg.json", tiny_train_config(dir / "data"));
  REQUIRE(run_cli("gen-data --config " + (dir / "cfg.json").string()) == 0);
  const MultimodalDataset d = load(dir / "data");
  REQUIRE(d.n_modalities == 2);
  REQUIRE(d.m == 400);
  fs::remove_all(dir);
}

TEST_CASE("train twice with the same config produces byte-identical reports",
          "[cli]") {
  const fs::path dir = temp_dir("determinism");
  write_json(dir / "cfg.json", tiny_train_config(dir / "run"));
  REQUIRE(run_cli("train --config " + (dir / "cfg.json").string()) == 0);
  const char* names[] = {"report.json", "run_log.jsonl", "effective_config.json",
                         "checkpoint/params.bin", "checkpoint/manifest.json",
                         "run_manifest.json"};
  std::map<std::string, std::vector<char>> first;
  for (const char* name : names) first[name] = slurp(dir / "run" / name);
  REQUIRE(run_cli("train --config " + (dir / "cfg.json").string()) == 0);
  for (const char* name : names) {
    INFO(name);
    REQUIRE(slurp(dir / "run" / name) == first[name]);
  }
  // The manifest hashes verify in place.
  REQUIRE(verify_run_manifest(dir / "run").empty());
  fs::remove_all(dir);
}

TEST_CASE("train then eval reproduces the reported multi accuracy", "[cli]") {
  const fs::path dir = temp_dir("traineval");
  write_json(dir / "cfg.json", tiny_train_config(dir / "run"));
  REQUIRE(run_cli("train --config " + (dir / "cfg.json").string()) == 0);

  nlohmann::json eval_cfg = tiny_train_config(dir / "eval_out");
  eval_cfg["eval"] = {{"model_dir", (dir / "run" / "checkpoint").string()}};
  write_json(dir / "eval.json", eval_cfg);
  REQUIRE(run_cli("eval --config " + (dir / "eval.json").string()) == 0);

  const nlohmann::json report =
      nlohmann::json::parse(std::ifstream(dir / "run" / "report.json"));
  const nlohmann::json eval_report =
      nlohmann::json::parse(std::ifstream(dir / "eval_out" / "eval.json"));
  REQUIRE(eval_report.at("multi_acc").get<double>() ==
          report.at("final").at("multi_acc").get<double>());
  fs::remove_all(dir);
}

TEST_CASE("invalid config exits with code 2 and names the key", "[cli]") {
  const fs::path dir = temp_dir("badcfg");
  nlohmann::json j = tiny_train_config(dir / "run");
  j["training"]["warmup"] = 10;
  write_json(dir / "cfg.json", j);
  REQUIRE(run_cli("train --config " + (dir / "cfg.json").string()) == 2);
  REQUIRE(run_cli("train --config " + (dir / "missing.json").string()) == 2);
  fs::remove_all(dir);
}

TEST_CASE("theory-check emits the closed-form table as JSON", "[cli]") {
  const fs::path dir = temp_dir("theory");
  const std::string cmd = std::string(cli_path()) +
                          " theory-check --trials 500 --out " + dir.string() +
                          " > " + (dir / "stdout.json").string();
  REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  const nlohmann::json out =
      nlohmann::json::parse(std::ifstream(dir / "stdout.json"));
  REQUIRE(out.contains("closed_form"));
  REQUIRE(out.at("monte_carlo").at("fraction_positive_gap").get<double>() == 1.0);
  const nlohmann::json file =
      nlohmann::json::parse(std::ifstream(dir / "theory.json"));
  REQUIRE(file == out);
  fs::remove_all(dir);
}

TEST_CASE("robustness subcommand emits the pinned CSV header", "[cli]") {
  const fs::path dir = temp_dir("robust");
  nlohmann::json j = tiny_train_config(dir / "run");
  j["eval"] = {{"robustness_rates", {0.0, 0.5}}, {"robustness_seeds", {1, 2}}};
  write_json(dir / "cfg.json", j);
  REQUIRE(run_cli("robustness --config " + (dir / "cfg.json").string()) == 0);
  std::ifstream csv(dir / "run" / "robustness.csv");
  std::string header;
  std::getline(csv, header);
  REQUIRE(header == "rate,mean_acc,std_acc,n_seeds");
  int rows = 0;
  for (std::string line; std::getline(csv, line);) {
    if (!line.empty()) ++rows;
  }
  REQUIRE(rows == 2);
  fs::remove_all(dir);
}

TEST_CASE("sweep-threshold emits one row per grid point", "[cli]") {
  const fs::path dir = temp_dir("sweep");
  nlohmann::json j = tiny_train_config(dir / "run");
  j["training"]["epochs"] = 1;
  j["eval"] = {{"threshold_grid", {0.0, 0.5, 0.9}}, {"sweep_seeds", {1}}};
  write_json(dir / "cfg.json", j);
  REQUIRE(run_cli("sweep-threshold --config " + (dir / "cfg.json").string()) == 0);
  std::ifstream csv(dir / "run" / "threshold_sweep.csv");
  std::string header;
  std::getline(csv, header);
  REQUIRE(header == "tau,multi_acc,edm");
  int rows = 0;
  for (std::string line; std::getline(csv, line);) {
    if (!line.empty()) ++rows;
  }
  REQUIRE(rows == 3);
  fs::remove_all(dir);
}

TEST_CASE("compare-orders pairs identical seeds across all four policies",
          "[cli]") {
  const fs::path dir = temp_dir("orders");
  nlohmann::json j = tiny_train_config(dir / "run");
  j["training"]["epochs"] = 1;
  j["eval"] = {{"order_seeds", {3, 4}}};
  write_json(dir / "cfg.json", j);
  REQUIRE(run_cli("compare-orders --config " + (dir / "cfg.json").string()) == 0);
  const nlohmann::json out =
      nlohmann::json::parse(std::ifstream(dir / "run" / "orders.json"));
  REQUIRE(out.at("seeds") == nlohmann::json({3, 4}));
  for (const char* policy :
       {"edm", "weak-to-strong", "strong-to-weak", "random"}) {
    REQUIRE(out.at("policies").contains(policy));
    REQUIRE(out.at("policies").at(policy).at("accs").size() == 2);
  }
  fs::remove_all(dir);
}

TEST_CASE("project-features emits the expected row count", "[cli]") {
  const fs::path dir = temp_dir("project");
  nlohmann::json j = tiny_train_config(dir / "run");
  j["training"]["epochs"] = 2;
  j["eval"] = {{"projection_epochs", {0, 1}}, {"projection_split", "val"}};
  write_json(dir / "cfg.json", j);
  REQUIRE(run_cli("project-features --config " + (dir / "cfg.json").string()) == 0);
  std::ifstream csv(dir / "run" / "features.csv");
  std::string header;
  std::getline(csv, header);
  REQUIRE(header == "epoch,modality,pc1,pc2,degenerate");
  int rows = 0;
  for (std::string line; std::getline(csv, line);) {
    if (!line.empty()) ++rows;
  }
  // epochs_sampled x (n_modalities + 1) x val samples (15% of 400 = 60).
  REQUIRE(rows == 2 * 3 * 60);
  fs::remove_all(dir);
}
