#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "modeq/dataset.hpp"
#include "modeq/edm.hpp"
#include "modeq/errors.hpp"
#include "modeq/inference.hpp"
#include "modeq/model.hpp"
#include "modeq/pca.hpp"
#include "modeq/theory.hpp"
#include "modeq/training.hpp"

namespace modeq {

// ---------------------------------------------------------------------------
// Experiment configuration: one strict JSON document drives a whole run.
// Unknown keys are rejected with their dotted path.
// ---------------------------------------------------------------------------

struct DataBlock {
  std::string path;  // when set, load this dataset directory instead
  DataGenConfig gen;
  std::uint64_t seed = 1;
};

struct ModelBlock {
  int d_feat = 32;
  int hidden = 64;
  double tau = 0.1;
  bool gate = false;
  double memory_decay = 0.9;
};

struct TrainingBlock {
  TrainMode mode = TrainMode::ours;
  OrderPolicy order_policy = OrderPolicy::edm;
  std::vector<int> given_order;
  int epochs = 150;
  int batch = 64;
  OptimizerConfig::Kind optimizer = OptimizerConfig::Kind::adamw;
  double lr = 1e-4;
  double weight_decay = 0.0;
  std::uint64_t seed = 7;
  bool update_head_both_steps = true;
  bool verify_isolation = false;
  bool inherit_carry = false;
  NormalizeMode normalize = NormalizeMode::share;
  double eta = 100.0;
};

struct EvalBlock {
  std::vector<double> robustness_rates{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<std::uint64_t> robustness_seeds{1, 2, 3, 4, 5};
  std::vector<double> threshold_grid{0.0, 0.1, 0.2, 0.3, 0.4,
                                     0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<std::uint64_t> sweep_seeds{1, 2, 3};
  std::vector<std::uint64_t> order_seeds{1, 2, 3, 4, 5};
  std::vector<int> projection_epochs;
  Split projection_split = Split::val;
  std::string model_dir;  // for `eval`: checkpoint to load
};

struct ExperimentConfig {
  DataBlock data;
  ModelBlock model;
  TrainingBlock training;
  EvalBlock eval;
  std::string out;
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj,
                                const std::set<std::string>& allowed,
                                const std::string& prefix) {
  if (!obj.is_object()) {
    throw ConfigError("config section '" + prefix + "' must be an object");
  }
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("unknown config key: " +
                        (prefix.empty() ? key : prefix + "." + key));
    }
  }
}

template <typename T>
void read_field(const nlohmann::json& obj, const char* key, T& out,
                const std::string& prefix) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key " + prefix + "." + key + " has the wrong type");
  }
}

}  // namespace detail

inline OrderPolicy parse_order_policy(const std::string& s) {
  if (s == "edm") return OrderPolicy::edm;
  if (s == "weak-to-strong") return OrderPolicy::weak_to_strong;
  if (s == "strong-to-weak") return OrderPolicy::strong_to_weak;
  if (s == "random") return OrderPolicy::random;
  if (s == "given") return OrderPolicy::given;
  throw ConfigError("unknown order policy: " + s);
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split: " + s);
}

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  ExperimentConfig cfg;
  detail::reject_unknown_keys(j, {"data", "model", "training", "eval", "out"}, "");

  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::reject_unknown_keys(
        d, {"path", "n_modalities", "dims", "n_classes", "m", "informativeness",
            "noise", "seed", "split_fractions"}, "data");
    detail::read_field(d, "path", cfg.data.path, "data");
    detail::read_field(d, "n_modalities", cfg.data.gen.n_modalities, "data");
    detail::read_field(d, "dims", cfg.data.gen.dims, "data");
    detail::read_field(d, "n_classes", cfg.data.gen.n_classes, "data");
    detail::read_field(d, "m", cfg.data.gen.m, "data");
    detail::read_field(d, "informativeness", cfg.data.gen.informativeness, "data");
    detail::read_field(d, "noise", cfg.data.gen.noise, "data");
    detail::read_field(d, "seed", cfg.data.seed, "data");
    if (d.contains("split_fractions")) {
      std::vector<double> f;
      detail::read_field(d, "split_fractions", f, "data");
      if (f.size() != 3) {
        throw ConfigError("data.split_fractions must have 3 entries");
      }
      cfg.data.gen.split_fractions = {f[0], f[1], f[2]};
    }
  }
  if (cfg.data.gen.dims.empty()) {
    cfg.data.gen.dims.assign(cfg.data.gen.n_modalities, 24);
  }
  if (cfg.data.gen.informativeness.empty()) {
    cfg.data.gen.informativeness.assign(cfg.data.gen.n_modalities, 0.5);
  }

  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::reject_unknown_keys(
        m, {"d_feat", "hidden", "tau", "gate", "memory_decay"}, "model");
    detail::read_field(m, "d_feat", cfg.model.d_feat, "model");
    detail::read_field(m, "hidden", cfg.model.hidden, "model");
    detail::read_field(m, "tau", cfg.model.tau, "model");
    detail::read_field(m, "gate", cfg.model.gate, "model");
    detail::read_field(m, "memory_decay", cfg.model.memory_decay, "model");
  }

  if (j.contains("training")) {
    const auto& t = j.at("training");
    detail::reject_unknown_keys(
        t, {"mode", "order_policy", "given_order", "epochs", "batch", "optimizer",
            "lr", "weight_decay", "seed", "update_head_both_steps",
            "verify_isolation", "inherit_carry", "normalize", "eta"},
        "training");
    std::string s;
    detail::read_field(t, "mode", s, "training");
    if (!s.empty()) cfg.training.mode = parse_train_mode(s);
    s.clear();
    detail::read_field(t, "order_policy", s, "training");
    if (!s.empty()) cfg.training.order_policy = parse_order_policy(s);
    detail::read_field(t, "given_order", cfg.training.given_order, "training");
    detail::read_field(t, "epochs", cfg.training.epochs, "training");
    detail::read_field(t, "batch", cfg.training.batch, "training");
    s.clear();
    detail::read_field(t, "optimizer", s, "training");
    if (s == "sgd") cfg.training.optimizer = OptimizerConfig::Kind::sgd;
    else if (s == "adamw" || s.empty()) cfg.training.optimizer = OptimizerConfig::Kind::adamw;
    else throw ConfigError("unknown optimizer: " + s);
    detail::read_field(t, "lr", cfg.training.lr, "training");
    detail::read_field(t, "weight_decay", cfg.training.weight_decay, "training");
    detail::read_field(t, "seed", cfg.training.seed, "training");
    detail::read_field(t, "update_head_both_steps",
                       cfg.training.update_head_both_steps, "training");
    detail::read_field(t, "verify_isolation", cfg.training.verify_isolation,
                       "training");
    detail::read_field(t, "inherit_carry", cfg.training.inherit_carry, "training");
    s.clear();
    detail::read_field(t, "normalize", s, "training");
    if (s == "raw") cfg.training.normalize = NormalizeMode::raw;
    else if (s == "share" || s.empty()) cfg.training.normalize = NormalizeMode::share;
    else throw ConfigError("unknown normalize mode: " + s);
    detail::read_field(t, "eta", cfg.training.eta, "training");
  }

  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    detail::reject_unknown_keys(
        e, {"robustness_rates", "robustness_seeds", "threshold_grid", "sweep_seeds",
            "order_seeds", "projection_epochs", "projection_split", "model_dir"},
        "eval");
    detail::read_field(e, "robustness_rates", cfg.eval.robustness_rates, "eval");
    detail::read_field(e, "robustness_seeds", cfg.eval.robustness_seeds, "eval");
    detail::read_field(e, "threshold_grid", cfg.eval.threshold_grid, "eval");
    detail::read_field(e, "sweep_seeds", cfg.eval.sweep_seeds, "eval");
    detail::read_field(e, "order_seeds", cfg.eval.order_seeds, "eval");
    detail::read_field(e, "projection_epochs", cfg.eval.projection_epochs, "eval");
    std::string s;
    detail::read_field(e, "projection_split", s, "eval");
    if (!s.empty()) cfg.eval.projection_split = parse_split(s);
    detail::read_field(e, "model_dir", cfg.eval.model_dir, "eval");
  }

  detail::read_field(j, "out", cfg.out, "");

  if (cfg.training.epochs < 1) throw ConfigError("training.epochs must be >= 1");
  if (cfg.training.batch < 1) throw ConfigError("training.batch must be >= 1");
  if (cfg.training.lr <= 0) throw ConfigError("training.lr must be > 0");
  if (cfg.model.tau < 0 || cfg.model.tau > 1) {
    throw ConfigError("model.tau must lie in [0, 1]");
  }
  if (cfg.model.memory_decay < 0 || cfg.model.memory_decay > 1) {
    throw ConfigError("model.memory_decay must lie in [0, 1]");
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return parse_config(j);
}

/// Effective configuration with every default filled; re-parses to an
/// equivalent run.
inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["data"] = {{"path", cfg.data.path},
               {"n_modalities", cfg.data.gen.n_modalities},
               {"dims", cfg.data.gen.dims},
               {"n_classes", cfg.data.gen.n_classes},
               {"m", cfg.data.gen.m},
               {"informativeness", cfg.data.gen.informativeness},
               {"noise", cfg.data.gen.noise},
               {"seed", cfg.data.seed},
               {"split_fractions", std::vector<double>(
                                       cfg.data.gen.split_fractions.begin(),
                                       cfg.data.gen.split_fractions.end())}};
  j["model"] = {{"d_feat", cfg.model.d_feat},
                {"hidden", cfg.model.hidden},
                {"tau", cfg.model.tau},
                {"gate", cfg.model.gate},
                {"memory_decay", cfg.model.memory_decay}};
  j["training"] = {
      {"mode", train_mode_name(cfg.training.mode)},
      {"order_policy", order_policy_name(cfg.training.order_policy)},
      {"given_order", cfg.training.given_order},
      {"epochs", cfg.training.epochs},
      {"batch", cfg.training.batch},
      {"optimizer",
       cfg.training.optimizer == OptimizerConfig::Kind::sgd ? "sgd" : "adamw"},
      {"lr", cfg.training.lr},
      {"weight_decay", cfg.training.weight_decay},
      {"seed", cfg.training.seed},
      {"update_head_both_steps", cfg.training.update_head_both_steps},
      {"verify_isolation", cfg.training.verify_isolation},
      {"inherit_carry", cfg.training.inherit_carry},
      {"normalize",
       cfg.training.normalize == NormalizeMode::raw ? "raw" : "share"},
      {"eta", cfg.training.eta}};
  j["eval"] = {{"robustness_rates", cfg.eval.robustness_rates},
               {"robustness_seeds", cfg.eval.robustness_seeds},
               {"threshold_grid", cfg.eval.threshold_grid},
               {"sweep_seeds", cfg.eval.sweep_seeds},
               {"order_seeds", cfg.eval.order_seeds},
               {"projection_epochs", cfg.eval.projection_epochs},
               {"projection_split", split_name(cfg.eval.projection_split)},
               {"model_dir", cfg.eval.model_dir}};
  j["out"] = cfg.out;
  return j;
}

inline TrainSetup make_setup(const ExperimentConfig& cfg) {
  TrainSetup s;
  s.mode = cfg.training.mode;
  s.policy = cfg.training.order_policy;
  s.given_order = cfg.training.given_order;
  s.epochs = cfg.training.epochs;
  s.batch = cfg.training.batch;
  s.optimizer.kind = cfg.training.optimizer;
  s.optimizer.lr = cfg.training.lr;
  s.optimizer.weight_decay = cfg.training.weight_decay;
  s.seed = cfg.training.seed;
  s.d_feat = cfg.model.d_feat;
  s.hidden = cfg.model.hidden;
  s.tau = cfg.model.tau;
  s.use_gate = cfg.model.gate;
  s.memory_decay = cfg.model.memory_decay;
  s.update_head_both_steps = cfg.training.update_head_both_steps;
  s.verify_isolation = cfg.training.verify_isolation;
  s.inherit_carry = cfg.training.inherit_carry;
  s.normalize = cfg.training.normalize;
  s.eta = cfg.training.eta;
  return s;
}

// ---------------------------------------------------------------------------
// Run orchestration
// ---------------------------------------------------------------------------

struct PhaseTimings {
  double data_s = 0.0;
  double train_s = 0.0;
  double eval_s = 0.0;

  nlohmann::json to_json() const {
    return {{"data_s", data_s}, {"train_s", train_s}, {"eval_s", eval_s}};
  }
};

struct TrainedRun {
  ExperimentConfig cfg;
  MultimodalDataset data;
  TrainSetup setup;
  std::unique_ptr<TrainState> state;
  nlohmann::json report;
  PhaseTimings timings;

  double multi_acc = 0.0;       // test split, full presence
  double final_edm = 0.0;       // test-split contribution report
  double first_epoch_edm = 0.0; // validation EDM trajectory endpoints
  double last_epoch_edm = 0.0;
};

inline MultimodalDataset obtain_dataset(const ExperimentConfig& cfg) {
  if (!cfg.data.path.empty()) return load(cfg.data.path);
  return generate(cfg.data.gen, cfg.data.seed);
}

inline TrainedRun run_experiment(
    const ExperimentConfig& cfg,
    const std::function<void(const TrainState&, int)>& epoch_hook = {}) {
  using clock = std::chrono::steady_clock;
  TrainedRun run;
  run.cfg = cfg;
  run.setup = make_setup(cfg);

  auto t0 = clock::now();
  run.data = obtain_dataset(cfg);
  auto t1 = clock::now();
  run.state = std::make_unique<TrainState>(make_train_state(run.setup, run.data));
  train(*run.state, run.data, run.setup, epoch_hook);
  auto t2 = clock::now();

  // Final evaluation on the test split with the frozen last-epoch priority.
  const Evaluator eval(run.state->model, run.setup.tau, run.state->memory,
                       run.setup.batch);
  const InferenceChain chain{run.state->priority, run.setup.inherit_carry};
  const SubsetPerformanceTable table = run.data.n_modalities <= 12
                                           ? eval.subset_table(run.data, Split::test, chain)
                                           : SubsetPerformanceTable(1);

  ContributionReport final_report;
  bool degenerate = false;
  try {
    final_report = contribution_report(table, run.setup.normalize, run.setup.eta);
  } catch (const DegenerateContributionError&) {
    degenerate = true;
    final_report.psi_raw = shapley(table);
    final_report.psi = final_report.psi_raw;
    const EdmScore s = edm_score(final_report.psi, run.setup.eta);
    final_report.deviations = s.deviations;
    final_report.edm = s.edm;
    final_report.eta = run.setup.eta;
    final_report.priority = run.state->priority;
  }
  auto t3 = clock::now();

  run.multi_acc = table.at((1u << run.data.n_modalities) - 1u);
  run.final_edm = final_report.edm;
  if (!run.state->log.empty()) {
    run.first_epoch_edm = run.state->log.front().report.edm;
    run.last_epoch_edm = run.state->log.back().report.edm;
  }

  nlohmann::json subsets;
  for (unsigned s = 0; s < (1u << run.data.n_modalities); ++s) {
    subsets[table.subset_str(s)] = table.at(s);
  }
  std::vector<double> per_modality;
  for (int k = 0; k < run.data.n_modalities; ++k) {
    per_modality.push_back(table.at(1u << k));
  }

  run.report = nlohmann::json{
      {"config", config_to_json(cfg)},
      {"final",
       {{"multi_acc", run.multi_acc},
        {"per_modality_acc", per_modality},
        {"edm", final_report.edm},
        {"psi", final_report.psi},
        {"psi_raw", final_report.psi_raw},
        {"deviations", final_report.deviations},
        {"eta", final_report.eta},
        {"priority", run.state->priority},
        {"degenerate_contribution", degenerate}}},
      {"subset_accuracy", subsets},
      {"epochs_trained", static_cast<int>(run.state->log.size())}};

  run.timings.data_s = std::chrono::duration<double>(t1 - t0).count();
  run.timings.train_s = std::chrono::duration<double>(t2 - t1).count();
  run.timings.eval_s = std::chrono::duration<double>(t3 - t2).count();
  return run;
}

// ---------------------------------------------------------------------------
// Output files, content hashes, CSV helpers
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t fnv1a64(const std::vector<char>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hash_file(const std::filesystem::path& p) {
  std::ostringstream os;
  os << std::hex << fnv1a64(read_blob(p));
  return os.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw FormatError("cannot open for writing: " + p.string());
  f << text;
}

/// Shortest round-trip decimal rendering, shared by every CSV writer.
inline std::string fmt_double(double v) { return nlohmann::json(v).dump(); }

}  // namespace detail

/// Writes the deterministic run artifacts plus a volatile timing file, and a
/// manifest hashing everything deterministic. Wall-clock lives only in
/// timings.json, which the manifest lists as volatile (unhashed), keeping
/// repeated runs byte-identical elsewhere.
inline void write_run_outputs(TrainedRun& run, const std::filesystem::path& out) {
  namespace fs = std::filesystem;
  fs::create_directories(out);

  detail::write_text(out / "effective_config.json",
                     config_to_json(run.cfg).dump(2) + "\n");

  std::string log_lines;
  for (const EpochRecord& rec : run.state->log) {
    log_lines += rec.to_json().dump() + "\n";
  }
  detail::write_text(out / "run_log.jsonl", log_lines);
  detail::write_text(out / "report.json", run.report.dump(2) + "\n");

  Checkpoint ckpt;
  ckpt.model = run.state->model;
  ckpt.priority = run.state->priority;
  ckpt.carry = run.state->memory.carry;
  ckpt.tau = run.setup.tau;
  ckpt.memory_decay = run.setup.memory_decay;
  ckpt.dims = run.data.dims;
  save_checkpoint(ckpt, out / "checkpoint");

  detail::write_text(out / "timings.json", run.timings.to_json().dump(2) + "\n");

  nlohmann::json files = nlohmann::json::array();
  for (const char* name : {"effective_config.json", "run_log.jsonl", "report.json",
                           "checkpoint/manifest.json", "checkpoint/params.bin"}) {
    files.push_back({{"path", name}, {"hash", detail::hash_file(out / name)}});
  }
  files.push_back({{"path", "timings.json"}, {"volatile", true}});
  const nlohmann::json manifest{{"algorithm", "fnv1a64"}, {"files", files}};
  detail::write_text(out / "run_manifest.json", manifest.dump(2) + "\n");
}

/// Recomputes every hashed file's digest against the run manifest. Returns
/// the paths that disagree (empty = verified).
inline std::vector<std::string> verify_run_manifest(
    const std::filesystem::path& out) {
  std::ifstream f(out / "run_manifest.json");
  if (!f) throw FormatError("missing run manifest in " + out.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed run manifest: " + std::string(e.what()));
  }
  std::vector<std::string> bad;
  for (const auto& entry : manifest.at("files")) {
    if (entry.value("volatile", false)) continue;
    const std::string rel = entry.at("path").get<std::string>();
    if (detail::hash_file(out / rel) != entry.at("hash").get<std::string>()) {
      bad.push_back(rel);
    }
  }
  return bad;
}

// ---------------------------------------------------------------------------
// Parallel map over independent experiment cells. Each cell is an isolated
// single-threaded run writing only its own result slot.
// ---------------------------------------------------------------------------

template <typename Item, typename Fn>
void parallel_for_each(const std::vector<Item>& items, Fn fn, int workers) {
  if (workers <= 1 || items.size() <= 1) {
    for (std::size_t i = 0; i < items.size(); ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= items.size()) return;
        fn(i);
      }
    });
  }
  for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------
// Threshold sweep: one trained model per (tau, seed), means per tau.
// ---------------------------------------------------------------------------

struct ThresholdRow {
  double tau = 0.0;
  double multi_acc = 0.0;
  double edm = 0.0;
};

inline std::vector<ThresholdRow> sweep_threshold(const ExperimentConfig& base,
                                                 int workers = 2) {
  const auto& grid = base.eval.threshold_grid;
  const auto& seeds = base.eval.sweep_seeds;
  struct Cell { double tau; std::uint64_t seed; };
  std::vector<Cell> cells;
  for (double tau : grid)
    for (std::uint64_t s : seeds) cells.push_back({tau, s});

  std::vector<double> acc(cells.size()), edm(cells.size());
  parallel_for_each(cells, [&](std::size_t i) {
    ExperimentConfig cfg = base;
    cfg.model.tau = cells[i].tau;
    cfg.model.gate = false;
    cfg.training.seed = cells[i].seed;
    TrainedRun run = run_experiment(cfg);
    acc[i] = run.multi_acc;
    edm[i] = run.final_edm;
  }, workers);

  std::vector<ThresholdRow> rows;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    ThresholdRow row;
    row.tau = grid[g];
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      row.multi_acc += acc[g * seeds.size() + s];
      row.edm += edm[g * seeds.size() + s];
    }
    row.multi_acc /= static_cast<double>(seeds.size());
    row.edm /= static_cast<double>(seeds.size());
    rows.push_back(row);
  }
  return rows;
}

inline std::string threshold_csv(const std::vector<ThresholdRow>& rows) {
  std::string csv = "tau,multi_acc,edm\n";
  for (const ThresholdRow& r : rows) {
    csv += detail::fmt_double(r.tau) + "," + detail::fmt_double(r.multi_acc) +
           "," + detail::fmt_double(r.edm) + "\n";
  }
  return csv;
}

// ---------------------------------------------------------------------------
// Order-policy comparison: paired seeds across four policies.
// ---------------------------------------------------------------------------

struct OrderPolicyStats {
  std::vector<double> accs;
  std::vector<double> edms;
  double mean_acc = 0.0, std_acc = 0.0, mean_edm = 0.0;
};

inline nlohmann::json compare_orders(const ExperimentConfig& base,
                                     int workers = 2) {
  const std::vector<OrderPolicy> policies{
      OrderPolicy::edm, OrderPolicy::weak_to_strong, OrderPolicy::strong_to_weak,
      OrderPolicy::random};
  const auto& seeds = base.eval.order_seeds;
  struct Cell { OrderPolicy policy; std::uint64_t seed; };
  std::vector<Cell> cells;
  for (OrderPolicy p : policies)
    for (std::uint64_t s : seeds) cells.push_back({p, s});

  std::vector<double> acc(cells.size()), edm(cells.size());
  parallel_for_each(cells, [&](std::size_t i) {
    ExperimentConfig cfg = base;
    cfg.training.mode = TrainMode::ours;
    cfg.training.order_policy = cells[i].policy;
    cfg.training.seed = cells[i].seed;
    TrainedRun run = run_experiment(cfg);
    acc[i] = run.multi_acc;
    edm[i] = run.final_edm;
  }, workers);

  nlohmann::json out;
  out["seeds"] = seeds;
  for (std::size_t p = 0; p < policies.size(); ++p) {
    OrderPolicyStats st;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      st.accs.push_back(acc[p * seeds.size() + s]);
      st.edms.push_back(edm[p * seeds.size() + s]);
    }
    for (double a : st.accs) st.mean_acc += a;
    st.mean_acc /= static_cast<double>(st.accs.size());
    for (double a : st.accs) st.std_acc += (a - st.mean_acc) * (a - st.mean_acc);
    st.std_acc = st.accs.size() > 1
                     ? std::sqrt(st.std_acc / static_cast<double>(st.accs.size() - 1))
                     : 0.0;
    for (double e : st.edms) st.mean_edm += e;
    st.mean_edm /= static_cast<double>(st.edms.size());
    out["policies"][order_policy_name(policies[p])] = {
        {"accs", st.accs},       {"edms", st.edms},
        {"mean_acc", st.mean_acc}, {"std_acc", st.std_acc},
        {"mean_edm", st.mean_edm}};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Robustness CSV
// ---------------------------------------------------------------------------

inline std::string robustness_csv(const std::vector<RobustnessRow>& rows) {
  std::string csv = "rate,mean_acc,std_acc,n_seeds\n";
  for (const RobustnessRow& r : rows) {
    csv += detail::fmt_double(r.rate) + "," + detail::fmt_double(r.mean_acc) +
           "," + detail::fmt_double(r.std_acc) + "," + std::to_string(r.n_seeds) +
           "\n";
  }
  return csv;
}

inline std::vector<RobustnessRow> run_robustness(const TrainedRun& run) {
  const Evaluator eval(run.state->model, run.setup.tau, run.state->memory,
                       run.setup.batch);
  const InferenceChain chain{run.state->priority, run.setup.inherit_carry};
  return robustness_sweep(eval, run.data, Split::test,
                          run.cfg.eval.robustness_rates,
                          run.cfg.eval.robustness_seeds, chain);
}

// ---------------------------------------------------------------------------
// Feature projection CSV: epoch,modality,pc1,pc2,degenerate rows for every
// sampled epoch, every modality plus the fused representation.
// ---------------------------------------------------------------------------

inline std::string project_features_csv(const ExperimentConfig& base) {
  ExperimentConfig cfg = base;
  std::vector<int> sample_epochs = cfg.eval.projection_epochs;
  if (sample_epochs.empty()) {
    sample_epochs = {0, cfg.training.epochs / 2, cfg.training.epochs - 1};
  }
  const Split split = cfg.eval.projection_split;

  std::string csv = "epoch,modality,pc1,pc2,degenerate\n";
  const auto add_rows = [&csv](int epoch, const std::string& name,
                               const Tensor& feats) {
    const PcaResult p = pca_project(feats, 2);
    for (int j = 0; j < feats.cols(); ++j) {
      csv += std::to_string(epoch) + "," + name + "," +
             detail::fmt_double(p.projected(0, j)) + "," +
             detail::fmt_double(p.projected(1, j)) + "," +
             (p.degenerate ? "1" : "0") + "\n";
    }
  };

  MultimodalDataset data = obtain_dataset(cfg);
  const std::vector<int> samples = data.indices_of(split);
  const auto hook = [&](const TrainState& state, int epoch) {
    if (std::find(sample_epochs.begin(), sample_epochs.end(), epoch) ==
        sample_epochs.end()) {
      return;
    }
    for (int k = 0; k < data.n_modalities; ++k) {
      add_rows(epoch, std::to_string(k),
               encode(state.model.encoders[k],
                      gather_columns(data.features[k], samples)));
    }
    Tensor fused;
    if (state.model.mode == TrainMode::ours) {
      const Evaluator eval(state.model, cfg.model.tau, state.memory,
                           cfg.training.batch);
      fused = eval.fused_features(data, samples,
                                  InferenceChain{state.priority,
                                                 cfg.training.inherit_carry});
    } else {
      std::vector<Tensor> feats;
      for (int k = 0; k < data.n_modalities; ++k) {
        feats.push_back(encode(state.model.encoders[k],
                               gather_columns(data.features[k], samples)));
      }
      fused = fuse_baseline(state.model.mode == TrainMode::joint
                                ? FuseKind::concat
                                : FuseKind::sum,
                            feats);
    }
    add_rows(epoch, "fused", fused);
  };

  TrainSetup setup = make_setup(cfg);
  TrainState state = make_train_state(setup, data);
  train(state, data, setup, hook);
  return csv;
}

// ---------------------------------------------------------------------------
// Theory check
// ---------------------------------------------------------------------------

inline nlohmann::json theory_check(double kappa, int trials, std::uint64_t seed) {
  const std::vector<OrderingInstance> cases{
      {0.2, 0.8, 0.3, 0.5, 0.05},
      {0.1, 0.9, 0.6, 0.6, 0.02},
      {0.3, 0.7, 0.2, 0.8, 0.10},
      {0.0, 1.0, 0.9, 0.1, 0.20},
  };
  nlohmann::json table = nlohmann::json::array();
  for (const OrderingInstance& in : cases) {
    table.push_back({{"alpha1", in.alpha1},
                     {"alpha2", in.alpha2},
                     {"delta1", in.delta1},
                     {"delta2", in.delta2},
                     {"epsilon", in.epsilon},
                     {"loss_weak_to_strong",
                      fusion_loss(in, UpdateOrder::weak_to_strong)},
                     {"loss_strong_to_weak",
                      fusion_loss(in, UpdateOrder::strong_to_weak)},
                     {"gap", gap(in)}});
  }
  return nlohmann::json{
      {"closed_form", table},
      {"monte_carlo",
       {{"kappa", kappa},
        {"trials", trials},
        {"seed", seed},
        {"fraction_positive_gap", monte_carlo_ordering(kappa, trials, seed)}}}};
}

}  // namespace modeq
