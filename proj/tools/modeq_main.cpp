// modeq experiment runner: synthetic multimodal data generation, EDM-guided
// alternating training, evaluation sweeps and report emission. All outputs
// are JSON or CSV; every random draw traces to a declared seed.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "modeq/experiment.hpp"

namespace fs = std::filesystem;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

modeq::ExperimentConfig load_effective_config(const GlobalArgs& args,
                                              bool config_required = true) {
  modeq::ExperimentConfig cfg;
  if (!args.config_path.empty()) {
    cfg = modeq::load_config(args.config_path);
  } else if (config_required) {
    throw modeq::ConfigError("--config is required for this subcommand");
  }
  if (!args.out_dir.empty()) cfg.out = args.out_dir;
  if (args.seed) cfg.training.seed = *args.seed;
  return cfg;
}

fs::path require_out(const modeq::ExperimentConfig& cfg) {
  if (cfg.out.empty()) {
    throw modeq::ConfigError("no output directory: set --out or config 'out'");
  }
  fs::create_directories(cfg.out);
  return cfg.out;
}

void add_global_flags(CLI::App* cmd, GlobalArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config (JSON)");
  cmd->add_option("--out", args.out_dir, "output directory (overrides config)");
  cmd->add_option("--seed", args.seed, "training seed override (u64)");
}

int cmd_gen_data(const GlobalArgs& args) {
  const auto cfg = load_effective_config(args);
  const fs::path out = require_out(cfg);
  const modeq::MultimodalDataset d = modeq::generate(cfg.data.gen, cfg.data.seed);
  modeq::save(d, out);
  std::cout << "wrote dataset (" << d.n_modalities << " modalities, m=" << d.m
            << ") to " << out << "\n";
  return 0;
}

int cmd_train(const GlobalArgs& args) {
  const auto cfg = load_effective_config(args);
  const fs::path out = require_out(cfg);
  modeq::TrainedRun run = modeq::run_experiment(cfg);
  modeq::write_run_outputs(run, out);
  std::cout << "multi_acc=" << run.multi_acc << " edm=" << run.final_edm
            << " priority=" << nlohmann::json(run.state->priority).dump()
            << "\nreport: " << (out / "report.json") << "\n";
  return 0;
}

int cmd_eval(const GlobalArgs& args) {
  const auto cfg = load_effective_config(args);
  if (cfg.eval.model_dir.empty()) {
    throw modeq::ConfigError("eval requires eval.model_dir (checkpoint path)");
  }
  const fs::path out = require_out(cfg);
  const modeq::Checkpoint ckpt = modeq::load_checkpoint(cfg.eval.model_dir);
  const modeq::MultimodalDataset d = modeq::obtain_dataset(cfg);

  modeq::MemoryState memory{ckpt.carry, ckpt.memory_decay};
  modeq::Checkpoint& mutable_ckpt = const_cast<modeq::Checkpoint&>(ckpt);
  const modeq::Evaluator eval(mutable_ckpt.model, ckpt.tau, memory,
                              cfg.training.batch);
  const modeq::InferenceChain chain{ckpt.priority, cfg.training.inherit_carry};
  const modeq::SubsetPerformanceTable table =
      eval.subset_table(d, modeq::Split::test, chain);

  nlohmann::json subsets;
  for (unsigned s = 0; s < (1u << d.n_modalities); ++s) {
    subsets[table.subset_str(s)] = table.at(s);
  }
  nlohmann::json report{{"multi_acc", table.at((1u << d.n_modalities) - 1u)},
                        {"subset_accuracy", subsets},
                        {"priority", ckpt.priority}};
  try {
    const modeq::ContributionReport r =
        modeq::contribution_report(table, cfg.training.normalize, cfg.training.eta);
    report["edm"] = r.edm;
    report["psi"] = r.psi;
    report["deviations"] = r.deviations;
  } catch (const modeq::DegenerateContributionError& e) {
    report["degenerate_contribution"] = true;
  }
  modeq::detail::write_text(out / "eval.json", report.dump(2) + "\n");
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_sweep_threshold(const GlobalArgs& args) {
  const auto cfg = load_effective_config(args);
  const fs::path out = require_out(cfg);
  const auto rows = modeq::sweep_threshold(cfg);
  const std::string csv = modeq::threshold_csv(rows);
  modeq::detail::write_text(out / "threshold_sweep.csv", csv);
  std::cout << csv;
  return 0;
}

int cmd_compare_orders(const GlobalArgs& args) {
  const auto cfg = load_effective_config(args);
  const fs::path out = require_out(cfg);
  const nlohmann::json summary = modeq::compare_orders(cfg);
  modeq::detail::write_text(out / "orders.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_robustness(const GlobalArgs& args) {
  const auto cfg = load_effective_config(args);
  const fs::path out = require_out(cfg);
  modeq::TrainedRun run = modeq::run_experiment(cfg);
  const auto rows = modeq::run_robustness(run);
  const std::string csv = modeq::robustness_csv(rows);
  modeq::detail::write_text(out / "robustness.csv", csv);
  std::cout << csv;
  return 0;
}

int cmd_project_features(const GlobalArgs& args) {
  const auto cfg = load_effective_config(args);
  const fs::path out = require_out(cfg);
  const std::string csv = modeq::project_features_csv(cfg);
  modeq::detail::write_text(out / "features.csv", csv);
  std::cout << "wrote " << (out / "features.csv") << "\n";
  return 0;
}

int cmd_theory_check(const GlobalArgs& args, double kappa, int trials,
                     std::uint64_t mc_seed) {
  const nlohmann::json report = modeq::theory_check(kappa, trials, mc_seed);
  std::cout << report.dump(2) << "\n";
  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    modeq::detail::write_text(fs::path(args.out_dir) / "theory.json",
                              report.dump(2) + "\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"modeq: EDM-guided weak-to-strong multimodal training"};
  app.require_subcommand(1);

  GlobalArgs gen_args, train_args, eval_args, sweep_args, orders_args,
      robust_args, project_args, theory_args;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_global_flags(gen, gen_args);
  CLI::App* train = app.add_subcommand("train", "train one model and emit reports");
  add_global_flags(train, train_args);
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_global_flags(eval, eval_args);
  CLI::App* sweep =
      app.add_subcommand("sweep-threshold", "train across the tau grid");
  add_global_flags(sweep, sweep_args);
  CLI::App* orders =
      app.add_subcommand("compare-orders", "compare order policies, paired seeds");
  add_global_flags(orders, orders_args);
  CLI::App* robust =
      app.add_subcommand("robustness", "missing-modality robustness sweep");
  add_global_flags(robust, robust_args);
  CLI::App* project =
      app.add_subcommand("project-features", "PCA feature projections per epoch");
  add_global_flags(project, project_args);

  double kappa = 0.5;
  int trials = 10000;
  std::uint64_t mc_seed = 42;
  CLI::App* theory =
      app.add_subcommand("theory-check", "closed-form ordering table + Monte Carlo");
  add_global_flags(theory, theory_args);
  theory->add_option("--kappa", kappa, "capacity gap for the Monte-Carlo draw");
  theory->add_option("--trials", trials, "Monte-Carlo trials");
  theory->add_option("--mc-seed", mc_seed, "Monte-Carlo seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gen_args);
    if (train->parsed()) return cmd_train(train_args);
    if (eval->parsed()) return cmd_eval(eval_args);
    if (sweep->parsed()) return cmd_sweep_threshold(sweep_args);
    if (orders->parsed()) return cmd_compare_orders(orders_args);
    if (robust->parsed()) return cmd_robustness(robust_args);
    if (project->parsed()) return cmd_project_features(project_args);
    if (theory->parsed()) return cmd_theory_check(theory_args, kappa, trials, mc_seed);
  } catch (const modeq::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const modeq::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const modeq::NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
