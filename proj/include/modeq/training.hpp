#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "modeq/autograd.hpp"
#include "modeq/dataset.hpp"
#include "modeq/edm.hpp"
#include "modeq/errors.hpp"
#include "modeq/inference.hpp"
#include "modeq/memory.hpp"
#include "modeq/model.hpp"

namespace modeq {

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct OptimizerConfig {
  enum class Kind { sgd, adamw };
  Kind kind = Kind::adamw;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// SGD or adam-style updates with bias correction and decoupled weight decay.
/// Moment state is keyed by parameter name; frozen parameters keep their step
/// counters untouched.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  const OptimizerConfig& config() const { return cfg_; }

  /// Applies one update to every named parameter in `update_set`, reading
  /// gradients by name. Parameters outside the set are not written at all.
  void step(std::vector<ParamRef> params, const std::vector<std::string>& update_set,
            const autograd::Gradients& grads) {
    for (const std::string& name : update_set) {
      ParamRef* ref = nullptr;
      for (ParamRef& p : params) {
        if (p.name == name) {
          ref = &p;
          break;
        }
      }
      if (!ref) throw ConfigError("optimizer: unknown parameter '" + name + "'");
      apply(*ref, grads.param(name));
    }
  }

  void apply(ParamRef& ref, const Tensor& grad) {
    Tensor& p = *ref.tensor;
    if (!p.same_shape(grad)) {
      throw DimensionError("optimizer: gradient " + grad.shape_str() +
                           " for parameter " + ref.name + " of shape " +
                           p.shape_str());
    }
    if (cfg_.kind == OptimizerConfig::Kind::sgd) {
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= cfg_.lr * grad[i];
      return;
    }
    Slot& slot = slots_[ref.name];
    if (slot.t == 0) {
      slot.m = Tensor::zeros(p.shape());
      slot.v = Tensor::zeros(p.shape());
    }
    ++slot.t;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(slot.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(slot.t));
    for (std::size_t i = 0; i < p.size(); ++i) {
      slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * grad[i];
      slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      p[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                         cfg_.weight_decay * p[i]);
    }
  }

 private:
  struct Slot {
    Tensor m, v;
    long t = 0;
  };
  OptimizerConfig cfg_;
  std::map<std::string, Slot> slots_;
};

// ---------------------------------------------------------------------------
// Training setup and per-epoch records
// ---------------------------------------------------------------------------

enum class OrderPolicy { edm, weak_to_strong, strong_to_weak, random, given };

inline const char* order_policy_name(OrderPolicy p) {
  switch (p) {
    case OrderPolicy::edm: return "edm";
    case OrderPolicy::weak_to_strong: return "weak-to-strong";
    case OrderPolicy::strong_to_weak: return "strong-to-weak";
    case OrderPolicy::random: return "random";
    case OrderPolicy::given: return "given";
  }
  return "?";
}

struct TrainSetup {
  TrainMode mode = TrainMode::ours;
  OrderPolicy policy = OrderPolicy::edm;
  std::vector<int> given_order;
  int epochs = 150;
  int batch = 64;
  OptimizerConfig optimizer;
  std::uint64_t seed = 7;
  int d_feat = 32;
  int hidden = 64;
  double tau = 0.1;
  bool use_gate = false;
  double memory_decay = 0.9;
  bool update_head_both_steps = true;
  bool verify_isolation = false;
  bool inherit_carry = false;
  NormalizeMode normalize = NormalizeMode::share;
  double eta = 100.0;
};

struct EpochRecord {
  int epoch = 0;
  std::vector<double> sub_losses;  // mean loss per sub-step, chain order
  double val_acc = 0.0;
  ContributionReport report;
  std::vector<int> priority_used;
  std::vector<int> priority_next;
  bool degenerate_kept_order = false;
  int zero_norm_batches = 0;

  nlohmann::json to_json() const {
    return nlohmann::json{{"epoch", epoch},
                          {"sub_losses", sub_losses},
                          {"val_acc", val_acc},
                          {"report", report.to_json()},
                          {"priority_used", priority_used},
                          {"priority_next", priority_next},
                          {"degenerate_kept_order", degenerate_kept_order},
                          {"zero_norm_batches", zero_norm_batches}};
  }
};

struct TrainState {
  ModelParams model;
  Optimizer opt;
  MemoryState memory;
  std::vector<int> priority;
  int epoch = 0;
  std::vector<EpochRecord> log;

  TrainState(ModelParams m, OptimizerConfig oc, MemoryState mem,
             std::vector<int> prio)
      : model(std::move(m)), opt(oc), memory(std::move(mem)),
        priority(std::move(prio)) {}
};

/// Initial priority for each policy. Fixed weak/strong orders come from the
/// dataset's generation-time informativeness metadata; ties break by index.
inline std::vector<int> initial_priority(const TrainSetup& cfg,
                                         const MultimodalDataset& d) {
  std::vector<int> order(d.n_modalities);
  std::iota(order.begin(), order.end(), 0);
  switch (cfg.policy) {
    case OrderPolicy::weak_to_strong:
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return d.informativeness[a] < d.informativeness[b];
      });
      break;
    case OrderPolicy::strong_to_weak:
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return d.informativeness[a] > d.informativeness[b];
      });
      break;
    case OrderPolicy::given:
      if (static_cast<int>(cfg.given_order.size()) != d.n_modalities) {
        throw ConfigError("given_order must list every modality exactly once");
      }
      order = cfg.given_order;
      break;
    case OrderPolicy::edm:
    case OrderPolicy::random:
      if (!cfg.given_order.empty()) order = cfg.given_order;
      break;
  }
  return order;
}

inline TrainState make_train_state(const TrainSetup& cfg,
                                   const MultimodalDataset& d) {
  if (cfg.mode == TrainMode::ours && d.n_modalities < 2) {
    throw ConfigError("training: memory-guided mode needs >= 2 modalities");
  }
  ModelParams model = ModelParams::init(d.dims, cfg.hidden, cfg.d_feat,
                                        d.n_classes, cfg.mode, cfg.use_gate,
                                        cfg.seed);
  return TrainState(std::move(model), cfg.optimizer,
                    MemoryState::initial(cfg.d_feat, cfg.memory_decay),
                    initial_priority(cfg, d));
}

// ---------------------------------------------------------------------------
// Epoch implementations
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::vector<int>> make_batches(const MultimodalDataset& d,
                                                  const TrainSetup& cfg,
                                                  int epoch) {
  std::vector<int> idx = d.indices_of(Split::train);
  auto rng = make_rng(derive_seed(cfg.seed, 0x62617463ULL + epoch));
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<int>> batches;
  for (std::size_t start = 0; start < idx.size();
       start += static_cast<std::size_t>(cfg.batch)) {
    const std::size_t stop =
        std::min(idx.size(), start + static_cast<std::size_t>(cfg.batch));
    batches.emplace_back(idx.begin() + start, idx.begin() + stop);
  }
  return batches;
}

inline void check_finite_loss(double loss, int epoch, int batch, int sub_step) {
  if (!std::isfinite(loss)) {
    throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                       ", batch " + std::to_string(batch) + ", sub-step " +
                       std::to_string(sub_step));
  }
}

/// Bitwise snapshot/compare oracle for the parameter-isolation contract.
class IsolationGuard {
 public:
  IsolationGuard(bool enabled, ModelParams& model) : enabled_(enabled) {
    if (enabled_) {
      for (ParamRef& p : model.param_refs()) before_.emplace_back(p.name, *p.tensor);
    }
  }

  void verify(ModelParams& model, const std::vector<std::string>& update_set) {
    if (!enabled_) return;
    std::size_t i = 0;
    for (ParamRef& p : model.param_refs()) {
      const Tensor& old = before_[i++].second;
      const bool updatable =
          std::find(update_set.begin(), update_set.end(), p.name) !=
          update_set.end();
      if (updatable) continue;
      if (!p.tensor->same_shape(old) ||
          std::memcmp(p.tensor->data(), old.data(),
                      old.size() * sizeof(double)) != 0) {
        throw Error("parameter isolation violated: '" + p.name +
                    "' changed outside its declared update set");
      }
    }
  }

 private:
  bool enabled_;
  std::vector<std::pair<std::string, Tensor>> before_;
};

}  // namespace detail

/// One memory-guided alternating epoch (the full method). Batches walk the
/// priority chain in sliding adjacent pairs; each pair performs two optimizer
/// sub-steps with the declared parameter subsets, and the memory context
/// chains across pairs. The last batch's final context updates the carry.
inline void alternating_epoch(TrainState& state, const MultimodalDataset& d,
                              const TrainSetup& cfg, EpochRecord& rec) {
  namespace ag = autograd;
  const int n = d.n_modalities;
  if (n < 2) throw ConfigError("alternating_epoch: needs >= 2 modalities");

  const auto batches = detail::make_batches(d, cfg, state.epoch);
  const std::vector<int>& order = state.priority;
  std::vector<double> loss_sums(2 * (n - 1), 0.0);
  Tensor c_final;

  for (std::size_t b = 0; b < batches.size(); ++b) {
    const std::vector<int>& batch = batches[b];
    const std::vector<int> labels = d.labels_at(batch);
    std::vector<Tensor> inputs(n);
    for (int k = 0; k < n; ++k) inputs[k] = gather_columns(d.features[k], batch);

    ag::Tape tape;
    std::vector<ag::NodeId> xnode(n, -1);
    xnode[order[0]] = tape_ops::encode(tape, state.model.encoders[order[0]],
                                       inputs[order[0]],
                                       "enc" + std::to_string(order[0]));
    ag::NodeId h = xnode[order[0]];
    ag::NodeId c = tape.constant(
        init_epoch_memory(state.memory, static_cast<int>(batch.size())));

    int sub = 0;
    for (int pos = 1; pos < n; ++pos) {
      const int i = order[pos - 1];
      const int j = order[pos];

      // Step 1: classify the carried representation of the weaker side and
      // update its encoder (plus the shared head).
      {
        const ag::NodeId loss = tape_ops::classification_loss(
            tape, tape_ops::classify(tape, state.model.head, h, "head"), labels);
        const double lv = tape.value(loss).scalar_value();
        detail::check_finite_loss(lv, state.epoch, static_cast<int>(b), sub);
        loss_sums[sub] += lv;
        std::vector<std::string> update = ModelParams::encoder_names(i);
        if (cfg.update_head_both_steps) {
          for (auto& s : ModelParams::head_names()) update.push_back(s);
        }
        detail::IsolationGuard guard(cfg.verify_isolation, state.model);
        state.opt.step(state.model.param_refs(), update, tape.backward(loss));
        guard.verify(state.model, update);
        ++sub;
      }

      // Transfer: align the stronger modality against the weaker side's raw
      // features (correlation uses X, fusion uses H) and fuse through the
      // memory cell.
      xnode[j] = tape_ops::encode(tape, state.model.encoders[j], inputs[j],
                                  "enc" + std::to_string(j));
      {
        int zero_cols_i = 0, zero_cols_j = 0;
        normalize_columns(tape.value(xnode[i]), &zero_cols_i);
        normalize_columns(tape.value(xnode[j]), &zero_cols_j);
        if (zero_cols_i + zero_cols_j > 0) ++rec.zero_norm_batches;
      }
      const ag::NodeId corr = tape_ops::correlation(tape, xnode[i], xnode[j]);
      ag::NodeId filtered;
      if (state.model.gate) {
        const ag::NodeId score = tape_ops::gate_score(
            tape, *state.model.gate,
            tape_ops::gate_features(tape, corr, xnode[i], xnode[j]));
        filtered = tape_ops::apply_gate(tape, corr, score);
      } else {
        filtered = tape_ops::threshold_filter(tape, corr, cfg.tau);
      }
      const ag::NodeId aligned = tape_ops::align(tape, xnode[j], filtered);
      const tape_ops::FuseNodes fused =
          tape_ops::fuse_step(tape, *state.model.cell, h, aligned, c);
      h = fused.h;
      c = fused.c;

      // Step 2: classify the fused representation and update the stronger
      // side's encoder, the memory cell, the gate if present, and the head.
      {
        const ag::NodeId loss = tape_ops::classification_loss(
            tape, tape_ops::classify(tape, state.model.head, h, "head"), labels);
        const double lv = tape.value(loss).scalar_value();
        detail::check_finite_loss(lv, state.epoch, static_cast<int>(b), sub);
        loss_sums[sub] += lv;
        std::vector<std::string> update = ModelParams::encoder_names(j);
        for (auto& s : ModelParams::cell_names()) update.push_back(s);
        if (state.model.gate) {
          for (auto& s : ModelParams::gate_names()) update.push_back(s);
        }
        for (auto& s : ModelParams::head_names()) update.push_back(s);
        detail::IsolationGuard guard(cfg.verify_isolation, state.model);
        state.opt.step(state.model.param_refs(), update, tape.backward(loss));
        guard.verify(state.model, update);
        ++sub;
      }
    }
    c_final = tape.value(c);
  }

  if (!c_final.empty()) update_carry(state.memory, c_final);
  rec.sub_losses.resize(loss_sums.size());
  for (std::size_t i = 0; i < loss_sums.size(); ++i)
    rec.sub_losses[i] = loss_sums[i] / static_cast<double>(batches.size());
}

/// Joint baseline: one simultaneous step over every encoder and the concat
/// classifier per batch.
inline void joint_epoch(TrainState& state, const MultimodalDataset& d,
                        const TrainSetup& cfg, EpochRecord& rec) {
  const int n = d.n_modalities;
  const auto batches = detail::make_batches(d, cfg, state.epoch);
  double loss_sum = 0.0;
  std::vector<std::string> update;
  for (int k = 0; k < n; ++k) {
    for (auto& s : ModelParams::encoder_names(k)) update.push_back(s);
  }
  update.push_back("concat.w");
  update.push_back("concat.b");

  for (std::size_t b = 0; b < batches.size(); ++b) {
    const std::vector<int>& batch = batches[b];
    std::vector<Tensor> inputs(n);
    for (int k = 0; k < n; ++k) inputs[k] = gather_columns(d.features[k], batch);
    autograd::Tape tape;
    const autograd::NodeId loss =
        tape_ops::joint_loss(tape, state.model, inputs, d.labels_at(batch));
    const double lv = tape.value(loss).scalar_value();
    detail::check_finite_loss(lv, state.epoch, static_cast<int>(b), 0);
    loss_sum += lv;
    detail::IsolationGuard guard(cfg.verify_isolation, state.model);
    state.opt.step(state.model.param_refs(), update, tape.backward(loss));
    guard.verify(state.model, update);
  }
  rec.sub_losses = {loss_sum / static_cast<double>(batches.size())};
}

/// Plain alternating baseline: per batch, each modality in priority order
/// takes one single-modality step against the shared head. No alignment, no
/// memory.
inline void alt_plain_epoch(TrainState& state, const MultimodalDataset& d,
                            const TrainSetup& cfg, EpochRecord& rec) {
  const int n = d.n_modalities;
  const auto batches = detail::make_batches(d, cfg, state.epoch);
  std::vector<double> loss_sums(n, 0.0);

  for (std::size_t b = 0; b < batches.size(); ++b) {
    const std::vector<int>& batch = batches[b];
    const std::vector<int> labels = d.labels_at(batch);
    for (int pos = 0; pos < n; ++pos) {
      const int k = state.priority[pos];
      autograd::Tape tape;
      const autograd::NodeId feats =
          tape_ops::encode(tape, state.model.encoders[k],
                           gather_columns(d.features[k], batch),
                           "enc" + std::to_string(k));
      const autograd::NodeId loss = tape_ops::classification_loss(
          tape, tape_ops::classify(tape, state.model.head, feats, "head"), labels);
      const double lv = tape.value(loss).scalar_value();
      detail::check_finite_loss(lv, state.epoch, static_cast<int>(b), pos);
      loss_sums[pos] += lv;
      std::vector<std::string> update = ModelParams::encoder_names(k);
      for (auto& s : ModelParams::head_names()) update.push_back(s);
      detail::IsolationGuard guard(cfg.verify_isolation, state.model);
      state.opt.step(state.model.param_refs(), update, tape.backward(loss));
      guard.verify(state.model, update);
    }
  }
  rec.sub_losses.resize(n);
  for (int i = 0; i < n; ++i)
    rec.sub_losses[i] = loss_sums[i] / static_cast<double>(batches.size());
}

/// Late fusion: every modality trains its own encoder and head; predictions
/// are combined only at inference.
inline void late_fusion_epoch(TrainState& state, const MultimodalDataset& d,
                              const TrainSetup& cfg, EpochRecord& rec) {
  const int n = d.n_modalities;
  const auto batches = detail::make_batches(d, cfg, state.epoch);
  std::vector<double> loss_sums(n, 0.0);

  for (std::size_t b = 0; b < batches.size(); ++b) {
    const std::vector<int>& batch = batches[b];
    const std::vector<int> labels = d.labels_at(batch);
    for (int k = 0; k < n; ++k) {
      autograd::Tape tape;
      const autograd::NodeId feats =
          tape_ops::encode(tape, state.model.encoders[k],
                           gather_columns(d.features[k], batch),
                           "enc" + std::to_string(k));
      const std::string uni = "uni" + std::to_string(k);
      const autograd::NodeId loss = tape_ops::classification_loss(
          tape, tape_ops::classify(tape, state.model.modality_heads[k], feats, uni),
          labels);
      const double lv = tape.value(loss).scalar_value();
      detail::check_finite_loss(lv, state.epoch, static_cast<int>(b), k);
      loss_sums[k] += lv;
      std::vector<std::string> update = ModelParams::encoder_names(k);
      update.push_back(uni + ".w");
      update.push_back(uni + ".b");
      detail::IsolationGuard guard(cfg.verify_isolation, state.model);
      state.opt.step(state.model.param_refs(), update, tape.backward(loss));
      guard.verify(state.model, update);
    }
  }
  rec.sub_losses.resize(n);
  for (int i = 0; i < n; ++i)
    rec.sub_losses[i] = loss_sums[i] / static_cast<double>(batches.size());
}

// ---------------------------------------------------------------------------
// End-of-epoch contribution estimation and rescheduling
// ---------------------------------------------------------------------------

/// Builds the validation subset table, derives the contribution report and
/// sets the next epoch's priority according to the order policy. Degenerate
/// contributions keep the previous order.
inline void reschedule(TrainState& state, const MultimodalDataset& d,
                       const TrainSetup& cfg, EpochRecord& rec) {
  const Evaluator eval(state.model, cfg.tau, state.memory, cfg.batch);
  const InferenceChain chain{state.priority, cfg.inherit_carry};
  const SubsetPerformanceTable table = eval.subset_table(d, Split::val, chain);

  rec.val_acc = table.at((1u << d.n_modalities) - 1u);
  rec.priority_used = state.priority;

  std::vector<int> next = state.priority;
  try {
    rec.report = contribution_report(table, cfg.normalize, cfg.eta);
    if (cfg.policy == OrderPolicy::edm) next = rec.report.priority;
  } catch (const DegenerateContributionError&) {
    rec.degenerate_kept_order = true;
    rec.report.psi_raw = shapley(table);
    rec.report.psi = rec.report.psi_raw;  // raw fallback, for the log only
    const EdmScore s = edm_score(rec.report.psi, cfg.eta);
    rec.report.deviations = s.deviations;
    rec.report.edm = s.edm;
    rec.report.eta = cfg.eta;
    rec.report.priority = state.priority;
  }

  if (cfg.policy == OrderPolicy::random) {
    auto rng = make_rng(derive_seed(cfg.seed, 0x6f726465ULL + state.epoch));
    std::shuffle(next.begin(), next.end(), rng);
  }
  rec.priority_next = next;
  state.priority = std::move(next);
}

/// Full training loop. `epoch_hook`, when set, runs after each epoch's
/// reschedule (used for feature-projection sampling).
inline void train(TrainState& state, const MultimodalDataset& d,
                  const TrainSetup& cfg,
                  const std::function<void(const TrainState&, int)>& epoch_hook = {}) {
  for (int e = 0; e < cfg.epochs; ++e) {
    EpochRecord rec;
    rec.epoch = state.epoch;
    switch (cfg.mode) {
      case TrainMode::ours: alternating_epoch(state, d, cfg, rec); break;
      case TrainMode::joint: joint_epoch(state, d, cfg, rec); break;
      case TrainMode::alt_plain: alt_plain_epoch(state, d, cfg, rec); break;
      case TrainMode::late_fusion: late_fusion_epoch(state, d, cfg, rec); break;
    }
    reschedule(state, d, cfg, rec);
    state.log.push_back(std::move(rec));
    if (epoch_hook) epoch_hook(state, state.epoch);
    ++state.epoch;
  }
}

}  // namespace modeq
