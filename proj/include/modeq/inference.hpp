#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "modeq/alignment.hpp"
#include "modeq/dataset.hpp"
#include "modeq/edm.hpp"
#include "modeq/errors.hpp"
#include "modeq/memory.hpp"
#include "modeq/model.hpp"

namespace modeq {

/// Frozen inference schedule: the priority order derived from the last
/// training epoch, plus the memory initialization policy (Algorithm-style
/// zero start by default; optionally inherit the training carry).
struct InferenceChain {
  std::vector<int> priority;
  bool inherit_carry = false;
};

/// Read-only evaluation over a trained model. Alignment at inference is
/// batch-transductive: correlations are computed within the evaluation
/// batch's own columns. A batch of one degenerates to the 1x1 identity, so
/// align becomes the identity map.
class Evaluator {
 public:
  Evaluator(const ModelParams& model, double tau, const MemoryState& memory,
            int batch_size)
      : model_(model), tau_(tau), memory_(memory), batch_size_(batch_size) {}

  /// Predicted labels for the given samples. `mask`, when non-null, marks
  /// missing modalities per sample; every sample must keep at least one.
  std::vector<int> predict(const MultimodalDataset& d,
                           const std::vector<int>& samples,
                           const MissingMask* mask,
                           const InferenceChain& chain) const {
    std::vector<int> out;
    out.reserve(samples.size());
    for (std::size_t start = 0; start < samples.size();
         start += static_cast<std::size_t>(batch_size_)) {
      const std::size_t stop =
          std::min(samples.size(), start + static_cast<std::size_t>(batch_size_));
      const std::vector<int> batch(samples.begin() + start, samples.begin() + stop);
      const std::vector<int> preds = predict_batch(d, batch, mask, chain);
      out.insert(out.end(), preds.begin(), preds.end());
    }
    return out;
  }

  double accuracy_percent(const MultimodalDataset& d, Split split,
                          const MissingMask* mask,
                          const InferenceChain& chain) const {
    const std::vector<int> idx = d.indices_of(split);
    if (idx.empty()) {
      throw ConfigError(std::string("accuracy: split '") + split_name(split) +
                        "' is empty");
    }
    const std::vector<int> preds = predict(d, idx, mask, chain);
    int hits = 0;
    for (std::size_t i = 0; i < idx.size(); ++i)
      if (preds[i] == d.labels[idx[i]]) ++hits;
    return 100.0 * hits / static_cast<double>(idx.size());
  }

  /// Accuracy with only the modalities in `subset_mask` available. The empty
  /// subset scores the majority-class baseline of the split.
  double subset_accuracy(const MultimodalDataset& d, Split split,
                         unsigned subset_mask, const InferenceChain& chain) const {
    const std::vector<int> idx = d.indices_of(split);
    if (idx.empty()) {
      throw ConfigError(std::string("subset_accuracy: split '") +
                        split_name(split) + "' is empty");
    }
    if (subset_mask == 0) return majority_accuracy(d, idx);
    MissingMask mask = MissingMask::all_present(d.n_modalities, d.m);
    for (int k = 0; k < d.n_modalities; ++k) {
      if (subset_mask & (1u << k)) continue;
      for (int s = 0; s < d.m; ++s) mask.set(k, s, false);
    }
    const std::vector<int> preds = predict(d, idx, &mask, chain);
    int hits = 0;
    for (std::size_t i = 0; i < idx.size(); ++i)
      if (preds[i] == d.labels[idx[i]]) ++hits;
    return 100.0 * hits / static_cast<double>(idx.size());
  }

  SubsetPerformanceTable subset_table(const MultimodalDataset& d, Split split,
                                      const InferenceChain& chain) const {
    SubsetPerformanceTable table(d.n_modalities);
    const unsigned full = (1u << d.n_modalities) - 1u;
    for (unsigned s = 0; s <= full; ++s) {
      table.set(s, subset_accuracy(d, split, s, chain));
    }
    return table;
  }

  /// Full-presence fused representation of the given samples (memory-guided
  /// mode only), batched like predict.
  Tensor fused_features(const MultimodalDataset& d, const std::vector<int>& samples,
                        const InferenceChain& chain) const {
    if (model_.mode != TrainMode::ours) {
      throw ConfigError("fused_features: only available in memory-guided mode");
    }
    Tensor out({model_.d_feat, static_cast<int>(samples.size())});
    for (std::size_t start = 0; start < samples.size();
         start += static_cast<std::size_t>(batch_size_)) {
      const std::size_t stop =
          std::min(samples.size(), start + static_cast<std::size_t>(batch_size_));
      const std::vector<int> batch(samples.begin() + start, samples.begin() + stop);
      const Tensor h = chain_representation(d, batch, nullptr, chain);
      std::vector<int> cols(batch.size());
      std::iota(cols.begin(), cols.end(), static_cast<int>(start));
      scatter_columns(out, cols, h);
    }
    return out;
  }

 private:
  static double majority_accuracy(const MultimodalDataset& d,
                                  const std::vector<int>& idx) {
    std::vector<int> counts(d.n_classes, 0);
    for (int s : idx) ++counts[d.labels[s]];
    const int best =
        static_cast<int>(std::max_element(counts.begin(), counts.end()) -
                         counts.begin());
    return 100.0 * counts[best] / static_cast<double>(idx.size());
  }

  std::vector<int> predict_batch(const MultimodalDataset& d,
                                 const std::vector<int>& batch,
                                 const MissingMask* mask,
                                 const InferenceChain& chain) const {
    switch (model_.mode) {
      case TrainMode::ours:
        return predict_memory_chain(d, batch, mask, chain);
      case TrainMode::alt_plain:
        return predict_mean_softmax(d, batch, mask, /*per_modality_heads=*/false);
      case TrainMode::late_fusion:
        return predict_mean_softmax(d, batch, mask, /*per_modality_heads=*/true);
      case TrainMode::joint:
        return predict_joint(d, batch, mask);
    }
    throw ConfigError("predict: unknown mode");
  }

  /// Memory-guided weak-to-strong chain. Walks the priority order; each
  /// sample starts at its first present modality and fuses every later
  /// present one through the memory cell. Missing modalities are skipped,
  /// never imputed. Columns are gathered per step so per-sample chains may
  /// differ in length.
  std::vector<int> predict_memory_chain(const MultimodalDataset& d,
                                        const std::vector<int>& batch,
                                        const MissingMask* mask,
                                        const InferenceChain& chain) const {
    return argmax_cols(
        classify(model_.head, chain_representation(d, batch, mask, chain)));
  }

  Tensor chain_representation(const MultimodalDataset& d,
                              const std::vector<int>& batch,
                              const MissingMask* mask,
                              const InferenceChain& chain) const {
    const int mb = static_cast<int>(batch.size());
    const int n = model_.n_modalities();
    if (static_cast<int>(chain.priority.size()) != n) {
      throw ConfigError("predict: chain priority has " +
                        std::to_string(chain.priority.size()) + " entries for " +
                        std::to_string(n) + " modalities");
    }
    const auto present = [&](int modality, int col) {
      return mask == nullptr || mask->at(modality, batch[col]);
    };
    for (int col = 0; col < mb; ++col) {
      bool any = false;
      for (int k = 0; k < n && !any; ++k) any = present(k, col);
      if (!any) {
        throw ConfigError("predict: sample " + std::to_string(batch[col]) +
                          " has every modality masked out");
      }
    }

    // Encoded features for the batch, one matrix per modality; skipped for
    // modalities absent from every sample of the batch.
    std::vector<Tensor> x(n);
    for (int k = 0; k < n; ++k) {
      bool any = false;
      for (int col = 0; col < mb && !any; ++col) any = present(k, col);
      if (any) x[k] = encode(model_.encoders[k], gather_columns(d.features[k], batch));
    }

    Tensor h({model_.d_feat, mb});
    Tensor c = chain.inherit_carry ? init_epoch_memory(memory_, mb)
                                   : Tensor::zeros({model_.d_feat, mb});
    std::vector<int> prev(mb, -1);  // previous present modality per column

    for (int pos = 0; pos < n; ++pos) {
      const int k = chain.priority[pos];
      std::vector<int> fuse_cols, head_cols;
      for (int col = 0; col < mb; ++col) {
        if (!present(k, col)) continue;
        (prev[col] >= 0 ? fuse_cols : head_cols).push_back(col);
      }
      if (!fuse_cols.empty()) {
        Tensor src({model_.d_feat, static_cast<int>(fuse_cols.size())});
        for (std::size_t j = 0; j < fuse_cols.size(); ++j) {
          for (int r = 0; r < model_.d_feat; ++r)
            src(r, static_cast<int>(j)) = x[prev[fuse_cols[j]]](r, fuse_cols[j]);
        }
        const Tensor xk = gather_columns(x[k], fuse_cols);
        const Tensor corr = correlation(src, xk);
        const Tensor filtered =
            model_.gate ? learnable_gate(corr, src, xk, *model_.gate)
                        : threshold_filter(corr, tau_);
        const Tensor aligned = align(xk, filtered);
        const FuseResult fused = fuse_step(*model_.cell, gather_columns(h, fuse_cols),
                                           aligned, gather_columns(c, fuse_cols));
        scatter_columns(h, fuse_cols, fused.h);
        scatter_columns(c, fuse_cols, fused.c);
      }
      for (int col : head_cols) {
        for (int r = 0; r < model_.d_feat; ++r) h(r, col) = x[k](r, col);
      }
      for (int col : fuse_cols) prev[col] = k;
      for (int col : head_cols) prev[col] = k;
    }
    return h;
  }

  /// Average of softmax distributions over the present modalities, using
  /// either the shared head (plain alternating) or per-modality heads (late
  /// fusion).
  std::vector<int> predict_mean_softmax(const MultimodalDataset& d,
                                        const std::vector<int>& batch,
                                        const MissingMask* mask,
                                        bool per_modality_heads) const {
    const int mb = static_cast<int>(batch.size());
    const int n = model_.n_modalities();
    Tensor acc({model_.n_classes, mb});
    std::vector<int> used(mb, 0);
    for (int k = 0; k < n; ++k) {
      std::vector<int> cols;
      for (int col = 0; col < mb; ++col) {
        if (mask == nullptr || mask->at(k, batch[col])) cols.push_back(col);
      }
      if (cols.empty()) continue;
      std::vector<int> rows(cols.size());
      for (std::size_t j = 0; j < cols.size(); ++j) rows[j] = batch[cols[j]];
      const Tensor feats = encode(model_.encoders[k], gather_columns(d.features[k], rows));
      const ClassifierParams& headk =
          per_modality_heads ? model_.modality_heads[k] : model_.head;
      const Tensor probs = softmax_cols(classify(headk, feats));
      for (std::size_t j = 0; j < cols.size(); ++j) {
        for (int r = 0; r < model_.n_classes; ++r)
          acc(r, cols[j]) += probs(r, static_cast<int>(j));
        ++used[cols[j]];
      }
    }
    for (int col = 0; col < mb; ++col) {
      if (used[col] == 0) {
        throw ConfigError("predict: sample " + std::to_string(batch[col]) +
                          " has every modality masked out");
      }
      for (int r = 0; r < model_.n_classes; ++r)
        acc(r, col) /= static_cast<double>(used[col]);
    }
    return argmax_cols(acc);
  }

  /// Concat-head baseline. A missing modality contributes a zero feature
  /// block: the concat classifier needs a fixed input width, so the memory
  /// path's skip semantics cannot apply here.
  std::vector<int> predict_joint(const MultimodalDataset& d,
                                 const std::vector<int>& batch,
                                 const MissingMask* mask) const {
    const int n = model_.n_modalities();
    std::vector<Tensor> feats;
    feats.reserve(n);
    for (int k = 0; k < n; ++k) {
      Tensor f = encode(model_.encoders[k], gather_columns(d.features[k], batch));
      if (mask != nullptr) {
        for (std::size_t j = 0; j < batch.size(); ++j) {
          if (mask->at(k, batch[j])) continue;
          for (int r = 0; r < model_.d_feat; ++r) f(r, static_cast<int>(j)) = 0.0;
        }
      }
      feats.push_back(std::move(f));
    }
    return argmax_cols(classify(*model_.concat_head,
                                fuse_baseline(FuseKind::concat, feats)));
  }

  const ModelParams& model_;
  double tau_;
  const MemoryState& memory_;
  int batch_size_;
};

// ---------------------------------------------------------------------------
// Missing-modality robustness sweep
// ---------------------------------------------------------------------------

struct RobustnessRow {
  double rate = 0.0;
  double mean_acc = 0.0;
  double std_acc = 0.0;
  int n_seeds = 0;
};

inline std::vector<RobustnessRow> robustness_sweep(
    const Evaluator& eval, const MultimodalDataset& d, Split split,
    const std::vector<double>& rates, const std::vector<std::uint64_t>& seeds,
    const InferenceChain& chain) {
  std::vector<RobustnessRow> rows;
  rows.reserve(rates.size());
  for (double rate : rates) {
    RobustnessRow row;
    row.rate = rate;
    row.n_seeds = static_cast<int>(seeds.size());
    std::vector<double> accs;
    accs.reserve(seeds.size());
    for (std::uint64_t seed : seeds) {
      const MissingMask mask = apply_missing(d, rate, seed);
      accs.push_back(eval.accuracy_percent(d, split, &mask, chain));
    }
    double mean = std::accumulate(accs.begin(), accs.end(), 0.0) / accs.size();
    double var = 0.0;
    for (double a : accs) var += (a - mean) * (a - mean);
    row.mean_acc = mean;
    row.std_acc = accs.size() > 1 ? std::sqrt(var / (accs.size() - 1)) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace modeq
