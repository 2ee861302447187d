#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modeq/autograd.hpp"
#include "modeq/errors.hpp"
#include "modeq/rng.hpp"
#include "modeq/tensor.hpp"

namespace modeq {

// ---------------------------------------------------------------------------
// Sample-level cross-modal correlation and filtering.
//
// correlation(Xi, Xj)[r][q] is the cosine similarity between sample r of the
// weaker modality and sample q of the stronger one, both taken within the
// current batch. Zero-norm columns produce zero rows/columns instead of NaN;
// callers may count them via `zero_norm_cols` and log once per batch.
// ---------------------------------------------------------------------------

inline Tensor correlation(const Tensor& xi, const Tensor& xj,
                          int* zero_norm_cols = nullptr) {
  require_same_shape(xi, xj, "correlation");
  int za = 0, zb = 0;
  const Tensor ui = normalize_columns(xi, &za);
  const Tensor uj = normalize_columns(xj, &zb);
  if (zero_norm_cols) *zero_norm_cols = za + zb;
  return matmul(transpose(ui), uj);
}

/// Entries <= tau are dropped (the strict `> tau` survives); the diagonal is
/// then forced to 1 so each sample always keeps its own features.
inline Tensor threshold_filter(const Tensor& c, double tau) {
  if (tau < 0.0 || tau > 1.0) {
    throw ConfigError("threshold_filter: tau " + std::to_string(tau) +
                      " outside [0, 1]");
  }
  Tensor out = c;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i] <= tau) out[i] = 0.0;
  return set_diag_one(std::move(out));
}

/// Aligned representation of the stronger modality: each output column mixes
/// stronger-modality features of the samples correlated with it.
inline Tensor align(const Tensor& xj, const Tensor& c_filtered) {
  return matmul(xj, c_filtered);
}

// ---------------------------------------------------------------------------
// Learnable gate: a 2-layer MLP scores the pair's correlation statistics and
// softly rescales the off-diagonal interactions instead of hard thresholding.
// ---------------------------------------------------------------------------

struct GateParams {
  Tensor w1, b1, w2, b2;  // hidden x 6, hidden x 1, 1 x hidden, 1 x 1

  static constexpr int kFeatures = 6;

  static GateParams init(int hidden, std::mt19937_64& rng) {
    GateParams g;
    g.w1 = normal_tensor({hidden, kFeatures}, rng, std::sqrt(2.0 / kFeatures));
    g.b1 = Tensor::zeros({hidden, 1});
    g.w2 = normal_tensor({1, hidden}, rng, std::sqrt(2.0 / hidden));
    g.b2 = Tensor::zeros({1, 1});
    return g;
  }
};

/// Batch-size-independent summary of (C, Xi, Xj): mean, max, row-mean vector
/// mean, fraction of positive entries, and the two mean column norms.
inline Tensor gate_features(const Tensor& c, const Tensor& xi, const Tensor& xj) {
  Tensor f({GateParams::kFeatures, 1});
  f(0, 0) = mean_all(c);
  f(1, 0) = max_all(c);
  f(2, 0) = mean_all(c);  // row-mean vector mean; coincides with the grand mean
  f(3, 0) = fraction_positive(c);
  f(4, 0) = mean_all(column_norms(xi));
  f(5, 0) = mean_all(column_norms(xj));
  return f;
}

inline double gate_score(const GateParams& p, const Tensor& features) {
  const Tensor h = relu(add_col_broadcast(matmul(p.w1, features), p.b1));
  const Tensor o = add_col_broadcast(matmul(p.w2, h), p.b2);
  return sigmoid(o).scalar_value();
}

/// g * C with the diagonal re-forced to 1 afterward, so self-features are
/// never attenuated.
inline Tensor learnable_gate(const Tensor& c, const Tensor& xi, const Tensor& xj,
                             const GateParams& p) {
  const double g = gate_score(p, gate_features(c, xi, xj));
  return set_diag_one(scale(c, g));
}

// ---------------------------------------------------------------------------
// Tape builders (same arithmetic as above, with gradients)
// ---------------------------------------------------------------------------

namespace tape_ops {

inline autograd::NodeId correlation(autograd::Tape& t, autograd::NodeId xi,
                                    autograd::NodeId xj) {
  require_same_shape(t.value(xi), t.value(xj), "correlation");
  const autograd::NodeId ui = autograd::col_normalize(t, xi);
  const autograd::NodeId uj = autograd::col_normalize(t, xj);
  return autograd::matmul(t, autograd::transpose(t, ui), uj);
}

inline autograd::NodeId threshold_filter(autograd::Tape& t, autograd::NodeId c,
                                         double tau) {
  if (tau < 0.0 || tau > 1.0) {
    throw ConfigError("threshold_filter: tau " + std::to_string(tau) +
                      " outside [0, 1]");
  }
  const Tensor& cv = t.value(c);
  Tensor keep = Tensor::zeros(cv.shape());
  for (std::size_t i = 0; i < cv.size(); ++i)
    if (cv[i] > tau) keep[i] = 1.0;
  return autograd::masked_keep_unit_diag(t, c, std::move(keep));
}

inline autograd::NodeId align(autograd::Tape& t, autograd::NodeId xj,
                              autograd::NodeId c_filtered) {
  return autograd::matmul(t, xj, c_filtered);
}

inline autograd::NodeId gate_features(autograd::Tape& t, autograd::NodeId c,
                                      autograd::NodeId xi, autograd::NodeId xj) {
  return autograd::stack_scalars(
      t, {autograd::mean_all(t, c), autograd::max_all(t, c),
          autograd::mean_all(t, c), autograd::fraction_positive(t, c),
          autograd::col_norm_mean(t, xi), autograd::col_norm_mean(t, xj)});
}

inline autograd::NodeId gate_score(autograd::Tape& t, const GateParams& p,
                                   autograd::NodeId features,
                                   const std::string& pname = "gate") {
  const autograd::NodeId w1 = t.param(pname + ".w1", p.w1);
  const autograd::NodeId b1 = t.param(pname + ".b1", p.b1);
  const autograd::NodeId w2 = t.param(pname + ".w2", p.w2);
  const autograd::NodeId b2 = t.param(pname + ".b2", p.b2);
  const autograd::NodeId h =
      autograd::relu(t, autograd::add_col(t, autograd::matmul(t, w1, features), b1));
  return autograd::sigmoid(
      t, autograd::add_col(t, autograd::matmul(t, w2, h), b2));
}

inline autograd::NodeId apply_gate(autograd::Tape& t, autograd::NodeId c,
                                   autograd::NodeId g) {
  return autograd::set_diag_one(t, autograd::mul_scalar_node(t, c, g));
}

}  // namespace tape_ops

}  // namespace modeq
