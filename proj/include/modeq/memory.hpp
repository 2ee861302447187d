#pragma once

#include <string>
#include <utility>

#include "modeq/autograd.hpp"
#include "modeq/rng.hpp"
#include "modeq/tensor.hpp"

namespace modeq {

/// Gated cross-modal memory cell. Bias-free: every gate is a single matrix
/// applied to the concatenation of the carried representation and the aligned
/// stronger-modality features.
struct MemoryCellParams {
  Tensor wf, wi, wo, wg;  // each d_feat x 2*d_feat

  static MemoryCellParams init(int d_feat, std::mt19937_64& rng) {
    MemoryCellParams p;
    const double s = 1.0 / std::sqrt(2.0 * d_feat);
    p.wf = normal_tensor({d_feat, 2 * d_feat}, rng, s);
    p.wi = normal_tensor({d_feat, 2 * d_feat}, rng, s);
    p.wo = normal_tensor({d_feat, 2 * d_feat}, rng, s);
    p.wg = normal_tensor({d_feat, 2 * d_feat}, rng, s);
    return p;
  }
};

/// Cross-epoch memory: `carry` is an exponential moving average of the
/// batch-mean context vector, broadcast as the initial context of every
/// sample at the start of an epoch. Starts at zero.
struct MemoryState {
  Tensor carry;      // d_feat x 1
  double ema_decay;  // in (0, 1]

  static MemoryState initial(int d_feat, double ema_decay) {
    return MemoryState{Tensor::zeros({d_feat, 1}), ema_decay};
  }
};

struct FuseResult {
  Tensor h;  // fused representation for the stronger modality
  Tensor c;  // updated context
};

/// One memory step: z = [H_i ; X^_j]; f,i,o = sigmoid(W z); g~ = tanh(W_g z);
/// c' = f.c + i.g~; H_j = o.tanh(c').
inline FuseResult fuse_step(const MemoryCellParams& p, const Tensor& h_i,
                            const Tensor& xj_aligned, const Tensor& c_prev) {
  require_same_shape(h_i, xj_aligned, "fuse_step");
  require_same_shape(h_i, c_prev, "fuse_step");
  const Tensor z = concat_rows(h_i, xj_aligned);
  const Tensor f = sigmoid(matmul(p.wf, z));
  const Tensor i = sigmoid(matmul(p.wi, z));
  const Tensor o = sigmoid(matmul(p.wo, z));
  const Tensor g = tanh_elem(matmul(p.wg, z));
  const Tensor c_new = add(hadamard(f, c_prev), hadamard(i, g));
  return FuseResult{hadamard(o, tanh_elem(c_new)), c_new};
}

/// Initial per-sample context for a pass: the carry broadcast over columns.
inline Tensor init_epoch_memory(const MemoryState& state, int m) {
  return broadcast_column(state.carry, m);
}

/// carry <- decay * carry + (1 - decay) * column-mean(c_final).
inline void update_carry(MemoryState& state, const Tensor& c_final) {
  state.carry = add(scale(state.carry, state.ema_decay),
                    scale(mean_column(c_final), 1.0 - state.ema_decay));
}

namespace tape_ops {

struct FuseNodes {
  autograd::NodeId h;
  autograd::NodeId c;
};

inline FuseNodes fuse_step(autograd::Tape& t, const MemoryCellParams& p,
                           autograd::NodeId h_i, autograd::NodeId xj_aligned,
                           autograd::NodeId c_prev,
                           const std::string& pname = "cell") {
  namespace ag = autograd;
  const ag::NodeId wf = t.param(pname + ".wf", p.wf);
  const ag::NodeId wi = t.param(pname + ".wi", p.wi);
  const ag::NodeId wo = t.param(pname + ".wo", p.wo);
  const ag::NodeId wg = t.param(pname + ".wg", p.wg);
  const ag::NodeId z = ag::concat_rows(t, h_i, xj_aligned);
  const ag::NodeId f = ag::sigmoid(t, ag::matmul(t, wf, z));
  const ag::NodeId i = ag::sigmoid(t, ag::matmul(t, wi, z));
  const ag::NodeId o = ag::sigmoid(t, ag::matmul(t, wo, z));
  const ag::NodeId g = ag::tanh_op(t, ag::matmul(t, wg, z));
  const ag::NodeId c_new = ag::add(t, ag::mul(t, f, c_prev), ag::mul(t, i, g));
  return FuseNodes{ag::mul(t, o, ag::tanh_op(t, c_new)), c_new};
}

}  // namespace tape_ops

}  // namespace modeq
