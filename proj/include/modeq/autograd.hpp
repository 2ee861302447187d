#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "modeq/errors.hpp"
#include "modeq/tensor.hpp"

namespace modeq::autograd {

class Tape;

using NodeId = std::int32_t;

/// Local vector-Jacobian product: given the upstream gradient of `self`,
/// produce the gradient contribution for one parent. Forward values are read
/// back off the tape, so closures only capture node ids.
using Vjp = std::function<Tensor(const Tape&, NodeId self, const Tensor& upstream)>;

struct Edge {
  NodeId parent;
  Vjp vjp;
};

class Gradients;

/// Append-only record of one forward computation. Rebuilt per forward pass;
/// backward replays the recorded operations in exact reverse order.
class Tape {
 public:
  /// Untracked value: gradients never flow into it.
  NodeId constant(Tensor value) { return push(std::move(value), {}, false); }

  /// Tracked leaf (an optimization variable or a gradcheck input).
  NodeId leaf(Tensor value) { return push(std::move(value), {}, true); }

  /// Tracked leaf registered under a parameter name. The same name may be
  /// registered several times in one pass (e.g. a shared classifier applied
  /// in every sub-step); Gradients::param sums over all registrations.
  NodeId param(const std::string& name, const Tensor& value) {
    NodeId id = leaf(value);
    params_.emplace_back(name, id);
    return id;
  }

  /// Result of a primitive applied to existing nodes.
  NodeId record(Tensor value, std::vector<Edge> edges) {
    bool tracked = false;
    for (const auto& e : edges) {
      check_id(e.parent, "record");
      if (nodes_[e.parent].tracked) tracked = true;
    }
    if (!tracked) edges.clear();
    return push(std::move(value), std::move(edges), tracked);
  }

  const Tensor& value(NodeId id) const {
    check_id(id, "value");
    return nodes_[id].value;
  }

  bool tracked(NodeId id) const {
    check_id(id, "tracked");
    return nodes_[id].tracked;
  }

  std::size_t size() const { return nodes_.size(); }

  const std::vector<std::pair<std::string, NodeId>>& params() const { return params_; }

  Gradients backward(NodeId loss) const;

 private:
  friend class Gradients;

  struct Node {
    Tensor value;
    std::vector<Edge> edges;
    bool tracked;
  };

  NodeId push(Tensor value, std::vector<Edge> edges, bool tracked) {
    nodes_.push_back(Node{std::move(value), std::move(edges), tracked});
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  void check_id(NodeId id, const char* op) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
      throw TapeError(std::string(op) + ": node " + std::to_string(id) +
                      " is not on this tape");
    }
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, NodeId>> params_;
};

/// Per-node gradients from one backward pass, plus name-keyed access for
/// registered parameters.
class Gradients {
 public:
  /// Gradient of the loss w.r.t. a node, or nullptr if no path reached it.
  const Tensor* node(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= grads_.size()) return nullptr;
    return grads_[id].has_value() ? &*grads_[id] : nullptr;
  }

  /// Gradient for a registered parameter, summed over all registrations.
  /// Parameters unreachable from the loss get an all-zero gradient.
  Tensor param(const std::string& name) const {
    std::optional<Tensor> acc;
    for (const auto& [pname, id] : tape_->params_) {
      if (pname != name) continue;
      if (!acc) acc = Tensor::zeros(tape_->nodes_[id].value.shape());
      if (grads_[id]) *acc = modeq::add(*acc, *grads_[id]);
    }
    if (!acc) throw TapeError("param: no parameter named '" + name + "' on tape");
    return *acc;
  }

 private:
  friend class Tape;
  Gradients(const Tape* tape, std::vector<std::optional<Tensor>> grads)
      : tape_(tape), grads_(std::move(grads)) {}

  const Tape* tape_;
  std::vector<std::optional<Tensor>> grads_;
};

inline Gradients Tape::backward(NodeId loss) const {
  check_id(loss, "backward");
  if (!nodes_[loss].value.is_scalar()) {
    throw TapeError("backward: loss node has shape " +
                    nodes_[loss].value.shape_str() + ", expected a scalar");
  }
  std::vector<std::optional<Tensor>> grads(nodes_.size());
  grads[loss] = Tensor::ones(nodes_[loss].value.shape());
  for (NodeId id = loss; id >= 0; --id) {
    if (!grads[id]) continue;
    for (const auto& e : nodes_[id].edges) {
      if (!nodes_[e.parent].tracked) continue;
      Tensor g = e.vjp(*this, id, *grads[id]);
      if (!g.same_shape(nodes_[e.parent].value)) {
        throw TapeError("backward: gradient shape " + g.shape_str() +
                        " does not match node shape " +
                        nodes_[e.parent].value.shape_str());
      }
      if (grads[e.parent]) {
        *grads[e.parent] = modeq::add(*grads[e.parent], g);
      } else {
        grads[e.parent] = std::move(g);
      }
    }
  }
  return Gradients(this, std::move(grads));
}

// ---------------------------------------------------------------------------
// Primitive operations
// ---------------------------------------------------------------------------

inline NodeId add(Tape& t, NodeId a, NodeId b) {
  return t.record(modeq::add(t.value(a), t.value(b)),
                  {{a, [](const Tape&, NodeId, const Tensor& g) { return g; }},
                   {b, [](const Tape&, NodeId, const Tensor& g) { return g; }}});
}

inline NodeId sub(Tape& t, NodeId a, NodeId b) {
  return t.record(modeq::sub(t.value(a), t.value(b)),
                  {{a, [](const Tape&, NodeId, const Tensor& g) { return g; }},
                   {b, [](const Tape&, NodeId, const Tensor& g) {
                      return modeq::scale(g, -1.0);
                    }}});
}

inline NodeId mul(Tape& t, NodeId a, NodeId b) {
  return t.record(hadamard(t.value(a), t.value(b)),
                  {{a, [b](const Tape& tp, NodeId, const Tensor& g) {
                      return hadamard(g, tp.value(b));
                    }},
                   {b, [a](const Tape& tp, NodeId, const Tensor& g) {
                      return hadamard(g, tp.value(a));
                    }}});
}

inline NodeId scale(Tape& t, NodeId a, double c) {
  return t.record(modeq::scale(t.value(a), c),
                  {{a, [c](const Tape&, NodeId, const Tensor& g) {
                     return modeq::scale(g, c);
                   }}});
}

inline NodeId matmul(Tape& t, NodeId a, NodeId b) {
  return t.record(modeq::matmul(t.value(a), t.value(b)),
                  {{a, [b](const Tape& tp, NodeId, const Tensor& g) {
                      return modeq::matmul(g, modeq::transpose(tp.value(b)));
                    }},
                   {b, [a](const Tape& tp, NodeId, const Tensor& g) {
                      return modeq::matmul(modeq::transpose(tp.value(a)), g);
                    }}});
}

inline NodeId transpose(Tape& t, NodeId a) {
  return t.record(modeq::transpose(t.value(a)),
                  {{a, [](const Tape&, NodeId, const Tensor& g) {
                     return modeq::transpose(g);
                   }}});
}

inline NodeId sigmoid(Tape& t, NodeId a) {
  return t.record(modeq::sigmoid(t.value(a)),
                  {{a, [](const Tape& tp, NodeId self, const Tensor& g) {
                      const Tensor& y = tp.value(self);
                      Tensor out = g;
                      for (std::size_t i = 0; i < out.size(); ++i)
                        out[i] *= y[i] * (1.0 - y[i]);
                      return out;
                    }}});
}

inline NodeId tanh_op(Tape& t, NodeId a) {
  return t.record(tanh_elem(t.value(a)),
                  {{a, [](const Tape& tp, NodeId self, const Tensor& g) {
                      const Tensor& y = tp.value(self);
                      Tensor out = g;
                      for (std::size_t i = 0; i < out.size(); ++i)
                        out[i] *= 1.0 - y[i] * y[i];
                      return out;
                    }}});
}

inline NodeId relu(Tape& t, NodeId a) {
  return t.record(modeq::relu(t.value(a)),
                  {{a, [](const Tape& tp, NodeId self, const Tensor& g) {
                      const Tensor& y = tp.value(self);
                      Tensor out = g;
                      for (std::size_t i = 0; i < out.size(); ++i)
                        if (y[i] <= 0.0) out[i] = 0.0;
                      return out;
                    }}});
}

inline NodeId pointwise(Tape& t, Pointwise op, NodeId a) {
  switch (op) {
    case Pointwise::sigmoid: return sigmoid(t, a);
    case Pointwise::tanh: return tanh_op(t, a);
    case Pointwise::relu: return relu(t, a);
  }
  throw ConfigError("pointwise: unknown op");
}

inline NodeId concat_rows(Tape& t, NodeId a, NodeId b) {
  const int top = t.value(a).rows();
  return t.record(modeq::concat_rows(t.value(a), t.value(b)),
                  {{a, [top](const Tape&, NodeId, const Tensor& g) {
                      return split_rows(g, top).first;
                    }},
                   {b, [top](const Tape&, NodeId, const Tensor& g) {
                      return split_rows(g, top).second;
                    }}});
}

inline NodeId add_col(Tape& t, NodeId m, NodeId col) {
  return t.record(add_col_broadcast(t.value(m), t.value(col)),
                  {{m, [](const Tape&, NodeId, const Tensor& g) { return g; }},
                   {col, [](const Tape&, NodeId, const Tensor& g) {
                      Tensor out({g.rows(), 1});
                      for (int i = 0; i < g.rows(); ++i)
                        for (int j = 0; j < g.cols(); ++j) out(i, 0) += g(i, j);
                      return out;
                    }}});
}

/// Columns scaled to unit norm. Zero-norm columns map to zero and receive a
/// zero gradient.
inline NodeId col_normalize(Tape& t, NodeId x) {
  return t.record(normalize_columns(t.value(x)),
                  {{x, [x](const Tape& tp, NodeId self, const Tensor& g) {
                      const Tensor& in = tp.value(x);
                      const Tensor& u = tp.value(self);
                      Tensor norms = column_norms(in);
                      Tensor out({in.rows(), in.cols()});
                      for (int j = 0; j < in.cols(); ++j) {
                        const double n = norms(0, j);
                        if (n == 0.0) continue;
                        double dot = 0.0;
                        for (int i = 0; i < in.rows(); ++i) dot += g(i, j) * u(i, j);
                        for (int i = 0; i < in.rows(); ++i)
                          out(i, j) = (g(i, j) - dot * u(i, j)) / n;
                      }
                      return out;
                    }}});
}

/// Entries kept where `keep` is nonzero, then the diagonal is forced to 1.
/// The diagonal is a constant of the output, so its upstream gradient does
/// not propagate.
inline NodeId masked_keep_unit_diag(Tape& t, NodeId c, Tensor keep) {
  const Tensor& cv = t.value(c);
  require_same_shape(cv, keep, "masked_keep_unit_diag");
  Tensor out = set_diag_one(hadamard(cv, keep));
  return t.record(std::move(out),
                  {{c, [keep](const Tape&, NodeId, const Tensor& g) {
                      Tensor out = hadamard(g, keep);
                      for (int i = 0; i < out.rows(); ++i) out(i, i) = 0.0;
                      return out;
                    }}});
}

/// Whole tensor scaled by a 1x1 node, both tracked.
inline NodeId mul_scalar_node(Tape& t, NodeId a, NodeId s) {
  const double sv = t.value(s).scalar_value();
  return t.record(modeq::scale(t.value(a), sv),
                  {{a, [sv](const Tape&, NodeId, const Tensor& g) {
                      return modeq::scale(g, sv);
                    }},
                   {s, [a](const Tape& tp, NodeId, const Tensor& g) {
                      double acc = 0.0;
                      const Tensor& av = tp.value(a);
                      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
                      return Tensor::scalar(acc);
                    }}});
}

/// Square matrix with the diagonal forced to 1.
inline NodeId set_diag_one(Tape& t, NodeId c) {
  return t.record(modeq::set_diag_one(t.value(c)),
                  {{c, [](const Tape&, NodeId, const Tensor& g) {
                      Tensor out = g;
                      for (int i = 0; i < out.rows(); ++i) out(i, i) = 0.0;
                      return out;
                    }}});
}

inline NodeId sum_all(Tape& t, NodeId a) {
  return t.record(Tensor::scalar(modeq::sum_all(t.value(a))),
                  {{a, [a](const Tape& tp, NodeId, const Tensor& g) {
                      return Tensor::full(tp.value(a).shape(), g.scalar_value());
                    }}});
}

inline NodeId mean_all(Tape& t, NodeId a) {
  return t.record(Tensor::scalar(modeq::mean_all(t.value(a))),
                  {{a, [a](const Tape& tp, NodeId, const Tensor& g) {
                      const Tensor& av = tp.value(a);
                      return Tensor::full(av.shape(),
                                          g.scalar_value() / static_cast<double>(av.size()));
                    }}});
}

/// Maximum entry. Subgradient: all upstream mass to the first maximizer.
inline NodeId max_all(Tape& t, NodeId a) {
  return t.record(Tensor::scalar(modeq::max_all(t.value(a))),
                  {{a, [a](const Tape& tp, NodeId, const Tensor& g) {
                      const Tensor& av = tp.value(a);
                      std::size_t best = 0;
                      for (std::size_t i = 1; i < av.size(); ++i)
                        if (av[i] > av[best]) best = i;
                      Tensor out = Tensor::zeros(av.shape());
                      out[best] = g.scalar_value();
                      return out;
                    }}});
}

/// Fraction of strictly positive entries. Piecewise constant, so it enters
/// the tape as an untracked value (zero gradient almost everywhere).
inline NodeId fraction_positive(Tape& t, NodeId a) {
  return t.constant(Tensor::scalar(modeq::fraction_positive(t.value(a))));
}

/// Mean Euclidean column norm, as a 1x1 node.
inline NodeId col_norm_mean(Tape& t, NodeId x) {
  const Tensor norms = column_norms(t.value(x));
  return t.record(Tensor::scalar(modeq::mean_all(norms)),
                  {{x, [x](const Tape& tp, NodeId, const Tensor& g) {
                      const Tensor& in = tp.value(x);
                      const Tensor n = column_norms(in);
                      const double gs = g.scalar_value() / in.cols();
                      Tensor out({in.rows(), in.cols()});
                      for (int j = 0; j < in.cols(); ++j) {
                        if (n(0, j) == 0.0) continue;
                        for (int i = 0; i < in.rows(); ++i)
                          out(i, j) = gs * in(i, j) / n(0, j);
                      }
                      return out;
                    }}});
}

/// k scalar nodes stacked into a k x 1 column.
inline NodeId stack_scalars(Tape& t, const std::vector<NodeId>& parts) {
  Tensor v({static_cast<int>(parts.size()), 1});
  std::vector<Edge> edges;
  edges.reserve(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    v(static_cast<int>(i), 0) = t.value(parts[i]).scalar_value();
    edges.push_back({parts[i], [i](const Tape&, NodeId, const Tensor& g) {
                       return Tensor::scalar(g(static_cast<int>(i), 0));
                     }});
  }
  return t.record(std::move(v), std::move(edges));
}

/// Mean cross entropy of sample-major logits (m x K) against integer labels.
inline NodeId softmax_cross_entropy(Tape& t, NodeId logits,
                                    const std::vector<int>& labels) {
  const double loss = cross_entropy_mean(t.value(logits), labels);
  return t.record(Tensor::scalar(loss),
                  {{logits, [logits, labels](const Tape& tp, NodeId, const Tensor& g) {
                      return modeq::scale(cross_entropy_grad(tp.value(logits), labels),
                                          g.scalar_value());
                    }}});
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

/// Builds a scalar loss node from tracked leaves holding the given parameters.
using ScalarGraphBuilder =
    std::function<NodeId(Tape&, const std::vector<NodeId>& params)>;

/// Compares tape gradients of `f` against central finite differences over
/// every parameter coordinate. Returns the maximum relative error
/// |analytic - numeric| / (|analytic| + 1e-8). The numeric side only uses
/// forward evaluations, so it stays independent of the backward machinery it
/// checks.
inline double finite_difference_check(const ScalarGraphBuilder& f,
                                      const std::vector<Tensor>& params,
                                      double step = 1e-5) {
  const auto eval = [&f](const std::vector<Tensor>& p) {
    Tape t;
    std::vector<NodeId> ids;
    ids.reserve(p.size());
    for (const Tensor& v : p) ids.push_back(t.leaf(v));
    const double value = t.value(f(t, ids)).scalar_value();
    if (!std::isfinite(value)) {
      throw NumericError("finite_difference_check: non-finite loss value");
    }
    return value;
  };

  // Analytic pass.
  Tape t;
  std::vector<NodeId> ids;
  ids.reserve(params.size());
  for (const Tensor& v : params) ids.push_back(t.leaf(v));
  const NodeId loss = f(t, ids);
  if (!std::isfinite(t.value(loss).scalar_value())) {
    throw NumericError("finite_difference_check: non-finite loss value");
  }
  const Gradients grads = t.backward(loss);

  double max_rel = 0.0;
  std::vector<Tensor> work = params;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor* gk = grads.node(ids[k]);
    for (std::size_t c = 0; c < params[k].size(); ++c) {
      const double orig = work[k][c];
      work[k][c] = orig + step;
      const double fp = eval(work);
      work[k][c] = orig - step;
      const double fm = eval(work);
      work[k][c] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double analytic = gk ? (*gk)[c] : 0.0;
      const double rel = std::abs(analytic - numeric) / (std::abs(analytic) + 1e-8);
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace modeq::autograd
