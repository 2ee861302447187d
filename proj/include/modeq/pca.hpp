#pragma once

#include <cmath>
#include <vector>

#include "modeq/tensor.hpp"

namespace modeq {

struct PcaResult {
  Tensor components;            // d x k, orthonormal columns
  std::vector<double> eigenvalues;
  Tensor projected;             // k x m
  bool degenerate = false;      // zero covariance: projections are all zeros
};

/// Top-k PCA of column-samples via power iteration with deflation on the
/// centered covariance. Deterministic start vector; components are
/// re-orthogonalized against earlier ones every iteration.
inline PcaResult pca_project(const Tensor& x, int k = 2, int max_iters = 1000,
                             double tol = 1e-12) {
  const int d = x.rows(), m = x.cols();
  PcaResult res;
  res.components = Tensor::zeros({d, k});
  res.eigenvalues.assign(k, 0.0);
  res.projected = Tensor::zeros({k, m});

  const Tensor mean = mean_column(x);
  Tensor centered = x;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < m; ++j) centered(i, j) -= mean(i, 0);

  Tensor cov({d, d});
  const double denom = m > 1 ? static_cast<double>(m - 1) : 1.0;
  for (int i = 0; i < d; ++i) {
    for (int j = i; j < d; ++j) {
      double s = 0.0;
      for (int q = 0; q < m; ++q) s += centered(i, q) * centered(j, q);
      cov(i, j) = s / denom;
      cov(j, i) = cov(i, j);
    }
  }

  double trace = 0.0;
  for (int i = 0; i < d; ++i) trace += cov(i, i);
  if (trace <= 1e-300) {
    res.degenerate = true;
    return res;
  }

  std::vector<Tensor> comps;
  for (int c = 0; c < k; ++c) {
    // Deterministic, non-degenerate start: a ramp keeps it off axis-aligned
    // eigenvector traps.
    Tensor v({d, 1});
    for (int i = 0; i < d; ++i) v(i, 0) = 1.0 + 0.01 * (i + 1) * (c + 1);
    double norm = std::sqrt(sum_all(hadamard(v, v)));
    v = scale(v, 1.0 / norm);

    double lambda = 0.0;
    for (int it = 0; it < max_iters; ++it) {
      Tensor w = matmul(cov, v);
      for (const Tensor& prev : comps) {
        double dot = 0.0;
        for (int i = 0; i < d; ++i) dot += w(i, 0) * prev(i, 0);
        for (int i = 0; i < d; ++i) w(i, 0) -= dot * prev(i, 0);
      }
      const double wnorm = std::sqrt(sum_all(hadamard(w, w)));
      if (wnorm <= 1e-300) break;  // subspace exhausted
      w = scale(w, 1.0 / wnorm);
      double diff = 0.0;
      for (int i = 0; i < d; ++i) diff = std::max(diff, std::abs(w(i, 0) - v(i, 0)));
      v = w;
      lambda = wnorm;
      if (diff < tol) break;
    }
    comps.push_back(v);
    res.eigenvalues[c] = lambda;
    for (int i = 0; i < d; ++i) res.components(i, c) = v(i, 0);
  }

  res.projected = matmul(transpose(res.components), centered);
  return res;
}

}  // namespace modeq
