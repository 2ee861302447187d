#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "modeq/pca.hpp"
#include "modeq/rng.hpp"

using namespace modeq;

TEST_CASE("pca components are orthonormal and satisfy the eigen equation",
          "[pca]") {
  auto rng = make_rng(1);
  const Tensor x = normal_tensor({8, 40}, rng);
  const PcaResult r = pca_project(x, 2);
  REQUIRE_FALSE(r.degenerate);

  double n0 = 0.0, n1 = 0.0, dot = 0.0;
  for (int i = 0; i < 8; ++i) {
    n0 += r.components(i, 0) * r.components(i, 0);
    n1 += r.components(i, 1) * r.components(i, 1);
    dot += r.components(i, 0) * r.components(i, 1);
  }
  REQUIRE_THAT(n0, Catch::Matchers::WithinAbs(1.0, 1e-8));
  REQUIRE_THAT(n1, Catch::Matchers::WithinAbs(1.0, 1e-8));
  REQUIRE_THAT(dot, Catch::Matchers::WithinAbs(0.0, 1e-8));

  // Eigen-solver oracle: residual || C v - lambda v || should vanish.
  const Tensor mean = mean_column(x);
  Tensor centered = x;
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 40; ++j) centered(i, j) -= mean(i, 0);
  const Tensor cov = scale(matmul(centered, transpose(centered)), 1.0 / 39.0);
  for (int c = 0; c < 2; ++c) {
    Tensor v({8, 1});
    for (int i = 0; i < 8; ++i) v(i, 0) = r.components(i, c);
    const Tensor cv = matmul(cov, v);
    for (int i = 0; i < 8; ++i) {
      REQUIRE_THAT(cv(i, 0),
                   Catch::Matchers::WithinAbs(r.eigenvalues[c] * v(i, 0), 1e-6));
    }
  }
  REQUIRE(r.eigenvalues[0] >= r.eigenvalues[1]);
}

TEST_CASE("identical samples project to zero with the degenerate flag", "[pca]") {
  const Tensor x = Tensor::full({5, 12}, 3.25);
  const PcaResult r = pca_project(x, 2);
  REQUIRE(r.degenerate);
  for (std::size_t i = 0; i < r.projected.size(); ++i) {
    REQUIRE(r.projected[i] == 0.0);
  }
}

TEST_CASE("pca recovers a planted dominant direction", "[pca]") {
  auto rng = make_rng(2);
  // Strong variance along e0, weak noise elsewhere.
  Tensor x({6, 50});
  std::normal_distribution<double> big(0.0, 10.0), small(0.0, 0.1);
  for (int j = 0; j < 50; ++j) {
    x(0, j) = big(rng);
    for (int i = 1; i < 6; ++i) x(i, j) = small(rng);
  }
  const PcaResult r = pca_project(x, 2);
  REQUIRE(std::abs(r.components(0, 0)) > 0.99);
}
