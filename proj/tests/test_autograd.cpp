#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "modeq/autograd.hpp"
#include "modeq/rng.hpp"
#include "modeq/tensor.hpp"

using namespace modeq;
namespace ag = modeq::autograd;

namespace {

constexpr double kFdTol = 1e-4;

}  // namespace

TEST_CASE("gradient of sum is all ones", "[autograd]") {
  auto rng = make_rng(1);
  ag::Tape t;
  const ag::NodeId x = t.leaf(normal_tensor({3, 4}, rng));
  const ag::NodeId loss = ag::sum_all(t, x);
  const ag::Gradients g = t.backward(loss);
  const Tensor* gx = g.node(x);
  REQUIRE(gx != nullptr);
  for (std::size_t i = 0; i < gx->size(); ++i) REQUIRE((*gx)[i] == 1.0);
}

TEST_CASE("gradient of sum of squares is 2x", "[autograd]") {
  ag::Tape t;
  const ag::NodeId x = t.leaf(Tensor({1, 3}, {1, 2, 3}));
  const ag::NodeId loss = ag::sum_all(t, ag::mul(t, x, x));
  const ag::Gradients g = t.backward(loss);
  const Tensor* gx = g.node(x);
  REQUIRE(gx != nullptr);
  REQUIRE((*gx)[0] == 2.0);
  REQUIRE((*gx)[1] == 4.0);
  REQUIRE((*gx)[2] == 6.0);
}

TEST_CASE("unreachable parameters get a zero gradient", "[autograd]") {
  ag::Tape t;
  const ag::NodeId x = t.param("x", Tensor::scalar(2.0));
  t.param("unused", Tensor::ones({2, 2}));
  const ag::NodeId loss = ag::sum_all(t, ag::mul(t, x, x));
  const ag::Gradients g = t.backward(loss);
  REQUIRE(g.param("x").scalar_value() == 4.0);
  const Tensor gu = g.param("unused");
  REQUIRE(gu.shape() == std::vector<int>{2, 2});
  for (std::size_t i = 0; i < gu.size(); ++i) REQUIRE(gu[i] == 0.0);
}

TEST_CASE("backward rejects nodes that are not on the tape", "[autograd]") {
  ag::Tape t;
  t.leaf(Tensor::scalar(1.0));
  REQUIRE_THROWS_AS(t.backward(42), TapeError);
  REQUIRE_THROWS_AS(t.backward(-1), TapeError);
}

TEST_CASE("backward rejects non-scalar losses", "[autograd]") {
  ag::Tape t;
  const ag::NodeId x = t.leaf(Tensor::ones({2, 2}));
  REQUIRE_THROWS_AS(t.backward(x), TapeError);
}

TEST_CASE("constants detach gradient flow", "[autograd]") {
  auto rng = make_rng(2);
  ag::Tape t;
  const ag::NodeId x = t.param("x", normal_tensor({2, 2}, rng));
  const ag::NodeId k = t.constant(normal_tensor({2, 2}, rng));
  const ag::NodeId loss = ag::sum_all(t, ag::mul(t, k, ag::add(t, x, k)));
  const ag::Gradients g = t.backward(loss);
  const Tensor gx = g.param("x");
  REQUIRE(gx == hadamard(Tensor::ones({2, 2}), t.value(k)));
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

TEST_CASE("finite differences agree on a quadratic", "[autograd]") {
  const auto f = [](ag::Tape& t, const std::vector<ag::NodeId>& p) {
    return ag::mul(t, p[0], p[0]);
  };
  const double err = ag::finite_difference_check(f, {Tensor::scalar(3.0)});
  REQUIRE(err < 1e-6);
}

TEST_CASE("finite differences on a constant function are exactly zero",
          "[autograd]") {
  const auto f = [](ag::Tape& t, const std::vector<ag::NodeId>&) {
    return t.constant(Tensor::scalar(7.0));
  };
  REQUIRE(ag::finite_difference_check(f, {Tensor::scalar(1.0)}) == 0.0);
}

TEST_CASE("every primitive passes finite differences on random inputs",
          "[autograd]") {
  auto rng = make_rng(99);
  // Losses are funnelled through mean_all against a fixed random cotangent
  // pattern via hadamard with a constant, exercising non-uniform upstreams.
  const auto run = [&](auto builder, std::vector<Tensor> params) {
    const double err = ag::finite_difference_check(builder, params);
    REQUIRE(err < kFdTol);
  };

  for (int trial = 0; trial < 100; ++trial) {
    const Tensor a = normal_tensor({3, 4}, rng);
    const Tensor b = normal_tensor({3, 4}, rng);
    const Tensor w = normal_tensor({2, 3}, rng, 0.7);
    const Tensor col = normal_tensor({3, 1}, rng);
    const Tensor probe = normal_tensor({3, 4}, rng);
    const Tensor probe2 = normal_tensor({2, 4}, rng);

    run([&](ag::Tape& t, const std::vector<ag::NodeId>& p) {
      const ag::NodeId c = t.constant(probe);
      return ag::mean_all(t, ag::mul(t, c, ag::add(t, p[0], p[1])));
    }, {a, b});

    run([&](ag::Tape& t, const std::vector<ag::NodeId>& p) {
      const ag::NodeId c = t.constant(probe);
      return ag::mean_all(t, ag::mul(t, c, ag::sub(t, p[0], p[1])));
    }, {a, b});

    run([&](ag::Tape& t, const std::vector<ag::NodeId>& p) {
      const ag::NodeId c = t.constant(probe);
      return ag::mean_all(t, ag::mul(t, c, ag::mul(t, p[0], p[1])));
    }, {a, b});

    run([&](ag::Tape& t, const std::vector<ag::NodeId>& p) {
      const ag::NodeId c = t.constant(probe2);
      return ag::mean_all(t, ag::mul(t, c, ag::matmul(t, p[0], p[1])));
    }, {w, a});

    run([&](ag::Tape& t, const std::vector<ag::NodeId>& p) {
      const ag::NodeId c = t.constant(probe);
      return ag::mean_all(
          t, ag::mul(t, c, ag::transpose(t, ag::transpose(t, p[0]))));
    }, {a});

    run([&](ag::Tape& t, const std::vector<ag::NodeId>& p) {
      const ag::NodeId c = t.constant(probe);
      return ag::mean_all(t, ag::mul(t, c, ag::sigmoid(t, p[0])));
    }, {a});

    run([&](ag::Tape& t, const std::vector<ag::NodeId>& p) {
      const ag::NodeId c = t.constant(probe);
      return ag::mean_all(t, ag::mul(t, c, ag::tanh_op(t, p[0])));
    }, {a});

    run([&](ag::Tape& t, const std::vector<ag::NodeId>& p) {
      const ag::NodeId c = t.constant(probe);
      return ag::mean_all(t, ag::mul(t, c, ag::relu(t, p[0])));
    }, {a});

    run([&](ag::Tape& t, const std::vector<ag::NodeId>& p) {
      const ag::NodeId c = t.constant(concat_rows(probe, probe));
      return ag::mean_all(t, ag::mul(t, c, ag::concat_rows(t, p[0], p[1])));
    }, {a, b});

    run([&](ag::Tape& t, const std::vector<ag::NodeId>& p) {
      const ag::NodeId c = t.constant(probe);
      return ag::mean_all(t, ag::mul(t, c, ag::add_col(t, p[0], p[1])));
    }, {a, col});

    run([&](ag::Tape& t, const std::vector<ag::NodeId>& p) {
      const ag::NodeId c = t.constant(probe);
      return ag::mean_all(t, ag::mul(t, c, ag::col_normalize(t, p[0])));
    }, {a});

    run([&](ag::Tape& t, const std::vector<ag::NodeId>& p) {
      return ag::col_norm_mean(t, p[0]);
    }, {a});

    run([&](ag::Tape& t, const std::vector<ag::NodeId>& p) {
      const ag::NodeId s = ag::mean_all(t, p[1]);
      const ag::NodeId c = t.constant(probe);
      return ag::mean_all(t, ag::mul(t, c, ag::mul_scalar_node(t, p[0], s)));
    }, {a, b});

    run([&](ag::Tape& t, const std::vector<ag::NodeId>& p) {
      return ag::mean_all(t, ag::stack_scalars(t, {ag::mean_all(t, p[0]),
                                                   ag::sum_all(t, p[1])}));
    }, {a, b});

    const std::vector<int> labels{1, 0, 2, 1};
    run([&](ag::Tape& t, const std::vector<ag::NodeId>& p) {
      return ag::softmax_cross_entropy(t, ag::transpose(t, p[0]), labels);
    }, {a});
  }
}

TEST_CASE("max_all routes gradient to the unique maximizer", "[autograd]") {
  // Away from ties, max is differentiable; central differences agree.
  const Tensor x = Tensor::matrix({{0.3, 1.7}, {-0.5, 0.9}});
  const double err = ag::finite_difference_check(
      [](ag::Tape& t, const std::vector<ag::NodeId>& p) {
        return ag::max_all(t, p[0]);
      },
      {x});
  REQUIRE(err < 1e-6);
}
