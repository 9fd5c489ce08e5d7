#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace dbp;
using fixtures::random_tensor;

namespace {

Network scalar_net(double w, double b, Activation g = Activation::identity()) {
  Layer l{BilinearOperator::make_dense({1}, 1), Tensor::matrix(1, 1, {w}), Tensor::vector({b}),
          g};
  return Network({std::move(l)});
}

double parameter_norm(const Network& n) {
  double s = 0.0;
  for (const auto& l : n.layers()) s += l.theta.squared_norm() + l.bias.squared_norm();
  return s;
}

}  // namespace

TEST(FiniteDiff, QuadraticParameterNorm) {
  const Network net = scalar_net(3.0, 0.0);
  const FDGradient g = finite_diff_param_grad(net, Tensor::vector({1}), parameter_norm);
  EXPECT_NEAR(g.grads.layers[0].theta[0], 6.0, 1e-9);
  EXPECT_NEAR(g.grads.layers[0].bias[0], 0.0, 1e-12);
  EXPECT_EQ(g.skipped_count(), 0u);
}

TEST(FiniteDiff, ConstantFunctionIsZero) {
  const Network net = build_network(
      test_architecture(3, Activation::tanh(), Activation::softmax(), 3, true, 1));
  const FDGradient g =
      finite_diff_param_grad(net, test_example(net, 1).first, [](const Network&) { return 4.5; });
  for (double v : g.grads.flatten()) EXPECT_EQ(v, 0.0);
}

TEST(FiniteDiff, SecondOrderAccuracyOnCubic) {
  const auto f = [](const Tensor& t) { return t[0] * t[0] * t[0]; };
  const Tensor at = Tensor::vector({1.3});
  const double exact = 3 * 1.3 * 1.3;
  const double e1 = std::abs(finite_diff_gradient(f, at, 1e-2)[0] - exact);
  const double e2 = std::abs(finite_diff_gradient(f, at, 5e-3)[0] - exact);
  EXPECT_NEAR(e1 / e2, 4.0, 0.8);
}

TEST(FiniteDiff, RejectsNonPositiveEpsilon) {
  const auto f = [](const Tensor& t) { return t[0]; };
  EXPECT_THROW((void)finite_diff_gradient(f, Tensor::vector({1}), 0.0), std::invalid_argument);
  EXPECT_THROW((void)finite_diff_param_grad(scalar_net(1, 0), Tensor::vector({1}),
                                            parameter_norm, FDConfig{-1e-5}),
               std::invalid_argument);
}

TEST(FiniteDiff, SkipsCoordinatesNearAKink) {
  // z = w x + b = 5e-5 sits inside the skip radius for b; moving w by the
  // radius only shifts z by 5e-9
  NetworkConfig c;
  c.input = {1};
  c.layers = {{OperatorKind::dense, 1, 0, 0, Activation::relu()},
              {OperatorKind::dense, 1, 0, 0, Activation::identity()}};
  Network net = build_architecture(c);
  net.layer(0).theta[0] = 1.0;
  net.layer(1).theta[0] = 2.0;
  const Tensor x = Tensor::vector({5e-5});
  const FDGradient g = finite_diff_param_grad(
      net, x, [&](const Network& n) { return forward(n, x).output()[0]; });
  EXPECT_EQ(g.skipped, (std::vector<bool>{false, true, false, false}));
  // away from the kink nothing is skipped
  const FDGradient h = finite_diff_param_grad(
      net, Tensor::vector({1}), [&](const Network& n) { return forward(n, x).output()[0]; });
  EXPECT_EQ(h.skipped_count(), 0u);
}

TEST(FiniteDiff, RelativeErrorIgnoresSkipped) {
  const Network net = scalar_net(1, 0);
  GradientSet a = GradientSet::zeros(net), b = GradientSet::zeros(net);
  a.layers[0].theta[0] = 100.0;
  b.layers[0].bias[0] = 2.0;
  a.layers[0].bias[0] = 2.1;
  EXPECT_NEAR(relative_error(a, b, {true, false}), 0.05, 1e-12);
  EXPECT_EQ(relative_error(b, b), 0.0);
  EXPECT_EQ(relative_error(Tensor({3}), Tensor({3})), 0.0);
}

TEST(BruteForceJacobian, LinearNetIsWeightMatrix) {
  Rng rng(2);
  const Tensor w = random_tensor(rng, {4, 6});
  const Network net = fixtures::dense_identity_net(w);
  const JacobianPair jp = brute_force_jacobian(net, random_tensor(rng, {6}));
  EXPECT_LE((jp.by_rows - w).max_abs(), 0.0);
  EXPECT_LE((jp.by_columns - w).max_abs(), 1e-9);
}

TEST(BruteForceJacobian, TwoLinearLayersGiveProduct) {
  NetworkConfig c;
  c.input = {3};
  c.seed = 9;
  c.layers = {{OperatorKind::dense, 5, 0, 0, Activation::identity()},
              {OperatorKind::dense, 2, 0, 0, Activation::identity()}};
  const Network net = build_network(c);
  const Tensor& w1 = net.layer(0).theta;
  const Tensor& w2 = net.layer(1).theta;
  Tensor prod({2, 3});
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t m = 0; m < 5; ++m) prod(r, k) += w2(r, m) * w1(m, k);
  const JacobianPair jp = brute_force_jacobian(net, Tensor::vector({1, -2, 0.5}));
  EXPECT_LE((jp.by_rows - prod).max_abs(), 1e-14);
  EXPECT_LE((jp.by_columns - prod).max_abs(), 1e-9);
}

TEST(BruteForceJacobian, AssembliesAgreeOnSmoothAndReluNets) {
  for (auto hidden : {Activation::tanh(), Activation::softplus(), Activation::relu()}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const Network net = build_network(
          test_architecture(3, hidden, Activation::softmax(), 4, true, seed));
      const JacobianPair jp = brute_force_jacobian(net, test_example(net, seed).first);
      const double err = (jp.by_columns - jp.by_rows).norm() / jp.by_rows.norm();
      EXPECT_LE(err, 1e-6) << activation_name(hidden.kind) << " seed " << seed;
    }
  }
}

TEST(BruteForceJacobian, DimensionGuard) {
  const Network net = fixtures::dense_identity_net(Tensor({2, 65}));
  EXPECT_THROW((void)brute_force_jacobian(net, Tensor({65})), std::invalid_argument);
}
