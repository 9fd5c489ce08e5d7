#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace dbp;
using fixtures::random_tensor;

namespace {

NetworkConfig mixed_config(Activation hidden, Activation out, std::uint64_t seed) {
  // conv1d [2,7] -> [3,5], dense 6, dense 3
  NetworkConfig c;
  c.input = {2, 7};
  c.seed = seed;
  c.layers = {{OperatorKind::conv1d, 0, 3, 3, hidden},
              {OperatorKind::dense, 6, 0, 0, hidden},
              {OperatorKind::dense, 3, 0, 0, out}};
  return c;
}

}  // namespace

TEST(Forward, IdentityLayerReturnsInput) {
  const Network net = fixtures::dense_identity_net(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  const Tensor x = Tensor::vector({0.3, -4});
  EXPECT_EQ(forward(net, x).output(), x);
}

TEST(Forward, ZeroWeightsGiveUniformSoftmax) {
  NetworkConfig c;
  c.input = {4};
  c.layers = {{OperatorKind::dense, 5, 0, 0, Activation::tanh()},
              {OperatorKind::dense, 3, 0, 0, Activation::softmax()}};
  Network net = build_architecture(c);
  const Tensor out = forward(net, Tensor::vector({1, 2, 3, 4})).output();
  for (double v : out.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Forward, MatchesPlainLoopReference) {
  NetworkConfig c;
  c.input = {3};
  c.seed = 42;
  c.layers = {{OperatorKind::dense, 4, 0, 0, Activation::relu()},
              {OperatorKind::dense, 2, 0, 0, Activation::identity()}};
  Network net = build_network(c);
  Rng rng(43);
  for (std::size_t j = 0; j < 2; ++j) net.layer(j).bias = random_tensor(rng, {j == 0 ? 4u : 2u});
  const Tensor x = Tensor::vector({0.5, -1.25, 2.0});

  // reference: explicit loops over raw arrays
  const auto& w1 = net.layer(0).theta.values();
  const auto& b1 = net.layer(0).bias.values();
  const auto& w2 = net.layer(1).theta.values();
  const auto& b2 = net.layer(1).bias.values();
  double h[4];
  for (int r = 0; r < 4; ++r) {
    double s = b1[r];
    for (int k = 0; k < 3; ++k) s += w1[r * 3 + k] * x[k];
    h[r] = s > 0 ? s : 0;
  }
  double y[2];
  for (int r = 0; r < 2; ++r) {
    y[r] = b2[r];
    for (int k = 0; k < 4; ++k) y[r] += w2[r * 4 + k] * h[k];
  }
  const Tensor out = forward(net, x).output();
  EXPECT_NEAR(out[0], y[0], 1e-14);
  EXPECT_NEAR(out[1], y[1], 1e-14);

  // regression values for this seed, recorded from the reference loop above
  EXPECT_NEAR(out[0], -0.59692740080872231, 1e-12);
  EXPECT_NEAR(out[1], -0.74934676632189567, 1e-12);
}

TEST(Forward, CountsOneForwardPerLayerAndIsDeterministic) {
  const Network net = build_network(mixed_config(Activation::tanh(), Activation::softmax(), 3));
  Rng rng(1);
  const Tensor x = random_tensor(rng, {2, 7});
  OpCounter c;
  const ForwardTrace a = forward(net, x, &c);
  EXPECT_EQ(c, (OpCounter{3, 0, 0}));
  const ForwardTrace b = forward(net, x);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(a.z[j], b.z[j]);
    EXPECT_EQ(a.x[j], b.x[j]);
  }
}

TEST(Forward, ShapeErrorNamesLayer) {
  const Network net = build_network(mixed_config(Activation::tanh(), Activation::softmax(), 3));
  EXPECT_THROW((void)forward(net, Tensor({13})), ShapeError);
}

TEST(NetworkValidation, RejectsBadStacks) {
  NetworkConfig c;
  c.input = {3};
  c.layers = {{OperatorKind::dense, 2, 0, 0, Activation::softmax()},
              {OperatorKind::dense, 2, 0, 0, Activation::identity()}};
  EXPECT_THROW(build_network(c), std::invalid_argument);  // softmax hidden
  c.layers = {{OperatorKind::dense, 2, 0, 0, Activation::relu()}};
  EXPECT_THROW(build_network(c), std::invalid_argument);  // relu output

  Network ok = build_network(mixed_config(Activation::relu(), Activation::identity(), 1));
  std::vector<Layer> layers = ok.layers();
  layers[1].bias = Tensor({7});
  EXPECT_THROW(Network(std::move(layers)), ShapeError);
}

TEST(LossAndV, Examples) {
  const Tensor y = Tensor::vector({0.2, -1});
  const LossValue a = loss_and_v(LossKind::squared, y, y);
  EXPECT_EQ(a.loss, 0.0);
  EXPECT_TRUE(a.gradient.is_zero());
  const LossValue b = loss_and_v(LossKind::squared, Tensor::vector({1, 0}), Tensor::vector({0, 0}));
  EXPECT_EQ(b.loss, 1.0);
  EXPECT_EQ(b.gradient, Tensor::vector({2, 0}));
  const LossValue c = loss_and_v(LossKind::nll, Tensor::vector({0.5, 0.5}), Tensor::vector({1, 0}));
  EXPECT_DOUBLE_EQ(c.loss, std::log(2.0));
  EXPECT_EQ(c.gradient, Tensor::vector({-2, 0}));
}

TEST(LossAndV, NllGuards) {
  EXPECT_THROW((void)loss_and_v(LossKind::nll, Tensor::vector({-0.1, 1.1}), Tensor::vector({1, 0})),
               DomainError);
  EXPECT_THROW((void)loss_and_v(LossKind::nll, Tensor::vector({0, 1}), Tensor::vector({1, 0})),
               DomainError);
  // tiny positive probabilities are clamped, not divided by
  const LossValue v =
      loss_and_v(LossKind::nll, Tensor::vector({1e-300, 1}), Tensor::vector({1, 0}));
  EXPECT_DOUBLE_EQ(v.gradient[0], -1e12);
  EXPECT_THROW((void)loss_and_v(LossKind::squared, Tensor({2}), Tensor({3})), ShapeError);
}

TEST(StandardBackprop, SingleLayerLeastSquares) {
  Rng rng(2);
  Network net = fixtures::dense_identity_net(random_tensor(rng, {3, 4}));
  net.layer(0).bias = random_tensor(rng, {3});
  const Tensor x = random_tensor(rng, {4}), y = random_tensor(rng, {3});
  const LossGradient g = loss_gradient(net, x, y, LossKind::squared);
  const Tensor r = 2.0 * (dense::forward(net.layer(0).theta, x) + net.layer(0).bias - y);
  const Tensor expected = dense::weight_adjoint(x, r);
  EXPECT_LE((g.grads.layers[0].theta - expected).max_abs(), 1e-14);
  EXPECT_LE((g.grads.layers[0].bias - r).max_abs(), 1e-14);
}

TEST(StandardBackprop, ZeroSeedGivesZeroGradients) {
  const Network net = build_network(mixed_config(Activation::tanh(), Activation::identity(), 4));
  Rng rng(3);
  const ForwardTrace t = forward(net, random_tensor(rng, {2, 7}));
  const BackpropResult r = standard_backprop(net, t, OutputSeed::constant(Tensor({3})));
  for (double g : r.grads.flatten()) EXPECT_EQ(g, 0.0);
}

TEST(StandardBackprop, CountsLMinusOneTransposedAndLWeightAdjoints) {
  for (std::size_t L : {1u, 2u, 3u, 5u}) {
    const Network net = build_network(
        test_architecture(L, Activation::tanh(), Activation::softmax(), 4, false, L));
    const auto [x, y] = test_example(net, L);
    OpCounter c;
    (void)loss_gradient(net, x, y, LossKind::nll, &c);
    EXPECT_EQ(c.forward, L);
    EXPECT_EQ(c.transposed, L - 1);
    EXPECT_EQ(c.weight_adjoint, L);
    EXPECT_EQ(c.linear(), 2 * L - 1);
  }
}

struct BackpropCase {
  const char* name;
  Activation hidden;
  Activation out;
  LossKind loss;
};

class BackpropOracle : public ::testing::TestWithParam<BackpropCase> {};

TEST_P(BackpropOracle, MatchesFiniteDifferences) {
  const BackpropCase& c = GetParam();
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const Network net = build_network(mixed_config(c.hidden, c.out, seed));
    const auto [x, y] = test_example(net, seed);
    const LossGradient g = loss_gradient(net, x, y, c.loss);
    const FDGradient fd = finite_diff_param_grad(net, x, [&](const Network& n) {
      return loss_and_v(c.loss, forward(n, x).output(), y).loss;
    });
    EXPECT_LE(relative_error(g.grads, fd.grads), 1e-6) << c.name << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(
    Nets, BackpropOracle,
    ::testing::Values(
        BackpropCase{"tanh_softmax_nll", Activation::tanh(), Activation::softmax(), LossKind::nll},
        BackpropCase{"softplus_softmax_nll", Activation::softplus(), Activation::softmax(),
                     LossKind::nll},
        BackpropCase{"tanh_identity_squared", Activation::tanh(), Activation::identity(),
                     LossKind::squared},
        BackpropCase{"softplus_identity_squared", Activation::softplus(),
                     Activation::identity(), LossKind::squared},
        BackpropCase{"tanh_softmax_squared", Activation::tanh(), Activation::softmax(),
                     LossKind::squared}),
    [](const auto& info) { return std::string(info.param.name); });

TEST(Initialization, HeAndGlorotBoundsZeroBias) {
  NetworkConfig c;
  c.input = {6};
  c.seed = 9;
  c.layers = {{OperatorKind::dense, 10, 0, 0, Activation::relu()},
              {OperatorKind::dense, 4, 0, 0, Activation::identity()}};
  const Network net = build_network(c);
  EXPECT_LE(net.layer(0).theta.max_abs(), std::sqrt(6.0 / 6.0));
  EXPECT_GT(net.layer(0).theta.max_abs(), 0.5 * std::sqrt(6.0 / 6.0));
  EXPECT_LE(net.layer(1).theta.max_abs(), std::sqrt(6.0 / 14.0));
  EXPECT_TRUE(net.layer(0).bias.is_zero());
  EXPECT_TRUE(net.layer(1).bias.is_zero());
  // per-layer streams: changing layer 2 does not change layer 1
  c.layers[1].out = 7;
  EXPECT_EQ(build_network(c).layer(0).theta, net.layer(0).theta);
}

TEST(NetworkConfigJson, ParsesLayerList) {
  const auto j = nlohmann::json::parse(R"({
    "input": [2, 9], "seed": 5,
    "layers": [
      {"kind": "conv1d", "kernel": 3, "channels": 4, "activation": "leaky_relu", "alpha": 0.2},
      {"kind": "dense", "out": 6, "activation": "softplus"},
      {"kind": "dense", "out": 3, "activation": "softmax"}]})");
  const NetworkConfig c = j.get<NetworkConfig>();
  const Network net = build_network(c);
  EXPECT_EQ(net.depth(), 3u);
  EXPECT_EQ(net.layer(0).op.out_shape(), (Shape{4, 7}));
  EXPECT_EQ(net.layer(0).activation.alpha, 0.2);
  EXPECT_EQ(net.output_dim(), 3u);
  const NetworkConfig back = nlohmann::json(c).get<NetworkConfig>();
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(c));
}

TEST(NetworkConfigJson, RejectsUnknownKind) {
  const auto j = nlohmann::json::parse(
      R"({"input":[2],"layers":[{"kind":"conv2d","out":2,"activation":"identity"}]})");
  EXPECT_THROW((void)j.get<NetworkConfig>(), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsExact) {
  const NetworkConfig c = mixed_config(Activation::relu(), Activation::identity(), 8);
  const Network net = build_network(c);
  const nlohmann::json ckpt = nlohmann::json::parse(checkpoint_json(c, net).dump());
  const Network back = network_from_checkpoint(ckpt);
  ASSERT_EQ(back.depth(), net.depth());
  for (std::size_t j = 0; j < net.depth(); ++j) {
    EXPECT_EQ(back.layer(j).theta, net.layer(j).theta);
    EXPECT_EQ(back.layer(j).bias, net.layer(j).bias);
  }
}
