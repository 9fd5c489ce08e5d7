#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dbp/activations.hpp"
#include "dbp/bilinear.hpp"
#include "dbp/penalty.hpp"
#include "dbp/rng.hpp"
#include "dbp/tensor.hpp"

namespace dbp {

/// z = K(theta, x) + b,  x_out = g(z)
struct Layer {
  BilinearOperator op;
  Tensor theta;
  Tensor bias;
  Activation activation;
};

/// Stack of L >= 1 layers. Hidden layers use coordinate-wise activations; the
/// output layer uses identity or softmax. Adjacent layers chain by element
/// count; tensors are reshaped at the boundary.
class Network {
 public:
  Network() = default;

  explicit Network(std::vector<Layer> layers) : layers_(std::move(layers)) {
    validate();
  }

  [[nodiscard]] std::size_t depth() const { return layers_.size(); }
  [[nodiscard]] const std::vector<Layer>& layers() const { return layers_; }
  [[nodiscard]] const Layer& layer(std::size_t j) const { return layers_.at(j); }
  [[nodiscard]] Layer& layer(std::size_t j) { return layers_.at(j); }
  [[nodiscard]] const Shape& input_shape() const {
    return layers_.front().op.in_shape();
  }
  [[nodiscard]] std::size_t output_dim() const {
    return shape_numel(layers_.back().op.out_shape());
  }
  [[nodiscard]] const Activation& output_activation() const {
    return layers_.back().activation;
  }

  /// Every hidden activation is locally linear (relu, leaky_relu, identity).
  [[nodiscard]] bool hidden_locally_linear() const {
    for (std::size_t j = 0; j + 1 < layers_.size(); ++j) {
      if (!layers_[j].activation.locally_linear()) return false;
    }
    return true;
  }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.theta.size() + l.bias.size();
    return n;
  }

  void validate() const {
    if (layers_.empty()) throw std::invalid_argument("network needs L >= 1");
    for (std::size_t j = 0; j < layers_.size(); ++j) {
      const auto& l = layers_[j];
      const std::string where = "layer " + std::to_string(j + 1) + ": ";
      if (l.theta.shape() != l.op.param_shape()) {
        throw ShapeError(where + "parameter shape " +
                         shape_string(l.theta.shape()) + ", expected " +
                         shape_string(l.op.param_shape()));
      }
      if (l.bias.shape() != l.op.out_shape()) {
        throw ShapeError(where + "bias shape " + shape_string(l.bias.shape()) +
                         ", expected " + shape_string(l.op.out_shape()));
      }
      const bool last = j + 1 == layers_.size();
      if (last) {
        const auto k = l.activation.kind;
        if (k != ActivationKind::identity && k != ActivationKind::softmax) {
          throw std::invalid_argument(where +
                                      "output activation must be identity or "
                                      "softmax");
        }
      } else {
        if (!l.activation.coordinatewise()) {
          throw std::invalid_argument(where +
                                      "softmax only allowed on the output layer");
        }
        if (shape_numel(l.op.out_shape()) !=
            shape_numel(layers_[j + 1].op.in_shape())) {
          throw ShapeError(where + "output " + shape_string(l.op.out_shape()) +
                           " does not chain into layer " +
                           std::to_string(j + 2) + " input " +
                           shape_string(layers_[j + 1].op.in_shape()));
        }
      }
    }
  }

 private:
  std::vector<Layer> layers_;
};

/// Per-layer record z_j, x_j (index 0 is layer 1) plus the input x_0.
struct ForwardTrace {
  Tensor x0;
  std::vector<Tensor> z;
  std::vector<Tensor> x;

  [[nodiscard]] const Tensor& output() const { return x.back(); }
  /// x_{j} for j = 0..L with x_0 the input.
  [[nodiscard]] const Tensor& activation(std::size_t j) const {
    return j == 0 ? x0 : x[j - 1];
  }
};

struct LayerGradient {
  Tensor theta;
  Tensor bias;
};

/// Gradients with respect to every theta_j and b_j.
struct GradientSet {
  std::vector<LayerGradient> layers;

  static GradientSet zeros(const Network& net) {
    GradientSet g;
    for (const auto& l : net.layers()) {
      g.layers.push_back({Tensor(l.op.param_shape()), Tensor(l.op.out_shape())});
    }
    return g;
  }

  GradientSet& add_scaled(double alpha, const GradientSet& other) {
    if (other.layers.size() != layers.size()) {
      throw ShapeError("gradient sets of different depth");
    }
    for (std::size_t j = 0; j < layers.size(); ++j) {
      layers[j].theta.add_scaled(alpha, other.layers[j].theta);
      layers[j].bias.add_scaled(alpha, other.layers[j].bias);
    }
    return *this;
  }

  GradientSet& operator+=(const GradientSet& other) {
    return add_scaled(1.0, other);
  }

  GradientSet& operator*=(double s) {
    for (auto& l : layers) {
      l.theta *= s;
      l.bias *= s;
    }
    return *this;
  }

  /// All entries flattened layer by layer, theta before bias.
  [[nodiscard]] std::vector<double> flatten() const {
    std::vector<double> out;
    for (const auto& l : layers) {
      out.insert(out.end(), l.theta.data().begin(), l.theta.data().end());
      out.insert(out.end(), l.bias.data().begin(), l.bias.data().end());
    }
    return out;
  }
};

inline double max_abs_difference(const GradientSet& a, const GradientSet& b) {
  const auto fa = a.flatten(), fb = b.flatten();
  if (fa.size() != fb.size()) throw ShapeError("gradient sets differ in size");
  double m = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    m = std::max(m, std::abs(fa[i] - fb[i]));
  }
  return m;
}

inline ForwardTrace forward(const Network& net, const Tensor& x0,
                            OpCounter* counter = nullptr) {
  if (x0.size() != shape_numel(net.input_shape())) {
    throw ShapeError("layer 1: input " + shape_string(x0.shape()) +
                     " does not match " + shape_string(net.input_shape()));
  }
  ForwardTrace t;
  t.x0 = x0.reshaped(net.input_shape());
  t.z.reserve(net.depth());
  t.x.reserve(net.depth());
  for (std::size_t j = 0; j < net.depth(); ++j) {
    const Layer& l = net.layer(j);
    const Tensor& prev = j == 0 ? t.x0 : t.x.back();
    Tensor z = l.op.forward(l.theta, prev.reshaped(l.op.in_shape()), counter);
    z += l.bias;
    t.x.push_back(apply(l.activation, z));
    t.z.push_back(std::move(z));
  }
  return t;
}

struct BackpropResult {
  GradientSet grads;
  std::vector<Tensor> xi;    // xi_1..xi_L (xi_0 is not formed)
  std::vector<Tensor> zeta;  // zeta_1..zeta_L
};

/// Gradients of a loss with v = grad_{x_L} loss:
///   grad theta_j = K^box(zeta_j, x_{j-1}),  grad b_j = zeta_j.
/// Costs L-1 transposed and L weight-adjoint applications.
inline BackpropResult standard_backprop(const Network& net,
                                        const ForwardTrace& trace,
                                        const OutputSeed& seed,
                                        OpCounter* counter = nullptr) {
  const std::size_t depth = net.depth();
  BackpropResult r;
  r.grads = GradientSet::zeros(net);
  r.xi.resize(depth);
  r.zeta.resize(depth);
  Tensor xi = seed.v.reshaped(net.layer(depth - 1).op.out_shape());
  for (std::size_t j = depth; j-- > 0;) {
    const Layer& l = net.layer(j);
    Tensor zeta = j + 1 == depth
                      ? zeta_L_init(l.activation, trace.x[j], seed)
                      : dapply(l.activation, trace.z[j], xi);
    r.grads.layers[j].theta = l.op.weight_adjoint(
        trace.activation(j).reshaped(l.op.in_shape()), zeta, counter);
    r.grads.layers[j].bias = zeta;
    if (j > 0) {
      Tensor next = l.op.transposed(l.theta, zeta, counter);
      r.xi[j] = std::move(xi);
      xi = next.reshaped(net.layer(j - 1).op.out_shape());
    } else {
      r.xi[j] = std::move(xi);
    }
    r.zeta[j] = std::move(zeta);
  }
  return r;
}

struct LossGradient {
  double loss = 0.0;
  GradientSet grads;
};

/// Forward pass, loss and its parameter gradient for one example.
inline LossGradient loss_gradient(const Network& net, const Tensor& x0,
                                  const Tensor& y, LossKind loss,
                                  OpCounter* counter = nullptr) {
  const ForwardTrace trace = forward(net, x0, counter);
  const OutputSeed seed =
      resolve_seed(LossGradientSeed{loss}, trace.output(), y);
  const double value = loss_and_v(loss, trace.output(), seed.y).loss;
  return {value, standard_backprop(net, trace, seed, counter).grads};
}

// ---------------------------------------------------------------------------
// Construction from a JSON config and checkpoints.

enum class Initializer { he_uniform, glorot_uniform };

struct LayerConfig {
  OperatorKind kind = OperatorKind::dense;
  std::size_t out = 0;       // dense output width
  std::size_t kernel = 0;    // conv1d kernel length
  std::size_t channels = 0;  // conv1d output channels
  Activation activation;
};

struct NetworkConfig {
  Shape input;
  std::uint64_t seed = 0;
  std::vector<LayerConfig> layers;
};

inline void to_json(nlohmann::json& j, const LayerConfig& c) {
  if (c.kind == OperatorKind::dense) {
    j = {{"kind", "dense"}, {"out", c.out}};
  } else {
    j = {{"kind", "conv1d"}, {"kernel", c.kernel}, {"channels", c.channels}};
  }
  j["activation"] = std::string(activation_name(c.activation.kind));
  if (c.activation.kind == ActivationKind::leaky_relu) {
    j["alpha"] = c.activation.alpha;
  }
}

inline void from_json(const nlohmann::json& j, LayerConfig& c) {
  c = LayerConfig{};
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "dense") {
    c.kind = OperatorKind::dense;
    c.out = j.at("out").get<std::size_t>();
  } else if (kind == "conv1d") {
    c.kind = OperatorKind::conv1d;
    c.kernel = j.at("kernel").get<std::size_t>();
    c.channels = j.at("channels").get<std::size_t>();
  } else {
    throw std::invalid_argument("unknown layer kind '" + kind + "'");
  }
  c.activation.kind = parse_activation(j.at("activation").get<std::string>());
  c.activation.alpha = j.value("alpha", 0.01);
}

inline void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = {{"input", c.input}, {"seed", c.seed}, {"layers", c.layers}};
}

inline void from_json(const nlohmann::json& j, NetworkConfig& c) {
  c.input = j.at("input").get<Shape>();
  c.seed = j.value("seed", std::uint64_t{0});
  c.layers = j.at("layers").get<std::vector<LayerConfig>>();
}

/// Builds the operator stack described by `config`, with zero parameters.
inline Network build_architecture(const NetworkConfig& config) {
  std::vector<Layer> layers;
  Shape in = config.input;
  for (const auto& lc : config.layers) {
    BilinearOperator op = [&] {
      if (lc.kind == OperatorKind::dense) {
        if (lc.out == 0) throw ShapeError("dense layer with zero width");
        return BilinearOperator::make_dense(in, lc.out);
      }
      if (in.size() == 1) in = {1, in[0]};
      if (in.size() != 2) {
        throw ShapeError("conv1d expects [channels, length] input, got " +
                         shape_string(in));
      }
      return BilinearOperator::make_conv1d(in[0], in[1], lc.kernel, lc.channels);
    }();
    in = op.out_shape();
    layers.push_back({op, Tensor(op.param_shape()), Tensor(op.out_shape()),
                      lc.activation});
  }
  return Network(std::move(layers));
}

/// He-uniform weights for relu-type layers, Glorot-uniform otherwise, zero
/// biases. Each layer draws from its own stream split off `seed`.
inline void initialize(Network& net, std::uint64_t seed) {
  const Rng root(seed);
  for (std::size_t j = 0; j < net.depth(); ++j) {
    Layer& l = net.layer(j);
    const Shape& ps = l.op.param_shape();
    double fan_in = 0, fan_out = 0;
    if (l.op.kind() == OperatorKind::dense) {
      fan_in = static_cast<double>(ps[1]);
      fan_out = static_cast<double>(ps[0]);
    } else {
      fan_in = static_cast<double>(ps[0] * ps[1]);
      fan_out = static_cast<double>(ps[0] * ps[2]);
    }
    const auto k = l.activation.kind;
    const bool he = k == ActivationKind::relu || k == ActivationKind::leaky_relu;
    const double limit =
        he ? std::sqrt(6.0 / fan_in) : std::sqrt(6.0 / (fan_in + fan_out));
    Rng rng = root.split(j);
    for (double& w : l.theta.data()) w = rng.uniform(-limit, limit);
    l.bias = Tensor(l.op.out_shape());
  }
}

inline Network build_network(const NetworkConfig& config) {
  Network net = build_architecture(config);
  initialize(net, config.seed);
  return net;
}

/// Checkpoint: {"config": <network config>, "params": [{"theta","bias"}...]}
inline nlohmann::json checkpoint_json(const NetworkConfig& config,
                                      const Network& net) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    params.push_back({{"theta", l.theta}, {"bias", l.bias}});
  }
  return {{"config", config}, {"params", params}};
}

inline Network network_from_checkpoint(const nlohmann::json& j) {
  Network net = build_architecture(j.at("config").get<NetworkConfig>());
  const auto& params = j.at("params");
  if (params.size() != net.depth()) {
    throw std::invalid_argument("checkpoint has " +
                                std::to_string(params.size()) +
                                " parameter blocks for " +
                                std::to_string(net.depth()) + " layers");
  }
  for (std::size_t k = 0; k < net.depth(); ++k) {
    net.layer(k).theta = params[k].at("theta").get<Tensor>();
    net.layer(k).bias = params[k].at("bias").get<Tensor>();
  }
  net.validate();
  return net;
}

}  // namespace dbp
