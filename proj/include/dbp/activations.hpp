#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <string_view>

#include "dbp/tensor.hpp"

namespace dbp {

enum class ActivationKind { relu, leaky_relu, tanh, softplus, identity, softmax };

/// Layer nonlinearity. Every kind except softmax acts coordinate-wise, so its
/// derivative is the multiplication operator z -> g'(z) (.) v. Softmax is only
/// valid on the output layer.
struct Activation {
  ActivationKind kind = ActivationKind::identity;
  double alpha = 0.01;  // leaky_relu slope for z <= 0

  static Activation relu() { return {ActivationKind::relu}; }
  static Activation leaky_relu(double a = 0.01) {
    return {ActivationKind::leaky_relu, a};
  }
  static Activation tanh() { return {ActivationKind::tanh}; }
  static Activation softplus() { return {ActivationKind::softplus}; }
  static Activation identity() { return {ActivationKind::identity}; }
  static Activation softmax() { return {ActivationKind::softmax}; }

  [[nodiscard]] bool coordinatewise() const {
    return kind != ActivationKind::softmax;
  }

  /// g'' vanishes almost everywhere.
  [[nodiscard]] bool locally_linear() const {
    return kind == ActivationKind::relu || kind == ActivationKind::leaky_relu ||
           kind == ActivationKind::identity;
  }

  friend bool operator==(const Activation&, const Activation&) = default;
};

inline std::string_view activation_name(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::relu: return "relu";
    case ActivationKind::leaky_relu: return "leaky_relu";
    case ActivationKind::tanh: return "tanh";
    case ActivationKind::softplus: return "softplus";
    case ActivationKind::identity: return "identity";
    case ActivationKind::softmax: return "softmax";
  }
  return "?";
}

inline ActivationKind parse_activation(std::string_view name) {
  for (auto k : {ActivationKind::relu, ActivationKind::leaky_relu,
                 ActivationKind::tanh, ActivationKind::softplus,
                 ActivationKind::identity, ActivationKind::softmax}) {
    if (activation_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

namespace detail {

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + e^z) without overflow
inline double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline void require_coordinatewise(const Activation& g, const char* op) {
  if (!g.coordinatewise()) {
    throw std::invalid_argument(std::string(op) +
                                ": softmax is not a coordinate-wise activation");
  }
}

// Kinks (relu/leaky_relu at 0) take the left derivative: g'(0) is 0 for relu
// and alpha for leaky_relu, g''(0) = 0.
inline double value(const Activation& g, double z) {
  switch (g.kind) {
    case ActivationKind::relu: return z > 0.0 ? z : 0.0;
    case ActivationKind::leaky_relu: return z > 0.0 ? z : g.alpha * z;
    case ActivationKind::tanh: return std::tanh(z);
    case ActivationKind::softplus: return softplus(z);
    case ActivationKind::identity:
    case ActivationKind::softmax: break;
  }
  return z;
}

inline double first(const Activation& g, double z) {
  switch (g.kind) {
    case ActivationKind::relu: return z > 0.0 ? 1.0 : 0.0;
    case ActivationKind::leaky_relu: return z > 0.0 ? 1.0 : g.alpha;
    case ActivationKind::tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case ActivationKind::softplus: return sigmoid(z);
    case ActivationKind::identity:
    case ActivationKind::softmax: break;
  }
  return 1.0;
}

inline double second(const Activation& g, double z) {
  switch (g.kind) {
    case ActivationKind::tanh: {
      const double t = std::tanh(z);
      return -2.0 * t * (1.0 - t * t);
    }
    case ActivationKind::softplus: {
      const double s = sigmoid(z);
      return s * (1.0 - s);
    }
    default: return 0.0;
  }
}

}  // namespace detail

/// Numerically stabilised softmax of a tensor viewed as a flat vector.
inline Tensor softmax_forward(const Tensor& z) {
  if (z.empty()) throw ShapeError("softmax of an empty tensor");
  double m = -std::numeric_limits<double>::infinity();
  for (double v : z.data()) m = std::max(m, v);
  Tensor x(z.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    x[i] = std::exp(z[i] - m);
    s += x[i];
  }
  x *= 1.0 / s;
  return x;
}

/// Applies the (self-adjoint) softmax derivative diag(x) - x x^T to v, where
/// x is a softmax output: x (.) v - <x, v> x.
inline Tensor softmax_vjp(const Tensor& x, const Tensor& v) {
  Tensor out = hadamard(x, v);
  out.add_scaled(-inner_product(x, v), x);
  return out;
}

inline Tensor apply(const Activation& g, const Tensor& z) {
  if (g.kind == ActivationKind::softmax) return softmax_forward(z);
  if (g.kind == ActivationKind::identity) return z;
  Tensor x(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) x[i] = detail::value(g, z[i]);
  return x;
}

/// g'(z) as a tensor (the multiplier of G'(z)).
inline Tensor derivative(const Activation& g, const Tensor& z) {
  detail::require_coordinatewise(g, "derivative");
  Tensor d(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) d[i] = detail::first(g, z[i]);
  return d;
}

/// G'(z) v = g'(z) (.) v
inline Tensor dapply(const Activation& g, const Tensor& z, const Tensor& v) {
  detail::require_coordinatewise(g, "dapply");
  Tensor::require_same_shape(z, v, "dapply");
  if (g.kind == ActivationKind::identity) return v;
  Tensor out(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = detail::first(g, z[i]) * v[i];
  }
  return out;
}

/// G''(z) v = g''(z) (.) v; identically zero for locally linear kinds.
inline Tensor ddapply(const Activation& g, const Tensor& z, const Tensor& v) {
  detail::require_coordinatewise(g, "ddapply");
  Tensor::require_same_shape(z, v, "ddapply");
  Tensor out(z.shape());
  if (g.locally_linear()) return out;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = detail::second(g, z[i]) * v[i];
  }
  return out;
}

}  // namespace dbp
