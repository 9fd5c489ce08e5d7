#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "dbp/double_backprop.hpp"
#include "dbp/network.hpp"

// Independent checks for the analytic passes: central finite differences over
// parameters and inputs, and brute-force Jacobian assembly.

namespace dbp {

struct FDConfig {
  double epsilon = 1e-5;
  /// For networks with kinked activations, a coordinate is skipped when moving
  /// it by this much in either direction changes the sign pattern of any
  /// pre-activation of a kinked layer.
  double skip_kink_radius = 1e-4;
};

/// Scalar objective evaluated on a (possibly perturbed) network.
using ScalarFn = std::function<double(const Network&)>;

struct FDGradient {
  GradientSet grads;
  /// Same layout as grads.flatten(); true where the coordinate was skipped.
  std::vector<bool> skipped;

  [[nodiscard]] std::size_t skipped_count() const {
    return static_cast<std::size_t>(std::count(skipped.begin(), skipped.end(), true));
  }
};

/// Central difference of f along one coordinate of an arbitrary tensor.
inline Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f,
                                   const Tensor& at, double epsilon = 1e-5) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
  Tensor g(at.shape());
  Tensor p = at;
  for (std::size_t i = 0; i < at.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + epsilon;
    const double fp = f(p);
    p[i] = orig - epsilon;
    const double fm = f(p);
    p[i] = orig;
    g[i] = (fp - fm) / (2.0 * epsilon);
  }
  return g;
}

namespace detail {

inline bool has_kinks(const Network& net) {
  for (const auto& l : net.layers()) {
    const auto k = l.activation.kind;
    if (k == ActivationKind::relu || k == ActivationKind::leaky_relu) return true;
  }
  return false;
}

inline std::vector<bool> kink_pattern(const Network& net, const Tensor& x0) {
  const ForwardTrace t = forward(net, x0);
  std::vector<bool> bits;
  for (std::size_t j = 0; j < net.depth(); ++j) {
    const auto k = net.layer(j).activation.kind;
    if (k != ActivationKind::relu && k != ActivationKind::leaky_relu) continue;
    for (double z : t.z[j].data()) bits.push_back(z > 0.0);
  }
  return bits;
}

}  // namespace detail

/// Central differences (f(theta + eps e) - f(theta - eps e)) / 2 eps for every
/// scalar parameter of `net`. x0 is used only for kink detection.
inline FDGradient finite_diff_param_grad(const Network& net, const Tensor& x0,
                                         const ScalarFn& f, const FDConfig& cfg = {}) {
  if (!(cfg.epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
  FDGradient out;
  out.grads = GradientSet::zeros(net);
  const bool kinks = detail::has_kinks(net);
  const std::vector<bool> base = kinks ? detail::kink_pattern(net, x0)
                                       : std::vector<bool>{};
  const double radius = std::max(cfg.epsilon, cfg.skip_kink_radius);
  Network work = net;
  for (std::size_t j = 0; j < net.depth(); ++j) {
    for (int which = 0; which < 2; ++which) {
      Tensor& param = which == 0 ? work.layer(j).theta : work.layer(j).bias;
      Tensor& grad = which == 0 ? out.grads.layers[j].theta : out.grads.layers[j].bias;
      for (std::size_t i = 0; i < param.size(); ++i) {
        const double orig = param[i];
        bool skip = false;
        if (kinks) {
          for (double s : {radius, -radius}) {
            param[i] = orig + s;
            if (detail::kink_pattern(work, x0) != base) skip = true;
          }
        }
        if (skip) {
          param[i] = orig;
          out.skipped.push_back(true);
          continue;
        }
        param[i] = orig + cfg.epsilon;
        const double fp = f(work);
        param[i] = orig - cfg.epsilon;
        const double fm = f(work);
        param[i] = orig;
        grad[i] = (fp - fm) / (2.0 * cfg.epsilon);
        out.skipped.push_back(false);
      }
    }
  }
  return out;
}

/// max_i |a_i - b_i| / max_i |b_i| over the entries not marked skipped, with
/// b the reference. Zero when both are zero.
inline double relative_error(const GradientSet& a, const GradientSet& b,
                             const std::vector<bool>& skipped = {}) {
  const auto fa = a.flatten(), fb = b.flatten();
  if (fa.size() != fb.size()) throw ShapeError("gradient sets differ in size");
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    if (!skipped.empty() && skipped[i]) continue;
    diff = std::max(diff, std::abs(fa[i] - fb[i]));
    scale = std::max(scale, std::abs(fb[i]));
  }
  if (scale == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return diff / scale;
}

inline double relative_error(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeError("tensors differ in size");
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  const double scale = b.max_abs();
  if (scale == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return diff / scale;
}

struct JacobianPair {
  Tensor by_columns;  // central differences of x_L in each input coordinate
  Tensor by_rows;     // one backward pass per output index with v = e^(i)
};

inline constexpr std::size_t kMaxJacobianDim = 64;

/// Input-output Jacobian D x_L / D x_0 as a [C, dim(x_0)] matrix, assembled
/// twice.
inline JacobianPair brute_force_jacobian(const Network& net, const Tensor& x0,
                                         double epsilon = 1e-5) {
  const std::size_t n = shape_numel(net.input_shape());
  const std::size_t c = net.output_dim();
  if (n > kMaxJacobianDim || c > kMaxJacobianDim) {
    throw std::invalid_argument("brute_force_jacobian limited to 64x64");
  }
  JacobianPair jp{Tensor({c, n}), Tensor({c, n})};
  Tensor x = x0.reshaped(net.input_shape());
  for (std::size_t k = 0; k < n; ++k) {
    const double orig = x[k];
    x[k] = orig + epsilon;
    const Tensor fp = forward(net, x).output();
    x[k] = orig - epsilon;
    const Tensor fm = forward(net, x).output();
    x[k] = orig;
    for (std::size_t i = 0; i < c; ++i) {
      jp.by_columns(i, k) = (fp[i] - fm[i]) / (2.0 * epsilon);
    }
  }
  const ForwardTrace trace = forward(net, x);
  for (std::size_t i = 0; i < c; ++i) {
    const OutputSeed seed = resolve_seed(UnitVectorSeed{i + 1}, trace.output(), {});
    const PenaltyValue pv =
        penalty_backward(net, trace, seed, PenaltyNorm::squared_norm);
    for (std::size_t k = 0; k < n; ++k) jp.by_rows(i, k) = pv.trace.xi0[k];
  }
  return jp;
}

}  // namespace dbp
