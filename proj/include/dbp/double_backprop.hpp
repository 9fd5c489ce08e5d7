#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dbp/network.hpp"
#include "dbp/penalty.hpp"

namespace dbp {

/// xi_j = (D x_L / D x_j)^* v and zeta_j = (D x_L / D z_j)^* v.
/// xi[j] and zeta[j] hold layer j+1's values; xi0 is the input-space result.
struct BackwardTrace {
  Tensor xi0;
  std::vector<Tensor> xi;
  std::vector<Tensor> zeta;
};

/// q_j = grad_{xi_j} R and h_j = grad_{zeta_j} R. q[0] is q_0 (input space);
/// q[j] for j >= 1 is layer j's value. h[j] holds layer j+1's value.
struct BackBackTrace {
  std::vector<Tensor> q;
  std::vector<Tensor> h;
};

struct PenaltyValue {
  double value = 0.0;
  BackwardTrace trace;
};

/// Backward pass of the penalty:
///   xi_L = v;  zeta_j = G'_j(z_j) xi_j;  xi_{j-1} = K_j^T(theta_j, zeta_j);
///   R = p(xi_0).
/// The output layer's zeta_L comes from zeta_L_init. Costs L transposed
/// applications.
inline PenaltyValue penalty_backward(const Network& net, const ForwardTrace& trace,
                                     const OutputSeed& seed, PenaltyNorm p,
                                     OpCounter* counter = nullptr) {
  const std::size_t depth = net.depth();
  BackwardTrace bt;
  bt.xi.resize(depth);
  bt.zeta.resize(depth);
  Tensor xi = seed.v.reshaped(net.layer(depth - 1).op.out_shape());
  for (std::size_t j = depth; j-- > 0;) {
    const Layer& l = net.layer(j);
    Tensor zeta = j + 1 == depth ? zeta_L_init(l.activation, trace.x[j], seed)
                                 : dapply(l.activation, trace.z[j], xi);
    Tensor below = l.op.transposed(l.theta, zeta, counter);
    bt.xi[j] = std::move(xi);
    bt.zeta[j] = std::move(zeta);
    xi = j > 0 ? below.reshaped(net.layer(j - 1).op.out_shape()) : std::move(below);
  }
  bt.xi0 = std::move(xi);
  const double value = penalty_value(p, bt.xi0);
  return {value, std::move(bt)};
}

/// Backward-backward pass:
///   q_0 = grad p(xi_0);  h_j = K_j(theta_j, q_{j-1});  q_j = G'_j(z_j) h_j.
/// q_L is not formed (the output layer needs only h_L). Costs L forward
/// applications.
inline BackBackTrace backward_backward(const Network& net,
                                       const ForwardTrace& trace,
                                       const BackwardTrace& bt, PenaltyNorm p,
                                       OpCounter* counter = nullptr) {
  const std::size_t depth = net.depth();
  BackBackTrace qh;
  qh.q.reserve(depth);
  qh.h.reserve(depth);
  qh.q.push_back(penalty_gradient(p, bt.xi0));
  for (std::size_t j = 0; j < depth; ++j) {
    const Layer& l = net.layer(j);
    Tensor h = l.op.forward(l.theta, qh.q.back().reshaped(l.op.in_shape()), counter);
    if (j + 1 < depth) qh.q.push_back(dapply(l.activation, trace.z[j], h));
    qh.h.push_back(std::move(h));
  }
  return qh;
}

struct ForwardBackwardOptions {
  /// Evaluate M_j(G''_j(z_j) h_j, xi_j) even for locally linear layers, where
  /// it is identically zero.
  bool force_curvature_term = false;
};

/// Forward-backward pass and the penalty's weight gradients:
///   eta_L from eta_L_init;
///   eta_j = (G''_j(z_j) h_j) (.) xi_j + G'_j(z_j) gamma_j;
///   grad theta_j = K^box(q_{j-1}, zeta_j) + K^box(eta_j, x_{j-1});
///   grad b_j = eta_j;   gamma_{j-1} = K_j^T(theta_j, eta_j)   (j > 1).
/// When eta_j is structurally zero (identity output with a constant seed,
/// cascading through locally linear layers) gamma_{j-1} is not evaluated.
inline GradientSet forward_backward(const Network& net, const ForwardTrace& trace,
                                    const BackwardTrace& bt,
                                    const BackBackTrace& qh,
                                    const OutputSeed& seed,
                                    OpCounter* counter = nullptr,
                                    ForwardBackwardOptions options = {}) {
  const std::size_t depth = net.depth();
  GradientSet g = GradientSet::zeros(net);
  Tensor gamma;  // gamma_j for the layer being processed; empty means zero
  bool eta_zero = false;
  for (std::size_t j = depth; j-- > 0;) {
    const Layer& l = net.layer(j);
    Tensor eta;
    if (j + 1 == depth) {
      eta_zero = eta_L_vanishes(l.activation, seed);
      eta = eta_zero ? Tensor(l.op.out_shape())
                     : eta_L_init(l.activation, trace.x[j], seed, qh.h[j]);
    } else {
      eta = Tensor(l.op.out_shape());
      const bool curvature =
          !l.activation.locally_linear() || options.force_curvature_term;
      if (curvature) {
        eta += hadamard(ddapply(l.activation, trace.z[j], qh.h[j]), bt.xi[j]);
      }
      if (!gamma.empty()) eta += dapply(l.activation, trace.z[j], gamma);
      eta_zero = gamma.empty() && !curvature;
    }
    const Tensor x_prev = trace.activation(j).reshaped(l.op.in_shape());
    const Tensor q_prev = qh.q[j].reshaped(l.op.in_shape());
    g.layers[j].theta = l.op.weight_adjoint(q_prev, bt.zeta[j], counter);
    if (!eta_zero) {
      g.layers[j].theta += l.op.weight_adjoint(x_prev, eta, counter);
    }
    g.layers[j].bias = eta;
    gamma = Tensor();
    if (j > 0 && !eta_zero) {
      gamma = l.op.transposed(l.theta, eta, counter)
                  .reshaped(net.layer(j - 1).op.out_shape());
    }
  }
  return g;
}

struct DoubleBackpropResult {
  double penalty = 0.0;
  std::optional<double> loss;
  GradientSet grads;  // include_loss * grad L + lambda * grad R
  GradientSet penalty_grads;  // unscaled grad R
  OpCounter counter;
  Tensor xi0;
};

/// Full training step for loss L (optional) plus penalty R.
/// Classical double backpropagation (seed = gradient of the same loss) reuses
/// the penalty's backward quantities for grad L; any other penalty runs a
/// separate standard backprop (L-1 extra transposed applications).
inline DoubleBackpropResult double_backprop(const Network& net, const Tensor& x0,
                                            const Tensor& y,
                                            const PenaltySpec& spec,
                                            std::optional<LossKind> loss) {
  DoubleBackpropResult r;
  OpCounter* c = &r.counter;
  const ForwardTrace trace = forward(net, x0, c);
  const OutputSeed seed = resolve_seed(spec.v, trace.output(), y);

  std::optional<BackpropResult> loss_bp;
  std::optional<OutputSeed> loss_seed;
  const bool classical =
      loss && seed.loss && *seed.loss == *loss;
  if (loss) {
    loss_seed = classical ? seed
                          : resolve_seed(LossGradientSeed{*loss}, trace.output(), y);
    r.loss = loss_and_v(*loss, trace.output(), loss_seed->y).loss;
    if (!classical) loss_bp = standard_backprop(net, trace, *loss_seed, c);
  }

  PenaltyValue pv = penalty_backward(net, trace, seed, spec.p, c);
  const BackBackTrace qh = backward_backward(net, trace, pv.trace, spec.p, c);
  r.penalty_grads = forward_backward(net, trace, pv.trace, qh, seed, c);
  r.penalty = pv.value;

  r.grads = GradientSet::zeros(net);
  r.grads.add_scaled(spec.lambda, r.penalty_grads);
  if (loss) {
    if (classical) {
      for (std::size_t j = 0; j < net.depth(); ++j) {
        const Layer& l = net.layer(j);
        r.grads.layers[j].theta += l.op.weight_adjoint(
            trace.activation(j).reshaped(l.op.in_shape()), pv.trace.zeta[j], c);
        r.grads.layers[j].bias += pv.trace.zeta[j];
      }
    } else {
      r.grads += loss_bp->grads;
    }
  }
  r.xi0 = std::move(pv.trace.xi0);
  return r;
}

/// Penalty value and gradient only (no loss term).
inline DoubleBackpropResult penalty_and_gradient(const Network& net,
                                                 const Tensor& x0,
                                                 const Tensor& y,
                                                 const PenaltySpec& spec) {
  return double_backprop(net, x0, y, spec, std::nullopt);
}

/// J u for the input-output Jacobian J = D x_L / D x_0, from the
/// backward-backward pass: h_L = (D z_L / D x_0) u, then the output layer's
/// derivative.
inline Tensor jacobian_vector_product(const Network& net, const ForwardTrace& trace,
                                      const Tensor& u, OpCounter* counter = nullptr) {
  Tensor h = u.reshaped(net.input_shape());
  for (std::size_t j = 0; j < net.depth(); ++j) {
    const Layer& l = net.layer(j);
    h = l.op.forward(l.theta, h.reshaped(l.op.in_shape()), counter);
    if (j + 1 < net.depth()) h = dapply(l.activation, trace.z[j], h);
  }
  if (net.output_activation().kind == ActivationKind::softmax) {
    h = softmax_vjp(trace.output(), h);
  }
  return h;
}

struct OperatorNormResult {
  double penalty = 0.0;   // |J^T v_final|, a lower bound on |J|_2
  GradientSet grads;      // grad of the penalty with v_final held fixed
  Tensor v_final;
  OpCounter counter;
};

/// Power-iteration estimate of the spectral norm of D x_L / D x_0.
/// `iterations` = 1 uses the sampled unit vector as is; each further iteration
/// replaces v by J J^T v / |J J^T v| (one backward and one backward-backward
/// pass). The penalty uses p = norm.
inline OperatorNormResult operator_norm_penalty(const Network& net,
                                                const Tensor& x0,
                                                std::size_t iterations,
                                                std::uint64_t seed) {
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  OperatorNormResult r;
  OpCounter* c = &r.counter;
  const ForwardTrace trace = forward(net, x0, c);
  Tensor v = random_unit_vector(net.output_dim(), seed).reshaped(trace.output().shape());
  for (std::size_t it = 1; it < iterations; ++it) {
    const PenaltyValue pv =
        penalty_backward(net, trace, OutputSeed::constant(v), PenaltyNorm::norm, c);
    const Tensor u = penalty_gradient(PenaltyNorm::norm, pv.trace.xi0);
    Tensor w = jacobian_vector_product(net, trace, u, c);
    const double n = w.norm();
    if (n == 0.0) throw DomainError("power iteration: J J^T v vanished");
    v = (1.0 / n) * w;
  }
  const OutputSeed s = OutputSeed::constant(v);
  const PenaltyValue pv = penalty_backward(net, trace, s, PenaltyNorm::norm, c);
  const BackBackTrace qh = backward_backward(net, trace, pv.trace, PenaltyNorm::norm, c);
  r.grads = forward_backward(net, trace, pv.trace, qh, s, c);
  r.penalty = pv.value;
  r.v_final = std::move(v);
  return r;
}

}  // namespace dbp
