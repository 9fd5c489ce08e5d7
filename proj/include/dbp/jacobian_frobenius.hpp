#pragma once

#include <algorithm>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dbp/double_backprop.hpp"

namespace dbp {

/// Counts tensors alive inside an instrumented computation.
class LiveTensorCounter {
 public:
  void acquire() { peak_ = std::max(peak_, ++live_); }
  void release() { --live_; }
  [[nodiscard]] int live() const { return live_; }
  [[nodiscard]] int peak() const { return peak_; }

 private:
  int live_ = 0;
  int peak_ = 0;
};

/// A tensor registered with a LiveTensorCounter for as long as it holds data.
class TrackedTensor {
 public:
  TrackedTensor(LiveTensorCounter& counter, Tensor value)
      : counter_(&counter), value_(std::move(value)) {
    counter_->acquire();
  }
  TrackedTensor(const TrackedTensor&) = delete;
  TrackedTensor& operator=(const TrackedTensor&) = delete;
  TrackedTensor(TrackedTensor&& other) noexcept
      : counter_(std::exchange(other.counter_, nullptr)),
        value_(std::move(other.value_)) {}
  TrackedTensor& operator=(TrackedTensor&& other) noexcept {
    if (this != &other) {
      reset();
      counter_ = std::exchange(other.counter_, nullptr);
      value_ = std::move(other.value_);
    }
    return *this;
  }
  ~TrackedTensor() { reset(); }

  void reset() {
    if (counter_) counter_->release();
    counter_ = nullptr;
    value_ = Tensor();
  }

  [[nodiscard]] const Tensor& get() const { return value_; }
  [[nodiscard]] Tensor& get() { return value_; }

 private:
  LiveTensorCounter* counter_;
  Tensor value_;
};

struct FrobeniusResult {
  double penalty = 0.0;  // sum_i |grad_{x_0} x_L^i|^2 = |J|_F^2
  std::optional<double> loss;
  GradientSet grads;  // penalty gradient, plus the loss gradient if requested
  OpCounter counter;
  int peak_live_tensors = 0;
};

inline nlohmann::json report_json(const FrobeniusResult& r) {
  return {{"R", r.penalty},
          {"count_forward", r.counter.forward},
          {"count_transposed", r.counter.transposed},
          {"count_weight_adjoint", r.counter.weight_adjoint},
          {"peak_live_tensors", r.peak_live_tensors}};
}

/// Runs the full penalty passes once per output index with v = e^(i) and sums.
/// Counts: L + C(3L-1) for the penalty alone, plus L-1 for the loss gradient.
inline FrobeniusResult frobenius_naive(const Network& net, const Tensor& x0,
                                       std::optional<LossKind> loss,
                                       const Tensor& y = {}) {
  const auto k = net.output_activation().kind;
  if (k != ActivationKind::softmax && k != ActivationKind::identity) {
    throw std::invalid_argument("frobenius: output must be softmax or identity");
  }
  FrobeniusResult r;
  OpCounter* c = &r.counter;
  const ForwardTrace trace = forward(net, x0, c);
  r.grads = GradientSet::zeros(net);
  if (loss) {
    const OutputSeed ls = resolve_seed(LossGradientSeed{*loss}, trace.output(), y);
    r.loss = loss_and_v(*loss, trace.output(), ls.y).loss;
    r.grads += standard_backprop(net, trace, ls, c).grads;
  }
  const std::size_t classes = net.output_dim();
  for (std::size_t i = 1; i <= classes; ++i) {
    const OutputSeed seed = resolve_seed(UnitVectorSeed{i}, trace.output(), y);
    const PenaltyValue pv =
        penalty_backward(net, trace, seed, PenaltyNorm::squared_norm, c);
    const BackBackTrace qh =
        backward_backward(net, trace, pv.trace, PenaltyNorm::squared_norm, c);
    r.grads += forward_backward(net, trace, pv.trace, qh, seed, c);
    r.penalty += pv.value;
  }
  return r;
}

/// Frobenius-Jacobian penalty for networks whose hidden activations are
/// locally linear, with softmax (or identity) output.
///
/// Since G''_j = 0, eta_j^<i> is linear in eta_L^<i>, so the C forward-backward
/// passes collapse into one pass driven by eta-hat_L = sum_i eta_L^<i>. The
/// K^box(q^<i>_{j-1}, zeta^<i>_j) terms are summed into theta-hat_j as each
/// class is processed. The loss gradient, when requested, reuses the
/// per-class backward passes: zeta_j^loss = sum_i v_i zeta_j^<i> by linearity
/// in v.
///
/// Forward plus transposed applications: 2L - 1 + 2CL (softmax output) or
/// L + 2CL (identity output, where eta-hat_L = 0 and the forward-backward pass
/// is skipped). Live temporaries do not grow with C.
inline FrobeniusResult frobenius_optimized(const Network& net, const Tensor& x0,
                                           std::optional<LossKind> loss,
                                           const Tensor& y = {}) {
  if (!net.hidden_locally_linear()) {
    throw std::invalid_argument(
        "frobenius_optimized requires locally linear hidden activations");
  }
  const auto out_kind = net.output_activation().kind;
  if (out_kind != ActivationKind::softmax && out_kind != ActivationKind::identity) {
    throw std::invalid_argument("frobenius: output must be softmax or identity");
  }
  const bool softmax_out = out_kind == ActivationKind::softmax;
  const std::size_t depth = net.depth();
  const std::size_t classes = net.output_dim();

  FrobeniusResult r;
  OpCounter* c = &r.counter;
  LiveTensorCounter live;
  auto track = [&live](Tensor t) { return TrackedTensor(live, std::move(t)); };

  // forward pass; keep x_j and a_j = g'_j(z_j), drop z_j
  std::vector<TrackedTensor> xs;       // x_0 .. x_L
  std::vector<std::optional<TrackedTensor>> slopes(depth);  // a_1 .. a_{L-1}
  xs.reserve(depth + 1);
  xs.push_back(track(x0.reshaped(net.input_shape())));
  for (std::size_t j = 0; j < depth; ++j) {
    const Layer& l = net.layer(j);
    TrackedTensor z = track(
        l.op.forward(l.theta, xs.back().get().reshaped(l.op.in_shape()), c));
    z.get() += l.bias;
    xs.push_back(track(apply(l.activation, z.get())));
    if (j + 1 < depth) slopes[j].emplace(track(derivative(l.activation, z.get())));
  }
  const Tensor& x_L = xs.back().get();

  std::optional<Tensor> loss_v;
  std::vector<TrackedTensor> loss_zeta;
  if (loss) {
    const OutputSeed ls = resolve_seed(LossGradientSeed{*loss}, x_L, y);
    r.loss = loss_and_v(*loss, x_L, ls.y).loss;
    loss_v = ls.v;
    for (std::size_t j = 0; j < depth; ++j) {
      loss_zeta.push_back(track(Tensor(net.layer(j).op.out_shape())));
    }
  }

  std::vector<TrackedTensor> theta_hat;
  for (std::size_t j = 0; j < depth; ++j) {
    theta_hat.push_back(track(Tensor(net.layer(j).op.param_shape())));
  }
  TrackedTensor eta_hat = track(Tensor(x_L.shape()));

  for (std::size_t i = 0; i < classes; ++i) {
    // i-th backward pass
    std::vector<std::optional<TrackedTensor>> zeta(depth);
    std::optional<TrackedTensor> xi;
    {
      Tensor e = Tensor::unit(classes, i).reshaped(x_L.shape());
      zeta[depth - 1].emplace(track(softmax_out ? softmax_vjp(x_L, e) : e));
    }
    for (std::size_t j = depth; j-- > 0;) {
      const Layer& l = net.layer(j);
      if (j + 1 < depth) {
        zeta[j].emplace(track(hadamard(slopes[j]->get(), xi->get())));
        xi.reset();
      }
      if (loss) loss_zeta[j].get().add_scaled((*loss_v)[i], zeta[j]->get());
      Tensor below = l.op.transposed(l.theta, zeta[j]->get(), c);
      xi.emplace(track(j > 0 ? below.reshaped(net.layer(j - 1).op.out_shape())
                             : std::move(below)));
    }
    r.penalty += xi->get().squared_norm();

    // i-th backward-backward pass
    std::optional<TrackedTensor> q;
    q.emplace(track(2.0 * xi->get()));
    xi.reset();
    std::optional<TrackedTensor> h_L;
    for (std::size_t j = 0; j < depth; ++j) {
      const Layer& l = net.layer(j);
      const Tensor q_in = q->get().reshaped(l.op.in_shape());
      theta_hat[j].get() += l.op.weight_adjoint(q_in, zeta[j]->get(), c);
      zeta[j].reset();
      TrackedTensor h = track(l.op.forward(l.theta, q_in, c));
      q.reset();
      if (j + 1 < depth) {
        q.emplace(track(hadamard(slopes[j]->get(), h.get())));
      } else {
        h_L.emplace(std::move(h));
      }
    }

    if (softmax_out) {
      // eta_L^<i> for the constant seed e^(i); see eta_L_init
      const Tensor& h = h_L->get();
      const double xi_i = x_L[i];
      const double xh = inner_product(x_L, h);
      Tensor u = Tensor(x_L.shape());
      u[i] = h[i];
      u.add_scaled(-xi_i, h);
      u[i] -= xh;
      eta_hat.get() += softmax_vjp(x_L, u);
    }
    h_L.reset();
  }

  // one cumulated forward-backward pass
  r.grads = GradientSet::zeros(net);
  std::optional<TrackedTensor> eta;
  if (softmax_out) eta.emplace(std::move(eta_hat));
  eta_hat.reset();
  for (std::size_t j = depth; j-- > 0;) {
    const Layer& l = net.layer(j);
    const Tensor x_prev = xs[j].get().reshaped(l.op.in_shape());
    r.grads.layers[j].theta = std::move(theta_hat[j].get());
    theta_hat[j].reset();
    if (eta) {
      r.grads.layers[j].theta += l.op.weight_adjoint(x_prev, eta->get(), c);
      r.grads.layers[j].bias = eta->get();
      if (j > 0) {
        TrackedTensor gamma = track(l.op.transposed(l.theta, eta->get(), c)
                                        .reshaped(net.layer(j - 1).op.out_shape()));
        eta.reset();
        eta.emplace(track(hadamard(slopes[j - 1]->get(), gamma.get())));
      }
    }
    if (loss) {
      r.grads.layers[j].theta +=
          l.op.weight_adjoint(x_prev, loss_zeta[j].get(), c);
      r.grads.layers[j].bias += loss_zeta[j].get();
      loss_zeta[j].reset();
    }
    if (j > 0) slopes[j - 1].reset();
    xs[j + 1].reset();
  }
  eta.reset();
  r.peak_live_tensors = live.peak();
  return r;
}

}  // namespace dbp
