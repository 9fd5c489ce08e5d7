#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "dbp/tensor.hpp"

namespace dbp {

/// Tally of linear-kernel applications. One unit is one evaluation of K,
/// K^T or K^box on a single example. Not thread-safe: confine a counter to the
/// pass that owns it.
struct OpCounter {
  std::uint64_t forward = 0;
  std::uint64_t transposed = 0;
  std::uint64_t weight_adjoint = 0;

  /// Forward plus transposed applications: the cost unit of the runtime model.
  [[nodiscard]] std::uint64_t linear() const { return forward + transposed; }
  [[nodiscard]] std::uint64_t total() const {
    return forward + transposed + weight_adjoint;
  }

  OpCounter& operator+=(const OpCounter& o) {
    forward += o.forward;
    transposed += o.transposed;
    weight_adjoint += o.weight_adjoint;
    return *this;
  }

  friend bool operator==(const OpCounter&, const OpCounter&) = default;
};

namespace detail {

inline void bump(std::uint64_t OpCounter::*field, OpCounter* counter) {
  if (counter) ++(counter->*field);
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace detail

// Dense layers: K(W, x) = W x with W of shape [m, n]. Inputs of any shape with
// n elements are accepted and read in row-major order.
namespace dense {

inline Tensor forward(const Tensor& w, const Tensor& x,
                      OpCounter* counter = nullptr) {
  detail::require(w.rank() == 2 && w.extent(1) == x.size(),
                  "dense forward: weight " + shape_string(w.shape()) +
                      " does not accept input " + shape_string(x.shape()));
  const std::size_t m = w.extent(0), n = w.extent(1);
  Tensor y({m});
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += w[r * n + c] * x[c];
    y[r] = s;
  }
  detail::bump(&OpCounter::forward, counter);
  return y;
}

/// W^T y, returned as a vector of length n.
inline Tensor transposed(const Tensor& w, const Tensor& y,
                         OpCounter* counter = nullptr) {
  detail::require(w.rank() == 2 && w.extent(0) == y.size(),
                  "dense transposed: weight " + shape_string(w.shape()) +
                      " does not accept cotangent " + shape_string(y.shape()));
  const std::size_t m = w.extent(0), n = w.extent(1);
  Tensor x({n});
  for (std::size_t r = 0; r < m; ++r) {
    const double yr = y[r];
    if (yr == 0.0) continue;
    for (std::size_t c = 0; c < n; ++c) x[c] += w[r * n + c] * yr;
  }
  detail::bump(&OpCounter::transposed, counter);
  return x;
}

/// Outer product y x^T: the R with <W x, y> = <W, R>_F for all W.
inline Tensor weight_adjoint(const Tensor& x, const Tensor& y,
                             OpCounter* counter = nullptr) {
  const std::size_t m = y.size(), n = x.size();
  Tensor r({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < n; ++c) r[i * n + c] = y[i] * x[c];
  }
  detail::bump(&OpCounter::weight_adjoint, counter);
  return r;
}

}  // namespace dense

// Multi-channel 1-D convolution, stride 1, no padding, cross-correlation
// orientation:
//   y[o, t] = sum_s sum_c w[s, c, o] * x[c, t + s]
// with w of shape [k, c_in, c_out], x of shape [c_in, n], y of shape
// [c_out, n - k + 1].
namespace conv1d {

inline Tensor forward(const Tensor& w, const Tensor& x,
                      OpCounter* counter = nullptr) {
  detail::require(w.rank() == 3 && x.rank() == 2,
                  "conv1d forward: expected kernel [k,c_in,c_out] and input "
                  "[c_in,n], got " +
                      shape_string(w.shape()) + " and " +
                      shape_string(x.shape()));
  const std::size_t k = w.extent(0), cin = w.extent(1), cout = w.extent(2);
  const std::size_t n = x.extent(1);
  detail::require(x.extent(0) == cin, "conv1d forward: channel mismatch, kernel " +
                                          shape_string(w.shape()) + " input " +
                                          shape_string(x.shape()));
  detail::require(n >= k, "conv1d forward: input length " + std::to_string(n) +
                              " shorter than kernel " + std::to_string(k));
  const std::size_t nout = n - k + 1;
  Tensor y({cout, nout});
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t t = 0; t < nout; ++t) {
      double s = 0.0;
      for (std::size_t sh = 0; sh < k; ++sh) {
        for (std::size_t c = 0; c < cin; ++c) {
          s += w[(sh * cin + c) * cout + o] * x[c * n + t + sh];
        }
      }
      y[o * nout + t] = s;
    }
  }
  detail::bump(&OpCounter::forward, counter);
  return y;
}

/// Adjoint in x ("transposed convolution"): a full-padded correlation with the
/// spatially flipped kernel and the channel roles swapped.
inline Tensor transposed(const Tensor& w, const Tensor& y,
                         OpCounter* counter = nullptr) {
  detail::require(w.rank() == 3 && y.rank() == 2 && y.extent(0) == w.extent(2),
                  "conv1d transposed: kernel " + shape_string(w.shape()) +
                      " does not accept cotangent " + shape_string(y.shape()));
  const std::size_t k = w.extent(0), cin = w.extent(1), cout = w.extent(2);
  const std::size_t nout = y.extent(1);
  const std::size_t n = nout + k - 1;
  Tensor x({cin, n});
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t u = 0; u < n; ++u) {
      double s = 0.0;
      const std::size_t sh_lo = u + 1 > nout ? u + 1 - nout : 0;
      const std::size_t sh_hi = std::min(k - 1, u);
      for (std::size_t sh = sh_lo; sh <= sh_hi; ++sh) {
        const std::size_t t = u - sh;
        for (std::size_t o = 0; o < cout; ++o) {
          s += w[(sh * cin + c) * cout + o] * y[o * nout + t];
        }
      }
      x[c * n + u] = s;
    }
  }
  detail::bump(&OpCounter::transposed, counter);
  return x;
}

/// Adjoint in w (the filter gradient): R[s, c, o] = sum_t x[c, t+s] y[o, t].
inline Tensor weight_adjoint(const Tensor& x, const Tensor& y,
                             OpCounter* counter = nullptr) {
  detail::require(x.rank() == 2 && y.rank() == 2 && x.extent(1) >= y.extent(1),
                  "conv1d weight_adjoint: input " + shape_string(x.shape()) +
                      " incompatible with cotangent " +
                      shape_string(y.shape()));
  const std::size_t cin = x.extent(0), n = x.extent(1);
  const std::size_t cout = y.extent(0), nout = y.extent(1);
  const std::size_t k = n - nout + 1;
  Tensor r({k, cin, cout});
  for (std::size_t sh = 0; sh < k; ++sh) {
    for (std::size_t c = 0; c < cin; ++c) {
      for (std::size_t o = 0; o < cout; ++o) {
        double s = 0.0;
        for (std::size_t t = 0; t < nout; ++t) {
          s += x[c * n + t + sh] * y[o * nout + t];
        }
        r[(sh * cin + c) * cout + o] = s;
      }
    }
  }
  detail::bump(&OpCounter::weight_adjoint, counter);
  return r;
}

}  // namespace conv1d

enum class OperatorKind { dense, conv1d };

/// Shape-checked descriptor of a layer's bilinear kernel K(theta, x) together
/// with its transposed operator K^T(theta, y) and weight-adjoint K^box(x, y).
/// Results are returned in the declared in/out/param shapes.
class BilinearOperator {
 public:
  static BilinearOperator make_dense(Shape in_shape, std::size_t out) {
    const std::size_t n = shape_numel(in_shape);
    return BilinearOperator(OperatorKind::dense, {out, n}, std::move(in_shape),
                            {out});
  }

  static BilinearOperator make_conv1d(std::size_t in_channels,
                                      std::size_t length, std::size_t kernel,
                                      std::size_t out_channels) {
    if (kernel == 0 || length < kernel) {
      throw ShapeError("conv1d: input length " + std::to_string(length) +
                       " shorter than kernel " + std::to_string(kernel));
    }
    return BilinearOperator(OperatorKind::conv1d,
                            {kernel, in_channels, out_channels},
                            {in_channels, length},
                            {out_channels, length - kernel + 1});
  }

  [[nodiscard]] OperatorKind kind() const { return kind_; }
  [[nodiscard]] const Shape& param_shape() const { return param_shape_; }
  [[nodiscard]] const Shape& in_shape() const { return in_shape_; }
  [[nodiscard]] const Shape& out_shape() const { return out_shape_; }

  [[nodiscard]] Tensor forward(const Tensor& theta, const Tensor& x,
                               OpCounter* counter = nullptr) const {
    check(theta, param_shape_, "parameter");
    check(x, in_shape_, "input");
    Tensor y = kind_ == OperatorKind::dense ? dense::forward(theta, x, counter)
                                            : conv1d::forward(theta, x, counter);
    return y.reshaped(out_shape_);
  }

  [[nodiscard]] Tensor transposed(const Tensor& theta, const Tensor& y,
                                  OpCounter* counter = nullptr) const {
    check(theta, param_shape_, "parameter");
    check(y, out_shape_, "cotangent");
    Tensor x = kind_ == OperatorKind::dense
                   ? dense::transposed(theta, y, counter)
                   : conv1d::transposed(theta, y, counter);
    return x.reshaped(in_shape_);
  }

  [[nodiscard]] Tensor weight_adjoint(const Tensor& x, const Tensor& y,
                                      OpCounter* counter = nullptr) const {
    check(x, in_shape_, "input");
    check(y, out_shape_, "cotangent");
    return kind_ == OperatorKind::dense ? dense::weight_adjoint(x, y, counter)
                                        : conv1d::weight_adjoint(x, y, counter);
  }

 private:
  BilinearOperator(OperatorKind kind, Shape param, Shape in, Shape out)
      : kind_(kind),
        param_shape_(std::move(param)),
        in_shape_(std::move(in)),
        out_shape_(std::move(out)) {}

  static void check(const Tensor& t, const Shape& expected, const char* what) {
    if (t.shape() != expected) {
      throw ShapeError(std::string("bilinear operator: ") + what + " shape " +
                       shape_string(t.shape()) + ", expected " +
                       shape_string(expected));
    }
  }

  OperatorKind kind_;
  Shape param_shape_;
  Shape in_shape_;
  Shape out_shape_;
};

struct AdjointResiduals {
  double transposed = 0.0;       // |<K(t,x),y> - <x,K^T(t,y)>|
  double weight_adjoint = 0.0;   // |<K(t,x),y> - <t,K^box(x,y)>|
  double transposed_weight = 0.0;  // |<K^T(t,y),x> - <t,K^box(x,y)>|
};

/// Residuals of the three adjoint identities. The last one is the statement
/// that the weight-adjoint of K^T equals K^box. Applications made here are not
/// counted.
inline AdjointResiduals adjoint_residuals(const BilinearOperator& op,
                                          const Tensor& theta, const Tensor& x,
                                          const Tensor& y) {
  const double kxy = inner_product(op.forward(theta, x), y);
  const Tensor kt = op.transposed(theta, y);
  const double xkt = inner_product(x, kt);
  const double tkb = inner_product(theta, op.weight_adjoint(x, y));
  return {std::abs(kxy - xkt), std::abs(kxy - tkb), std::abs(xkt - tkb)};
}

}  // namespace dbp
