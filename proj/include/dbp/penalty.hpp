#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>

#include <json.hpp>

#include "dbp/activations.hpp"
#include "dbp/rng.hpp"
#include "dbp/tensor.hpp"

namespace dbp {

enum class LossKind { nll, squared };

inline LossKind parse_loss(const std::string& name) {
  if (name == "nll") return LossKind::nll;
  if (name == "squared") return LossKind::squared;
  throw std::invalid_argument("unknown loss '" + name + "'");
}

inline const char* loss_name(LossKind kind) {
  return kind == LossKind::nll ? "nll" : "squared";
}

// Entries of a probability vector below this are lifted to it before dividing.
inline constexpr double kNllFloor = 1e-12;

namespace detail {

inline void require_label(const Tensor& x, const Tensor& y) {
  if (y.empty()) throw std::invalid_argument("loss requires a label y");
  if (x.size() != y.size()) {
    throw ShapeError("loss: output " + shape_string(x.shape()) + " vs label " +
                     shape_string(y.shape()));
  }
}

inline double nll_denominator(double x, double y, std::size_t i) {
  if (x < 0.0 || (x == 0.0 && y != 0.0)) {
    throw DomainError("nll: non-positive output probability at index " +
                      std::to_string(i));
  }
  return std::max(x, kNllFloor);
}

}  // namespace detail

struct LossValue {
  double loss = 0.0;
  Tensor gradient;  // v = grad_{x_L} loss
};

/// squared: |x - y|^2 with v = 2(x - y).  nll: -sum y_i log x_i with
/// v = -y (/) x.
inline LossValue loss_and_v(LossKind kind, const Tensor& x, const Tensor& y) {
  detail::require_label(x, y);
  const Tensor yy = y.reshaped(x.shape());
  LossValue out{0.0, Tensor(x.shape())};
  if (kind == LossKind::squared) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - yy[i];
      out.loss += d * d;
      out.gradient[i] = 2.0 * d;
    }
    return out;
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double den = detail::nll_denominator(x[i], yy[i], i);
    if (yy[i] != 0.0) out.loss -= yy[i] * std::log(den);
    out.gradient[i] = -yy[i] / den;
  }
  return out;
}

enum class PenaltyNorm { squared_norm, norm };

/// v = grad_{x_L} loss(x_L, y); depends on the network output.
struct LossGradientSeed {
  LossKind loss = LossKind::nll;
};
/// v = e^(index), 1-based.
struct UnitVectorSeed {
  std::size_t index = 1;
};
/// v = g / |g| with g standard normal drawn from `seed`.
struct RandomUnitSeed {
  std::uint64_t seed = 0;
};
struct ExplicitSeed {
  Tensor v;
};

using SeedSource =
    std::variant<LossGradientSeed, UnitVectorSeed, RandomUnitSeed, ExplicitSeed>;

/// Penalty R = p((D x_L / D x_0)^* v), weighted by lambda in a training
/// objective.
struct PenaltySpec {
  SeedSource v = UnitVectorSeed{1};
  PenaltyNorm p = PenaltyNorm::squared_norm;
  double lambda = 1.0;

  [[nodiscard]] bool depends_on_output() const {
    return std::holds_alternative<LossGradientSeed>(v);
  }

  static PenaltySpec classical(LossKind loss, double lambda = 1.0) {
    return {LossGradientSeed{loss}, PenaltyNorm::squared_norm, lambda};
  }
  static PenaltySpec output_node(std::size_t index, double lambda = 1.0) {
    return {UnitVectorSeed{index}, PenaltyNorm::squared_norm, lambda};
  }
};

/// Unit vector with Gaussian direction of length n.
inline Tensor random_unit_vector(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor v({n});
  double s = 0.0;
  while (s == 0.0) {
    for (std::size_t i = 0; i < n; ++i) v[i] = rng.normal();
    s = v.norm();
  }
  v *= 1.0 / s;
  return v;
}

/// The seed v of a penalty made concrete for one network output. When
/// `loss` is set, v = grad of that loss at (x_L, y) and so depends on x_L.
struct OutputSeed {
  Tensor v;
  std::optional<LossKind> loss;
  Tensor y;

  static OutputSeed constant(Tensor v) { return {std::move(v), std::nullopt, {}}; }
};

inline OutputSeed resolve_seed(const SeedSource& source, const Tensor& x_L,
                               const Tensor& y) {
  const std::size_t c = x_L.size();
  return std::visit(
      [&](const auto& s) -> OutputSeed {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, LossGradientSeed>) {
          detail::require_label(x_L, y);
          Tensor yy = y.reshaped(x_L.shape());
          Tensor v = loss_and_v(s.loss, x_L, yy).gradient;
          return {std::move(v), s.loss, std::move(yy)};
        } else if constexpr (std::is_same_v<S, UnitVectorSeed>) {
          if (s.index < 1 || s.index > c) {
            throw std::out_of_range("unit vector index " +
                                    std::to_string(s.index) + " outside [1, " +
                                    std::to_string(c) + "]");
          }
          return OutputSeed::constant(
              Tensor::unit(c, s.index - 1).reshaped(x_L.shape()));
        } else if constexpr (std::is_same_v<S, RandomUnitSeed>) {
          return OutputSeed::constant(
              random_unit_vector(c, s.seed).reshaped(x_L.shape()));
        } else {
          if (s.v.size() != c) {
            throw ShapeError("explicit penalty seed " +
                             shape_string(s.v.shape()) + " vs output " +
                             shape_string(x_L.shape()));
          }
          return OutputSeed::constant(s.v.reshaped(x_L.shape()));
        }
      },
      source);
}

/// zeta_L = (D x_L / D z_L)^* v for the output layer.
///  - identity: zeta_L = v
///  - softmax, nll loss seed: (sum y) x_L - y  (= x_L - y for probability y)
///  - softmax otherwise: softmax_vjp(x_L, v)
inline Tensor zeta_L_init(const Activation& output, const Tensor& x_L,
                          const OutputSeed& seed) {
  switch (output.kind) {
    case ActivationKind::identity: return seed.v;
    case ActivationKind::softmax:
      if (seed.loss == LossKind::nll) {
        Tensor z = seed.y.sum() * x_L;
        z -= seed.y;
        return z;
      }
      return softmax_vjp(x_L, seed.v);
    default:
      // coordinate-wise output activation: G'(z_L) is evaluated by the caller
      throw std::invalid_argument(
          "zeta_L_init: output activation must be identity or softmax");
  }
}

/// eta_L = grad_{z_L} R given h_L = grad_{zeta_L} R.
///
/// With S = diag(x) - x x^T and v = v(x):
///   identity: eta_L = (D_x v)^* h          (zero for constant v)
///   softmax:  eta_L = S (v (.) h - <x,v> h - <x,h> v + (D_x v)^* S h)
/// and for the nll seed with softmax the closed form (sum y) S h.
inline Tensor eta_L_init(const Activation& output, const Tensor& x_L,
                         const OutputSeed& seed, const Tensor& h_L) {
  Tensor::require_same_shape(x_L, h_L, "eta_L_init");
  // (D_x v)^* applied to a tensor
  auto seed_jacobian_adjoint = [&](const Tensor& t) -> Tensor {
    Tensor out(t.shape());
    if (!seed.loss) return out;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (*seed.loss == LossKind::squared) {
        out[i] = 2.0 * t[i];
      } else {
        const double den = detail::nll_denominator(x_L[i], seed.y[i], i);
        out[i] = seed.y[i] / (den * den) * t[i];
      }
    }
    return out;
  };

  switch (output.kind) {
    case ActivationKind::identity: return seed_jacobian_adjoint(h_L);
    case ActivationKind::softmax: {
      if (seed.loss == LossKind::nll) {
        return seed.y.sum() * softmax_vjp(x_L, h_L);
      }
      const Tensor& v = seed.v;
      Tensor u = hadamard(v, h_L);
      u.add_scaled(-inner_product(x_L, v), h_L);
      u.add_scaled(-inner_product(x_L, h_L), v);
      if (seed.loss) u += seed_jacobian_adjoint(softmax_vjp(x_L, h_L));
      return softmax_vjp(x_L, u);
    }
    default:
      throw std::invalid_argument(
          "eta_L_init: output activation must be identity or softmax");
  }
}

/// True when eta_L vanishes for every h_L (identity output, constant v).
inline bool eta_L_vanishes(const Activation& output, const OutputSeed& seed) {
  return output.kind == ActivationKind::identity && !seed.loss;
}

inline double penalty_value(PenaltyNorm p, const Tensor& xi0) {
  return p == PenaltyNorm::squared_norm ? xi0.squared_norm() : xi0.norm();
}

/// q_0 = grad p(xi_0).
inline Tensor penalty_gradient(PenaltyNorm p, const Tensor& xi0) {
  if (p == PenaltyNorm::squared_norm) return 2.0 * xi0;
  const double n = xi0.norm();
  if (n == 0.0) {
    throw DomainError("norm penalty: gradient undefined at xi_0 = 0");
  }
  return (1.0 / n) * xi0;
}

// JSON: {"v": "loss_gradient" | "unit:i" | "random:seed" | <tensor>,
//        "loss": "nll"|"squared", "p": "sq"|"norm", "lambda": x}
inline void from_json(const nlohmann::json& j, PenaltySpec& spec) {
  spec = PenaltySpec{};
  const auto& v = j.at("v");
  if (v.is_object()) {
    spec.v = ExplicitSeed{v.get<Tensor>()};
  } else {
    const auto s = v.get<std::string>();
    if (s == "loss_gradient") {
      spec.v = LossGradientSeed{parse_loss(j.value("loss", std::string("nll")))};
    } else if (s.rfind("unit:", 0) == 0) {
      spec.v = UnitVectorSeed{std::stoul(s.substr(5))};
    } else if (s.rfind("random:", 0) == 0) {
      spec.v = RandomUnitSeed{std::stoull(s.substr(7))};
    } else {
      throw std::invalid_argument("unknown penalty seed '" + s + "'");
    }
  }
  const auto p = j.value("p", std::string("sq"));
  if (p == "sq") {
    spec.p = PenaltyNorm::squared_norm;
  } else if (p == "norm") {
    spec.p = PenaltyNorm::norm;
  } else {
    throw std::invalid_argument("unknown penalty norm '" + p + "'");
  }
  spec.lambda = j.value("lambda", 1.0);
  if (spec.lambda < 0.0) throw std::invalid_argument("penalty lambda < 0");
}

inline void to_json(nlohmann::json& j, const PenaltySpec& spec) {
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, LossGradientSeed>) {
          j["v"] = "loss_gradient";
          j["loss"] = loss_name(s.loss);
        } else if constexpr (std::is_same_v<S, UnitVectorSeed>) {
          j["v"] = "unit:" + std::to_string(s.index);
        } else if constexpr (std::is_same_v<S, RandomUnitSeed>) {
          j["v"] = "random:" + std::to_string(s.seed);
        } else {
          j["v"] = s.v;
        }
      },
      spec.v);
  j["p"] = spec.p == PenaltyNorm::squared_norm ? "sq" : "norm";
  j["lambda"] = spec.lambda;
}

}  // namespace dbp
