#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace dbp {

using Shape = std::vector<std::size_t>;

/// Raised when tensor extents do not conform.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a value lies outside an operation's domain (zero divisor,
/// non-positive probability, undefined gradient, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major tensor of doubles. The shape is metadata only: every
/// operation in this library acts on whole tensors.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_numel(shape_), 0.0);
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i])) {
        throw DomainError("non-finite tensor element at index " +
                          std::to_string(i));
      }
    }
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  static Tensor filled(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  /// i-th standard unit vector of length n (0-based index).
  static Tensor unit(std::size_t n, std::size_t index) {
    Tensor t({n});
    t.data_.at(index) = 1.0;
    return t;
  }

  [[nodiscard]] bool empty() const { return shape_.empty(); }
  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] std::size_t rank() const { return shape_.size(); }
  [[nodiscard]] std::size_t extent(std::size_t axis) const {
    return shape_.at(axis);
  }

  [[nodiscard]] std::span<const double> data() const { return data_; }
  [[nodiscard]] std::span<double> data() { return data_; }
  [[nodiscard]] const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }
  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * shape_[1] + c];
  }

  /// Same data under a different shape of equal element count.
  [[nodiscard]] Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " +
                       shape_string(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(*this, other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator-=(const Tensor& other) {
    require_same_shape(*this, other, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
  }

  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  /// this += alpha * other
  Tensor& add_scaled(double alpha, const Tensor& other) {
    require_same_shape(*this, other, "add_scaled");
    for (std::size_t i = 0; i < data_.size(); ++i) {
      data_[i] += alpha * other.data_[i];
    }
    return *this;
  }

  [[nodiscard]] double squared_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return s;
  }

  [[nodiscard]] double norm() const { return std::sqrt(squared_norm()); }

  [[nodiscard]] double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  [[nodiscard]] double sum() const {
    return std::accumulate(data_.begin(), data_.end(), 0.0);
  }

  [[nodiscard]] bool is_zero() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return v == 0.0; });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  static void require_same_shape(const Tensor& a, const Tensor& b,
                                 const char* op) {
    if (a.shape_ != b.shape_) {
      throw ShapeError(std::string(op) + ": shape mismatch " +
                       shape_string(a.shape_) + " vs " +
                       shape_string(b.shape_));
    }
  }

 private:
  void validate_shape() const {
    if (shape_.empty()) throw ShapeError("tensor shape must have rank >= 1");
    for (std::size_t e : shape_) {
      if (e == 0) {
        throw ShapeError("tensor extents must be positive, got " +
                         shape_string(shape_));
      }
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

inline Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
inline Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
inline Tensor operator*(double s, Tensor a) { return a *= s; }
inline Tensor operator*(Tensor a, double s) { return a *= s; }

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

/// Standard inner product sum_i a_i b_i.
inline double inner_product(const Tensor& a, const Tensor& b) {
  Tensor::require_same_shape(a, b, "inner_product");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Coordinate-wise product.
inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  Tensor::require_same_shape(a, b, "hadamard");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

/// Coordinate-wise quotient; every divisor entry must be nonzero.
inline Tensor hadamard_div(const Tensor& a, const Tensor& b) {
  Tensor::require_same_shape(a, b, "hadamard_div");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (b[i] == 0.0) {
      throw DomainError("hadamard_div: zero divisor at index " +
                        std::to_string(i));
    }
    out[i] = a[i] / b[i];
  }
  return out;
}

inline void to_json(nlohmann::json& j, const Tensor& t) {
  j = nlohmann::json{{"shape", t.shape()}, {"data", t.values()}};
}

inline void from_json(const nlohmann::json& j, Tensor& t) {
  t = Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

}  // namespace dbp
