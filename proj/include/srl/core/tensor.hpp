#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "srl/common.hpp"

namespace srl::core {

/// Dense n-dimensional array, row-major. The shape is fixed at construction;
/// `Scalar` is float in training paths and double in gradient-check paths.
template <class Scalar>
struct Tensor {
  std::vector<int> shape;
  std::vector<Scalar> data;

  Tensor() = default;

  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(check_shape(shape), Scalar(0));
  }

  Tensor(std::vector<int> s, std::vector<Scalar> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != check_shape(shape))
      throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_string(shape));
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, Scalar v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(Scalar v) { return Tensor({1}, {v}); }

  std::size_t numel() const { return data.size(); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  int ndim() const { return static_cast<int>(shape.size()); }

  Scalar& operator[](std::size_t i) { return data[i]; }
  Scalar operator[](std::size_t i) const { return data[i]; }

  /// Row-major offset for a 2-d tensor.
  Scalar& at2(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
  Scalar at2(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

  /// Row-major offset for a 4-d tensor.
  Scalar& at4(int a, int b, int c, int d) {
    return data[((static_cast<std::size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }
  Scalar at4(int a, int b, int c, int d) const {
    return data[((static_cast<std::size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  template <class Other>
  Tensor<Other> cast() const {
    Tensor<Other> t;
    t.shape = shape;
    t.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      t.data[i] = static_cast<Other>(data[i]);
    return t;
  }

  static std::string shape_string(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
  }

 private:
  static std::size_t check_shape(const std::vector<int>& s) {
    std::size_t n = 1;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] <= 0)
        throw ShapeError("tensor: axis " + std::to_string(i) +
                         " has non-positive size " + std::to_string(s[i]));
      n *= static_cast<std::size_t>(s[i]);
    }
    return n;
  }
};

/// Trainable parameter: a value tensor plus an optional accumulated gradient.
/// The gradient is created by zero_grad() or the first backward() that
/// reaches the parameter, and always matches the value's shape.
template <class Scalar>
struct Variable {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;  // empty until allocated
  bool trainable = true;

  Variable() = default;
  Variable(std::string n, Tensor<Scalar> v, bool train = true)
      : name(std::move(n)), value(std::move(v)), trainable(train) {}

  bool has_grad() const { return !grad.data.empty(); }

  void ensure_grad() {
    if (!has_grad()) grad = Tensor<Scalar>::zeros(value.shape);
  }

  void zero_grad() {
    ensure_grad();
    std::fill(grad.data.begin(), grad.data.end(), Scalar(0));
  }
};

}  // namespace srl::core
