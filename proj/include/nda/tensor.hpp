#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "nda/errors.hpp"

namespace nda {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

/// Dense row-major double tensor. `grad`, when non-empty, mirrors `data`.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_size(shape), 0.0) {}
  Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (shape_size(shape) != data.size())
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not hold " +
                       std::to_string(data.size()) + " values");
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  static Tensor full(Shape s, double v) {
    Tensor t(std::move(s));
    for (double& x : t.data) x = v;
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  std::size_t size() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }

  std::size_t rows() const {
    if (shape.size() != 2) throw ContractError("rows(): tensor is not 2-D, shape " + shape_str(shape));
    return shape[0];
  }
  std::size_t cols() const {
    if (shape.size() != 2) throw ContractError("cols(): tensor is not 2-D, shape " + shape_str(shape));
    return shape[1];
  }

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  /// Value of a one-element tensor.
  double item() const {
    if (size() != 1) throw ContractError("item(): tensor has " + std::to_string(size()) + " elements");
    return data[0];
  }

  bool finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
}

}  // namespace nda
