#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pocketcm {

// Dense row-major tensor of 64-bit floats. Most operations in this codebase
// are 2-d (rows x cols); scalars are represented as 1x1.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0) : shape(std::move(s)) {
    values.assign(numel_of(shape), fill);
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  static Tensor scalar(double v) {
    Tensor t({1, 1});
    t.values[0] = v;
    return t;
  }

  static Tensor row(const std::vector<double>& v) {
    Tensor t({1, v.size()});
    t.values = v;
    return t;
  }

  static Tensor matrix(std::size_t r, std::size_t c, double fill = 0.0) {
    return Tensor({r, c}, fill);
  }

  std::size_t numel() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }

  std::size_t rows() const {
    require_2d("rows");
    return shape[0];
  }
  std::size_t cols() const {
    require_2d("cols");
    return shape[1];
  }

  double& at(std::size_t r, std::size_t c) { return values[r * shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * shape[1] + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool is_scalar() const { return numel() == 1; }
  double scalar_value() const {
    if (!is_scalar()) throw std::invalid_argument("tensor is not scalar, shape " + shape_str());
    return values[0];
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ")";
    return os.str();
  }

 private:
  void require_2d(const char* what) const {
    if (shape.size() != 2)
      throw std::invalid_argument(std::string(what) + ": tensor is not 2-d, shape " + shape_str());
  }
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace pocketcm
