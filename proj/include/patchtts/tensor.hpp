#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace patchtts {

/// Raised when an op produces NaN/Inf or a loss is non-finite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major array of 64-bit floats. Rank-1 tensors behave as a
/// single row; rank > 2 tensors are viewed as shape[0] x (rest).
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape_, double fill = 0.0);
  Tensor(std::vector<int> shape_, std::vector<double> values);

  static Tensor matrix(int rows, int cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor scalar(double v) { return Tensor({1, 1}, v); }

  size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  int rows() const { return shape.size() == 1 ? 1 : shape[0]; }
  int cols() const {
    if (shape.size() == 2) return shape[1];
    if (shape.size() == 1) return shape[0];
    return static_cast<int>(data.size() / static_cast<size_t>(shape[0]));
  }

  double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }
  double item() const;

  std::span<double> row(int r);
  std::span<const double> row(int r) const;

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;
  std::string shape_str() const;
};

/// PE[pos, 2i] = sin(pos / 10000^(2i/dim)), PE[pos, 2i+1] = cos(...).
Tensor sinusoidal_pe(int length, int dim);

/// Elementwise x * tanh(softplus(x)) and its derivative.
double mish(double x);
double mish_grad(double x);

}  // namespace patchtts
