#include "patchtts/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

namespace patchtts {

namespace {

size_t checked_count(const std::vector<int>& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must be non-empty");
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
    n *= static_cast<size_t>(d);
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape_, double fill)
    : shape(std::move(shape_)), data(checked_count(shape), fill) {}

Tensor::Tensor(std::vector<int> shape_, std::vector<double> values)
    : shape(std::move(shape_)), data(std::move(values)) {
  if (checked_count(shape) != data.size())
    throw std::invalid_argument("tensor data size does not match shape " + shape_str());
}

double Tensor::item() const {
  if (data.size() != 1) throw std::logic_error("item() on tensor of shape " + shape_str());
  return data[0];
}

std::span<double> Tensor::row(int r) {
  const size_t c = static_cast<size_t>(cols());
  return {data.data() + static_cast<size_t>(r) * c, c};
}

std::span<const double> Tensor::row(int r) const {
  const size_t c = static_cast<size_t>(cols());
  return {data.data() + static_cast<size_t>(r) * c, c};
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor sinusoidal_pe(int length, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw std::invalid_argument("sinusoidal_pe: dim must be even");
  if (length <= 0) throw std::invalid_argument("sinusoidal_pe: length must be positive");
  Tensor pe = Tensor::matrix(length, dim);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < dim / 2; ++i) {
      const double angle = pos / std::pow(10000.0, 2.0 * i / dim);
      pe(pos, 2 * i) = std::sin(angle);
      pe(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

// tanh(softplus(x)) = (e^2x + 2e^x) / (e^2x + 2e^x + 2), one exp per call.
double mish(double x) {
  if (x > 20.0) return x;
  const double e = std::exp(x);
  const double q = e * (e + 2.0);
  return x * q / (q + 2.0);
}

double mish_grad(double x) {
  if (x > 20.0) return 1.0;
  const double e = std::exp(x);
  const double q = e * (e + 2.0);
  const double t = q / (q + 2.0);
  const double sig = e / (1.0 + e);
  return t + x * (1.0 - t * t) * sig;
}

}  // namespace patchtts
