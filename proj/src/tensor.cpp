#include "vip/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace vip::nn {

Tensor::Tensor(std::vector<std::size_t> dims, double fill)
    : shape(std::move(dims)), values(numel(shape), fill) {}

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<double> data)
    : shape(std::move(dims)), values(std::move(data)) {
  if (values.size() != numel(shape)) {
    throw ShapeError("Tensor: value count does not match shape");
  }
}

std::size_t Tensor::numel(const std::vector<std::size_t>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

bool Tensor::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(values.begin(), values.end(), v); }

}  // namespace vip::nn
