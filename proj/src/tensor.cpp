// SPDX-License-Identifier: Apache-2.0
#include "caps/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace caps::ad {

int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int e : shape) {
    if (e < 0) throw std::invalid_argument("negative tensor extent");
    n *= e;
  }
  return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
  std::string s = "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  s += ")";
  return s;
}

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)) {
  v.assign(static_cast<size_t>(shape_size(shape)), fill);
}

Tensor Tensor::scalar(double x) {
  Tensor t;
  t.shape = {1};
  t.v = {x};
  return t;
}

Tensor Tensor::from(std::vector<int> s, std::vector<double> values) {
  if (shape_size(s) != static_cast<int64_t>(values.size()))
    throw std::invalid_argument("tensor shape " + shape_to_string(s) +
                                " does not match value count " +
                                std::to_string(values.size()));
  Tensor t;
  t.shape = std::move(s);
  t.v = std::move(values);
  return t;
}

bool Tensor::all_finite() const {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string Tensor::shape_str() const { return shape_to_string(shape); }

}  // namespace caps::ad
