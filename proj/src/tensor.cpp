#include "pairdiff/tensor.hpp"

#include <cmath>

namespace pairdiff::nd {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  s += ")";
  return s;
}

Tensor::Tensor(std::vector<int> s, float fill) : shape(std::move(s)) {
  data.assign(static_cast<size_t>(shape_numel(shape)), fill);
}

Tensor Tensor::from(std::vector<int> s, std::vector<float> values) {
  Tensor t;
  t.shape = std::move(s);
  if (shape_numel(t.shape) != static_cast<int64_t>(values.size())) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not fill shape " +
                     shape_str(t.shape));
  }
  t.data = std::move(values);
  return t;
}

bool Tensor::finite() const {
  for (float v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace pairdiff::nd
