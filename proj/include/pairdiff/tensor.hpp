#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "pairdiff/common.hpp"

namespace pairdiff::nd {

/// Dense row-major float tensor. Images are channel-last (H, W, C),
/// conv kernels are (kh, kw, Cin, Cout).
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, float fill = 0.f);

  static Tensor from(std::vector<int> s, std::vector<float> values);

  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  bool empty() const { return data.empty(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool finite() const;

  // rank-3 (H, W, C)
  float& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * shape[1] + x) * shape[2] + c];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * shape[1] + x) * shape[2] + c];
  }
  // rank-4 (kh, kw, Cin, Cout)
  float& at(int a, int b, int c, int d) {
    return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }
  float at(int a, int b, int c, int d) const {
    return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }
  // rank-2 (n, m)
  float& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  float at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }

  float& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }
};

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  }
}

}  // namespace pairdiff::nd
