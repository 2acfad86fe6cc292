#pragma once

#include <string>
#include <vector>

#include "pairdiff/tensor.hpp"

namespace pairdiff::nd {

enum class Op {
  Input,
  Param,
  Conv2d,
  ConvT2x2,
  ResizeNN,
  Dense,
  Relu,
  Sigmoid,
  Softmax,
  AddChannel,
  ScaleChannel,
  Concat,
  Mix,
  Mse,
  CrossEntropy,
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

struct Node {
  Op op;
  int a = -1;
  int b = -1;
  int i0 = 0;  // stride / resize factor / ignore index
  int i1 = 0;  // pad
  float f0 = 0.f;
  float f1 = 0.f;
  Tensor value;
  std::vector<int> labels;  // cross-entropy targets, row-major over pixels
  std::string name;         // params only
};

/// Define-by-run reverse-mode tape. Values are computed eagerly when a node
/// is created; backward() walks the tape in reverse and accumulates float
/// gradients with f64 partial sums in every reduction, always in row-major
/// order, so results are bitwise stable run to run.
class Graph {
 public:
  Var input(Tensor v);
  Var param(Tensor v, std::string name);

  Var conv2d(Var x, Var kernel, int stride, int pad);
  /// Transposed conv with fixed 2x2 kernel and stride 2: exact x2 upsample.
  Var conv_transpose2x2(Var x, Var kernel);
  /// Integer-factor nearest-neighbor upsample.
  Var resize_nn(Var x, int factor);
  /// x: [n], w: [n, m] -> [m]
  Var dense(Var x, Var w);
  Var relu(Var x);
  Var sigmoid(Var x);
  /// Per-pixel over channels for rank-3, over the whole vector for rank-1.
  Var softmax(Var x);
  /// bias: [C] broadcast over spatial dims (rank-3 x) or added directly (rank-1).
  Var add_channel(Var x, Var bias);
  Var scale_channel(Var x, Var scale);
  /// Channel-wise concat of two (H, W, *) tensors.
  Var concat(Var a, Var b);
  /// alpha*a + beta*b, elementwise; shapes must match.
  Var mix(Var a, Var b, float alpha, float beta);
  /// Mean over all elements of (pred - target)^2. Scalar output, shape (1).
  Var mse(Var pred, Var target);
  /// logits: [H, W, K]; targets: H*W labels row-major, ignore_index skipped.
  /// Mean negative log-softmax over non-ignored pixels; 0 if all ignored.
  Var cross_entropy(Var logits, std::vector<int> targets, int ignore_index);

  const Tensor& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
  const std::vector<int>& shape(Var v) const { return value(v).shape; }

  /// Accumulates gradients for every node on a path to the scalar loss.
  void backward(Var loss);

  /// Gradient of the last backward() wrt node v; empty tensor if v was not
  /// on any path to the loss (semantically zero).
  const Tensor& grad(Var v) const;

  /// Ids of Param nodes, in creation order.
  const std::vector<int>& param_ids() const { return param_ids_; }
  const std::string& param_name(int id) const { return nodes_[static_cast<size_t>(id)].name; }

  size_t size() const { return nodes_.size(); }

 private:
  int push(Node n);
  Node& at(Var v) { return nodes_[static_cast<size_t>(v.id)]; }
  const Node& at(Var v) const { return nodes_[static_cast<size_t>(v.id)]; }
  Tensor& grad_buf(int id);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<int> param_ids_;
};

/// Forward-only helpers shared by the graph and by eval-time code paths.
Tensor conv2d_raw(const Tensor& input, const Tensor& kernel, int stride, int pad);
Tensor softmax_raw(const Tensor& x);

}  // namespace pairdiff::nd
