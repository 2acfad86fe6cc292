#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "pairdiff/autodiff.hpp"
#include "pairdiff/tensor.hpp"

namespace pairdiff::nd {

/// Named parameter set with Adam moment buffers. Insertion order is the
/// canonical order for gradient accumulation and checkpointing.
struct ParamStore {
  std::vector<std::string> names;
  std::vector<Tensor> values;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  int64_t step = 0;
  std::unordered_map<std::string, int> index;

  int add(const std::string& name, Tensor init);
  int find(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  int count() const { return static_cast<int>(values.size()); }
  int64_t total_scalars() const;
};

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// One Adam update with bias correction over the whole store. Grads are
/// aligned with store order; an empty grad tensor means zero (parameter was
/// off every loss path this step). Throws NumericError naming the first
/// parameter whose gradient holds a NaN or Inf; the step is then not applied.
void adam_step(ParamStore& store, const std::vector<Tensor>& grads, const AdamConfig& cfg);

/// Exponential moving average of parameters, shadow <- decay*shadow + (1-decay)*value.
void ema_update(std::vector<Tensor>& shadow, const ParamStore& store, float decay);

/// Per-sample gradient buffer aligned with a store. add_from() folds one
/// graph's parameter gradients in by name; merge() folds another accumulator
/// in. Keeping per-sample accumulation and merging in fixed sample order
/// makes batch-parallel training bitwise deterministic.
struct GradAccumulator {
  explicit GradAccumulator(const ParamStore& store);
  void add_from(const Graph& g);
  void merge(const GradAccumulator& other);
  void clear();

  const ParamStore* store;
  std::vector<Tensor> grads;
};

}  // namespace pairdiff::nd
