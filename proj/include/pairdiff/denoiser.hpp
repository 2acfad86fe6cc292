#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pairdiff/adam.hpp"
#include "pairdiff/autodiff.hpp"
#include "pairdiff/rng.hpp"
#include "pairdiff/tensor.hpp"

namespace pairdiff::denoiser {

/// Encoder-decoder noise predictor. depth = number of stride-2 downsamples;
/// level widths grow as base, 1.5*base, 2*base, ... The conditional variant
/// doubles the stem's input channels (state and conditioning concatenated by
/// the caller).
struct DenoiserConfig {
  int in_channels = 7;  // C of the joint sample
  int base_width = 32;
  int depth = 2;
  int time_embed_dim = 64;
  bool conditional = false;

  int width(int level) const { return base_width * (2 + level) / 2; }
  int stem_channels() const { return conditional ? 2 * in_channels : in_channels; }
};

/// Interleaved sin/cos of t over geometric frequencies spanning [1, 10000].
nd::Tensor timestep_embedding(int t, int dim);

/// He-uniform conv kernels, zero biases; the output conv is zeroed unless
/// zero_final is false (tests disable it to probe t-sensitivity at init).
void init_params(nd::ParamStore& store, const DenoiserConfig& cfg, RngStream& rng,
                 bool zero_final = true);

/// Builds the forward pass on the graph. state: (H, W, C) or (H, W, 2C) for
/// the conditional variant. Returns the (H, W, C) prediction.
nd::Var forward(nd::Graph& g, nd::Var state, int t, const nd::ParamStore& store,
                const DenoiserConfig& cfg);

/// Grad-free convenience wrapper around forward().
nd::Tensor forward_value(const nd::Tensor& state, int t, const nd::ParamStore& store,
                         const DenoiserConfig& cfg);

int64_t param_count(const DenoiserConfig& cfg);

}  // namespace pairdiff::denoiser
