#pragma once

#include <cstdint>
#include <vector>

#include "pairdiff/tensor.hpp"

namespace pairdiff {

constexpr int kIgnoreIndex = 255;

/// Image (H, W, 3) in [0,1] plus a per-pixel class mask. Mask entries are a
/// class below K or kIgnoreIndex.
struct LabeledPair {
  nd::Tensor image;
  std::vector<uint8_t> mask;

  int height() const { return image.dim(0); }
  int width() const { return image.dim(1); }
};

namespace codec {

/// Bit planes per class count: ceil(log2 K).
int bit_channels(int K);

/// Channels of a packed joint sample: 3 RGB + bit planes.
int joint_channels(int K);

/// MSB-first binary code of a class index, entries exactly 0 or 1.
void bin_encode(int class_index, int K, float* out);
std::vector<float> bin_encode(int class_index, int K);

/// Nearest valid code under squared Euclidean distance; ties go to the
/// smaller class index. Any real input is accepted as-is.
int bin_decode_nn(const float* soft_bits, int K);

std::vector<float> onehot_encode(int class_index, int K);
/// Argmax with ties toward the smaller index.
int onehot_decode_nn(const float* soft, int K);

/// Concatenate RGB with per-pixel bit planes into (H, W, 3+ceil(log2 K)).
/// Rejects pairs containing ignore_index pixels.
nd::Tensor pack_joint(const LabeledPair& pair, int K);

/// Clamp channels to [0,1], split RGB, decode bit planes per pixel.
LabeledPair unpack_joint(const nd::Tensor& sample, int K);

/// Same bridge for the one-hot ablation: channels 3..3+K hold I[y=k].
nd::Tensor pack_joint_onehot(const LabeledPair& pair, int K);
LabeledPair unpack_joint_onehot(const nd::Tensor& sample, int K);

inline float to_model_space(float v) { return 2.f * v - 1.f; }
inline float from_model_space(float v) {
  v = v < -1.f ? -1.f : (v > 1.f ? 1.f : v);
  return 0.5f * (v + 1.f);
}
nd::Tensor to_model_space(const nd::Tensor& t);
nd::Tensor from_model_space(const nd::Tensor& t);

}  // namespace codec
}  // namespace pairdiff
