#include "pairdiff/codec.hpp"

#include <cmath>
#include <string>

namespace pairdiff::codec {

int bit_channels(int K) {
  if (K < 2) throw ConfigError("class count must be >= 2, got " + std::to_string(K));
  int b = 0;
  while ((1 << b) < K) ++b;
  return b;
}

int joint_channels(int K) { return 3 + bit_channels(K); }

void bin_encode(int class_index, int K, float* out) {
  const int B = bit_channels(K);
  if (class_index < 0 || class_index >= K) {
    throw ConfigError("class index " + std::to_string(class_index) + " out of range for K=" +
                      std::to_string(K));
  }
  for (int b = 0; b < B; ++b) {
    out[b] = static_cast<float>((class_index >> (B - 1 - b)) & 1);
  }
}

std::vector<float> bin_encode(int class_index, int K) {
  std::vector<float> out(static_cast<size_t>(bit_channels(K)));
  bin_encode(class_index, K, out.data());
  return out;
}

int bin_decode_nn(const float* soft_bits, int K) {
  const int B = bit_channels(K);
  int best = 0;
  double best_d = 1e300;
  for (int k = 0; k < K; ++k) {
    double d = 0.0;
    for (int b = 0; b < B; ++b) {
      const double bit = (k >> (B - 1 - b)) & 1;
      const double diff = static_cast<double>(soft_bits[b]) - bit;
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

std::vector<float> onehot_encode(int class_index, int K) {
  if (class_index < 0 || class_index >= K) {
    throw ConfigError("class index " + std::to_string(class_index) + " out of range for K=" +
                      std::to_string(K));
  }
  std::vector<float> out(static_cast<size_t>(K), 0.f);
  out[static_cast<size_t>(class_index)] = 1.f;
  return out;
}

int onehot_decode_nn(const float* soft, int K) {
  int best = 0;
  for (int k = 1; k < K; ++k) {
    if (soft[k] > soft[best]) best = k;
  }
  return best;
}

namespace {

nd::Tensor pack_with(const LabeledPair& pair, int K, int label_channels,
                     void (*encode)(int, int, float*)) {
  if (pair.image.rank() != 3 || pair.image.dim(2) != 3) {
    throw ShapeError("pack_joint: image must be (H, W, 3), got " + nd::shape_str(pair.image.shape));
  }
  const int H = pair.height(), W = pair.width();
  if (static_cast<int>(pair.mask.size()) != H * W) {
    throw ShapeError("pack_joint: mask size vs image dims");
  }
  const int C = 3 + label_channels;
  nd::Tensor out({H, W, C});
  for (int p = 0; p < H * W; ++p) {
    const int y = pair.mask[static_cast<size_t>(p)];
    if (y == kIgnoreIndex) {
      throw ConfigError("pack_joint: ignore_index pixel at " + std::to_string(p) +
                        "; only fully labeled pairs can be packed");
    }
    if (y >= K) throw ConfigError("pack_joint: mask value " + std::to_string(y) + " >= K");
    float* dst = &out.data[static_cast<size_t>(p) * C];
    const float* src = &pair.image.data[static_cast<size_t>(p) * 3];
    dst[0] = src[0];
    dst[1] = src[1];
    dst[2] = src[2];
    encode(y, K, dst + 3);
  }
  return out;
}

LabeledPair unpack_with(const nd::Tensor& sample, int K, int label_channels,
                        int (*decode)(const float*, int)) {
  if (sample.rank() != 3 || sample.dim(2) != 3 + label_channels) {
    throw ShapeError("unpack_joint: expected " + std::to_string(3 + label_channels) +
                     " channels for K=" + std::to_string(K) + ", got " + nd::shape_str(sample.shape));
  }
  const int H = sample.dim(0), W = sample.dim(1), C = sample.dim(2);
  LabeledPair pair;
  pair.image = nd::Tensor({H, W, 3});
  pair.mask.resize(static_cast<size_t>(H) * W);
  std::vector<float> bits(static_cast<size_t>(label_channels));
  for (int p = 0; p < H * W; ++p) {
    const float* src = &sample.data[static_cast<size_t>(p) * C];
    float* dst = &pair.image.data[static_cast<size_t>(p) * 3];
    for (int c = 0; c < 3; ++c) {
      const float v = src[c];
      dst[c] = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
    }
    for (int b = 0; b < label_channels; ++b) {
      const float v = src[3 + b];
      bits[static_cast<size_t>(b)] = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
    }
    pair.mask[static_cast<size_t>(p)] = static_cast<uint8_t>(decode(bits.data(), K));
  }
  return pair;
}

void onehot_encode_into(int class_index, int K, float* out) {
  for (int k = 0; k < K; ++k) out[k] = 0.f;
  out[class_index] = 1.f;
}

}  // namespace

nd::Tensor pack_joint(const LabeledPair& pair, int K) {
  return pack_with(pair, K, bit_channels(K), &bin_encode);
}

LabeledPair unpack_joint(const nd::Tensor& sample, int K) {
  return unpack_with(sample, K, bit_channels(K), &bin_decode_nn);
}

nd::Tensor pack_joint_onehot(const LabeledPair& pair, int K) {
  return pack_with(pair, K, K, &onehot_encode_into);
}

LabeledPair unpack_joint_onehot(const nd::Tensor& sample, int K) {
  return unpack_with(sample, K, K, &onehot_decode_nn);
}

nd::Tensor to_model_space(const nd::Tensor& t) {
  nd::Tensor out = t;
  for (float& v : out.data) v = to_model_space(v);
  return out;
}

nd::Tensor from_model_space(const nd::Tensor& t) {
  nd::Tensor out = t;
  for (float& v : out.data) v = from_model_space(v);
  return out;
}

}  // namespace pairdiff::codec
