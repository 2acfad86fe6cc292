#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pairdiff/adam.hpp"
#include "pairdiff/augment.hpp"
#include "pairdiff/autodiff.hpp"
#include "pairdiff/metrics.hpp"
#include "pairdiff/rng.hpp"
#include "pairdiff/tensor.hpp"

namespace pairdiff::segment {

/// Encoder-decoder pixel classifier with skip connections and learned 2x2
/// transposed-conv upsampling. depth = number of resolution levels, so
/// depth-1 stride-2 downsamples; level widths grow as base, 1.5*base, 2*base.
struct SegConfig {
  int K = 6;
  int base_width = 32;
  int depth = 3;
  int epochs = 10;
  int batch = 8;
  float lr = 1e-3f;
  uint64_t seed = 0;

  int width(int level) const { return base_width * (2 + level) / 2; }
  int downsample_factor() const { return 1 << (depth - 1); }
  void validate() const;
};

nd::ParamStore init_params(const SegConfig& cfg, uint64_t seed);
int64_t param_count(const SegConfig& cfg);

struct ForwardVars {
  nd::Var logits;      // (H, W, K)
  nd::Var bottleneck;  // deepest activation, width(depth-1) channels
  nd::Var mid;         // first decoder activation
};

/// Builds the forward pass on the graph; image is (H, W, 3) with both
/// spatial dims divisible by the downsample factor.
ForwardVars build_forward(nd::Graph& g, const nd::ParamStore& store, const SegConfig& cfg,
                          nd::Var image);

nd::Tensor logits_value(const nd::ParamStore& store, const SegConfig& cfg, const nd::Tensor& image);

/// Per-pixel argmax over the K logits, ties toward the smaller class.
std::vector<uint8_t> predict(const nd::ParamStore& store, const SegConfig& cfg,
                             const nd::Tensor& image);

/// Taps for the generative metrics: global-average-pooled bottleneck (FID
/// features), mid-decoder map (sFID), and the (H, W, K) softmax (IS).
struct SegFeatures {
  std::vector<double> pooled;
  nd::Tensor mid_map;
  nd::Tensor softmax;
};

SegFeatures extract_features(const nd::ParamStore& store, const SegConfig& cfg,
                             const nd::Tensor& image);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_miou = 0.0;
  double val_macro_f1 = 0.0;
  std::vector<double> val_iou;
  metrics::ConfusionMatrix confusion;  // validation confusion of this epoch
};

struct TrainResult {
  nd::ParamStore params;  // state of the best validation epoch
  std::vector<EpochRecord> log;
  int best_epoch = 0;  // 0 when no epoch ran
};

/// Cross-entropy training with the ignore index excluded. Epoch ordering is
/// drawn from the training set's plan seed; initialization and any other
/// randomness come from cfg.seed. Returns the parameters of the epoch with
/// the highest validation mIoU (earliest on ties).
TrainResult train_segmenter(const augment::TrainingSet& train, const datagen::Corpus& val,
                            const SegConfig& cfg);

struct EvalResult {
  metrics::ConfusionMatrix confusion;
  metrics::MetricsReport report;
};

/// One aggregate confusion matrix over every pair (micro-averaged).
EvalResult evaluate(const nd::ParamStore& store, const SegConfig& cfg,
                    const datagen::Corpus& corpus);

/// One CSV row per epoch: epoch,split,miou,f1,iou_0..iou_{K-1}.
std::string metrics_log_csv(const std::vector<EpochRecord>& log, int K);

}  // namespace pairdiff::segment
