#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pairdiff/augment.hpp"
#include "pairdiff/codec.hpp"
#include "pairdiff/tensor.hpp"

namespace pairdiff::metrics {

/// Rows are ground truth, columns are predictions.
struct ConfusionMatrix {
  int K = 0;
  std::vector<int64_t> counts;  // K*K row-major

  explicit ConfusionMatrix(int k = 0) : K(k), counts(static_cast<size_t>(k) * k, 0) {}
  int64_t& at(int gt, int pred) { return counts[static_cast<size_t>(gt) * K + pred]; }
  int64_t at(int gt, int pred) const { return counts[static_cast<size_t>(gt) * K + pred]; }
  int64_t total() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& o);
};

/// Ignore-index pixels in gt are skipped; any other value >= K in either map
/// is rejected.
ConfusionMatrix confusion(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt, int K);

struct IouF1 {
  std::vector<double> iou, f1;      // per class; 0 for absent classes
  std::vector<bool> present;        // class appears in gt or pred
  double miou = 0.0, macro_f1 = 0.0;  // means over present classes
};

IouF1 iou_f1(const ConfusionMatrix& conf);

/// Eigenvalues of a symmetric matrix (row-major d*d), ascending.
std::vector<double> sym_eigenvalues(const std::vector<double>& m, int d);

/// S with S*S = M for symmetric positive semidefinite M. Asymmetry beyond
/// 1e-6 or an eigenvalue below -1e-8 is rejected; small negative eigenvalues
/// are clamped to zero.
std::vector<double> sym_psd_sqrt(const std::vector<double>& m, int d);

struct FeatureSet {
  int d = 0;
  std::vector<double> values;  // n*d row-major

  int64_t n() const { return d > 0 ? static_cast<int64_t>(values.size()) / d : 0; }
  void add(const std::vector<double>& v);
};

/// Frechet distance between Gaussian fits of the two sets. Both need at
/// least d+1 samples (unbiased covariance).
double fid(const FeatureSet& real, const FeatureSet& fake);

/// Per-site channel mean of an (h, w, c) map; descriptor dimension h*w.
std::vector<double> spatial_descriptor(const nd::Tensor& map);

/// FID over spatial descriptors of mid-network maps, sensitive to layout.
double sfid(const std::vector<nd::Tensor>& real_maps, const std::vector<nd::Tensor>& fake_maps);

/// Spatial average of an (h, w, K) softmax map.
std::vector<double> average_class_probs(const nd::Tensor& prob_map);

/// exp(mean KL(p(y|x) || p(y))) with a 1e-12 probability floor.
double inception_score(const std::vector<std::vector<double>>& conditionals);

/// Pixel-count frequencies over non-ignored pixels.
std::vector<double> class_frequency(const std::vector<std::vector<uint8_t>>& masks, int K);
std::vector<double> class_frequency(const datagen::Corpus& corpus);

double tvd(const std::vector<double>& p, const std::vector<double>& q);

/// Share of images containing each class at least once.
std::vector<double> occurrence_rates(const datagen::Corpus& corpus);

struct RareClassReport {
  struct Row {
    int cls;
    double delta_iou;
    double occurrence;
  };
  std::vector<Row> rows;
  std::optional<double> pearson_r;  // absent for <3 classes or zero variance
};

RareClassReport rare_class_report(const std::vector<double>& iou_with,
                                  const std::vector<double>& iou_without,
                                  const std::vector<double>& occurrence);

struct CooccurrenceStats {
  int64_t instances = 0;
  int64_t on_host = 0;
  double rate() const { return instances > 0 ? static_cast<double>(on_host) / instances : 0.0; }
};

/// For each 4-connected component of object_cls, the modal background class
/// over its 8-neighborhood ring (ties to the smaller class, classes >=
/// num_background do not vote) is compared with host_cls.
CooccurrenceStats cooccurrence_stats(const datagen::Corpus& corpus, int object_cls, int host_cls,
                                     int num_background);

struct MetricsReport {
  double miou = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_iou;
  std::optional<double> fid, sfid, is;
  std::vector<double> class_freq;
  std::optional<double> tvd_vs_reference;

  /// "metric,value" rows, deterministic order and formatting.
  std::string csv() const;
};

}  // namespace pairdiff::metrics
