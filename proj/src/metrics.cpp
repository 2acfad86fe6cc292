#include "pairdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

namespace pairdiff::metrics {

int64_t ConfusionMatrix::total() const {
  int64_t t = 0;
  for (int64_t c : counts) t += c;
  return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
  if (K != o.K) throw ShapeError("confusion: cannot add matrices of different K");
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
  return *this;
}

ConfusionMatrix confusion(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt,
                          int K) {
  if (K < 1) throw ConfigError("confusion: class count must be positive");
  if (pred.size() != gt.size()) throw ShapeError("confusion: prediction and ground truth differ in size");
  ConfusionMatrix conf(K);
  for (size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == kIgnoreIndex) continue;
    if (gt[i] >= K) {
      throw ConfigError("confusion: ground-truth class " + std::to_string(gt[i]) + " is not below " +
                        std::to_string(K));
    }
    if (pred[i] >= K) {
      throw ConfigError("confusion: predicted class " + std::to_string(pred[i]) + " is not below " +
                        std::to_string(K));
    }
    ++conf.at(gt[i], pred[i]);
  }
  return conf;
}

IouF1 iou_f1(const ConfusionMatrix& conf) {
  const int K = conf.K;
  IouF1 out;
  out.iou.assign(static_cast<size_t>(K), 0.0);
  out.f1.assign(static_cast<size_t>(K), 0.0);
  out.present.assign(static_cast<size_t>(K), false);

  double iou_sum = 0.0, f1_sum = 0.0;
  int present_count = 0;
  for (int k = 0; k < K; ++k) {
    const double tp = static_cast<double>(conf.at(k, k));
    double fp = 0.0, fn = 0.0;
    for (int j = 0; j < K; ++j) {
      if (j == k) continue;
      fp += static_cast<double>(conf.at(j, k));
      fn += static_cast<double>(conf.at(k, j));
    }
    if (tp + fp + fn == 0.0) continue;
    out.present[static_cast<size_t>(k)] = true;
    out.iou[static_cast<size_t>(k)] = tp / (tp + fp + fn);
    out.f1[static_cast<size_t>(k)] = 2.0 * tp / (2.0 * tp + fp + fn);
    iou_sum += out.iou[static_cast<size_t>(k)];
    f1_sum += out.f1[static_cast<size_t>(k)];
    ++present_count;
  }
  if (present_count == 0) throw ConfigError("iou_f1: confusion matrix is empty");
  out.miou = iou_sum / present_count;
  out.macro_f1 = f1_sum / present_count;
  return out;
}

namespace {

// cyclic Jacobi; a is destroyed, v receives eigenvectors as columns
void jacobi_eig(std::vector<double>& a, int d, std::vector<double>& v) {
  v.assign(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) v[static_cast<size_t>(i) * d + i] = 1.0;
  if (d == 1) return;

  double frob = 0.0;
  for (double x : a) frob += x * x;
  const double tol = 1e-28 * (frob + 1e-300);

  for (int sweep = 0; sweep < 128; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < d; ++p) {
      for (int q = p + 1; q < d; ++q) {
        const double x = a[static_cast<size_t>(p) * d + q];
        off += 2.0 * x * x;
      }
    }
    if (off <= tol) break;

    for (int p = 0; p < d; ++p) {
      for (int q = p + 1; q < d; ++q) {
        const double apq = a[static_cast<size_t>(p) * d + q];
        if (apq == 0.0) continue;
        const double app = a[static_cast<size_t>(p) * d + p];
        const double aqq = a[static_cast<size_t>(q) * d + q];
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;

        a[static_cast<size_t>(p) * d + p] = app - t * apq;
        a[static_cast<size_t>(q) * d + q] = aqq + t * apq;
        a[static_cast<size_t>(p) * d + q] = 0.0;
        a[static_cast<size_t>(q) * d + p] = 0.0;
        for (int k = 0; k < d; ++k) {
          if (k == p || k == q) continue;
          const double akp = a[static_cast<size_t>(k) * d + p];
          const double akq = a[static_cast<size_t>(k) * d + q];
          a[static_cast<size_t>(k) * d + p] = c * akp - s * akq;
          a[static_cast<size_t>(p) * d + k] = a[static_cast<size_t>(k) * d + p];
          a[static_cast<size_t>(k) * d + q] = s * akp + c * akq;
          a[static_cast<size_t>(q) * d + k] = a[static_cast<size_t>(k) * d + q];
        }
        for (int k = 0; k < d; ++k) {
          const double vkp = v[static_cast<size_t>(k) * d + p];
          const double vkq = v[static_cast<size_t>(k) * d + q];
          v[static_cast<size_t>(k) * d + p] = c * vkp - s * vkq;
          v[static_cast<size_t>(k) * d + q] = s * vkp + c * vkq;
        }
      }
    }
  }
}

void require_symmetric(const std::vector<double>& m, int d, const char* who) {
  if (d < 1 || m.size() != static_cast<size_t>(d) * d) {
    throw ShapeError(std::string(who) + ": expected a " + std::to_string(d) + "x" +
                     std::to_string(d) + " matrix");
  }
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) {
      const double diff =
          std::abs(m[static_cast<size_t>(i) * d + j] - m[static_cast<size_t>(j) * d + i]);
      if (diff > 1e-6) {
        throw NumericError(std::string(who) + ": matrix is asymmetric by " + std::to_string(diff));
      }
    }
  }
}

std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, int d) {
  std::vector<double> out(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) {
    for (int k = 0; k < d; ++k) {
      const double aik = a[static_cast<size_t>(i) * d + k];
      if (aik == 0.0) continue;
      for (int j = 0; j < d; ++j) {
        out[static_cast<size_t>(i) * d + j] += aik * b[static_cast<size_t>(k) * d + j];
      }
    }
  }
  return out;
}

}  // namespace

std::vector<double> sym_eigenvalues(const std::vector<double>& m, int d) {
  require_symmetric(m, d, "sym_eigenvalues");
  std::vector<double> a = m, v;
  // symmetrize the representation so Jacobi sees an exactly symmetric matrix
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      a[static_cast<size_t>(i) * d + j] =
          0.5 * (m[static_cast<size_t>(i) * d + j] + m[static_cast<size_t>(j) * d + i]);
    }
  }
  jacobi_eig(a, d, v);
  std::vector<double> eig(static_cast<size_t>(d));
  for (int i = 0; i < d; ++i) eig[static_cast<size_t>(i)] = a[static_cast<size_t>(i) * d + i];
  std::sort(eig.begin(), eig.end());
  return eig;
}

std::vector<double> sym_psd_sqrt(const std::vector<double>& m, int d) {
  require_symmetric(m, d, "sym_psd_sqrt");
  std::vector<double> a(static_cast<size_t>(d) * d), v;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      a[static_cast<size_t>(i) * d + j] =
          0.5 * (m[static_cast<size_t>(i) * d + j] + m[static_cast<size_t>(j) * d + i]);
    }
  }
  jacobi_eig(a, d, v);

  std::vector<double> root(static_cast<size_t>(d));
  for (int i = 0; i < d; ++i) {
    double lambda = a[static_cast<size_t>(i) * d + i];
    if (lambda < -1e-8) {
      throw NumericError("sym_psd_sqrt: eigenvalue " + std::to_string(lambda) +
                         " is below the PSD tolerance");
    }
    root[static_cast<size_t>(i)] = std::sqrt(std::max(lambda, 0.0));
  }

  // S = V diag(sqrt(lambda)) V^T
  std::vector<double> s(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) {
    for (int j = i; j < d; ++j) {
      double acc = 0.0;
      for (int k = 0; k < d; ++k) {
        acc += v[static_cast<size_t>(i) * d + k] * root[static_cast<size_t>(k)] *
               v[static_cast<size_t>(j) * d + k];
      }
      s[static_cast<size_t>(i) * d + j] = acc;
      s[static_cast<size_t>(j) * d + i] = acc;
    }
  }
  return s;
}

void FeatureSet::add(const std::vector<double>& v) {
  if (d == 0) d = static_cast<int>(v.size());
  if (static_cast<int>(v.size()) != d) {
    throw ShapeError("feature set: expected dimension " + std::to_string(d) + ", got " +
                     std::to_string(v.size()));
  }
  values.insert(values.end(), v.begin(), v.end());
}

namespace {

struct Gaussian {
  std::vector<double> mu;     // d
  std::vector<double> sigma;  // d*d
};

Gaussian fit_gaussian(const FeatureSet& f) {
  const int d = f.d;
  const int64_t n = f.n();
  Gaussian g;
  g.mu.assign(static_cast<size_t>(d), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) g.mu[static_cast<size_t>(j)] += f.values[static_cast<size_t>(i) * d + j];
  }
  for (double& x : g.mu) x /= static_cast<double>(n);

  g.sigma.assign(static_cast<size_t>(d) * d, 0.0);
  for (int64_t i = 0; i < n; ++i) {
    for (int a = 0; a < d; ++a) {
      const double ca = f.values[static_cast<size_t>(i) * d + a] - g.mu[static_cast<size_t>(a)];
      for (int b = a; b < d; ++b) {
        const double cb = f.values[static_cast<size_t>(i) * d + b] - g.mu[static_cast<size_t>(b)];
        g.sigma[static_cast<size_t>(a) * d + b] += ca * cb;
      }
    }
  }
  for (int a = 0; a < d; ++a) {
    for (int b = a; b < d; ++b) {
      g.sigma[static_cast<size_t>(a) * d + b] /= static_cast<double>(n - 1);
      g.sigma[static_cast<size_t>(b) * d + a] = g.sigma[static_cast<size_t>(a) * d + b];
    }
  }
  return g;
}

}  // namespace

double fid(const FeatureSet& real, const FeatureSet& fake) {
  if (real.d < 1 || fake.d < 1) throw ConfigError("fid: empty feature sets");
  if (real.d != fake.d) {
    throw ShapeError("fid: feature dimensions differ, " + std::to_string(real.d) + " vs " +
                     std::to_string(fake.d));
  }
  const int d = real.d;
  for (const FeatureSet* f : {&real, &fake}) {
    if (f->n() < d + 1) {
      throw ConfigError("fid: covariance of dimension " + std::to_string(d) + " needs at least " +
                        std::to_string(d + 1) + " samples, got " + std::to_string(f->n()));
    }
  }

  const Gaussian a = fit_gaussian(real);
  const Gaussian b = fit_gaussian(fake);

  double mean_term = 0.0;
  for (int j = 0; j < d; ++j) {
    const double diff = a.mu[static_cast<size_t>(j)] - b.mu[static_cast<size_t>(j)];
    mean_term += diff * diff;
  }

  // Tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2})
  const std::vector<double> s1_root = sym_psd_sqrt(a.sigma, d);
  std::vector<double> middle = matmul(matmul(s1_root, b.sigma, d), s1_root, d);
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) {
      const double avg = 0.5 * (middle[static_cast<size_t>(i) * d + j] +
                                middle[static_cast<size_t>(j) * d + i]);
      middle[static_cast<size_t>(i) * d + j] = avg;
      middle[static_cast<size_t>(j) * d + i] = avg;
    }
  }
  const std::vector<double> cross = sym_psd_sqrt(middle, d);

  double trace_term = 0.0;
  for (int i = 0; i < d; ++i) {
    trace_term += a.sigma[static_cast<size_t>(i) * d + i] + b.sigma[static_cast<size_t>(i) * d + i] -
                  2.0 * cross[static_cast<size_t>(i) * d + i];
  }

  double result = mean_term + trace_term;
  if (result < 0.0) {
    if (result < -1e-6) {
      throw NumericError("fid: distance " + std::to_string(result) + " is negative beyond tolerance");
    }
    result = 0.0;
  }
  return result;
}

std::vector<double> spatial_descriptor(const nd::Tensor& map) {
  if (map.rank() != 3) {
    throw ShapeError("spatial_descriptor: expected (h, w, c), got " + nd::shape_str(map.shape));
  }
  const int h = map.dim(0), w = map.dim(1), c = map.dim(2);
  std::vector<double> out(static_cast<size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int ch = 0; ch < c; ++ch) acc += static_cast<double>(map.at(y, x, ch));
      out[static_cast<size_t>(y) * w + x] = acc / c;
    }
  }
  return out;
}

double sfid(const std::vector<nd::Tensor>& real_maps, const std::vector<nd::Tensor>& fake_maps) {
  if (real_maps.empty() || fake_maps.empty()) throw ConfigError("sfid: empty map sets");
  const std::vector<int> shape = real_maps.front().shape;
  FeatureSet real, fake;
  for (const nd::Tensor& m : real_maps) {
    if (m.shape != shape) throw ShapeError("sfid: maps differ in shape");
    real.add(spatial_descriptor(m));
  }
  for (const nd::Tensor& m : fake_maps) {
    if (m.shape != shape) throw ShapeError("sfid: maps differ in shape");
    fake.add(spatial_descriptor(m));
  }
  return fid(real, fake);
}

std::vector<double> average_class_probs(const nd::Tensor& prob_map) {
  if (prob_map.rank() != 3) {
    throw ShapeError("average_class_probs: expected (h, w, K), got " + nd::shape_str(prob_map.shape));
  }
  const int h = prob_map.dim(0), w = prob_map.dim(1), K = prob_map.dim(2);
  std::vector<double> out(static_cast<size_t>(K), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < K; ++k) out[static_cast<size_t>(k)] += static_cast<double>(prob_map.at(y, x, k));
    }
  }
  for (double& v : out) v /= static_cast<double>(h) * w;
  return out;
}

double inception_score(const std::vector<std::vector<double>>& conditionals) {
  if (conditionals.empty()) throw ConfigError("inception_score: no samples");
  const size_t K = conditionals.front().size();
  if (K == 0) throw ConfigError("inception_score: empty class distribution");

  std::vector<double> marginal(K, 0.0);
  for (const std::vector<double>& p : conditionals) {
    if (p.size() != K) throw ShapeError("inception_score: distributions differ in length");
    for (size_t k = 0; k < K; ++k) marginal[k] += p[k];
  }
  for (double& v : marginal) v /= static_cast<double>(conditionals.size());

  constexpr double kFloor = 1e-12;
  double mean_kl = 0.0;
  for (const std::vector<double>& p : conditionals) {
    double kl = 0.0;
    for (size_t k = 0; k < K; ++k) {
      if (p[k] <= 0.0) continue;
      kl += p[k] * (std::log(std::max(p[k], kFloor)) - std::log(std::max(marginal[k], kFloor)));
    }
    mean_kl += kl;
  }
  mean_kl /= static_cast<double>(conditionals.size());
  return std::exp(mean_kl);
}

std::vector<double> class_frequency(const std::vector<std::vector<uint8_t>>& masks, int K) {
  if (K < 1) throw ConfigError("class_frequency: class count must be positive");
  std::vector<int64_t> counts(static_cast<size_t>(K), 0);
  int64_t total = 0;
  for (const std::vector<uint8_t>& mask : masks) {
    for (uint8_t m : mask) {
      if (m == kIgnoreIndex) continue;
      if (m >= K) {
        throw ConfigError("class_frequency: mask value " + std::to_string(m) + " is not below " +
                          std::to_string(K));
      }
      ++counts[m];
      ++total;
    }
  }
  if (total == 0) throw ConfigError("class_frequency: no scored pixels");
  std::vector<double> freq(static_cast<size_t>(K));
  for (int k = 0; k < K; ++k) {
    freq[static_cast<size_t>(k)] = static_cast<double>(counts[static_cast<size_t>(k)]) / total;
  }
  return freq;
}

std::vector<double> class_frequency(const datagen::Corpus& corpus) {
  std::vector<std::vector<uint8_t>> masks;
  masks.reserve(corpus.pairs.size());
  for (const LabeledPair& p : corpus.pairs) masks.push_back(p.mask);
  return class_frequency(masks, corpus.K);
}

double tvd(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ShapeError("tvd: distributions differ in length");
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
  return 0.5 * acc;
}

std::vector<double> occurrence_rates(const datagen::Corpus& corpus) {
  if (corpus.pairs.empty()) throw ConfigError("occurrence_rates: empty corpus");
  std::vector<int64_t> hits(static_cast<size_t>(corpus.K), 0);
  for (const LabeledPair& p : corpus.pairs) {
    std::set<uint8_t> seen(p.mask.begin(), p.mask.end());
    for (uint8_t m : seen) {
      if (m != kIgnoreIndex && m < corpus.K) ++hits[m];
    }
  }
  std::vector<double> out(static_cast<size_t>(corpus.K));
  for (int k = 0; k < corpus.K; ++k) {
    out[static_cast<size_t>(k)] =
        static_cast<double>(hits[static_cast<size_t>(k)]) / static_cast<double>(corpus.pairs.size());
  }
  return out;
}

RareClassReport rare_class_report(const std::vector<double>& iou_with,
                                  const std::vector<double>& iou_without,
                                  const std::vector<double>& occurrence) {
  if (iou_with.size() != iou_without.size() || iou_with.size() != occurrence.size()) {
    throw ShapeError("rare_class_report: per-class vectors differ in length");
  }
  RareClassReport report;
  const size_t K = iou_with.size();
  for (size_t k = 0; k < K; ++k) {
    report.rows.push_back({static_cast<int>(k), iou_with[k] - iou_without[k], occurrence[k]});
  }
  if (K < 3) return report;

  double mx = 0.0, my = 0.0;
  for (const RareClassReport::Row& r : report.rows) {
    mx += r.occurrence;
    my += r.delta_iou;
  }
  mx /= static_cast<double>(K);
  my /= static_cast<double>(K);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (const RareClassReport::Row& r : report.rows) {
    sxx += (r.occurrence - mx) * (r.occurrence - mx);
    syy += (r.delta_iou - my) * (r.delta_iou - my);
    sxy += (r.occurrence - mx) * (r.delta_iou - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return report;
  report.pearson_r = sxy / std::sqrt(sxx * syy);
  return report;
}

CooccurrenceStats cooccurrence_stats(const datagen::Corpus& corpus, int object_cls, int host_cls,
                                     int num_background) {
  if (num_background < 1) throw ConfigError("cooccurrence: need at least one background class");
  CooccurrenceStats stats;
  for (const LabeledPair& pair : corpus.pairs) {
    const int H = pair.height(), W = pair.width();
    for (const std::vector<int>& comp :
         augment::connected_components(pair.mask, H, W, object_cls)) {
      ++stats.instances;
      std::set<int> body(comp.begin(), comp.end());
      std::map<int, int64_t> votes;
      for (int p : comp) {
        const int y = p / W, x = p % W;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
            const int np = yy * W + xx;
            if (body.count(np)) continue;
            if (pair.mask[static_cast<size_t>(np)] < num_background) {
              ++votes[pair.mask[static_cast<size_t>(np)]];
            }
          }
        }
      }
      int best = -1;
      int64_t best_count = -1;
      for (const auto& [cls, count] : votes) {
        if (count > best_count) {
          best = cls;
          best_count = count;
        }
      }
      if (best == host_cls) ++stats.on_host;
    }
  }
  return stats;
}

std::string MetricsReport::csv() const {
  char buf[96];
  std::string out = "metric,value\n";
  auto row = [&](const std::string& name, double v) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    out += name;
    out += ',';
    out += buf;
    out += '\n';
  };
  row("miou", miou);
  row("macro_f1", macro_f1);
  for (size_t k = 0; k < per_class_iou.size(); ++k) row("iou_" + std::to_string(k), per_class_iou[k]);
  if (fid) row("fid", *fid);
  if (sfid) row("sfid", *sfid);
  if (is) row("is", *is);
  for (size_t k = 0; k < class_freq.size(); ++k) row("freq_" + std::to_string(k), class_freq[k]);
  if (tvd_vs_reference) row("tvd", *tvd_vs_reference);
  return out;
}

}  // namespace pairdiff::metrics
