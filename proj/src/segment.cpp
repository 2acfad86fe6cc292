#include "pairdiff/segment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "pairdiff/codec.hpp"
#include "pairdiff/common.hpp"

namespace pairdiff::segment {

using nd::Graph;
using nd::ParamStore;
using nd::Tensor;
using nd::Var;

void SegConfig::validate() const {
  if (K < 2 || K > 254) throw ConfigError("segment: K must be in [2, 254], got " + std::to_string(K));
  if (base_width < 2 || base_width % 2 != 0)
    throw ConfigError("segment: base_width must be even and >= 2, got " + std::to_string(base_width));
  if (depth < 2 || depth > 6)
    throw ConfigError("segment: depth must be in [2, 6], got " + std::to_string(depth));
  if (epochs < 0) throw ConfigError("segment: epochs must be >= 0");
  if (batch < 1) throw ConfigError("segment: batch must be >= 1");
  if (!(lr > 0.f) || !std::isfinite(lr)) throw ConfigError("segment: lr must be finite and positive");
}

namespace {

struct ParamPlan {
  std::string name;
  std::vector<int> shape;
};

std::vector<ParamPlan> plan(const SegConfig& cfg) {
  std::vector<ParamPlan> out;
  const int w0 = cfg.width(0);
  out.push_back({"stem.k", {3, 3, 3, w0}});
  out.push_back({"stem.b", {w0}});
  for (int l = 0; l + 1 < cfg.depth; ++l) {
    out.push_back({"down" + std::to_string(l) + ".k", {3, 3, cfg.width(l), cfg.width(l + 1)}});
    out.push_back({"down" + std::to_string(l) + ".b", {cfg.width(l + 1)}});
  }
  const int wb = cfg.width(cfg.depth - 1);
  out.push_back({"mid.k", {3, 3, wb, wb}});
  out.push_back({"mid.b", {wb}});
  for (int l = cfg.depth - 2; l >= 0; --l) {
    out.push_back({"up" + std::to_string(l) + ".t", {2, 2, cfg.width(l + 1), cfg.width(l)}});
    out.push_back({"dec" + std::to_string(l) + ".k", {3, 3, 2 * cfg.width(l), cfg.width(l)}});
    out.push_back({"dec" + std::to_string(l) + ".b", {cfg.width(l)}});
  }
  out.push_back({"out.k", {3, 3, w0, cfg.K}});
  out.push_back({"out.b", {cfg.K}});
  return out;
}

Tensor he_uniform(const std::vector<int>& shape, RngStream& rng) {
  Tensor t(shape);
  int64_t fan_in = 1;
  for (size_t i = 0; i + 1 < shape.size(); ++i) fan_in *= shape[i];
  const float bound = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in)));
  for (auto& v : t.data) v = (rng.uniform() * 2.f - 1.f) * bound;
  return t;
}

bool is_bias(const std::string& name) {
  return name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0;
}

void format_row(std::ostringstream& os, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  os << buf;
}

}  // namespace

ParamStore init_params(const SegConfig& cfg, uint64_t seed) {
  cfg.validate();
  RngStream rng(seed);
  ParamStore store;
  for (const auto& pl : plan(cfg)) {
    if (is_bias(pl.name)) {
      store.add(pl.name, Tensor(pl.shape));
    } else {
      store.add(pl.name, he_uniform(pl.shape, rng));
    }
  }
  return store;
}

int64_t param_count(const SegConfig& cfg) {
  cfg.validate();
  int64_t total = 0;
  for (const auto& pl : plan(cfg)) total += nd::shape_numel(pl.shape);
  return total;
}

ForwardVars build_forward(Graph& g, const ParamStore& store, const SegConfig& cfg, Var image) {
  cfg.validate();
  const Tensor& im = g.value(image);
  if (im.rank() != 3 || im.dim(2) != 3)
    throw ShapeError("segment: image must be (H, W, 3), got " + nd::shape_str(im.shape));
  const int f = cfg.downsample_factor();
  if (im.dim(0) % f != 0 || im.dim(1) % f != 0)
    throw ShapeError("segment: image dims must be divisible by " + std::to_string(f) + ", got " +
                     nd::shape_str(im.shape));

  auto p = [&](const std::string& name) { return g.param(store.at(name), name); };
  auto block = [&](Var x, const std::string& name, int stride) {
    Var y = g.conv2d(x, p(name + ".k"), stride, 1);
    y = g.add_channel(y, p(name + ".b"));
    return g.relu(y);
  };

  Var x = block(image, "stem", 1);
  std::vector<Var> skips;
  for (int l = 0; l + 1 < cfg.depth; ++l) {
    skips.push_back(x);
    x = block(x, "down" + std::to_string(l), 2);
  }
  x = block(x, "mid", 1);
  const Var bottleneck = x;
  Var mid = x;
  for (int l = cfg.depth - 2; l >= 0; --l) {
    Var up = g.conv_transpose2x2(x, p("up" + std::to_string(l) + ".t"));
    x = block(g.concat(up, skips[static_cast<size_t>(l)]), "dec" + std::to_string(l), 1);
    if (l == cfg.depth - 2) mid = x;
  }
  Var logits = g.add_channel(g.conv2d(x, p("out.k"), 1, 1), p("out.b"));
  return {logits, bottleneck, mid};
}

Tensor logits_value(const ParamStore& store, const SegConfig& cfg, const Tensor& image) {
  Graph g;
  ForwardVars out = build_forward(g, store, cfg, g.input(image));
  return g.value(out.logits);
}

std::vector<uint8_t> predict(const ParamStore& store, const SegConfig& cfg, const Tensor& image) {
  const Tensor logits = logits_value(store, cfg, image);
  const int H = logits.dim(0), W = logits.dim(1), K = logits.dim(2);
  std::vector<uint8_t> out(static_cast<size_t>(H) * W);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      int best = 0;
      float best_v = logits.at(y, x, 0);
      for (int c = 1; c < K; ++c) {
        const float v = logits.at(y, x, c);
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      out[static_cast<size_t>(y) * W + x] = static_cast<uint8_t>(best);
    }
  }
  return out;
}

SegFeatures extract_features(const ParamStore& store, const SegConfig& cfg, const Tensor& image) {
  Graph g;
  ForwardVars vars = build_forward(g, store, cfg, g.input(image));
  const Tensor& bn = g.value(vars.bottleneck);
  const int C = bn.dim(2);
  const int64_t sites = static_cast<int64_t>(bn.dim(0)) * bn.dim(1);
  SegFeatures out;
  out.pooled.assign(static_cast<size_t>(C), 0.0);
  for (int64_t s = 0; s < sites; ++s) {
    for (int c = 0; c < C; ++c) out.pooled[static_cast<size_t>(c)] += bn[s * C + c];
  }
  for (auto& v : out.pooled) v /= static_cast<double>(sites);
  out.mid_map = g.value(vars.mid);
  out.softmax = nd::softmax_raw(g.value(vars.logits));
  return out;
}

namespace {

void check_mask(const std::vector<uint8_t>& mask, int K, const std::string& what) {
  for (uint8_t m : mask) {
    if (m != kIgnoreIndex && m >= K)
      throw ConfigError("segment: " + what + " mask value " + std::to_string(int(m)) +
                        " out of range for K=" + std::to_string(K));
  }
}

void check_dims(const LabeledPair& pair, int f, const std::string& what) {
  if (pair.height() % f != 0 || pair.width() % f != 0)
    throw ShapeError("segment: " + what + " dims must be divisible by " + std::to_string(f));
}

metrics::ConfusionMatrix corpus_confusion(const ParamStore& store, const SegConfig& cfg,
                                          const std::vector<LabeledPair>& pairs) {
  std::vector<metrics::ConfusionMatrix> parts(pairs.size(), metrics::ConfusionMatrix(cfg.K));
#pragma omp parallel for schedule(dynamic, 1)
  for (int64_t i = 0; i < static_cast<int64_t>(pairs.size()); ++i) {
    const auto pred = predict(store, cfg, pairs[static_cast<size_t>(i)].image);
    parts[static_cast<size_t>(i)] = metrics::confusion(pred, pairs[static_cast<size_t>(i)].mask, cfg.K);
  }
  metrics::ConfusionMatrix total(cfg.K);
  for (const auto& part : parts) total += part;
  return total;
}

}  // namespace

TrainResult train_segmenter(const augment::TrainingSet& train, const datagen::Corpus& val,
                            const SegConfig& cfg) {
  cfg.validate();
  if (train.pairs.empty()) throw ConfigError("segment: training set is empty");
  if (val.pairs.empty()) throw ConfigError("segment: validation corpus is empty");
  if (train.K != cfg.K)
    throw ConfigError("segment: training set has K=" + std::to_string(train.K) +
                      ", config expects K=" + std::to_string(cfg.K));
  if (val.K != cfg.K)
    throw ConfigError("segment: validation corpus has K=" + std::to_string(val.K) +
                      ", config expects K=" + std::to_string(cfg.K));
  const int f = cfg.downsample_factor();
  for (const auto& pair : train.pairs) {
    check_dims(pair, f, "training");
    check_mask(pair.mask, cfg.K, "training");
  }
  for (const auto& pair : val.pairs) {
    check_dims(pair, f, "validation");
    check_mask(pair.mask, cfg.K, "validation");
  }

  TrainResult result;
  result.params = init_params(cfg, cfg.seed);
  result.best_epoch = 0;

  ParamStore store = result.params;
  nd::AdamConfig acfg;
  acfg.lr = cfg.lr;
  RngStream order_root(train.plan.seed);
  const int64_t n = static_cast<int64_t>(train.pairs.size());
  double best_miou = -1.0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    RngStream order_rng = order_root.derive(static_cast<uint64_t>(epoch));
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int64_t i = n - 1; i > 0; --i) {
      const int64_t j = static_cast<int64_t>(order_rng.uniform_int(static_cast<uint64_t>(i + 1)));
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }

    double loss_sum = 0.0;
    int num_batches = 0;
    for (int64_t start = 0; start < n; start += cfg.batch) {
      const int b = static_cast<int>(std::min<int64_t>(cfg.batch, n - start));
      const int step = num_batches + 1;
      std::vector<nd::GradAccumulator> slots(static_cast<size_t>(b), nd::GradAccumulator(store));
      std::vector<double> losses(static_cast<size_t>(b), 0.0);

#pragma omp parallel for schedule(dynamic, 1)
      for (int e = 0; e < b; ++e) {
        const LabeledPair& pair = train.pairs[static_cast<size_t>(order[static_cast<size_t>(start + e)])];
        Graph g;
        ForwardVars vars = build_forward(g, store, cfg, g.input(pair.image));
        std::vector<int> targets(pair.mask.begin(), pair.mask.end());
        Var loss = g.cross_entropy(vars.logits, targets, kIgnoreIndex);
        losses[static_cast<size_t>(e)] = g.value(loss)[0];
        g.backward(loss);
        slots[static_cast<size_t>(e)].add_from(g);
      }

      double batch_loss = 0.0;
      for (double l : losses) batch_loss += l;
      batch_loss /= b;
      if (!std::isfinite(batch_loss))
        throw NumericError("segment: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step));

      nd::GradAccumulator total(store);
      for (const auto& s : slots) total.merge(s);
      const float inv_b = 1.f / static_cast<float>(b);
      for (Tensor& gt : total.grads) {
        for (float& v : gt.data) v *= inv_b;
      }
      try {
        nd::adam_step(store, total.grads, acfg);
      } catch (const NumericError& err) {
        throw NumericError(std::string(err.what()) + " (epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step) + ")");
      }
      loss_sum += batch_loss;
      ++num_batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / num_batches;
    rec.confusion = corpus_confusion(store, cfg, val.pairs);
    const metrics::IouF1 scores = metrics::iou_f1(rec.confusion);
    rec.val_miou = scores.miou;
    rec.val_macro_f1 = scores.macro_f1;
    rec.val_iou = scores.iou;
    if (rec.val_miou > best_miou) {
      best_miou = rec.val_miou;
      result.params = store;
      result.best_epoch = epoch;
    }
    result.log.push_back(std::move(rec));
  }
  return result;
}

EvalResult evaluate(const ParamStore& store, const SegConfig& cfg, const datagen::Corpus& corpus) {
  cfg.validate();
  if (corpus.pairs.empty()) throw ConfigError("segment: evaluation corpus is empty");
  if (corpus.K != cfg.K)
    throw ConfigError("segment: corpus has K=" + std::to_string(corpus.K) + ", config expects K=" +
                      std::to_string(cfg.K));
  const int f = cfg.downsample_factor();
  for (const auto& pair : corpus.pairs) {
    check_dims(pair, f, "evaluation");
    check_mask(pair.mask, cfg.K, "evaluation");
  }
  EvalResult out;
  out.confusion = corpus_confusion(store, cfg, corpus.pairs);
  const metrics::IouF1 scores = metrics::iou_f1(out.confusion);
  out.report.miou = scores.miou;
  out.report.macro_f1 = scores.macro_f1;
  out.report.per_class_iou = scores.iou;
  out.report.class_freq = metrics::class_frequency(corpus);
  return out;
}

std::string metrics_log_csv(const std::vector<EpochRecord>& log, int K) {
  if (K < 1) throw ConfigError("segment: K must be >= 1");
  std::ostringstream os;
  os << "epoch,split,miou,f1";
  for (int c = 0; c < K; ++c) os << ",iou_" << c;
  os << "\n";
  for (const auto& rec : log) {
    if (static_cast<int>(rec.val_iou.size()) != K)
      throw ShapeError("segment: log record has " + std::to_string(rec.val_iou.size()) +
                       " per-class entries, expected " + std::to_string(K));
    os << rec.epoch << ",val,";
    format_row(os, rec.val_miou);
    os << ",";
    format_row(os, rec.val_macro_f1);
    for (int c = 0; c < K; ++c) {
      os << ",";
      format_row(os, rec.val_iou[static_cast<size_t>(c)]);
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace pairdiff::segment
