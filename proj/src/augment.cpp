#include "pairdiff/augment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <queue>
#include <sstream>

namespace pairdiff::augment {

size_t TrainingSet::count(Origin o) const {
  size_t n = 0;
  for (Origin x : origin) n += x == o ? 1 : 0;
  return n;
}

TrainingSet build_training_set(const datagen::Corpus& real, const datagen::Corpus& synthetic,
                               const ResamplePlan& plan) {
  if (plan.R < 0) throw ConfigError("resample plan: ratio must be non-negative");
  if (real.pairs.empty()) throw ConfigError("resample plan: need at least one real pair");

  const size_t need = static_cast<size_t>(plan.R) * real.pairs.size();
  if (synthetic.pairs.size() < need) {
    throw ConfigError("resample plan: ratio " + std::to_string(plan.R) + " needs " +
                      std::to_string(need) + " synthetic pairs, pool has " +
                      std::to_string(synthetic.pairs.size()));
  }
  if (need > 0 && synthetic.K != real.K) {
    throw ConfigError("resample plan: real corpus has " + std::to_string(real.K) +
                      " classes, synthetic has " + std::to_string(synthetic.K));
  }

  const int H = real.pairs.front().height(), W = real.pairs.front().width();
  auto check_dims = [&](const LabeledPair& p) {
    if (p.height() != H || p.width() != W) {
      throw ShapeError("resample plan: all pairs must share one image size");
    }
  };

  TrainingSet ts;
  ts.K = real.K;
  ts.plan = plan;
  const int copies = plan.balance && plan.R >= 1 ? plan.R : 1;
  for (const LabeledPair& p : real.pairs) {
    check_dims(p);
    for (int c = 0; c < copies; ++c) {
      ts.pairs.push_back(p);
      ts.origin.push_back(Origin::Real);
    }
  }
  for (size_t i = 0; i < need; ++i) {
    check_dims(synthetic.pairs[i]);
    ts.pairs.push_back(synthetic.pairs[i]);
    ts.origin.push_back(Origin::Synthetic);
  }
  return ts;
}

LabeledPair cutout_at(const LabeledPair& pair, int y0, int x0, int side) {
  const int H = pair.height(), W = pair.width();
  if (side < 0 || y0 < 0 || x0 < 0 || y0 + side > H || x0 + side > W) {
    throw ConfigError("cutout: square [" + std::to_string(y0) + "," + std::to_string(x0) +
                      ")+" + std::to_string(side) + " leaves the image");
  }
  LabeledPair out = pair;
  for (int y = y0; y < y0 + side; ++y) {
    for (int x = x0; x < x0 + side; ++x) {
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = 0.5f;
      out.mask[static_cast<size_t>(y) * W + x] = kIgnoreIndex;
    }
  }
  return out;
}

LabeledPair cutout(const LabeledPair& pair, RngStream& rng, double max_frac) {
  if (max_frac < 0.0 || max_frac > 1.0) throw ConfigError("cutout: max_frac outside [0,1]");
  const int H = pair.height(), W = pair.width();
  const int max_side = static_cast<int>(max_frac * std::min(H, W));
  const int side = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(max_side) + 1));
  if (side == 0) return pair;
  const int y0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(H - side) + 1));
  const int x0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(W - side) + 1));
  return cutout_at(pair, y0, x0, side);
}

LabeledPair cutmix_at(const LabeledPair& a, const LabeledPair& b, int y0, int x0, int h, int w) {
  if (!a.image.same_shape(b.image)) {
    throw ShapeError("cutmix: pairs differ, " + nd::shape_str(a.image.shape) + " vs " +
                     nd::shape_str(b.image.shape));
  }
  const int H = a.height(), W = a.width();
  if (h < 0 || w < 0 || y0 < 0 || x0 < 0 || y0 + h > H || x0 + w > W) {
    throw ConfigError("cutmix: region leaves the image");
  }
  LabeledPair out = a;
  for (int y = y0; y < y0 + h; ++y) {
    for (int x = x0; x < x0 + w; ++x) {
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = b.image.at(y, x, c);
      out.mask[static_cast<size_t>(y) * W + x] = b.mask[static_cast<size_t>(y) * W + x];
    }
  }
  return out;
}

LabeledPair cutmix(const LabeledPair& a, const LabeledPair& b, RngStream& rng) {
  if (!a.image.same_shape(b.image)) {
    throw ShapeError("cutmix: pairs differ, " + nd::shape_str(a.image.shape) + " vs " +
                     nd::shape_str(b.image.shape));
  }
  const int H = a.height(), W = a.width();
  const int h = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(H) + 1));
  const int w = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(W) + 1));
  if (h == 0 || w == 0) return a;
  const int y0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(H - h) + 1));
  const int x0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(W - w) + 1));
  return cutmix_at(a, b, y0, x0, h, w);
}

std::vector<std::vector<int>> connected_components(const std::vector<uint8_t>& mask, int H, int W,
                                                   int cls, int connectivity) {
  if (connectivity != 4 && connectivity != 8) {
    throw ConfigError("connected_components: connectivity must be 4 or 8");
  }
  if (mask.size() != static_cast<size_t>(H) * W) {
    throw ShapeError("connected_components: mask size does not match " + std::to_string(H) + "x" +
                     std::to_string(W));
  }
  std::vector<char> seen(mask.size(), 0);
  std::vector<std::vector<int>> comps;
  for (int start = 0; start < H * W; ++start) {
    if (mask[static_cast<size_t>(start)] != cls || seen[static_cast<size_t>(start)]) continue;
    std::vector<int> comp;
    std::queue<int> q;
    q.push(start);
    seen[static_cast<size_t>(start)] = 1;
    while (!q.empty()) {
      const int p = q.front();
      q.pop();
      comp.push_back(p);
      const int y = p / W, x = p % W;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          if (connectivity == 4 && dy != 0 && dx != 0) continue;
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
          const int np = yy * W + xx;
          if (mask[static_cast<size_t>(np)] == cls && !seen[static_cast<size_t>(np)]) {
            seen[static_cast<size_t>(np)] = 1;
            q.push(np);
          }
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    comps.push_back(std::move(comp));
  }
  return comps;
}

CopyPasteResult copy_paste(const LabeledPair& a, const LabeledPair& b, RngStream& rng,
                           const std::vector<int>& foreground) {
  if (foreground.empty()) throw ConfigError("copy_paste: foreground class set is empty");
  if (!a.image.same_shape(b.image)) {
    throw ShapeError("copy_paste: pairs differ, " + nd::shape_str(a.image.shape) + " vs " +
                     nd::shape_str(b.image.shape));
  }
  const int H = b.height(), W = b.width();

  std::vector<int> classes = foreground;
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

  std::vector<std::vector<int>> comps;
  std::vector<int> comp_class;
  for (int cls : classes) {
    for (std::vector<int>& c : connected_components(b.mask, H, W, cls)) {
      comps.push_back(std::move(c));
      comp_class.push_back(cls);
    }
  }

  CopyPasteResult result;
  if (comps.empty()) {
    result.pair = a;
    result.pasted = false;
    return result;
  }

  const size_t pick = rng.uniform_int(comps.size());
  result.pair = a;
  for (int p : comps[pick]) {
    for (int c = 0; c < 3; ++c) {
      result.pair.image[static_cast<int64_t>(p) * 3 + c] = b.image[static_cast<int64_t>(p) * 3 + c];
    }
    result.pair.mask[static_cast<size_t>(p)] = static_cast<uint8_t>(comp_class[pick]);
  }
  result.pasted = true;
  return result;
}

namespace {

datagen::Corpus as_corpus(const TrainingSet& ts, Origin which) {
  datagen::Corpus c;
  c.K = ts.K;
  for (size_t i = 0; i < ts.pairs.size(); ++i) {
    if (ts.origin[i] == which) c.pairs.push_back(ts.pairs[i]);
  }
  return c;
}

}  // namespace

void save_training_set(const TrainingSet& ts, const std::string& base_path) {
  if (ts.pairs.size() != ts.origin.size()) {
    throw ShapeError("training set: origin list does not match pairs");
  }
  const datagen::Corpus real = as_corpus(ts, Origin::Real);
  const datagen::Corpus synth = as_corpus(ts, Origin::Synthetic);
  datagen::save_corpus(real, base_path + ".real.satp");
  datagen::save_corpus(synth, base_path + ".synth.satp");

  std::ostringstream os;
  os << "plan.r=" << ts.plan.R << "\n";
  os << "plan.balance=" << (ts.plan.balance ? 1 : 0) << "\n";
  os << "plan.seed=" << ts.plan.seed << "\n";
  os << "k=" << ts.K << "\n";
  os << "real_entries=" << real.pairs.size() << "\n";
  os << "synthetic_entries=" << synth.pairs.size() << "\n";

  const std::string tmp = base_path + ".manifest.tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw Error("cannot open for write: " + tmp);
    f << os.str();
    if (!f) throw Error("write failed: " + tmp);
  }
  const std::string final_path = base_path + ".manifest";
  if (std::rename(tmp.c_str(), final_path.c_str()) != 0) {
    throw Error("rename failed: " + final_path);
  }
}

TrainingSet load_training_set(const std::string& base_path) {
  std::ifstream f(base_path + ".manifest");
  if (!f) throw MissingArtifactError("training-set manifest not found: " + base_path + ".manifest");

  TrainingSet ts;
  int64_t want_real = -1, want_synth = -1;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("training-set manifest: expected key=value in '" + line + "'");
    }
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    auto as_ll = [&]() -> int64_t {
      try {
        size_t pos = 0;
        const int64_t v = std::stoll(val, &pos);
        if (pos != val.size()) throw std::invalid_argument("trailing");
        return v;
      } catch (const std::exception&) {
        throw ConfigError("training-set manifest: bad number in '" + line + "'");
      }
    };
    if (key == "plan.r") {
      ts.plan.R = static_cast<int>(as_ll());
    } else if (key == "plan.balance") {
      ts.plan.balance = as_ll() != 0;
    } else if (key == "plan.seed") {
      ts.plan.seed = static_cast<uint64_t>(as_ll());
    } else if (key == "k") {
      ts.K = static_cast<int>(as_ll());
    } else if (key == "real_entries") {
      want_real = as_ll();
    } else if (key == "synthetic_entries") {
      want_synth = as_ll();
    } else {
      throw ConfigError("training-set manifest: unknown key '" + key + "'");
    }
  }
  if (want_real < 0 || want_synth < 0 || ts.K < 1) {
    throw FormatError("training-set manifest is incomplete: " + base_path + ".manifest");
  }

  const datagen::Corpus real = datagen::load_corpus(base_path + ".real.satp");
  const datagen::Corpus synth = datagen::load_corpus(base_path + ".synth.satp");
  if (static_cast<int64_t>(real.pairs.size()) != want_real ||
      static_cast<int64_t>(synth.pairs.size()) != want_synth) {
    throw FormatError("training-set files disagree with the manifest counts: " + base_path);
  }
  if (real.K != ts.K || synth.K != ts.K) {
    throw FormatError("training-set files disagree with the manifest class count: " + base_path);
  }
  for (const LabeledPair& p : real.pairs) {
    ts.pairs.push_back(p);
    ts.origin.push_back(Origin::Real);
  }
  for (const LabeledPair& p : synth.pairs) {
    ts.pairs.push_back(p);
    ts.origin.push_back(Origin::Synthetic);
  }
  return ts;
}

}  // namespace pairdiff::augment
