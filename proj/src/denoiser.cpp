#include "pairdiff/denoiser.hpp"

#include <cmath>

namespace pairdiff::denoiser {

using nd::Graph;
using nd::ParamStore;
using nd::Tensor;
using nd::Var;

nd::Tensor timestep_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw ConfigError("time embedding dim must be even and >= 2");
  Tensor out({dim});
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    // frequencies 1 .. 1/10000, geometric
    const double freq = std::exp(-std::log(10000.0) * (half == 1 ? 0.0 : static_cast<double>(i) / (half - 1)));
    const double angle = static_cast<double>(t) * freq;
    out[2 * i] = static_cast<float>(std::sin(angle));
    out[2 * i + 1] = static_cast<float>(std::cos(angle));
  }
  return out;
}

namespace {

Tensor he_uniform(std::vector<int> shape, RngStream& rng) {
  // fan_in = kh*kw*Cin for conv kernels, rows for dense
  int64_t fan_in = 1;
  for (size_t i = 0; i + 1 < shape.size(); ++i) fan_in *= shape[i];
  const float bound = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in)));
  Tensor t(std::move(shape));
  for (float& v : t.data) v = static_cast<float>((rng.uniform() * 2.0 - 1.0) * bound);
  return t;
}

struct LayerPlan {
  std::string name;
  std::vector<int> kernel;
  bool bias = false;
  int time_to = 0;  // width of the time projection target, 0 = none
};

std::vector<LayerPlan> plan(const DenoiserConfig& cfg) {
  std::vector<LayerPlan> layers;
  const int d = cfg.depth;
  layers.push_back({"stem", {3, 3, cfg.stem_channels(), cfg.width(0)}, true, 0});
  for (int i = 0; i < d; ++i) {
    layers.push_back({"enc" + std::to_string(i), {3, 3, cfg.width(i), cfg.width(i)}, true, cfg.width(i)});
    layers.push_back({"down" + std::to_string(i), {3, 3, cfg.width(i), cfg.width(i + 1)}, true, 0});
  }
  layers.push_back({"mid", {3, 3, cfg.width(d), cfg.width(d)}, true, cfg.width(d)});
  for (int i = d - 1; i >= 0; --i) {
    layers.push_back({"dec" + std::to_string(i),
                      {3, 3, cfg.width(i + 1) + cfg.width(i), cfg.width(i)},
                      true,
                      cfg.width(i)});
  }
  layers.push_back({"out", {3, 3, cfg.width(0), cfg.in_channels}, true, 0});
  return layers;
}

}  // namespace

void init_params(ParamStore& store, const DenoiserConfig& cfg, RngStream& rng, bool zero_final) {
  for (const LayerPlan& l : plan(cfg)) {
    if (l.name == "out" && zero_final) {
      store.add(l.name + ".k", Tensor(l.kernel));
    } else {
      store.add(l.name + ".k", he_uniform(l.kernel, rng));
    }
    if (l.bias) store.add(l.name + ".b", Tensor({l.kernel[3]}));
    if (l.time_to > 0) {
      store.add(l.name + ".t", he_uniform({cfg.time_embed_dim, l.time_to}, rng));
    }
  }
}

int64_t param_count(const DenoiserConfig& cfg) {
  int64_t n = 0;
  for (const LayerPlan& l : plan(cfg)) {
    n += nd::shape_numel(l.kernel);
    if (l.bias) n += l.kernel[3];
    if (l.time_to > 0) n += static_cast<int64_t>(cfg.time_embed_dim) * l.time_to;
  }
  return n;
}

Var forward(Graph& g, Var state, int t, const ParamStore& store, const DenoiserConfig& cfg) {
  const auto& in_shape = g.shape(state);
  if (in_shape.size() != 3 || in_shape[2] != cfg.stem_channels()) {
    throw ShapeError("denoiser: expected " + std::to_string(cfg.stem_channels()) +
                     " input channels, got " + nd::shape_str(in_shape));
  }
  const int div = 1 << cfg.depth;
  if (in_shape[0] % div != 0 || in_shape[1] % div != 0) {
    throw ShapeError("denoiser: spatial dims must be divisible by " + std::to_string(div) +
                     ", got " + nd::shape_str(in_shape));
  }
  Var emb = g.input(timestep_embedding(t, cfg.time_embed_dim));

  auto p = [&](const std::string& name) { return g.param(store.at(name), name); };
  auto block = [&](Var x, const std::string& name, int stride) {
    Var h = g.conv2d(x, p(name + ".k"), stride, 1);
    h = g.add_channel(h, p(name + ".b"));
    if (store.find(name + ".t") >= 0) {
      h = g.add_channel(h, g.dense(emb, p(name + ".t")));
    }
    return g.relu(h);
  };

  Var x = block(state, "stem", 1);
  std::vector<Var> skips;
  for (int i = 0; i < cfg.depth; ++i) {
    x = block(x, "enc" + std::to_string(i), 1);
    skips.push_back(x);
    x = block(x, "down" + std::to_string(i), 2);
  }
  x = block(x, "mid", 1);
  for (int i = cfg.depth - 1; i >= 0; --i) {
    x = g.concat(g.resize_nn(x, 2), skips[static_cast<size_t>(i)]);
    x = block(x, "dec" + std::to_string(i), 1);
  }
  return g.add_channel(g.conv2d(x, p("out.k"), 1, 1), p("out.b"));
}

Tensor forward_value(const Tensor& state, int t, const ParamStore& store, const DenoiserConfig& cfg) {
  Graph g;
  return g.value(forward(g, g.input(state), t, store, cfg));
}

}  // namespace pairdiff::denoiser
