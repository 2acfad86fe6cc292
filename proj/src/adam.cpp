#include "pairdiff/adam.hpp"

#include <cmath>

namespace pairdiff::nd {

int ParamStore::add(const std::string& name, Tensor init) {
  if (index.count(name)) throw ConfigError("duplicate parameter name: " + name);
  int id = static_cast<int>(values.size());
  names.push_back(name);
  m.emplace_back(init.shape);
  v.emplace_back(init.shape);
  values.push_back(std::move(init));
  index.emplace(name, id);
  return id;
}

int ParamStore::find(const std::string& name) const {
  auto it = index.find(name);
  return it == index.end() ? -1 : it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  int id = find(name);
  if (id < 0) throw ConfigError("unknown parameter: " + name);
  return values[static_cast<size_t>(id)];
}

const Tensor& ParamStore::at(const std::string& name) const {
  int id = find(name);
  if (id < 0) throw ConfigError("unknown parameter: " + name);
  return values[static_cast<size_t>(id)];
}

int64_t ParamStore::total_scalars() const {
  int64_t n = 0;
  for (const Tensor& t : values) n += t.numel();
  return n;
}

void adam_step(ParamStore& store, const std::vector<Tensor>& grads, const AdamConfig& cfg) {
  if (grads.size() != store.values.size()) {
    throw ShapeError("adam_step: " + std::to_string(grads.size()) + " grads for " +
                     std::to_string(store.values.size()) + " params");
  }
  for (size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].empty()) continue;
    if (!grads[i].finite()) {
      throw NumericError("non-finite gradient for parameter '" + store.names[i] + "'");
    }
    if (!grads[i].same_shape(store.values[i])) {
      throw ShapeError("adam_step: grad shape mismatch for '" + store.names[i] + "'");
    }
  }

  const int64_t t = store.step + 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(t));
  for (size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].empty()) continue;
    Tensor& p = store.values[i];
    Tensor& mi = store.m[i];
    Tensor& vi = store.v[i];
    const Tensor& g = grads[i];
    for (int64_t j = 0; j < p.numel(); ++j) {
      const double gj = g[j];
      const double mj = cfg.beta1 * mi[j] + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * vi[j] + (1.0 - cfg.beta2) * gj * gj;
      mi[j] = static_cast<float>(mj);
      vi[j] = static_cast<float>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      p[j] = static_cast<float>(p[j] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
  store.step = t;
}

void ema_update(std::vector<Tensor>& shadow, const ParamStore& store, float decay) {
  if (shadow.empty()) {
    shadow = store.values;
    return;
  }
  if (shadow.size() != store.values.size()) throw ShapeError("ema_update: shadow size mismatch");
  for (size_t i = 0; i < shadow.size(); ++i) {
    const Tensor& p = store.values[i];
    Tensor& s = shadow[i];
    for (int64_t j = 0; j < p.numel(); ++j) {
      s[j] = decay * s[j] + (1.f - decay) * p[j];
    }
  }
}

GradAccumulator::GradAccumulator(const ParamStore& s) : store(&s) {
  grads.resize(s.values.size());
}

void GradAccumulator::add_from(const Graph& g) {
  for (int id : g.param_ids()) {
    const Tensor& pg = g.grad({id});
    if (pg.empty()) continue;
    int slot = store->find(g.param_name(id));
    if (slot < 0) throw ConfigError("graph parameter '" + g.param_name(id) + "' not in store");
    Tensor& dst = grads[static_cast<size_t>(slot)];
    if (dst.empty()) {
      dst = pg;
    } else {
      require_same_shape(dst, pg, "grad accumulate");
      for (int64_t j = 0; j < dst.numel(); ++j) dst[j] += pg[j];
    }
  }
}

void GradAccumulator::merge(const GradAccumulator& other) {
  for (size_t i = 0; i < grads.size(); ++i) {
    const Tensor& src = other.grads[i];
    if (src.empty()) continue;
    Tensor& dst = grads[i];
    if (dst.empty()) {
      dst = src;
    } else {
      for (int64_t j = 0; j < dst.numel(); ++j) dst[j] += src[j];
    }
  }
}

void GradAccumulator::clear() {
  for (Tensor& g : grads) g = Tensor();
}

}  // namespace pairdiff::nd
