#include "pairdiff/diffusion.hpp"

#include <chrono>
#include <cmath>
#include <cstring>

#include "pairdiff/codec.hpp"

namespace pairdiff::diffusion {

using nd::Graph;
using nd::ParamStore;
using nd::Tensor;
using nd::Var;

void NoiseSchedule::check_t(int t) const {
  if (t < 1 || t > T) {
    throw ConfigError("timestep " + std::to_string(t) + " outside 1.." + std::to_string(T));
  }
}

double NoiseSchedule::beta(int t) const {
  check_t(t);
  return betas[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha(int t) const {
  check_t(t);
  return alphas[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  check_t(t);
  return alpha_bars[static_cast<size_t>(t - 1)];
}

uint64_t NoiseSchedule::hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* p, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  mix(&T, sizeof(T));
  mix(betas.data(), betas.size() * sizeof(double));
  return h;
}

NoiseSchedule schedule_from_betas(std::vector<double> betas) {
  if (betas.empty()) throw ConfigError("schedule needs at least one beta");
  NoiseSchedule s;
  s.T = static_cast<int>(betas.size());
  s.betas = std::move(betas);
  s.alphas.resize(s.betas.size());
  s.alpha_bars.resize(s.betas.size());
  double prod = 1.0;
  for (size_t i = 0; i < s.betas.size(); ++i) {
    const double b = s.betas[i];
    if (b < 0.0 || b >= 1.0) throw ConfigError("beta out of [0,1): " + std::to_string(b));
    s.alphas[i] = 1.0 - b;
    prod *= s.alphas[i];
    s.alpha_bars[i] = prod;
  }
  return s;
}

NoiseSchedule linear_schedule(int T, double beta_start, double beta_end) {
  if (T < 2) throw ConfigError("linear schedule needs T >= 2");
  if (beta_start <= 0.0) throw ConfigError("beta_start must be positive");
  if (beta_end >= 1.0) throw ConfigError("beta_end must be below 1");
  if (beta_start >= beta_end) throw ConfigError("beta_start must be below beta_end");
  std::vector<double> betas(static_cast<size_t>(T));
  for (int i = 0; i < T; ++i) {
    const double u = static_cast<double>(i) / (T - 1);
    betas[static_cast<size_t>(i)] = beta_start * (1.0 - u) + beta_end * u;
  }
  return schedule_from_betas(std::move(betas));
}

namespace {

Tensor affine_pair(const Tensor& a, double ca, const Tensor& b, double cb) {
  nd::require_same_shape(a, b, "affine_pair");
  Tensor out(a.shape);
  for (int64_t i = 0; i < a.numel(); ++i) {
    out[i] = static_cast<float>(ca * a[i] + cb * b[i]);
  }
  return out;
}

}  // namespace

Tensor forward_step(const Tensor& x_prev, int t, const NoiseSchedule& sched, RngStream& rng) {
  const double b = sched.beta(t);
  Tensor eps(x_prev.shape);
  rng.fill_normal(eps.data);
  return affine_pair(x_prev, std::sqrt(1.0 - b), eps, std::sqrt(b));
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  const double ab = sched.alpha_bar(t);
  return affine_pair(x0, std::sqrt(ab), eps, std::sqrt(1.0 - ab));
}

Tensor predict_x0_from_eps(const Tensor& x_t, int t, const Tensor& eps_hat,
                           const NoiseSchedule& sched) {
  const double ab = sched.alpha_bar(t);
  return affine_pair(x_t, 1.0 / std::sqrt(ab), eps_hat, -std::sqrt(1.0 - ab) / std::sqrt(ab));
}

Tensor predict_eps_from_x0(const Tensor& x_t, int t, const Tensor& x0_hat,
                           const NoiseSchedule& sched) {
  const double ab = sched.alpha_bar(t);
  const double denom = std::sqrt(1.0 - ab);
  if (denom == 0.0) throw NumericError("predict_eps_from_x0: alpha_bar is 1 at t=" + std::to_string(t));
  return affine_pair(x_t, 1.0 / denom, x0_hat, -std::sqrt(ab) / denom);
}

Tensor p_step(const Tensor& x_t, int t, const Tensor& prediction, const SamplerConfig& cfg,
              const NoiseSchedule& sched, RngStream& rng) {
  nd::require_same_shape(x_t, prediction, "p_step");
  sched.check_t(t);
  Tensor eps_hat;
  if (cfg.prediction == PredictionMode::X0) {
    Tensor x0h = prediction;
    if (cfg.clip_x0_each_step) {
      for (float& v : x0h.data) v = v < -1.f ? -1.f : (v > 1.f ? 1.f : v);
    }
    eps_hat = predict_eps_from_x0(x_t, t, x0h, sched);
  } else if (cfg.clip_x0_each_step) {
    Tensor x0h = predict_x0_from_eps(x_t, t, prediction, sched);
    for (float& v : x0h.data) v = v < -1.f ? -1.f : (v > 1.f ? 1.f : v);
    eps_hat = predict_eps_from_x0(x_t, t, x0h, sched);
  } else {
    eps_hat = prediction;
  }

  const double b = sched.beta(t);
  const double a = sched.alpha(t);
  const double ab = sched.alpha_bar(t);
  Tensor mu = affine_pair(x_t, 1.0 / std::sqrt(a), eps_hat, -b / (std::sqrt(1.0 - ab) * std::sqrt(a)));
  if (t == 1) return mu;

  double sigma2 = b;
  if (cfg.sigma == SigmaMode::Posterior) {
    const double ab_prev = sched.alpha_bar(t - 1);
    sigma2 = (1.0 - ab_prev) / (1.0 - ab) * b;
  }
  Tensor z(x_t.shape);
  rng.fill_normal(z.data);
  return affine_pair(mu, 1.0, z, std::sqrt(sigma2));
}

void train_diffusion(const std::vector<Tensor>& dataset, const std::vector<Tensor>* cond,
                     ParamStore& params, const denoiser::DenoiserConfig& dcfg,
                     const TrainConfig& tcfg, const SamplerConfig& scfg, const NoiseSchedule& sched,
                     std::vector<LossRecord>& log) {
  if (dataset.empty()) throw ConfigError("train_diffusion: empty dataset");
  if (tcfg.batch < 1 || tcfg.steps < 0) throw ConfigError("train_diffusion: bad batch/steps");
  if (cond && cond->size() != dataset.size()) {
    throw ShapeError("train_diffusion: conditioning count vs dataset count");
  }
  if (static_cast<bool>(cond) != dcfg.conditional) {
    throw ConfigError("train_diffusion: conditioning presence must match the conditional config");
  }

  // to model space once
  std::vector<Tensor> z0(dataset.size());
  for (size_t i = 0; i < dataset.size(); ++i) {
    nd::require_same_shape(dataset[i], dataset[0], "train_diffusion dataset");
    z0[i] = codec::to_model_space(dataset[i]);
  }
  std::vector<Tensor> zc;
  if (cond) {
    zc.resize(cond->size());
    for (size_t i = 0; i < cond->size(); ++i) zc[i] = codec::to_model_space((*cond)[i]);
  }

  RngStream root(tcfg.seed);
  std::vector<Tensor> ema_shadow;

  for (int step = 1; step <= tcfg.steps; ++step) {
    const auto t_start = std::chrono::steady_clock::now();
    RngStream step_stream = root.derive(static_cast<uint64_t>(step));
    RngStream idx_stream = step_stream.derive(0);
    std::vector<size_t> batch_ids(static_cast<size_t>(tcfg.batch));
    for (auto& id : batch_ids) id = static_cast<size_t>(idx_stream.uniform_int(dataset.size()));

    std::vector<nd::GradAccumulator> slots(static_cast<size_t>(tcfg.batch),
                                           nd::GradAccumulator(params));
    std::vector<double> losses(static_cast<size_t>(tcfg.batch), 0.0);

#pragma omp parallel for schedule(dynamic, 1)
    for (int e = 0; e < tcfg.batch; ++e) {
      RngStream ex = step_stream.derive(1 + static_cast<uint64_t>(e));
      const Tensor& x0 = z0[batch_ids[static_cast<size_t>(e)]];
      const int t = 1 + static_cast<int>(ex.uniform_int(static_cast<uint64_t>(sched.T)));
      Tensor eps(x0.shape);
      ex.fill_normal(eps.data);
      Tensor x_t = q_sample(x0, t, eps, sched);

      Graph g;
      Var state = g.input(std::move(x_t));
      if (cond) state = g.concat(state, g.input(zc[batch_ids[static_cast<size_t>(e)]]));
      Var pred = denoiser::forward(g, state, t, params, dcfg);
      Var target = g.input(scfg.prediction == PredictionMode::Epsilon ? eps : x0);
      Var loss = g.mse(pred, target);
      losses[static_cast<size_t>(e)] = g.value(loss)[0];
      g.backward(loss);
      slots[static_cast<size_t>(e)].add_from(g);
    }

    double loss_sum = 0.0;
    for (double l : losses) loss_sum += l;
    const float mean_loss = static_cast<float>(loss_sum / tcfg.batch);
    if (!std::isfinite(mean_loss)) {
      throw NumericError("training loss became non-finite at step " + std::to_string(step));
    }

    nd::GradAccumulator total(params);
    for (const auto& s : slots) total.merge(s);
    const float inv_b = 1.f / static_cast<float>(tcfg.batch);
    for (Tensor& gt : total.grads) {
      for (float& v : gt.data) v *= inv_b;
    }
    nd::AdamConfig acfg;
    acfg.lr = tcfg.lr;
    nd::adam_step(params, total.grads, acfg);
    if (tcfg.ema_decay > 0.f) ema_update(ema_shadow, params, tcfg.ema_decay);

    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start).count();
    log.push_back({step, mean_loss, ms});
  }

  if (tcfg.ema_decay > 0.f && !ema_shadow.empty()) {
    params.values = ema_shadow;
  }
}

namespace {

Tensor upsample2_nn(const Tensor& in) {
  const int H = in.dim(0), W = in.dim(1), C = in.dim(2);
  Tensor out({2 * H, 2 * W, C});
  for (int y = 0; y < 2 * H; ++y) {
    for (int x = 0; x < 2 * W; ++x) {
      std::memcpy(&out.data[(static_cast<size_t>(y) * 2 * W + x) * C],
                  &in.data[(static_cast<size_t>(y / 2) * W + x / 2) * C],
                  sizeof(float) * static_cast<size_t>(C));
    }
  }
  return out;
}

Tensor run_trajectory(const ParamStore& params, const denoiser::DenoiserConfig& dcfg,
                      const Tensor* cond_model_space, int H, int W, const SamplerConfig& scfg,
                      const NoiseSchedule& sched, RngStream& stream) {
  Tensor x({H, W, dcfg.in_channels});
  stream.fill_normal(x.data);
  for (int t = sched.T; t >= 1; --t) {
    Tensor pred;
    if (cond_model_space) {
      Graph g;
      Var state = g.concat(g.input(x), g.input(*cond_model_space));
      pred = g.value(denoiser::forward(g, state, t, params, dcfg));
    } else {
      pred = denoiser::forward_value(x, t, params, dcfg);
    }
    x = p_step(x, t, pred, scfg, sched, stream);
  }
  return codec::from_model_space(x);
}

}  // namespace

std::vector<Tensor> sample_joint(const ParamStore& params, const denoiser::DenoiserConfig& dcfg,
                                 int n, int H, int W, const SamplerConfig& scfg,
                                 const NoiseSchedule& sched, RngStream& rng) {
  if (dcfg.conditional) throw ConfigError("sample_joint: params are for the conditional variant");
  std::vector<Tensor> out(static_cast<size_t>(n));
#pragma omp parallel for schedule(dynamic, 1)
  for (int s = 0; s < n; ++s) {
    RngStream stream = rng.derive(static_cast<uint64_t>(s));
    out[static_cast<size_t>(s)] = run_trajectory(params, dcfg, nullptr, H, W, scfg, sched, stream);
  }
  return out;
}

Tensor sample_superres(const ParamStore& params, const denoiser::DenoiserConfig& dcfg,
                       const Tensor& low_res, const SamplerConfig& scfg, const NoiseSchedule& sched,
                       RngStream& rng) {
  if (!dcfg.conditional) throw ConfigError("sample_superres: needs conditional denoiser params");
  if (low_res.rank() != 3 || low_res.dim(2) != dcfg.in_channels) {
    throw ShapeError("sample_superres: conditioning has " +
                     (low_res.rank() == 3 ? std::to_string(low_res.dim(2)) : std::string("?")) +
                     " channels, model expects " + std::to_string(dcfg.in_channels));
  }
  Tensor cond = upsample2_nn(codec::to_model_space(low_res));
  RngStream stream = rng.derive(0);
  return run_trajectory(params, dcfg, &cond, 2 * low_res.dim(0), 2 * low_res.dim(1), scfg, sched,
                        stream);
}

}  // namespace pairdiff::diffusion
