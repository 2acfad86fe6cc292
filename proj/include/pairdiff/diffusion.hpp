#pragma once

#include <cstdint>
#include <vector>

#include "pairdiff/adam.hpp"
#include "pairdiff/denoiser.hpp"
#include "pairdiff/rng.hpp"
#include "pairdiff/tensor.hpp"

namespace pairdiff::diffusion {

struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;       // betas[t-1] for t in 1..T
  std::vector<double> alphas;      // 1 - beta
  std::vector<double> alpha_bars;  // running product of alphas

  double beta(int t) const;
  double alpha(int t) const;
  double alpha_bar(int t) const;
  void check_t(int t) const;
  uint64_t hash() const;
};

/// Betas linearly interpolated from beta_start to beta_end inclusive.
NoiseSchedule linear_schedule(int T, double beta_start = 1e-4, double beta_end = 2e-2);

/// Schedule from explicit betas (tests use degenerate values like 0).
NoiseSchedule schedule_from_betas(std::vector<double> betas);

enum class PredictionMode { Epsilon, X0 };
enum class SigmaMode { Beta, Posterior };

struct SamplerConfig {
  PredictionMode prediction = PredictionMode::Epsilon;
  bool clip_x0_each_step = true;
  SigmaMode sigma = SigmaMode::Beta;
};

struct TrainConfig {
  int batch = 8;
  int steps = 400;
  float lr = 1e-3f;
  uint64_t seed = 0;
  float ema_decay = 0.f;  // 0 disables EMA
};

struct LossRecord {
  int step;
  float loss;
  double wall_ms;
};

/// One forward noising step: sqrt(1-beta_t) x_prev + sqrt(beta_t) eps.
nd::Tensor forward_step(const nd::Tensor& x_prev, int t, const NoiseSchedule& sched, RngStream& rng);

/// Closed-form marginal: sqrt(abar_t) x0 + sqrt(1-abar_t) eps.
nd::Tensor q_sample(const nd::Tensor& x0, int t, const nd::Tensor& eps, const NoiseSchedule& sched);

nd::Tensor predict_x0_from_eps(const nd::Tensor& x_t, int t, const nd::Tensor& eps_hat,
                               const NoiseSchedule& sched);
nd::Tensor predict_eps_from_x0(const nd::Tensor& x_t, int t, const nd::Tensor& x0_hat,
                               const NoiseSchedule& sched);

/// One reverse step from x_t to x_{t-1} given the model prediction for step
/// t. Noise is added for t > 1 only; at t = 1 the posterior mean is returned
/// as-is, so one trajectory consumes exactly T*H*W*C normal draws including
/// the initial latent.
nd::Tensor p_step(const nd::Tensor& x_t, int t, const nd::Tensor& prediction,
                  const SamplerConfig& cfg, const NoiseSchedule& sched, RngStream& rng);

/// Trains the denoiser on joint samples (values in [0,1]; moved to model
/// space internally). For the conditional variant, cond[i] pairs with
/// dataset[i] and is concatenated channel-wise after noising. Loss records
/// are appended to log.
void train_diffusion(const std::vector<nd::Tensor>& dataset, const std::vector<nd::Tensor>* cond,
                     nd::ParamStore& params, const denoiser::DenoiserConfig& dcfg,
                     const TrainConfig& tcfg, const SamplerConfig& scfg, const NoiseSchedule& sched,
                     std::vector<LossRecord>& log);

/// Draws n joint samples in [0,1]. Each sample uses its own derived stream.
std::vector<nd::Tensor> sample_joint(const nd::ParamStore& params,
                                     const denoiser::DenoiserConfig& dcfg, int n, int H, int W,
                                     const SamplerConfig& scfg, const NoiseSchedule& sched,
                                     RngStream& rng);

/// Conditional sampling at 2x the conditioning resolution. low_res is a
/// joint sample in [0,1]; it is nearest-neighbor upsampled and concatenated
/// to the state at every step.
nd::Tensor sample_superres(const nd::ParamStore& params, const denoiser::DenoiserConfig& dcfg,
                           const nd::Tensor& low_res, const SamplerConfig& scfg,
                           const NoiseSchedule& sched, RngStream& rng);

}  // namespace pairdiff::diffusion
