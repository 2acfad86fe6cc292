#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fd_check.hpp"
#include "ref_ops.hpp"
#include "pairdiff/denoiser.hpp"
#include "pairdiff/rng.hpp"

using namespace pairdiff;
using namespace pairdiff::denoiser;
using nd::Tensor;

namespace {

// deterministic positive values in [lo, hi], varied by index
void fill_pattern(Tensor& t, float lo, float hi, int salt = 0) {
  for (int64_t j = 0; j < t.numel(); ++j) {
    const int u = static_cast<int>((j * 37 + salt * 13) % 101);
    t[j] = lo + (hi - lo) * static_cast<float>(u) / 100.f;
  }
}

}  // namespace

TEST_CASE("timestep embedding: zero angle, bounded norm, no collisions") {
  Tensor e0 = timestep_embedding(0, 16);
  for (int i = 0; i < 8; ++i) {
    CHECK(e0[2 * i] == 0.f);
    CHECK(e0[2 * i + 1] == 1.f);
  }

  for (int t : {1, 7, 500}) {
    Tensor e = timestep_embedding(t, 64);
    double norm2 = 0.0;
    for (int64_t i = 0; i < e.numel(); ++i) norm2 += static_cast<double>(e[i]) * e[i];
    CHECK(std::sqrt(norm2) <= std::sqrt(64.0) + 1e-6);
    // sin^2 + cos^2 pins the norm exactly
    CHECK(std::sqrt(norm2) == doctest::Approx(std::sqrt(32.0)).epsilon(1e-5));
  }

  // exhaustive collision scan at the minimum supported width
  std::vector<Tensor> embs;
  embs.reserve(1000);
  for (int t = 1; t <= 1000; ++t) embs.push_back(timestep_embedding(t, 8));
  std::vector<int> order(1000);
  for (int i = 0; i < 1000; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return std::lexicographical_compare(embs[a].data.begin(), embs[a].data.end(),
                                        embs[b].data.begin(), embs[b].data.end());
  });
  for (int i = 1; i < 1000; ++i) {
    CHECK(embs[order[i - 1]].data != embs[order[i]].data);
  }

  CHECK_THROWS_AS(timestep_embedding(1, 7), ConfigError);
  CHECK_THROWS_AS(timestep_embedding(1, 0), ConfigError);
}

TEST_CASE("parameter budget at default sizes stays under 200k") {
  DenoiserConfig cfg;  // defaults: 7 channels, base 32, depth 2, embed 64
  const int64_t n = param_count(cfg);
  CHECK(n <= 200000);

  nd::ParamStore store;
  RngStream rng(3);
  init_params(store, cfg, rng);
  CHECK(store.total_scalars() == n);
}

TEST_CASE("forward obeys the shape law and is deterministic") {
  DenoiserConfig cfg;
  cfg.in_channels = 5;
  cfg.base_width = 8;
  cfg.depth = 2;
  cfg.time_embed_dim = 16;
  nd::ParamStore store;
  RngStream rng(11);
  init_params(store, cfg, rng, /*zero_final=*/false);

  RngStream xr(12);
  Tensor x({8, 8, 5});
  xr.fill_normal(x.data);

  Tensor a = forward_value(x, 3, store, cfg);
  Tensor b = forward_value(x, 3, store, cfg);
  REQUIRE(a.shape == std::vector<int>({8, 8, 5}));
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);

  // 12x12 is fine at depth 2, 10x10 is not
  Tensor ok({12, 12, 5});
  CHECK_NOTHROW(forward_value(ok, 1, store, cfg));
  Tensor bad({10, 10, 5});
  CHECK_THROWS_AS(forward_value(bad, 1, store, cfg), ShapeError);
  Tensor wrong_c({8, 8, 4});
  CHECK_THROWS_AS(forward_value(wrong_c, 1, store, cfg), ShapeError);
}

TEST_CASE("zero-initialized output layer predicts exactly zero") {
  DenoiserConfig cfg;
  cfg.in_channels = 4;
  cfg.base_width = 4;
  cfg.depth = 1;
  cfg.time_embed_dim = 8;
  nd::ParamStore store;
  RngStream rng(2);
  init_params(store, cfg, rng);  // zero_final defaults on

  RngStream xr(4);
  Tensor x({8, 8, 4});
  xr.fill_normal(x.data);
  Tensor out = forward_value(x, 1, store, cfg);
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 0.f);
}

TEST_CASE("the timestep input conditions the output") {
  DenoiserConfig cfg;
  cfg.in_channels = 4;
  cfg.base_width = 4;
  cfg.depth = 1;
  cfg.time_embed_dim = 8;
  nd::ParamStore store;
  RngStream rng(5);
  init_params(store, cfg, rng, /*zero_final=*/false);

  RngStream xr(6);
  Tensor x({8, 8, 4});
  xr.fill_normal(x.data);
  Tensor early = forward_value(x, 1, store, cfg);
  Tensor late = forward_value(x, 200, store, cfg);
  double l2 = 0.0;
  for (int64_t i = 0; i < early.numel(); ++i) {
    l2 += (static_cast<double>(early[i]) - late[i]) * (static_cast<double>(early[i]) - late[i]);
  }
  CHECK(l2 > 1e-8);
}

TEST_CASE("conditional variant with zeroed conditioning weights reproduces the unconditional net") {
  DenoiserConfig ucfg;
  ucfg.in_channels = 4;
  ucfg.base_width = 4;
  ucfg.depth = 1;
  ucfg.time_embed_dim = 8;
  DenoiserConfig ccfg = ucfg;
  ccfg.conditional = true;

  nd::ParamStore uncond;
  RngStream rng(9);
  init_params(uncond, ucfg, rng, /*zero_final=*/false);

  // same tensors, except the stem kernel gains 4 input channels whose
  // weights are all zero
  nd::ParamStore cond;
  for (size_t i = 0; i < uncond.names.size(); ++i) {
    const Tensor& src = uncond.values[i];
    if (uncond.names[i] == "stem.k") {
      Tensor widened({3, 3, 8, 4});
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx)
          for (int ci = 0; ci < 4; ++ci)
            for (int co = 0; co < 4; ++co)
              widened.at(ky, kx, ci, co) = src.at(ky, kx, ci, co);
      cond.add(uncond.names[i], widened);
    } else {
      cond.add(uncond.names[i], src);
    }
  }

  RngStream xr(10);
  Tensor x({8, 8, 4});
  xr.fill_normal(x.data);
  Tensor junk({8, 8, 4});
  xr.fill_normal(junk.data);
  Tensor stacked({8, 8, 8});
  for (int y = 0; y < 8; ++y)
    for (int xx = 0; xx < 8; ++xx)
      for (int c = 0; c < 8; ++c)
        stacked.at(y, xx, c) = c < 4 ? x.at(y, xx, c) : junk.at(y, xx, c - 4);

  Tensor want = forward_value(x, 3, uncond, ucfg);
  Tensor got = forward_value(stacked, 3, cond, ccfg);
  REQUIRE(got.shape == want.shape);
  for (int64_t i = 0; i < want.numel(); ++i) CHECK(got[i] == want[i]);

  // the conditional net refuses plain C-channel input
  CHECK_THROWS_AS(forward_value(x, 3, cond, ccfg), ShapeError);
}

namespace {

// Double-precision mirror of the full forward pass for the finite-difference
// oracle. Parameter order matches store insertion order:
//   0 stem.k  1 stem.b
//   2 enc0.k  3 enc0.b  4 enc0.t
//   5 down0.k 6 down0.b
//   7 mid.k   8 mid.b   9 mid.t
//  10 dec0.k 11 dec0.b 12 dec0.t
//  13 out.k  14 out.b
double denoiser_ref_loss(const fd::DParams& p, const Tensor& x_in, const Tensor& emb_in,
                         const Tensor& target, double* min_abs_preact = nullptr) {
  using refops::DT;
  std::vector<double> emb(emb_in.data.begin(), emb_in.data.end());
  double mn = 1e300;

  auto block = [&](const DT& x, const std::vector<double>& k, const std::vector<double>& b,
                   const std::vector<double>* tp, int stride, int Ci, int Co) {
    DT h = refops::dconv(x, k, 3, 3, Ci, Co, stride, 1);
    for (int y = 0; y < h.shape[0]; ++y)
      for (int xx = 0; xx < h.shape[1]; ++xx)
        for (int c = 0; c < Co; ++c) {
          double v = h.at3(y, xx, c) + b[static_cast<size_t>(c)];
          if (tp) {
            double proj = 0.0;
            for (size_t i = 0; i < emb.size(); ++i) proj += emb[i] * (*tp)[i * static_cast<size_t>(Co) + static_cast<size_t>(c)];
            v += proj;
          }
          mn = std::min(mn, std::abs(v));
          h.at3(y, xx, c) = v > 0 ? v : 0;
        }
    return h;
  };

  DT stem = block(DT::of(x_in), p[0], p[1], nullptr, 1, 4, 6);
  DT enc = block(stem, p[2], p[3], &p[4], 1, 6, 6);
  DT down = block(enc, p[5], p[6], nullptr, 2, 6, 9);
  DT mid = block(down, p[7], p[8], &p[9], 1, 9, 9);
  DT up = refops::dconcat(refops::dresize2(mid), enc);
  DT dec = block(up, p[10], p[11], &p[12], 1, 15, 6);
  DT out = refops::dconv(dec, p[13], 3, 3, 6, 4, 1, 1);
  for (int y = 0; y < 8; ++y)
    for (int xx = 0; xx < 8; ++xx)
      for (int c = 0; c < 4; ++c) out.at3(y, xx, c) += p[14][static_cast<size_t>(c)];

  if (min_abs_preact) *min_abs_preact = mn;
  return refops::dmse(out, DT::of(target));
}

}  // namespace

TEST_CASE("finite differences confirm the gradient of every denoiser parameter") {
  DenoiserConfig cfg;
  cfg.in_channels = 4;
  cfg.base_width = 6;
  cfg.depth = 1;
  cfg.time_embed_dim = 8;

  nd::ParamStore store;
  RngStream rng(1);
  init_params(store, cfg, rng, /*zero_final=*/false);
  // Evaluate at a point where every pre-activation is provably far from the
  // ReLU kink: positive kernels, positive biases, small time projections.
  // Probes at h=1e-3 shift any pre-activation by well under the asserted
  // margin, so the loss is smooth across the whole probe range.
  for (size_t i = 0; i < store.names.size(); ++i) {
    Tensor& t = store.values[i];
    const std::string& name = store.names[i];
    if (name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0) {
      for (int64_t j = 0; j < t.numel(); ++j) t[j] = 0.1f;
    } else if (name.size() > 2 && name.compare(name.size() - 2, 2, ".t") == 0) {
      fill_pattern(t, 0.002f, 0.006f, static_cast<int>(i));
    } else {
      fill_pattern(t, 0.01f, 0.03f, static_cast<int>(i));
    }
  }

  Tensor x({8, 8, 4});
  fill_pattern(x, 0.5f, 1.5f, 77);
  Tensor target({8, 8, 4});
  fill_pattern(target, 0.f, 1.f, 78);
  const int t_step = 3;
  Tensor emb = timestep_embedding(t_step, cfg.time_embed_dim);

  double min_preact = 0.0;
  const double ref = denoiser_ref_loss(fd::to_double(store), x, emb, target, &min_preact);
  REQUIRE(min_preact > 0.05);

  nd::Graph g;
  nd::Var pred = forward(g, g.input(x), t_step, store, cfg);
  nd::Var loss = g.mse(pred, g.input(target));
  const double got = g.value(loss)[0];
  REQUIRE(std::abs(got - ref) / std::abs(ref) < 1e-4);
  g.backward(loss);

  nd::GradAccumulator acc(store);
  acc.add_from(g);
  fd::check_gradients(store, [&](const fd::DParams& p) { return denoiser_ref_loss(p, x, emb, target); },
                      acc.grads, 200);
}
