#include "pairdiff/autodiff.hpp"

#include <cmath>
#include <cstring>

namespace pairdiff::nd {

namespace {

void check_rank3(const Tensor& t, const char* what) {
  if (t.rank() != 3) throw ShapeError(std::string(what) + ": expected rank-3, got " + shape_str(t.shape));
}

int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

Tensor conv2d_raw(const Tensor& input, const Tensor& kernel, int stride, int pad) {
  check_rank3(input, "conv2d input");
  if (kernel.rank() != 4) throw ShapeError("conv2d kernel: expected rank-4, got " + shape_str(kernel.shape));
  const int H = input.dim(0), W = input.dim(1), Ci = input.dim(2);
  const int kh = kernel.dim(0), kw = kernel.dim(1), Co = kernel.dim(3);
  if (kernel.dim(2) != Ci) {
    throw ShapeError("conv2d: input channels " + std::to_string(Ci) + " vs kernel Cin " +
                     std::to_string(kernel.dim(2)));
  }
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (kh > H + 2 * pad || kw > W + 2 * pad) {
    throw ShapeError("conv2d: kernel " + shape_str(kernel.shape) + " larger than padded input");
  }
  const int OH = conv_out_dim(H, kh, stride, pad);
  const int OW = conv_out_dim(W, kw, stride, pad);

  Tensor out({OH, OW, Co});
  std::vector<double> acc(static_cast<size_t>(Co));
  for (int oy = 0; oy < OH; ++oy) {
    for (int ox = 0; ox < OW; ++ox) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= H) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= W) continue;
          const float* in_px = &input.data[(static_cast<size_t>(iy) * W + ix) * Ci];
          const float* k_px = &kernel.data[(static_cast<size_t>(ky) * kw + kx) * Ci * Co];
          for (int ci = 0; ci < Ci; ++ci) {
            const double v = in_px[ci];
            const float* k_row = k_px + static_cast<size_t>(ci) * Co;
            for (int co = 0; co < Co; ++co) acc[static_cast<size_t>(co)] += v * k_row[co];
          }
        }
      }
      float* out_px = &out.data[(static_cast<size_t>(oy) * OW + ox) * Co];
      for (int co = 0; co < Co; ++co) out_px[co] = static_cast<float>(acc[static_cast<size_t>(co)]);
    }
  }
  return out;
}

Tensor softmax_raw(const Tensor& x) {
  Tensor out(x.shape);
  if (x.rank() == 1) {
    const int n = x.dim(0);
    double mx = -1e300;
    for (int i = 0; i < n; ++i) mx = std::max(mx, static_cast<double>(x[i]));
    double sum = 0.0;
    std::vector<double> e(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      e[static_cast<size_t>(i)] = std::exp(static_cast<double>(x[i]) - mx);
      sum += e[static_cast<size_t>(i)];
    }
    for (int i = 0; i < n; ++i) out[i] = static_cast<float>(e[static_cast<size_t>(i)] / sum);
    return out;
  }
  check_rank3(x, "softmax");
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  std::vector<double> e(static_cast<size_t>(C));
  for (int p = 0; p < H * W; ++p) {
    const float* px = &x.data[static_cast<size_t>(p) * C];
    float* op = &out.data[static_cast<size_t>(p) * C];
    double mx = -1e300;
    for (int c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(px[c]));
    double sum = 0.0;
    for (int c = 0; c < C; ++c) {
      e[static_cast<size_t>(c)] = std::exp(static_cast<double>(px[c]) - mx);
      sum += e[static_cast<size_t>(c)];
    }
    for (int c = 0; c < C; ++c) op[c] = static_cast<float>(e[static_cast<size_t>(c)] / sum);
  }
  return out;
}

int Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  grads_.emplace_back();
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Graph::grad_buf(int id) {
  Tensor& g = grads_[static_cast<size_t>(id)];
  if (g.empty() && !nodes_[static_cast<size_t>(id)].value.empty()) {
    g = Tensor(nodes_[static_cast<size_t>(id)].value.shape);
  }
  return g;
}

const Tensor& Graph::grad(Var v) const { return grads_[static_cast<size_t>(v.id)]; }

Var Graph::input(Tensor v) {
  Node n;
  n.op = Op::Input;
  n.value = std::move(v);
  return {push(std::move(n))};
}

Var Graph::param(Tensor v, std::string name) {
  Node n;
  n.op = Op::Param;
  n.value = std::move(v);
  n.name = std::move(name);
  int id = push(std::move(n));
  param_ids_.push_back(id);
  return {id};
}

Var Graph::conv2d(Var x, Var kernel, int stride, int pad) {
  Node n;
  n.op = Op::Conv2d;
  n.a = x.id;
  n.b = kernel.id;
  n.i0 = stride;
  n.i1 = pad;
  n.value = conv2d_raw(at(x).value, at(kernel).value, stride, pad);
  return {push(std::move(n))};
}

Var Graph::conv_transpose2x2(Var x, Var kernel) {
  const Tensor& in = at(x).value;
  const Tensor& k = at(kernel).value;
  check_rank3(in, "conv_transpose2x2 input");
  if (k.rank() != 4 || k.dim(0) != 2 || k.dim(1) != 2) {
    throw ShapeError("conv_transpose2x2: kernel must be (2, 2, Cin, Cout), got " + shape_str(k.shape));
  }
  const int H = in.dim(0), W = in.dim(1), Ci = in.dim(2), Co = k.dim(3);
  if (k.dim(2) != Ci) throw ShapeError("conv_transpose2x2: channel mismatch");

  Tensor out({2 * H, 2 * W, Co});
  std::vector<double> acc(static_cast<size_t>(Co));
  for (int y = 0; y < H; ++y) {
    for (int x2 = 0; x2 < W; ++x2) {
      const float* in_px = &in.data[(static_cast<size_t>(y) * W + x2) * Ci];
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          std::fill(acc.begin(), acc.end(), 0.0);
          const float* k_px = &k.data[(static_cast<size_t>(dy) * 2 + dx) * Ci * Co];
          for (int ci = 0; ci < Ci; ++ci) {
            const double v = in_px[ci];
            const float* k_row = k_px + static_cast<size_t>(ci) * Co;
            for (int co = 0; co < Co; ++co) acc[static_cast<size_t>(co)] += v * k_row[co];
          }
          float* out_px = &out.data[(static_cast<size_t>(2 * y + dy) * (2 * W) + (2 * x2 + dx)) * Co];
          for (int co = 0; co < Co; ++co) out_px[co] = static_cast<float>(acc[static_cast<size_t>(co)]);
        }
      }
    }
  }
  Node n;
  n.op = Op::ConvT2x2;
  n.a = x.id;
  n.b = kernel.id;
  n.value = std::move(out);
  return {push(std::move(n))};
}

Var Graph::resize_nn(Var x, int factor) {
  const Tensor& in = at(x).value;
  check_rank3(in, "resize_nn input");
  if (factor < 1) throw ShapeError("resize_nn: factor must be >= 1");
  const int H = in.dim(0), W = in.dim(1), C = in.dim(2);
  Tensor out({H * factor, W * factor, C});
  for (int y = 0; y < H * factor; ++y) {
    const int sy = y / factor;
    for (int x2 = 0; x2 < W * factor; ++x2) {
      const int sx = x2 / factor;
      std::memcpy(&out.data[(static_cast<size_t>(y) * W * factor + x2) * C],
                  &in.data[(static_cast<size_t>(sy) * W + sx) * C], sizeof(float) * static_cast<size_t>(C));
    }
  }
  Node n;
  n.op = Op::ResizeNN;
  n.a = x.id;
  n.i0 = factor;
  n.value = std::move(out);
  return {push(std::move(n))};
}

Var Graph::dense(Var x, Var w) {
  const Tensor& xv = at(x).value;
  const Tensor& wv = at(w).value;
  if (xv.rank() != 1 || wv.rank() != 2 || wv.dim(0) != xv.dim(0)) {
    throw ShapeError("dense: need x (n) and w (n, m), got " + shape_str(xv.shape) + " and " +
                     shape_str(wv.shape));
  }
  const int N = xv.dim(0), M = wv.dim(1);
  Tensor out({M});
  std::vector<double> acc(static_cast<size_t>(M), 0.0);
  for (int i = 0; i < N; ++i) {
    const double v = xv[i];
    const float* row = &wv.data[static_cast<size_t>(i) * M];
    for (int j = 0; j < M; ++j) acc[static_cast<size_t>(j)] += v * row[j];
  }
  for (int j = 0; j < M; ++j) out[j] = static_cast<float>(acc[static_cast<size_t>(j)]);
  Node n;
  n.op = Op::Dense;
  n.a = x.id;
  n.b = w.id;
  n.value = std::move(out);
  return {push(std::move(n))};
}

Var Graph::relu(Var x) {
  Node n;
  n.op = Op::Relu;
  n.a = x.id;
  n.value = at(x).value;
  for (float& v : n.value.data) v = v > 0.f ? v : 0.f;
  return {push(std::move(n))};
}

Var Graph::sigmoid(Var x) {
  Node n;
  n.op = Op::Sigmoid;
  n.a = x.id;
  n.value = Tensor(at(x).value.shape);
  const Tensor& in = at(x).value;
  for (int64_t i = 0; i < in.numel(); ++i) {
    const double v = in[i];
    n.value[i] = static_cast<float>(v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                                           : std::exp(v) / (1.0 + std::exp(v)));
  }
  return {push(std::move(n))};
}

Var Graph::softmax(Var x) {
  Node n;
  n.op = Op::Softmax;
  n.a = x.id;
  n.value = softmax_raw(at(x).value);
  return {push(std::move(n))};
}

Var Graph::add_channel(Var x, Var bias) {
  const Tensor& xv = at(x).value;
  const Tensor& bv = at(bias).value;
  if (bv.rank() != 1) throw ShapeError("add_channel: bias must be rank-1");
  Node n;
  n.op = Op::AddChannel;
  n.a = x.id;
  n.b = bias.id;
  if (xv.rank() == 1) {
    require_same_shape(xv, bv, "add_channel");
    n.value = xv;
    for (int i = 0; i < xv.dim(0); ++i) n.value[i] += bv[i];
  } else {
    check_rank3(xv, "add_channel input");
    const int C = xv.dim(2);
    if (bv.dim(0) != C) throw ShapeError("add_channel: bias size vs channels");
    n.value = xv;
    const int64_t px = xv.numel() / C;
    for (int64_t p = 0; p < px; ++p) {
      float* row = &n.value.data[static_cast<size_t>(p) * C];
      for (int c = 0; c < C; ++c) row[c] += bv[c];
    }
  }
  return {push(std::move(n))};
}

Var Graph::scale_channel(Var x, Var scale) {
  const Tensor& xv = at(x).value;
  const Tensor& sv = at(scale).value;
  if (sv.rank() != 1) throw ShapeError("scale_channel: scale must be rank-1");
  Node n;
  n.op = Op::ScaleChannel;
  n.a = x.id;
  n.b = scale.id;
  if (xv.rank() == 1) {
    require_same_shape(xv, sv, "scale_channel");
    n.value = xv;
    for (int i = 0; i < xv.dim(0); ++i) n.value[i] *= sv[i];
  } else {
    check_rank3(xv, "scale_channel input");
    const int C = xv.dim(2);
    if (sv.dim(0) != C) throw ShapeError("scale_channel: scale size vs channels");
    n.value = xv;
    const int64_t px = xv.numel() / C;
    for (int64_t p = 0; p < px; ++p) {
      float* row = &n.value.data[static_cast<size_t>(p) * C];
      for (int c = 0; c < C; ++c) row[c] *= sv[c];
    }
  }
  return {push(std::move(n))};
}

Var Graph::concat(Var a, Var b) {
  const Tensor& av = at(a).value;
  const Tensor& bv = at(b).value;
  check_rank3(av, "concat lhs");
  check_rank3(bv, "concat rhs");
  if (av.dim(0) != bv.dim(0) || av.dim(1) != bv.dim(1)) {
    throw ShapeError("concat: spatial dims differ, " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  }
  const int H = av.dim(0), W = av.dim(1), Ca = av.dim(2), Cb = bv.dim(2);
  Tensor out({H, W, Ca + Cb});
  for (int p = 0; p < H * W; ++p) {
    std::memcpy(&out.data[static_cast<size_t>(p) * (Ca + Cb)], &av.data[static_cast<size_t>(p) * Ca],
                sizeof(float) * static_cast<size_t>(Ca));
    std::memcpy(&out.data[static_cast<size_t>(p) * (Ca + Cb) + Ca], &bv.data[static_cast<size_t>(p) * Cb],
                sizeof(float) * static_cast<size_t>(Cb));
  }
  Node n;
  n.op = Op::Concat;
  n.a = a.id;
  n.b = b.id;
  n.value = std::move(out);
  return {push(std::move(n))};
}

Var Graph::mix(Var a, Var b, float alpha, float beta) {
  const Tensor& av = at(a).value;
  const Tensor& bv = at(b).value;
  require_same_shape(av, bv, "mix");
  Node n;
  n.op = Op::Mix;
  n.a = a.id;
  n.b = b.id;
  n.f0 = alpha;
  n.f1 = beta;
  n.value = Tensor(av.shape);
  for (int64_t i = 0; i < av.numel(); ++i) n.value[i] = alpha * av[i] + beta * bv[i];
  return {push(std::move(n))};
}

Var Graph::mse(Var pred, Var target) {
  const Tensor& p = at(pred).value;
  const Tensor& t = at(target).value;
  require_same_shape(p, t, "mse");
  double acc = 0.0;
  for (int64_t i = 0; i < p.numel(); ++i) {
    const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
    acc += d * d;
  }
  Node n;
  n.op = Op::Mse;
  n.a = pred.id;
  n.b = target.id;
  n.value = Tensor::from({1}, {static_cast<float>(acc / static_cast<double>(p.numel()))});
  return {push(std::move(n))};
}

Var Graph::cross_entropy(Var logits, std::vector<int> targets, int ignore_index) {
  const Tensor& lv = at(logits).value;
  check_rank3(lv, "cross_entropy logits");
  const int H = lv.dim(0), W = lv.dim(1), K = lv.dim(2);
  if (static_cast<int>(targets.size()) != H * W) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(H * W) + " pixels");
  }
  double acc = 0.0;
  int64_t counted = 0;
  for (int p = 0; p < H * W; ++p) {
    const int y = targets[static_cast<size_t>(p)];
    if (y == ignore_index) continue;
    if (y < 0 || y >= K) throw ShapeError("cross_entropy: label " + std::to_string(y) + " out of range");
    const float* px = &lv.data[static_cast<size_t>(p) * K];
    double mx = -1e300;
    for (int c = 0; c < K; ++c) mx = std::max(mx, static_cast<double>(px[c]));
    double sum = 0.0;
    for (int c = 0; c < K; ++c) sum += std::exp(static_cast<double>(px[c]) - mx);
    acc += std::log(sum) + mx - static_cast<double>(px[y]);
    ++counted;
  }
  Node n;
  n.op = Op::CrossEntropy;
  n.a = logits.id;
  n.i0 = ignore_index;
  n.labels = std::move(targets);
  n.value = Tensor::from({1}, {counted ? static_cast<float>(acc / static_cast<double>(counted)) : 0.f});
  return {push(std::move(n))};
}

void Graph::backward(Var loss) {
  if (!loss.valid() || loss.id >= static_cast<int>(nodes_.size())) throw ShapeError("backward: bad loss node");
  if (at(loss).value.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(at(loss).value.shape));
  }
  for (Tensor& g : grads_) g = Tensor();
  grad_buf(loss.id)[0] = 1.f;

  for (int id = loss.id; id >= 0; --id) {
    const Node& n = nodes_[static_cast<size_t>(id)];
    const Tensor& g = grads_[static_cast<size_t>(id)];
    if (g.empty()) continue;
    switch (n.op) {
      case Op::Input:
      case Op::Param:
        break;
      case Op::Conv2d: {
        const Tensor& in = nodes_[static_cast<size_t>(n.a)].value;
        const Tensor& k = nodes_[static_cast<size_t>(n.b)].value;
        const int H = in.dim(0), W = in.dim(1), Ci = in.dim(2);
        const int kh = k.dim(0), kw = k.dim(1), Co = k.dim(3);
        const int OH = g.dim(0), OW = g.dim(1);
        const int stride = n.i0, pad = n.i1;
        std::vector<double> din(static_cast<size_t>(in.numel()), 0.0);
        std::vector<double> dk(static_cast<size_t>(k.numel()), 0.0);
        for (int oy = 0; oy < OH; ++oy) {
          for (int ox = 0; ox < OW; ++ox) {
            const float* gp = &g.data[(static_cast<size_t>(oy) * OW + ox) * Co];
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= H) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= W) continue;
                const size_t in_off = (static_cast<size_t>(iy) * W + ix) * Ci;
                const size_t k_off = (static_cast<size_t>(ky) * kw + kx) * Ci * Co;
                for (int ci = 0; ci < Ci; ++ci) {
                  const double inv = in.data[in_off + static_cast<size_t>(ci)];
                  const float* k_row = &k.data[k_off + static_cast<size_t>(ci) * Co];
                  double* dk_row = &dk[k_off + static_cast<size_t>(ci) * Co];
                  double acc = 0.0;
                  for (int co = 0; co < Co; ++co) {
                    const double gv = gp[co];
                    acc += gv * k_row[co];
                    dk_row[co] += gv * inv;
                  }
                  din[in_off + static_cast<size_t>(ci)] += acc;
                }
              }
            }
          }
        }
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += static_cast<float>(din[static_cast<size_t>(i)]);
        Tensor& gb = grad_buf(n.b);
        for (int64_t i = 0; i < gb.numel(); ++i) gb[i] += static_cast<float>(dk[static_cast<size_t>(i)]);
        break;
      }
      case Op::ConvT2x2: {
        const Tensor& in = nodes_[static_cast<size_t>(n.a)].value;
        const Tensor& k = nodes_[static_cast<size_t>(n.b)].value;
        const int H = in.dim(0), W = in.dim(1), Ci = in.dim(2), Co = k.dim(3);
        std::vector<double> din(static_cast<size_t>(in.numel()), 0.0);
        std::vector<double> dk(static_cast<size_t>(k.numel()), 0.0);
        for (int y = 0; y < H; ++y) {
          for (int x = 0; x < W; ++x) {
            const size_t in_off = (static_cast<size_t>(y) * W + x) * Ci;
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                const float* gp = &g.data[(static_cast<size_t>(2 * y + dy) * (2 * W) + (2 * x + dx)) * Co];
                const size_t k_off = (static_cast<size_t>(dy) * 2 + dx) * Ci * Co;
                for (int ci = 0; ci < Ci; ++ci) {
                  const double inv = in.data[in_off + static_cast<size_t>(ci)];
                  const float* k_row = &k.data[k_off + static_cast<size_t>(ci) * Co];
                  double* dk_row = &dk[k_off + static_cast<size_t>(ci) * Co];
                  double acc = 0.0;
                  for (int co = 0; co < Co; ++co) {
                    const double gv = gp[co];
                    acc += gv * k_row[co];
                    dk_row[co] += gv * inv;
                  }
                  din[in_off + static_cast<size_t>(ci)] += acc;
                }
              }
            }
          }
        }
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += static_cast<float>(din[static_cast<size_t>(i)]);
        Tensor& gb = grad_buf(n.b);
        for (int64_t i = 0; i < gb.numel(); ++i) gb[i] += static_cast<float>(dk[static_cast<size_t>(i)]);
        break;
      }
      case Op::ResizeNN: {
        const Tensor& in = nodes_[static_cast<size_t>(n.a)].value;
        const int H = in.dim(0), W = in.dim(1), C = in.dim(2);
        const int f = n.i0;
        std::vector<double> din(static_cast<size_t>(in.numel()), 0.0);
        for (int y = 0; y < H * f; ++y) {
          const int sy = y / f;
          for (int x = 0; x < W * f; ++x) {
            const int sx = x / f;
            const float* gp = &g.data[(static_cast<size_t>(y) * W * f + x) * C];
            double* dp = &din[(static_cast<size_t>(sy) * W + sx) * C];
            for (int c = 0; c < C; ++c) dp[c] += gp[c];
          }
        }
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += static_cast<float>(din[static_cast<size_t>(i)]);
        break;
      }
      case Op::Dense: {
        const Tensor& xv = nodes_[static_cast<size_t>(n.a)].value;
        const Tensor& wv = nodes_[static_cast<size_t>(n.b)].value;
        const int N = xv.dim(0), M = wv.dim(1);
        Tensor& gx = grad_buf(n.a);
        Tensor& gw = grad_buf(n.b);
        for (int i = 0; i < N; ++i) {
          const float* w_row = &wv.data[static_cast<size_t>(i) * M];
          float* gw_row = &gw.data[static_cast<size_t>(i) * M];
          const double xi = xv[i];
          double acc = 0.0;
          for (int j = 0; j < M; ++j) {
            const double gv = g[j];
            acc += gv * w_row[j];
            gw_row[j] += static_cast<float>(gv * xi);
          }
          gx[i] += static_cast<float>(acc);
        }
        break;
      }
      case Op::Relu: {
        const Tensor& in = nodes_[static_cast<size_t>(n.a)].value;
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < in.numel(); ++i) {
          if (in[i] > 0.f) ga[i] += g[i];
        }
        break;
      }
      case Op::Sigmoid: {
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < n.value.numel(); ++i) {
          const float y = n.value[i];
          ga[i] += g[i] * y * (1.f - y);
        }
        break;
      }
      case Op::Softmax: {
        Tensor& ga = grad_buf(n.a);
        const Tensor& y = n.value;
        const int C = y.rank() == 1 ? y.dim(0) : y.dim(2);
        const int64_t groups = y.numel() / C;
        for (int64_t p = 0; p < groups; ++p) {
          const float* yp = &y.data[static_cast<size_t>(p) * C];
          const float* gp = &g.data[static_cast<size_t>(p) * C];
          double dot = 0.0;
          for (int c = 0; c < C; ++c) dot += static_cast<double>(gp[c]) * yp[c];
          float* gap = &ga.data[static_cast<size_t>(p) * C];
          for (int c = 0; c < C; ++c) {
            gap[c] += static_cast<float>(yp[c] * (static_cast<double>(gp[c]) - dot));
          }
        }
        break;
      }
      case Op::AddChannel: {
        Tensor& ga = grad_buf(n.a);
        Tensor& gb = grad_buf(n.b);
        const int C = nodes_[static_cast<size_t>(n.b)].value.dim(0);
        const int64_t px = n.value.numel() / C;
        for (int64_t i = 0; i < n.value.numel(); ++i) ga[i] += g[i];
        for (int c = 0; c < C; ++c) {
          double acc = 0.0;
          for (int64_t p = 0; p < px; ++p) acc += g.data[static_cast<size_t>(p) * C + static_cast<size_t>(c)];
          gb[c] += static_cast<float>(acc);
        }
        break;
      }
      case Op::ScaleChannel: {
        const Tensor& in = nodes_[static_cast<size_t>(n.a)].value;
        const Tensor& s = nodes_[static_cast<size_t>(n.b)].value;
        Tensor& ga = grad_buf(n.a);
        Tensor& gb = grad_buf(n.b);
        const int C = s.dim(0);
        const int64_t px = n.value.numel() / C;
        for (int64_t p = 0; p < px; ++p) {
          const float* gp = &g.data[static_cast<size_t>(p) * C];
          const float* ip = &in.data[static_cast<size_t>(p) * C];
          float* gap = &ga.data[static_cast<size_t>(p) * C];
          for (int c = 0; c < C; ++c) gap[c] += gp[c] * s[c];
          (void)ip;
        }
        for (int c = 0; c < C; ++c) {
          double acc = 0.0;
          for (int64_t p = 0; p < px; ++p) {
            acc += static_cast<double>(g.data[static_cast<size_t>(p) * C + static_cast<size_t>(c)]) *
                   in.data[static_cast<size_t>(p) * C + static_cast<size_t>(c)];
          }
          gb[c] += static_cast<float>(acc);
        }
        break;
      }
      case Op::Concat: {
        Tensor& ga = grad_buf(n.a);
        Tensor& gb = grad_buf(n.b);
        const int Ca = nodes_[static_cast<size_t>(n.a)].value.dim(2);
        const int Cb = nodes_[static_cast<size_t>(n.b)].value.dim(2);
        const int64_t px = n.value.numel() / (Ca + Cb);
        for (int64_t p = 0; p < px; ++p) {
          const float* gp = &g.data[static_cast<size_t>(p) * (Ca + Cb)];
          float* gap = &ga.data[static_cast<size_t>(p) * Ca];
          float* gbp = &gb.data[static_cast<size_t>(p) * Cb];
          for (int c = 0; c < Ca; ++c) gap[c] += gp[c];
          for (int c = 0; c < Cb; ++c) gbp[c] += gp[Ca + c];
        }
        break;
      }
      case Op::Mix: {
        Tensor& ga = grad_buf(n.a);
        Tensor& gb = grad_buf(n.b);
        for (int64_t i = 0; i < n.value.numel(); ++i) {
          ga[i] += n.f0 * g[i];
          gb[i] += n.f1 * g[i];
        }
        break;
      }
      case Op::Mse: {
        const Tensor& p = nodes_[static_cast<size_t>(n.a)].value;
        const Tensor& t = nodes_[static_cast<size_t>(n.b)].value;
        Tensor& ga = grad_buf(n.a);
        Tensor& gb = grad_buf(n.b);
        const float scale = g[0] * 2.f / static_cast<float>(p.numel());
        for (int64_t i = 0; i < p.numel(); ++i) {
          const float d = p[i] - t[i];
          ga[i] += scale * d;
          gb[i] -= scale * d;
        }
        break;
      }
      case Op::CrossEntropy: {
        const Tensor& lv = nodes_[static_cast<size_t>(n.a)].value;
        const int K = lv.dim(2);
        const int64_t px = lv.numel() / K;
        int64_t counted = 0;
        for (int64_t p = 0; p < px; ++p) {
          if (n.labels[static_cast<size_t>(p)] != n.i0) ++counted;
        }
        if (counted == 0) break;
        Tensor& ga = grad_buf(n.a);
        const double scale = static_cast<double>(g[0]) / static_cast<double>(counted);
        for (int64_t p = 0; p < px; ++p) {
          const int y = n.labels[static_cast<size_t>(p)];
          if (y == n.i0) continue;
          const float* row = &lv.data[static_cast<size_t>(p) * K];
          double mx = -1e300;
          for (int c = 0; c < K; ++c) mx = std::max(mx, static_cast<double>(row[c]));
          double sum = 0.0;
          for (int c = 0; c < K; ++c) sum += std::exp(static_cast<double>(row[c]) - mx);
          float* gap = &ga.data[static_cast<size_t>(p) * K];
          for (int c = 0; c < K; ++c) {
            const double soft = std::exp(static_cast<double>(row[c]) - mx) / sum;
            gap[c] += static_cast<float>(scale * (soft - (c == y ? 1.0 : 0.0)));
          }
        }
        break;
      }
    }
  }
}

}  // namespace pairdiff::nd
