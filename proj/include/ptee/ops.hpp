#pragma once

// Differentiable ops over TensorT. Conventions:
//  - activations are [N, C, H, W] or [N, F], row major;
//  - reductions accumulate in double, results are stored in S;
//  - every loop nest has a fixed iteration order, so results are
//    reproducible bit for bit on one platform.

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

#include "ptee/tensor.hpp"

namespace ptee::nn {

inline constexpr float kProbabilityFloor = 1e-12f;  // floor inside log()
inline constexpr float kSigmoidClamp = 1e-7f;       // keeps sigmoid strictly inside (0, 1)

namespace opchk {
inline void require(bool cond, const std::string& op, const std::string& detail) {
  if (!cond) throw Error("op", op + ": " + detail);
}
template <class S>
void rank(const TensorT<S>& t, std::size_t r, const std::string& op, const std::string& role) {
  require(t.shape().size() == r, op, role + " must have rank " + std::to_string(r) + ", got shape " + shape_str(t.shape()));
}
}  // namespace opchk

// ---------------------------------------------------------------------------
// conv2d: x [N,Ci,H,W], w [Co,Ci,kh,kw], optional bias [Co].
// Output spatial size floor((H + 2p - k) / stride) + 1; must be >= 1.
template <class S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& bias, int stride, int pad) {
  opchk::rank(x, 4, "conv2d", "input");
  opchk::rank(w, 4, "conv2d", "weight");
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  const std::int64_t N = xs[0], Ci = xs[1], H = xs[2], W = xs[3];
  const std::int64_t Co = ws[0], kh = ws[2], kw = ws[3];
  opchk::require(ws[1] == Ci, "conv2d",
                 "weight expects " + std::to_string(ws[1]) + " input channels, input has " + std::to_string(Ci));
  opchk::require(stride >= 1, "conv2d", "stride must be >= 1");
  opchk::require(pad >= 0, "conv2d", "pad must be >= 0");
  opchk::require(H + 2 * pad >= kh && W + 2 * pad >= kw, "conv2d",
                 "kernel " + std::to_string(kh) + "x" + std::to_string(kw) + " larger than padded input " + shape_str(xs));
  const std::int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  const std::int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  const bool has_bias = bias.defined();
  if (has_bias) {
    opchk::rank(bias, 1, "conv2d", "bias");
    opchk::require(bias.shape()[0] == Co, "conv2d", "bias size does not match output channels");
  }

  std::vector<S> out(static_cast<std::size_t>(N * Co * Ho * Wo));
  const auto xv = x.values();
  const auto wv = w.values();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t co = 0; co < Co; ++co) {
      const double b = has_bias ? static_cast<double>(bias.values()[co]) : 0.0;
      for (std::int64_t ho = 0; ho < Ho; ++ho)
        for (std::int64_t wo = 0; wo < Wo; ++wo) {
          double acc = b;
          const std::int64_t h0 = ho * stride - pad;
          const std::int64_t w0 = wo * stride - pad;
          for (std::int64_t ci = 0; ci < Ci; ++ci) {
            const S* xp = &xv[((n * Ci + ci) * H) * W];
            const S* wp = &wv[((co * Ci + ci) * kh) * kw];
            for (std::int64_t i = 0; i < kh; ++i) {
              const std::int64_t h = h0 + i;
              if (h < 0 || h >= H) continue;
              for (std::int64_t j = 0; j < kw; ++j) {
                const std::int64_t ww = w0 + j;
                if (ww < 0 || ww >= W) continue;
                acc += static_cast<double>(xp[h * W + ww]) * static_cast<double>(wp[i * kw + j]);
              }
            }
          }
          out[((n * Co + co) * Ho + ho) * Wo + wo] = static_cast<S>(acc);
        }
    }

  std::vector<TensorT<S>> parents{x, w};
  if (has_bias) parents.push_back(bias);
  auto bwd = [x, w, bias, has_bias, N, Ci, H, W, Co, kh, kw, Ho, Wo, stride, pad](TensorNode<S>& self) {
    const auto g = self.grad;
    const auto xv = x.values();
    const auto wv = w.values();
    std::vector<S> dx, dw, db;
    const bool need_dx = x.requires_grad();
    const bool need_dw = w.requires_grad();
    const bool need_db = has_bias && bias.requires_grad();
    if (need_dx) dx.assign(xv.size(), S(0));
    if (need_dw) dw.assign(wv.size(), S(0));
    if (need_db) db.assign(static_cast<std::size_t>(Co), S(0));
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t co = 0; co < Co; ++co)
        for (std::int64_t ho = 0; ho < Ho; ++ho)
          for (std::int64_t wo = 0; wo < Wo; ++wo) {
            const S gv = g[((n * Co + co) * Ho + ho) * Wo + wo];
            if (gv == S(0)) continue;
            if (need_db) db[co] += gv;
            const std::int64_t h0 = ho * stride - pad;
            const std::int64_t w0 = wo * stride - pad;
            for (std::int64_t ci = 0; ci < Ci; ++ci) {
              const std::size_t xbase = static_cast<std::size_t>(((n * Ci + ci) * H) * W);
              const std::size_t wbase = static_cast<std::size_t>(((co * Ci + ci) * kh) * kw);
              for (std::int64_t i = 0; i < kh; ++i) {
                const std::int64_t h = h0 + i;
                if (h < 0 || h >= H) continue;
                for (std::int64_t j = 0; j < kw; ++j) {
                  const std::int64_t ww = w0 + j;
                  if (ww < 0 || ww >= W) continue;
                  const std::size_t xi = xbase + static_cast<std::size_t>(h * W + ww);
                  const std::size_t wi = wbase + static_cast<std::size_t>(i * kw + j);
                  if (need_dw) dw[wi] += gv * xv[xi];
                  if (need_dx) dx[xi] += gv * wv[wi];
                }
              }
            }
          }
    if (need_dx) x.node().accumulate(dx);
    if (need_dw) w.node().accumulate(dw);
    if (need_db) bias.node().accumulate(db);
  };
  return make_result<S>({N, Co, Ho, Wo}, std::move(out), std::move(parents), std::move(bwd));
}

// ---------------------------------------------------------------------------
// batchnorm2d over channels of [N,C,H,W].
// training=true normalizes with batch statistics (biased variance);
// update_running additionally folds them into the running buffers, which are
// plain state and never receive gradients.
template <class S>
TensorT<S> batchnorm2d(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta,
                       TensorT<S>& running_mean, TensorT<S>& running_var, bool training,
                       bool update_running, S momentum = S(0.1), S eps = S(1e-5)) {
  opchk::rank(x, 4, "batchnorm2d", "input");
  const auto& xs = x.shape();
  const std::int64_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  opchk::require(gamma.numel() == C && beta.numel() == C, "batchnorm2d", "gamma/beta size must equal channel count");
  opchk::require(running_mean.numel() == C && running_var.numel() == C, "batchnorm2d",
                 "running statistics size must equal channel count");
  const std::int64_t M = N * H * W;  // samples per channel

  std::vector<double> mean(static_cast<std::size_t>(C)), var(static_cast<std::size_t>(C));
  const auto xv = x.values();
  if (training) {
    for (std::int64_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        const S* p = &xv[((n * C + c) * H) * W];
        for (std::int64_t i = 0; i < H * W; ++i) s += p[i];
      }
      mean[c] = s / static_cast<double>(M);
    }
    for (std::int64_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        const S* p = &xv[((n * C + c) * H) * W];
        for (std::int64_t i = 0; i < H * W; ++i) {
          const double d = p[i] - mean[c];
          s += d * d;
        }
      }
      var[c] = s / static_cast<double>(M);
    }
    if (update_running) {
      auto rm = running_mean.values_mut();
      auto rv = running_var.values_mut();
      for (std::int64_t c = 0; c < C; ++c) {
        rm[c] = (S(1) - momentum) * rm[c] + momentum * static_cast<S>(mean[c]);
        rv[c] = (S(1) - momentum) * rv[c] + momentum * static_cast<S>(var[c]);
      }
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      mean[c] = running_mean.values()[c];
      var[c] = running_var.values()[c];
    }
  }

  std::vector<S> inv_std(static_cast<std::size_t>(C));
  for (std::int64_t c = 0; c < C; ++c) inv_std[c] = static_cast<S>(1.0 / std::sqrt(var[c] + static_cast<double>(eps)));

  std::vector<S> xhat(xv.size());
  std::vector<S> out(xv.size());
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const S m = static_cast<S>(mean[c]);
      const S is = inv_std[c];
      const S gm = gamma.values()[c];
      const S bt = beta.values()[c];
      const std::size_t base = static_cast<std::size_t>(((n * C + c) * H) * W);
      for (std::int64_t i = 0; i < H * W; ++i) {
        const S xh = (xv[base + i] - m) * is;
        xhat[base + i] = xh;
        out[base + i] = gm * xh + bt;
      }
    }

  auto xhat_keep = std::make_shared<std::vector<S>>(std::move(xhat));
  auto inv_keep = std::make_shared<std::vector<S>>(std::move(inv_std));
  auto bwd = [x, gamma, beta, xhat_keep, inv_keep, N, C, H, W, M, training](TensorNode<S>& self) {
    const auto g = self.grad;
    const auto& xh = *xhat_keep;
    const auto& is = *inv_keep;
    std::vector<double> sum_g(static_cast<std::size_t>(C), 0.0), sum_gx(static_cast<std::size_t>(C), 0.0);
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t c = 0; c < C; ++c) {
        const std::size_t base = static_cast<std::size_t>(((n * C + c) * H) * W);
        for (std::int64_t i = 0; i < H * W; ++i) {
          sum_g[c] += g[base + i];
          sum_gx[c] += static_cast<double>(g[base + i]) * xh[base + i];
        }
      }
    if (gamma.requires_grad()) {
      std::vector<S> dg(static_cast<std::size_t>(C));
      for (std::int64_t c = 0; c < C; ++c) dg[c] = static_cast<S>(sum_gx[c]);
      gamma.node().accumulate(dg);
    }
    if (beta.requires_grad()) {
      std::vector<S> db(static_cast<std::size_t>(C));
      for (std::int64_t c = 0; c < C; ++c) db[c] = static_cast<S>(sum_g[c]);
      beta.node().accumulate(db);
    }
    if (x.requires_grad()) {
      std::vector<S> dx(static_cast<std::size_t>(N * C * H * W));
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c) {
          const double gm_is = static_cast<double>(gamma.values()[c]) * is[c];
          const double mg = sum_g[c] / static_cast<double>(M);
          const double mgx = sum_gx[c] / static_cast<double>(M);
          const std::size_t base = static_cast<std::size_t>(((n * C + c) * H) * W);
          for (std::int64_t i = 0; i < H * W; ++i) {
            if (training) {
              dx[base + i] = static_cast<S>(gm_is * (g[base + i] - mg - xh[base + i] * mgx));
            } else {
              dx[base + i] = static_cast<S>(gm_is * g[base + i]);
            }
          }
        }
      x.node().accumulate(dx);
    }
  };
  return make_result<S>(x.shape(), std::move(out), {x, gamma, beta}, std::move(bwd));
}

// ---------------------------------------------------------------------------
template <class S>
TensorT<S> relu(const TensorT<S>& x) {
  std::vector<S> out(x.values().begin(), x.values().end());
  for (auto& v : out) v = v > S(0) ? v : S(0);
  auto bwd = [x](TensorNode<S>& self) {
    std::vector<S> dx(self.grad.size());
    const auto xv = x.values();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = xv[i] > S(0) ? self.grad[i] : S(0);
    x.node().accumulate(dx);
  };
  return make_result<S>(x.shape(), std::move(out), {x}, std::move(bwd));
}

// ---------------------------------------------------------------------------
// maxpool2d, no padding. Ties pick the first (lowest index) element.
template <class S>
TensorT<S> maxpool2d(const TensorT<S>& x, int kernel, int stride) {
  opchk::rank(x, 4, "maxpool2d", "input");
  opchk::require(kernel >= 1 && stride >= 1, "maxpool2d", "kernel and stride must be >= 1");
  const auto& xs = x.shape();
  const std::int64_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  opchk::require(H >= kernel && W >= kernel, "maxpool2d", "window larger than input " + shape_str(xs));
  const std::int64_t Ho = (H - kernel) / stride + 1;
  const std::int64_t Wo = (W - kernel) / stride + 1;

  std::vector<S> out(static_cast<std::size_t>(N * C * Ho * Wo));
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
  const auto xv = x.values();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t ho = 0; ho < Ho; ++ho)
        for (std::int64_t wo = 0; wo < Wo; ++wo) {
          S best = -std::numeric_limits<S>::infinity();
          std::int64_t best_idx = -1;
          for (int i = 0; i < kernel; ++i)
            for (int j = 0; j < kernel; ++j) {
              const std::int64_t h = ho * stride + i, w = wo * stride + j;
              const std::int64_t idx = ((n * C + c) * H + h) * W + w;
              if (xv[idx] > best) {
                best = xv[idx];
                best_idx = idx;
              }
            }
          const std::int64_t oidx = ((n * C + c) * Ho + ho) * Wo + wo;
          out[oidx] = best;
          (*argmax)[oidx] = best_idx;
        }

  auto bwd = [x, argmax](TensorNode<S>& self) {
    std::vector<S> dx(x.values().size(), S(0));
    for (std::size_t i = 0; i < self.grad.size(); ++i) dx[(*argmax)[i]] += self.grad[i];
    x.node().accumulate(dx);
  };
  return make_result<S>({N, C, Ho, Wo}, std::move(out), {x}, std::move(bwd));
}

// ---------------------------------------------------------------------------
// Global average pool: [N,C,H,W] -> [N,C].
template <class S>
TensorT<S> global_avgpool(const TensorT<S>& x) {
  opchk::rank(x, 4, "avgpool-global", "input");
  const auto& xs = x.shape();
  const std::int64_t N = xs[0], C = xs[1], HW = xs[2] * xs[3];
  std::vector<S> out(static_cast<std::size_t>(N * C));
  const auto xv = x.values();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      double s = 0.0;
      const S* p = &xv[(n * C + c) * HW];
      for (std::int64_t i = 0; i < HW; ++i) s += p[i];
      out[n * C + c] = static_cast<S>(s / static_cast<double>(HW));
    }
  auto bwd = [x, N, C, HW](TensorNode<S>& self) {
    std::vector<S> dx(static_cast<std::size_t>(N * C * HW));
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t c = 0; c < C; ++c) {
        const S gv = self.grad[n * C + c] / static_cast<S>(HW);
        S* p = &dx[(n * C + c) * HW];
        for (std::int64_t i = 0; i < HW; ++i) p[i] = gv;
      }
    x.node().accumulate(dx);
  };
  return make_result<S>({N, C}, std::move(out), {x}, std::move(bwd));
}

// ---------------------------------------------------------------------------
// linear: x [N,F] * w [O,F]^T + b [O] -> [N,O].
template <class S>
TensorT<S> linear(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& bias) {
  opchk::rank(x, 2, "linear", "input");
  opchk::rank(w, 2, "linear", "weight");
  const std::int64_t N = x.shape()[0], F = x.shape()[1];
  const std::int64_t O = w.shape()[0];
  opchk::require(w.shape()[1] == F, "linear",
                 "weight expects " + std::to_string(w.shape()[1]) + " features, input has " + std::to_string(F));
  const bool has_bias = bias.defined();
  if (has_bias) opchk::require(bias.numel() == O, "linear", "bias size does not match output features");

  std::vector<S> out(static_cast<std::size_t>(N * O));
  const auto xv = x.values();
  const auto wv = w.values();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t o = 0; o < O; ++o) {
      double acc = has_bias ? static_cast<double>(bias.values()[o]) : 0.0;
      const S* xp = &xv[n * F];
      const S* wp = &wv[o * F];
      for (std::int64_t f = 0; f < F; ++f) acc += static_cast<double>(xp[f]) * static_cast<double>(wp[f]);
      out[n * O + o] = static_cast<S>(acc);
    }

  std::vector<TensorT<S>> parents{x, w};
  if (has_bias) parents.push_back(bias);
  auto bwd = [x, w, bias, has_bias, N, F, O](TensorNode<S>& self) {
    const auto g = self.grad;
    const auto xv = x.values();
    const auto wv = w.values();
    if (x.requires_grad()) {
      std::vector<S> dx(static_cast<std::size_t>(N * F), S(0));
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t o = 0; o < O; ++o) {
          const S gv = g[n * O + o];
          const S* wp = &wv[o * F];
          S* dp = &dx[n * F];
          for (std::int64_t f = 0; f < F; ++f) dp[f] += gv * wp[f];
        }
      x.node().accumulate(dx);
    }
    if (w.requires_grad()) {
      std::vector<S> dw(static_cast<std::size_t>(O * F), S(0));
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t o = 0; o < O; ++o) {
          const S gv = g[n * O + o];
          const S* xp = &xv[n * F];
          S* dp = &dw[o * F];
          for (std::int64_t f = 0; f < F; ++f) dp[f] += gv * xp[f];
        }
      w.node().accumulate(dw);
    }
    if (has_bias && bias.requires_grad()) {
      std::vector<S> db(static_cast<std::size_t>(O), S(0));
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t o = 0; o < O; ++o) db[o] += g[n * O + o];
      bias.node().accumulate(db);
    }
  };
  return make_result<S>({N, O}, std::move(out), std::move(parents), std::move(bwd));
}

// ---------------------------------------------------------------------------
// softmax over the last dimension.
template <class S>
TensorT<S> softmax(const TensorT<S>& x) {
  opchk::require(!x.shape().empty(), "softmax", "input must not be empty");
  const std::int64_t K = x.shape().back();
  const std::int64_t rows = x.numel() / K;
  std::vector<S> out(x.values().size());
  const auto xv = x.values();
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* p = &xv[r * K];
    S mx = p[0];
    for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, p[k]);
    double sum = 0.0;
    for (std::int64_t k = 0; k < K; ++k) {
      const double e = std::exp(static_cast<double>(p[k] - mx));
      out[r * K + k] = static_cast<S>(e);
      sum += e;
    }
    for (std::int64_t k = 0; k < K; ++k) out[r * K + k] = static_cast<S>(out[r * K + k] / sum);
  }
  auto y_keep = std::make_shared<std::vector<S>>(out);
  auto bwd = [x, y_keep, rows, K](TensorNode<S>& self) {
    const auto& y = *y_keep;
    std::vector<S> dx(y.size());
    for (std::int64_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::int64_t k = 0; k < K; ++k) dot += static_cast<double>(self.grad[r * K + k]) * y[r * K + k];
      for (std::int64_t k = 0; k < K; ++k)
        dx[r * K + k] = static_cast<S>(y[r * K + k] * (static_cast<double>(self.grad[r * K + k]) - dot));
    }
    x.node().accumulate(dx);
  };
  return make_result<S>(x.shape(), std::move(out), {x}, std::move(bwd));
}

// ---------------------------------------------------------------------------
// Numerically stable sigmoid, clamped away from exactly 0 and 1 so confidence
// values stay strictly interior (mirrors the log floor in cross_entropy).
template <class S>
TensorT<S> sigmoid(const TensorT<S>& x) {
  std::vector<S> out(x.values().size());
  const auto xv = x.values();
  const S lo = static_cast<S>(kSigmoidClamp);
  const S hi = S(1) - static_cast<S>(kSigmoidClamp);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    const double y = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    out[i] = std::min(hi, std::max(lo, static_cast<S>(y)));
  }
  auto y_keep = std::make_shared<std::vector<S>>(out);
  auto bwd = [x, y_keep](TensorNode<S>& self) {
    const auto& y = *y_keep;
    std::vector<S> dx(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] = self.grad[i] * y[i] * (S(1) - y[i]);
    x.node().accumulate(dx);
  };
  return make_result<S>(x.shape(), std::move(out), {x}, std::move(bwd));
}

// ---------------------------------------------------------------------------
template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  opchk::require(a.shape() == b.shape(), "add",
                 "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<S> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  auto bwd = [a, b](TensorNode<S>& self) {
    if (a.requires_grad()) a.node().accumulate(self.grad);
    if (b.requires_grad()) b.node().accumulate(self.grad);
  };
  return make_result<S>(a.shape(), std::move(out), {a, b}, std::move(bwd));
}

// y = scale * x + shift, elementwise with scalar constants.
template <class S>
TensorT<S> affine(const TensorT<S>& x, S scale, S shift) {
  std::vector<S> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * x.values()[i] + shift;
  auto bwd = [x, scale](TensorNode<S>& self) {
    std::vector<S> dx(self.grad.size());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = scale * self.grad[i];
    x.node().accumulate(dx);
  };
  return make_result<S>(x.shape(), std::move(out), {x}, std::move(bwd));
}

// ---------------------------------------------------------------------------
// Row-broadcast product: h [N,1] times y [N,K] -> [N,K]. Also covers the
// K == 1 elementwise case used by the cost recursion.
template <class S>
TensorT<S> mul_rowvec(const TensorT<S>& h, const TensorT<S>& y) {
  opchk::rank(h, 2, "mul_rowvec", "left operand");
  opchk::rank(y, 2, "mul_rowvec", "right operand");
  const std::int64_t N = y.shape()[0], K = y.shape()[1];
  opchk::require(h.shape()[0] == N && h.shape()[1] == 1, "mul_rowvec",
                 "left operand must be [N,1], got " + shape_str(h.shape()));
  std::vector<S> out(static_cast<std::size_t>(N * K));
  for (std::int64_t n = 0; n < N; ++n) {
    const S hv = h.values()[n];
    for (std::int64_t k = 0; k < K; ++k) out[n * K + k] = hv * y.values()[n * K + k];
  }
  auto bwd = [h, y, N, K](TensorNode<S>& self) {
    if (h.requires_grad()) {
      std::vector<S> dh(static_cast<std::size_t>(N));
      for (std::int64_t n = 0; n < N; ++n) {
        double s = 0.0;
        for (std::int64_t k = 0; k < K; ++k)
          s += static_cast<double>(self.grad[n * K + k]) * y.values()[n * K + k];
        dh[n] = static_cast<S>(s);
      }
      h.node().accumulate(dh);
    }
    if (y.requires_grad()) {
      std::vector<S> dy(static_cast<std::size_t>(N * K));
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t k = 0; k < K; ++k) dy[n * K + k] = self.grad[n * K + k] * h.values()[n];
      y.node().accumulate(dy);
    }
  };
  return make_result<S>(y.shape(), std::move(out), {h, y}, std::move(bwd));
}

// ---------------------------------------------------------------------------
// Channel concatenation of [N,Ca,H,W] and [N,Cb,H,W].
template <class S>
TensorT<S> concat_channels(const TensorT<S>& a, const TensorT<S>& b) {
  opchk::rank(a, 4, "concat", "first input");
  opchk::rank(b, 4, "concat", "second input");
  const auto& as = a.shape();
  const auto& bs = b.shape();
  opchk::require(as[0] == bs[0] && as[2] == bs[2] && as[3] == bs[3], "concat",
                 "inputs disagree outside the channel dim: " + shape_str(as) + " vs " + shape_str(bs));
  const std::int64_t N = as[0], Ca = as[1], Cb = bs[1], HW = as[2] * as[3];
  std::vector<S> out(static_cast<std::size_t>(N * (Ca + Cb) * HW));
  for (std::int64_t n = 0; n < N; ++n) {
    std::copy_n(&a.values()[n * Ca * HW], Ca * HW, &out[n * (Ca + Cb) * HW]);
    std::copy_n(&b.values()[n * Cb * HW], Cb * HW, &out[(n * (Ca + Cb) + Ca) * HW]);
  }
  auto bwd = [a, b, N, Ca, Cb, HW](TensorNode<S>& self) {
    if (a.requires_grad()) {
      std::vector<S> da(static_cast<std::size_t>(N * Ca * HW));
      for (std::int64_t n = 0; n < N; ++n)
        std::copy_n(&self.grad[n * (Ca + Cb) * HW], Ca * HW, &da[n * Ca * HW]);
      a.node().accumulate(da);
    }
    if (b.requires_grad()) {
      std::vector<S> db(static_cast<std::size_t>(N * Cb * HW));
      for (std::int64_t n = 0; n < N; ++n)
        std::copy_n(&self.grad[(n * (Ca + Cb) + Ca) * HW], Cb * HW, &db[n * Cb * HW]);
      b.node().accumulate(db);
    }
  };
  return make_result<S>({N, Ca + Cb, as[2], as[3]}, std::move(out), {a, b}, std::move(bwd));
}

// ---------------------------------------------------------------------------
template <class S>
TensorT<S> reshape(const TensorT<S>& x, Shape shape) {
  opchk::require(shape_numel(shape) == x.numel(), "reshape",
                 "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<S> out(x.values().begin(), x.values().end());
  auto bwd = [x](TensorNode<S>& self) { x.node().accumulate(self.grad); };
  return make_result<S>(std::move(shape), std::move(out), {x}, std::move(bwd));
}

// ---------------------------------------------------------------------------
// Per-row -log(p[label]) with the probability floor applied inside the log.
// Returns [N,1]. Gradient is -1/p on the picked entry while p is above the
// floor, zero once clamped.
template <class S>
TensorT<S> pick_neglog(const TensorT<S>& p, const std::vector<std::int64_t>& labels) {
  opchk::rank(p, 2, "pick_neglog", "probabilities");
  const std::int64_t N = p.shape()[0], K = p.shape()[1];
  opchk::require(static_cast<std::int64_t>(labels.size()) == N, "pick_neglog",
                 "label count " + std::to_string(labels.size()) + " does not match batch " + std::to_string(N));
  for (std::int64_t n = 0; n < N; ++n)
    opchk::require(labels[n] >= 0 && labels[n] < K, "pick_neglog",
                   "label " + std::to_string(labels[n]) + " out of range [0, " + std::to_string(K) + ")");
  std::vector<S> out(static_cast<std::size_t>(N));
  const S floor = static_cast<S>(kProbabilityFloor);
  for (std::int64_t n = 0; n < N; ++n) {
    const S v = p.values()[n * K + labels[n]];
    out[n] = static_cast<S>(-std::log(static_cast<double>(std::max(v, floor))));
  }
  auto labels_keep = std::make_shared<std::vector<std::int64_t>>(labels);
  auto bwd = [p, labels_keep, N, K, floor](TensorNode<S>& self) {
    std::vector<S> dp(static_cast<std::size_t>(N * K), S(0));
    for (std::int64_t n = 0; n < N; ++n) {
      const S v = p.values()[n * K + (*labels_keep)[n]];
      if (v > floor) dp[n * K + (*labels_keep)[n]] = -self.grad[n] / v;
    }
    p.node().accumulate(dp);
  };
  return make_result<S>({N, 1}, std::move(out), {p}, std::move(bwd));
}

// ---------------------------------------------------------------------------
template <class S>
TensorT<S> sum_all(const TensorT<S>& x) {
  double s = 0.0;
  for (S v : x.values()) s += v;
  auto bwd = [x](TensorNode<S>& self) {
    std::vector<S> dx(x.values().size(), self.grad[0]);
    x.node().accumulate(dx);
  };
  return make_result<S>({1}, {static_cast<S>(s)}, {x}, std::move(bwd));
}

template <class S>
TensorT<S> mean_all(const TensorT<S>& x) {
  const std::int64_t n = x.numel();
  double s = 0.0;
  for (S v : x.values()) s += v;
  auto bwd = [x, n](TensorNode<S>& self) {
    std::vector<S> dx(x.values().size(), self.grad[0] / static_cast<S>(n));
    x.node().accumulate(dx);
  };
  return make_result<S>({1}, {static_cast<S>(s / static_cast<double>(n))}, {x}, std::move(bwd));
}

// ---------------------------------------------------------------------------
// Cross entropy against an integer label, Eq-style: inputs are already
// probabilities. Accepts [K] with one label or [N,K] with N labels and
// returns the batch mean. Rejects non-normalized or negative input.
template <class S>
TensorT<S> cross_entropy(const TensorT<S>& prediction, const std::vector<std::int64_t>& labels) {
  TensorT<S> p = prediction;
  if (p.shape().size() == 1) p = reshape(p, {1, p.shape()[0]});
  opchk::rank(p, 2, "cross_entropy", "prediction");
  const std::int64_t N = p.shape()[0], K = p.shape()[1];
  for (std::int64_t n = 0; n < N; ++n) {
    double sum = 0.0;
    for (std::int64_t k = 0; k < K; ++k) {
      const S v = p.values()[n * K + k];
      opchk::require(v >= S(0), "cross_entropy", "prediction has a negative entry in row " + std::to_string(n));
      sum += v;
    }
    opchk::require(std::abs(sum - 1.0) <= 1e-5, "cross_entropy",
                   "prediction row " + std::to_string(n) + " sums to " + std::to_string(sum) + ", not 1");
  }
  return mean_all(pick_neglog(p, labels));
}

template <class S>
TensorT<S> cross_entropy(const TensorT<S>& prediction, std::int64_t label) {
  return cross_entropy(prediction, std::vector<std::int64_t>{label});
}

// ---------------------------------------------------------------------------
// Row argmax with ties resolved to the lowest index.
template <class S>
std::vector<std::int64_t> argmax_rows(const TensorT<S>& p) {
  opchk::rank(p, 2, "argmax", "input");
  const std::int64_t N = p.shape()[0], K = p.shape()[1];
  std::vector<std::int64_t> out(static_cast<std::size_t>(N));
  for (std::int64_t n = 0; n < N; ++n) {
    std::int64_t best = 0;
    for (std::int64_t k = 1; k < K; ++k)
      if (p.values()[n * K + k] > p.values()[n * K + best]) best = k;
    out[n] = best;
  }
  return out;
}

template <class S>
bool all_finite(const TensorT<S>& t) {
  for (S v : t.values())
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

}  // namespace ptee::nn
