#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "xview/error.hpp"
#include "xview/kernels.hpp"
#include "xview/rng.hpp"
#include "xview/tape.hpp"
#include "xview/tensor.hpp"

namespace xview {

enum class Mode { train, eval };

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* arg) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + arg + " must be rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
  }
}

}  // namespace detail

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;  // zero padding on every side
};

inline std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                                    std::size_t padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

namespace detail {

// Visits every (patch row r, batch column q, source element) triple of the
// unfolded layout; padding taps are skipped.
template <typename Fn>
void for_each_patch(const Shape& in_shape, std::size_t kh, std::size_t kw, const Conv2dOptions& opt, std::size_t Ho,
                    std::size_t Wo, Fn&& fn) {
  const std::size_t N = in_shape[0], C = in_shape[1], H = in_shape[2], W = in_shape[3];
  const std::size_t P = Ho * Wo, NP = N * P;
  const auto pad = static_cast<std::ptrdiff_t>(opt.padding);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < kh; ++i)
      for (std::size_t j = 0; j < kw; ++j) {
        const std::size_t r = (c * kh + i) * kw + j;
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t src_base = (n * C + c) * H * W;
          const std::size_t dst_base = r * NP + n * P;
          for (std::size_t oy = 0; oy < Ho; ++oy) {
            const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * opt.stride + i) - pad;
            if (y < 0 || y >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t ox = 0; ox < Wo; ++ox) {
              const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox * opt.stride + j) - pad;
              if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(W)) continue;
              fn(dst_base + oy * Wo + ox, src_base + static_cast<std::size_t>(y) * W + static_cast<std::size_t>(xx));
            }
          }
        }
      }
}

inline void im2col(const Tensor& x, std::size_t kh, std::size_t kw, const Conv2dOptions& opt, std::size_t Ho,
                   std::size_t Wo, std::vector<double>& cols) {
  for_each_patch(x.shape(), kh, kw, opt, Ho, Wo, [&](std::size_t dst, std::size_t src) { cols[dst] = x[src]; });
}

inline void col2im(const std::vector<double>& cols, std::size_t kh, std::size_t kw, const Conv2dOptions& opt,
                   std::size_t Ho, std::size_t Wo, Tensor& dx) {
  for_each_patch(dx.shape(), kh, kw, opt, Ho, Wo, [&](std::size_t dst, std::size_t src) { dx[src] += cols[dst]; });
}

}  // namespace detail

// out[n,j] = sum_i x[n,i] * W[i,j] + b[j]
inline Var linear(Tape& tape, Var x, Var weights, Var bias) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(weights);
  const Tensor& bv = tape.value(bias);
  detail::require_rank(xv, 2, "linear", "x");
  detail::require_rank(wv, 2, "linear", "weights");
  if (xv.dim(1) != wv.dim(0) || bv.size() != wv.dim(1)) {
    throw DimensionError("linear: x " + shape_str(xv.shape()) + " incompatible with weights " +
                         shape_str(wv.shape()) + " and bias " + shape_str(bv.shape()));
  }
  const std::size_t n_rows = xv.dim(0), din = wv.dim(0), dout = wv.dim(1);
  Tensor out({n_rows, dout});
  for (std::size_t n = 0; n < n_rows; ++n) std::copy_n(bv.data().begin(), dout, out.row(n).begin());
  detail::gemm_nn(n_rows, dout, din, xv.data().data(), din, wv.data().data(), dout, out.data().data(), dout);
  return tape.record(std::move(out), {x, weights, bias}, [x, weights, bias, n_rows, din, dout](Tape& t, const Tensor& g) {
    if (Tensor* gb = t.grad_slot(bias)) {
      for (std::size_t n = 0; n < n_rows; ++n)
        for (std::size_t j = 0; j < dout; ++j) (*gb)[j] += g[n * dout + j];
    }
    if (Tensor* gw = t.grad_slot(weights)) {
      const auto xt = detail::transpose(t.value(x).data().data(), n_rows, din);
      detail::gemm_nn(din, dout, n_rows, xt.data(), n_rows, g.data().data(), dout, gw->data().data(), dout);
    }
    if (Tensor* gx = t.grad_slot(x)) {
      const auto wt = detail::transpose(t.value(weights).data().data(), din, dout);
      detail::gemm_nn(n_rows, din, dout, g.data().data(), dout, wt.data(), din, gx->data().data(), din);
    }
  });
}

// Cross-correlation (no kernel flip). x: N x C x H x W, kernel: K x C x kh x kw.
inline Var conv2d(Tape& tape, Var x, Var kernel, Var bias, Conv2dOptions opt = {}) {
  const Tensor& xv = tape.value(x);
  const Tensor& kv = tape.value(kernel);
  const Tensor& bv = tape.value(bias);
  detail::require_rank(xv, 4, "conv2d", "x");
  detail::require_rank(kv, 4, "conv2d", "kernel");
  if (opt.stride == 0) throw ParameterError("conv2d: stride must be positive");
  const std::size_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const std::size_t K = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
  if (kv.dim(1) != C || bv.size() != K) {
    throw DimensionError("conv2d: input " + shape_str(xv.shape()) + " incompatible with kernel " +
                         shape_str(kv.shape()) + " and bias " + shape_str(bv.shape()));
  }
  if (H + 2 * opt.padding < kh || W + 2 * opt.padding < kw) {
    throw DimensionError("conv2d: kernel " + shape_str(kv.shape()) + " larger than input " +
                         shape_str(xv.shape()));
  }
  const std::size_t Ho = conv_output_size(H, kh, opt.stride, opt.padding);
  const std::size_t Wo = conv_output_size(W, kw, opt.stride, opt.padding);
  const std::size_t R = C * kh * kw, P = Ho * Wo, NP = N * P;

  // Unfolded patches for the whole batch: cols[r * NP + n * P + p]. Kept for
  // the reverse pass. Long contiguous rows let the inner loops vectorize.
  auto cols = std::make_shared<std::vector<double>>(R * NP, 0.0);
  detail::im2col(xv, kh, kw, opt, Ho, Wo, *cols);

  // out_t[k * NP + q]; each entry sums its R products in a fixed order, so a
  // sample's output does not depend on the rest of the batch.
  std::vector<double> out_t(K * NP);
  for (std::size_t k = 0; k < K; ++k) std::fill_n(out_t.data() + k * NP, NP, bv[k]);
  detail::gemm_nn(K, NP, R, kv.data().data(), R, cols->data(), NP, out_t.data(), NP);
  Tensor out({N, K, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k)
      std::copy_n(out_t.data() + k * NP + n * P, P, &out[(n * K + k) * P]);

  return tape.record(
      std::move(out), {x, kernel, bias},
      [=](Tape& t, const Tensor& g) {
        const Tensor& kv = t.value(kernel);
        std::vector<double> g_t(K * NP);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t k = 0; k < K; ++k) std::copy_n(&g[(n * K + k) * P], P, g_t.data() + k * NP + n * P);
        if (Tensor* gb = t.grad_slot(bias)) {
          for (std::size_t k = 0; k < K; ++k) {
            const double* gr = g_t.data() + k * NP;
            double acc = 0.0;
            for (std::size_t q = 0; q < NP; ++q) acc += gr[q];
            (*gb)[k] += acc;
          }
        }
        if (Tensor* gk = t.grad_slot(kernel)) {
          const auto cols_t = detail::transpose(cols->data(), R, NP);
          detail::gemm_nn(K, R, NP, g_t.data(), NP, cols_t.data(), R, gk->data().data(), R);
        }
        if (Tensor* gx = t.grad_slot(x)) {
          std::vector<double> dcols(R * NP, 0.0);
          const auto k_t = detail::transpose(kv.data().data(), K, R);
          detail::gemm_nn(R, NP, K, k_t.data(), K, g_t.data(), NP, dcols.data(), NP);
          detail::col2im(dcols, kh, kw, opt, Ho, Wo, *gx);
        }
      });
}

inline Var relu(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return tape.record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    Tensor* gx = t.grad_slot(x);
    for (std::size_t i = 0; i < xv.size(); ++i)
      if (xv[i] > 0.0) (*gx)[i] += g[i];
  });
}

// One seeded mask stream per dropout location. Each forward call in train
// mode consumes one counter value unless the site is frozen, in which case
// the same mask is replayed (used for gradient checks).
struct DropoutSite {
  std::uint64_t seed = 0;
  std::uint64_t calls = 0;
  bool frozen = false;
};

// Inverted dropout: survivors are scaled by 1/(1-p); eval mode is the identity.
inline Var dropout(Tape& tape, Var x, double p, Mode mode, DropoutSite& site) {
  if (!(p >= 0.0 && p < 1.0)) throw ParameterError("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (mode == Mode::eval || p == 0.0) return x;
  const Tensor& xv = tape.value(x);
  const std::uint64_t call = site.frozen ? site.calls : site.calls++;
  const std::uint64_t mask_seed = derive_seed(site.seed, call);
  const double scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(xv.size());
  Tensor out(xv.shape());
  CounterRng rng(mask_seed);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    (*mask)[i] = rng.uniform() >= p ? scale : 0.0;
    out[i] = xv[i] * (*mask)[i];
  }
  return tape.record(std::move(out), {x}, [x, mask](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (*mask)[i];
  });
}

// Global average pooling: N x C x H x W -> N x C.
inline Var gap(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  detail::require_rank(xv, 4, "gap", "x");
  const std::size_t N = xv.dim(0), C = xv.dim(1), S = xv.dim(2) * xv.dim(3);
  Tensor out({N, C});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    double acc = 0.0;
    for (std::size_t s = 0; s < S; ++s) acc += xv[nc * S + s];
    out[nc] = acc / static_cast<double>(S);
  }
  return tape.record(std::move(out), {x}, [x, N, C, S](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_slot(x);
    const double inv = 1.0 / static_cast<double>(S);
    for (std::size_t nc = 0; nc < N * C; ++nc)
      for (std::size_t s = 0; s < S; ++s) (*gx)[nc * S + s] += g[nc] * inv;
  });
}

// N x ... -> N x (product of the rest).
inline Var flatten(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  const std::size_t n = xv.dim(0);
  Tensor out = xv.reshaped({n, xv.size() / n});
  return tape.record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
}

// Joins N x D_i matrices along the feature dimension.
inline Var concat(Tape& tape, const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const std::size_t n = tape.value(parts.front()).dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (Var p : parts) {
    const Tensor& v = tape.value(p);
    if (v.rank() != 2 || v.dim(0) != n) {
      throw DimensionError("concat: inputs must be N x D with equal N; got " + shape_str(v.shape()) +
                           " after " + shape_str(tape.value(parts.front()).shape()));
    }
    widths.push_back(v.dim(1));
    total += v.dim(1);
  }
  Tensor out({n, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = tape.value(parts[k]);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < widths[k]; ++j) out[r * total + offset + j] = v[r * widths[k] + j];
    offset += widths[k];
  }
  return tape.record(std::move(out), parts, [parts, widths, n, total](Tape& t, const Tensor& g) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (Tensor* gp = t.grad_slot(parts[k])) {
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < widths[k]; ++j) (*gp)[r * widths[k] + j] += g[r * total + offset + j];
      }
      offset += widths[k];
    }
  });
}

inline Var sum(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  double acc = 0.0;
  for (double v : xv.data()) acc += v;
  return tape.record(Tensor::scalar(acc), {x}, [x](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_slot(x);
    for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += g[0];
  });
}

inline Var scale(Tape& tape, Var x, double s) {
  const Tensor& xv = tape.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = s * xv[i];
  return tape.record(std::move(out), {x}, [x, s](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += s * g[i];
  });
}

inline Var add(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  av.require_same_shape(bv, "add");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(a)) *ga += g;
    if (Tensor* gb = t.grad_slot(b)) *gb += g;
  });
}

// Row-wise x / ||x||; rows of zeros stay zero.
inline Var l2_normalize_rows(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  detail::require_rank(xv, 2, "l2_normalize_rows", "x");
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  auto norms = std::make_shared<std::vector<double>>(n);
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < n; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += xv[r * d + j] * xv[r * d + j];
    const double norm = std::sqrt(ss);
    (*norms)[r] = norm;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = norm > 0.0 ? xv[r * d + j] / norm : 0.0;
  }
  return tape.record(std::move(out), {x}, [x, norms, n, d](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    Tensor* gx = t.grad_slot(x);
    for (std::size_t r = 0; r < n; ++r) {
      const double norm = (*norms)[r];
      if (norm <= 0.0) continue;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * xv[r * d + j];
      const double inv = 1.0 / norm, inv3 = inv * inv * inv;
      for (std::size_t j = 0; j < d; ++j) (*gx)[r * d + j] += g[r * d + j] * inv - xv[r * d + j] * dot * inv3;
    }
  });
}

}  // namespace xview
