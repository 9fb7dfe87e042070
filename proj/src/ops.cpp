// SPDX-License-Identifier: Apache-2.0
#include "fbnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <vector>

#include "gemm.hpp"

namespace fbnet::ops {

using detail::gemm;

namespace {

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                     " differ");
  }
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(s));
  }
}

// Accumulates g into t's gradient when t participates in differentiation.
template <typename T, typename F>
void accumulate_into(const Tensor<T>& t, F&& fn) {
  if (t.defined() && t.requires_grad()) {
    fn(t.grad_mut());
  }
}

template <typename T>
Tensor<T> tracked(Tensor<T> out) {
  out.set_requires_grad(true);
  return out;
}

struct Im2ColGeometry {
  std::int64_t channels, height, width, kernel, out_h, out_w;
  int stride, dilation, padding;
};

template <typename T>
void im2col(const T* x, const Im2ColGeometry& g, T* col) {
  const std::int64_t plane = g.out_h * g.out_w;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (std::int64_t ki = 0; ki < g.kernel; ++ki) {
      for (std::int64_t kj = 0; kj < g.kernel; ++kj) {
        T* row = col + ((c * g.kernel + ki) * g.kernel + kj) * plane;
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
          const std::int64_t ih = oh * g.stride - g.padding + ki * g.dilation;
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= g.height) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = x + (c * g.height + ih) * g.width;
          for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
            const std::int64_t iw = ow * g.stride - g.padding + kj * g.dilation;
            dst[ow] = (iw >= 0 && iw < g.width) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const Im2ColGeometry& g, T* x) {
  const std::int64_t plane = g.out_h * g.out_w;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (std::int64_t ki = 0; ki < g.kernel; ++ki) {
      for (std::int64_t kj = 0; kj < g.kernel; ++kj) {
        const T* row = col + ((c * g.kernel + ki) * g.kernel + kj) * plane;
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
          const std::int64_t ih = oh * g.stride - g.padding + ki * g.dilation;
          if (ih < 0 || ih >= g.height) {
            continue;
          }
          const T* src = row + oh * g.out_w;
          T* dst = x + (c * g.height + ih) * g.width;
          for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
            const std::int64_t iw = ow * g.stride - g.padding + kj * g.dilation;
            if (iw >= 0 && iw < g.width) {
              dst[iw] += src[ow];
            }
          }
        }
      }
    }
  }
}

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::int64_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
  const int rank = static_cast<int>(s.size());
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError("axis " + std::to_string(axis) + " invalid for shape " + shape_str(s));
  }
  AxisSplit split;
  for (int i = 0; i < a; ++i) split.outer *= s[i];
  split.extent = s[a];
  for (int i = a + 1; i < rank; ++i) split.inner *= s[i];
  return split;
}

// Per-axis sampling table for bilinear resizing.
struct LinearTaps {
  std::vector<std::int64_t> lo, hi;
  std::vector<double> frac;
};

LinearTaps make_taps(std::int64_t in, std::int64_t out) {
  LinearTaps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    auto lo = static_cast<std::int64_t>(std::floor(src));
    lo = std::min(lo, in - 1);
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in - 1);
    t.frac[i] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (should_record(a, b)) {
    tracked(out);
    active_tape()->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      accumulate_into(a, [&](std::span<T> ga) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      });
      accumulate_into(b, [&](std::span<T> gb) {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  if (should_record(a, b)) {
    tracked(out);
    active_tape()->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      accumulate_into(a, [&](std::span<T> ga) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      });
      accumulate_into(b, [&](std::span<T> gb) {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (should_record(a, b)) {
    tracked(out);
    active_tape()->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto x = a.data();
      auto y = b.data();
      accumulate_into(a, [&](std::span<T> ga) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      });
      accumulate_into(b, [&](std::span<T> gb) {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  if (should_record(a)) {
    tracked(out);
    active_tape()->record([a, out, factor]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + value;
  if (should_record(a)) {
    tracked(out);
    active_tape()->record([a, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  double acc = 0;
  for (T v : a.data()) acc += v;
  Tensor<T> out({1}, static_cast<T>(acc));
  if (should_record(a)) {
    tracked(out);
    active_tape()->record([a, out]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0];
      for (auto& v : a.grad_mut()) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()));
  if (should_record(a)) {
    tracked(out);
    active_tape()->record([a, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts) {
  if (parts.empty()) {
    throw ShapeError("concat_channels: no inputs");
  }
  const Shape& first = parts[0].shape();
  require_rank(first, 4, "concat_channels");
  std::int64_t channels = 0;
  for (const auto& p : parts) {
    require_rank(p.shape(), 4, "concat_channels");
    if (p.dim(0) != first[0] || p.dim(2) != first[2] || p.dim(3) != first[3]) {
      throw ShapeError("concat_channels: " + shape_str(p.shape()) + " incompatible with " +
                       shape_str(first));
    }
    channels += p.dim(1);
  }
  const std::int64_t batch = first[0];
  const std::int64_t plane = first[2] * first[3];
  Tensor<T> out({batch, channels, first[2], first[3]});
  T* o = out.ptr();
  for (std::int64_t b = 0; b < batch; ++b) {
    for (const auto& p : parts) {
      const std::int64_t n = p.dim(1) * plane;
      const T* src = p.ptr() + b * n;
      o = std::copy(src, src + n, o);
    }
  }
  bool record = false;
  for (const auto& p : parts) record = record || should_record(p);
  if (record) {
    tracked(out);
    std::vector<Tensor<T>> inputs(parts.begin(), parts.end());
    active_tape()->record([inputs, out, batch, plane]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      for (std::int64_t b = 0; b < batch; ++b) {
        for (auto& p : inputs) {
          const std::int64_t n = p.dim(1) * plane;
          if (p.requires_grad()) {
            T* gp = p.grad_mut().data() + b * n;
            for (std::int64_t i = 0; i < n; ++i) gp[i] += g[i];
          }
          g += n;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Products

template <typename T>
Tensor<T> batch_matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b) {
  require_rank(a.shape(), 3, "batch_matmul");
  require_rank(b.shape(), 3, "batch_matmul");
  const std::int64_t batch = a.dim(0);
  const std::int64_t m = trans_a ? a.dim(2) : a.dim(1);
  const std::int64_t k = trans_a ? a.dim(1) : a.dim(2);
  const std::int64_t kb = trans_b ? b.dim(2) : b.dim(1);
  const std::int64_t n = trans_b ? b.dim(1) : b.dim(2);
  if (b.dim(0) != batch || k != kb) {
    throw ShapeError("batch_matmul: inner dimensions of " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " disagree");
  }
  Tensor<T> out({batch, m, n});
  for (std::int64_t i = 0; i < batch; ++i) {
    gemm(trans_a, trans_b, m, n, k, a.ptr() + i * m * k, b.ptr() + i * k * n,
         out.ptr() + i * m * n, false);
  }
  if (should_record(a, b)) {
    tracked(out);
    active_tape()->record([a, b, out, batch, m, n, k, trans_a, trans_b]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      if (a.requires_grad()) {
        T* ga = a.grad_mut().data();
        for (std::int64_t i = 0; i < batch; ++i) {
          const T* gi = g + i * m * n;
          const T* bi = b.ptr() + i * k * n;
          T* gai = ga + i * m * k;
          if (!trans_a) {
            gemm(false, !trans_b, m, k, n, gi, bi, gai, true);
          } else {
            gemm(trans_b, true, k, m, n, bi, gi, gai, true);
          }
        }
      }
      if (b.requires_grad()) {
        T* gb = b.grad_mut().data();
        for (std::int64_t i = 0; i < batch; ++i) {
          const T* gi = g + i * m * n;
          const T* ai = a.ptr() + i * m * k;
          T* gbi = gb + i * k * n;
          if (!trans_b) {
            gemm(!trans_a, false, k, n, m, ai, gi, gbi, true);
          } else {
            gemm(true, trans_a, n, k, m, gi, ai, gbi, true);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions of " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " disagree");
  }
  auto out = batch_matmul(reshape(a, {1, a.dim(0), a.dim(1)}),
                          reshape(b, {1, b.dim(0), b.dim(1)}), false, false);
  return reshape(out, {a.dim(0), b.dim(1)});
}

// ---------------------------------------------------------------------------
// Convolution

std::int64_t conv_output_extent(std::int64_t in, int kernel, const ConvGeometry& g) {
  if (kernel < 1 || g.stride < 1 || g.dilation < 1 || g.padding < 0) {
    throw ConfigError("conv2d: kernel, stride and dilation must be >= 1 and padding >= 0");
  }
  const std::int64_t span = in + 2 * g.padding - static_cast<std::int64_t>(g.dilation) * (kernel - 1) - 1;
  if (span < 0) {
    throw ConfigError("conv2d: input extent " + std::to_string(in) + " too small for kernel " +
                      std::to_string(kernel) + " with dilation " + std::to_string(g.dilation) +
                      " and padding " + std::to_string(g.padding));
  }
  return span / g.stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 const ConvGeometry& geometry) {
  require_rank(x.shape(), 4, "conv2d input");
  require_rank(w.shape(), 4, "conv2d weight");
  const std::int64_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::int64_t cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin || w.dim(3) != k) {
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " for " +
                     std::to_string(cout) + " output channels");
  }
  const std::int64_t oh = conv_output_extent(h, static_cast<int>(k), geometry);
  const std::int64_t ow = conv_output_extent(wd, static_cast<int>(k), geometry);
  const Im2ColGeometry g{cin, h, wd, k, oh, ow, geometry.stride, geometry.dilation,
                         geometry.padding};
  const bool pointwise =
      k == 1 && geometry.stride == 1 && geometry.padding == 0;
  const std::int64_t rows = cin * k * k;
  const std::int64_t plane = oh * ow;

  Tensor<T> out({batch, cout, oh, ow});
  std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(rows * plane));
  for (std::int64_t b = 0; b < batch; ++b) {
    const T* xb = x.ptr() + b * cin * h * wd;
    const T* cols = xb;
    if (!pointwise) {
      im2col(xb, g, col.data());
      cols = col.data();
    }
    T* yb = out.ptr() + b * cout * plane;
    gemm(false, false, cout, plane, rows, w.ptr(), cols, yb, false);
    if (bias.defined()) {
      for (std::int64_t c = 0; c < cout; ++c) {
        const T bc = bias.data()[c];
        T* row = yb + c * plane;
        for (std::int64_t i = 0; i < plane; ++i) row[i] += bc;
      }
    }
  }

  if (should_record(x, w, bias)) {
    tracked(out);
    active_tape()->record([x, w, bias, out, g, pointwise, batch, cin, cout, rows, plane]() mutable {
      if (!out.has_grad()) return;
      const T* gout = out.grad().data();
      const std::int64_t in_plane = g.height * g.width;
      std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(rows * plane));
      std::vector<T> dcol(pointwise ? 0 : static_cast<std::size_t>(rows * plane));
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* gb = gout + b * cout * plane;
        const T* xb = x.ptr() + b * cin * in_plane;
        if (w.requires_grad()) {
          const T* cols = xb;
          if (!pointwise) {
            im2col(xb, g, col.data());
            cols = col.data();
          }
          gemm(false, true, cout, rows, plane, gb, cols, w.grad_mut().data(), true);
        }
        if (x.requires_grad()) {
          T* gx = x.grad_mut().data() + b * cin * in_plane;
          if (pointwise) {
            gemm(true, false, rows, plane, cout, w.ptr(), gb, gx, true);
          } else {
            gemm(true, false, rows, plane, cout, w.ptr(), gb, dcol.data(), false);
            col2im_add(dcol.data(), g, gx);
          }
        }
        if (bias.defined() && bias.requires_grad()) {
          auto gbias = bias.grad_mut();
          for (std::int64_t c = 0; c < cout; ++c) {
            const T* row = gb + c * plane;
            T acc = 0;
            for (std::int64_t i = 0; i < plane; ++i) acc += row[i];
            gbias[c] += acc;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization / activation

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  Tensor<T> out(x.shape());
  const T* in = x.ptr();
  T* o = out.ptr();
  for (std::int64_t a = 0; a < s.outer; ++a) {
    for (std::int64_t i = 0; i < s.inner; ++i) {
      const std::int64_t base = a * s.extent * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::int64_t c = 0; c < s.extent; ++c) mx = std::max(mx, in[base + c * s.inner]);
      T total = 0;
      for (std::int64_t c = 0; c < s.extent; ++c) {
        const T e = std::exp(in[base + c * s.inner] - mx);
        o[base + c * s.inner] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (std::int64_t c = 0; c < s.extent; ++c) o[base + c * s.inner] *= inv;
    }
  }
  if (should_record(x)) {
    tracked(out);
    active_tape()->record([x, out, s]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      const T* y = out.ptr();
      T* gx = x.grad_mut().data();
      for (std::int64_t a = 0; a < s.outer; ++a) {
        for (std::int64_t i = 0; i < s.inner; ++i) {
          const std::int64_t base = a * s.extent * s.inner + i;
          T dot = 0;
          for (std::int64_t c = 0; c < s.extent; ++c) {
            const std::int64_t j = base + c * s.inner;
            dot += g[j] * y[j];
          }
          for (std::int64_t c = 0; c < s.extent; ++c) {
            const std::int64_t j = base + c * s.inner;
            gx[j] += y[j] * (g[j] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w) {
  require_rank(x.shape(), 4, "resize_bilinear");
  if (out_h < 1 || out_w < 1) {
    throw ShapeError("resize_bilinear: output extent must be positive");
  }
  const std::int64_t planes = x.dim(0) * x.dim(1);
  const std::int64_t in_h = x.dim(2), in_w = x.dim(3);
  const LinearTaps ty = make_taps(in_h, out_h);
  const LinearTaps tx = make_taps(in_w, out_w);
  Tensor<T> out({x.dim(0), x.dim(1), out_h, out_w});
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = x.ptr() + p * in_h * in_w;
    T* dst = out.ptr() + p * out_h * out_w;
    for (std::int64_t i = 0; i < out_h; ++i) {
      const T* r0 = src + ty.lo[i] * in_w;
      const T* r1 = src + ty.hi[i] * in_w;
      const T fy = static_cast<T>(ty.frac[i]);
      for (std::int64_t j = 0; j < out_w; ++j) {
        const T fx = static_cast<T>(tx.frac[j]);
        const T top = r0[tx.lo[j]] * (T(1) - fx) + r0[tx.hi[j]] * fx;
        const T bottom = r1[tx.lo[j]] * (T(1) - fx) + r1[tx.hi[j]] * fx;
        dst[i * out_w + j] = top * (T(1) - fy) + bottom * fy;
      }
    }
  }
  if (should_record(x)) {
    tracked(out);
    active_tape()->record([x, out, ty, tx, planes, in_h, in_w, out_h, out_w]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      T* gx = x.grad_mut().data();
      for (std::int64_t p = 0; p < planes; ++p) {
        const T* gp = g + p * out_h * out_w;
        T* dst = gx + p * in_h * in_w;
        for (std::int64_t i = 0; i < out_h; ++i) {
          T* r0 = dst + ty.lo[i] * in_w;
          T* r1 = dst + ty.hi[i] * in_w;
          const T fy = static_cast<T>(ty.frac[i]);
          for (std::int64_t j = 0; j < out_w; ++j) {
            const T fx = static_cast<T>(tx.frac[j]);
            const T v = gp[i * out_w + j];
            r0[tx.lo[j]] += v * (T(1) - fy) * (T(1) - fx);
            r0[tx.hi[j]] += v * (T(1) - fy) * fx;
            r1[tx.lo[j]] += v * fy * (T(1) - fx);
            r1[tx.hi[j]] += v * fy * fx;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, int factor) {
  if (factor < 1) {
    throw ConfigError("upsample_bilinear: factor must be >= 1");
  }
  require_rank(x.shape(), 4, "upsample_bilinear");
  return resize_bilinear(x, x.dim(2) * factor, x.dim(3) * factor);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] > T(0) ? in[i] : T(0);
  if (should_record(x)) {
    tracked(out);
    active_tape()->record([x, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto y = out.data();
      auto gx = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (y[i] > T(0)) gx[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int kernel, int stride) {
  require_rank(x.shape(), 4, "max_pool2d");
  const ConvGeometry geo{stride, 1, 0};
  const std::int64_t h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = conv_output_extent(h, kernel, geo);
  const std::int64_t ow = conv_output_extent(w, kernel, geo);
  const std::int64_t planes = x.dim(0) * x.dim(1);
  Tensor<T> out({x.dim(0), x.dim(1), oh, ow});
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(out.numel()));
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = x.ptr() + p * h * w;
    for (std::int64_t i = 0; i < oh; ++i) {
      for (std::int64_t j = 0; j < ow; ++j) {
        std::int64_t best = (i * stride) * w + j * stride;
        for (int ki = 0; ki < kernel; ++ki) {
          for (int kj = 0; kj < kernel; ++kj) {
            const std::int64_t idx = (i * stride + ki) * w + j * stride + kj;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::int64_t o = (p * oh + i) * ow + j;
        out.ptr()[o] = src[best];
        argmax[o] = p * h * w + best;
      }
    }
  }
  if (should_record(x)) {
    tracked(out);
    active_tape()->record([x, out, argmax = std::move(argmax)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                     T momentum, T eps) {
  require_rank(x.shape(), 4, "batch_norm");
  const std::int64_t batch = x.dim(0), channels = x.dim(1);
  const std::int64_t plane = x.dim(2) * x.dim(3);
  const std::int64_t count = batch * plane;
  for (const Tensor<T>* p : std::initializer_list<const Tensor<T>*>{&gamma, &beta, &running_mean,
                                                                     &running_var}) {
    if (p->rank() != 1 || p->dim(0) != channels) {
      throw ShapeError("batch_norm: parameter " + shape_str(p->shape()) + " for " +
                       std::to_string(channels) + " channels");
    }
  }
  if (training && count < 2) {
    throw NumericalError("batch_norm: need more than one value per channel in training mode, got " +
                         shape_str(x.shape()));
  }

  Tensor<T> out(x.shape());
  std::vector<T> xhat(static_cast<std::size_t>(x.numel()));
  std::vector<T> inv_std(static_cast<std::size_t>(channels));
  for (std::int64_t c = 0; c < channels; ++c) {
    double mu = 0, var = 0;
    if (training) {
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* src = x.ptr() + (b * channels + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) mu += src[i];
      }
      mu /= static_cast<double>(count);
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* src = x.ptr() + (b * channels + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const double d = src[i] - mu;
          var += d * d;
        }
      }
      var /= static_cast<double>(count);
      auto rm = running_mean.data();
      auto rv = running_var.data();
      const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
      rm[c] = static_cast<T>((1.0 - momentum) * rm[c] + momentum * mu);
      rv[c] = static_cast<T>((1.0 - momentum) * rv[c] + momentum * unbiased);
    } else {
      mu = running_mean.data()[c];
      var = running_var.data()[c];
    }
    const T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    inv_std[c] = is;
    const T m = static_cast<T>(mu);
    const T gm = gamma.data()[c];
    const T bt = beta.data()[c];
    for (std::int64_t b = 0; b < batch; ++b) {
      const std::int64_t off = (b * channels + c) * plane;
      const T* src = x.ptr() + off;
      T* dst = out.ptr() + off;
      T* xh = xhat.data() + off;
      for (std::int64_t i = 0; i < plane; ++i) {
        xh[i] = (src[i] - m) * is;
        dst[i] = gm * xh[i] + bt;
      }
    }
  }

  if (should_record(x, gamma, beta)) {
    tracked(out);
    active_tape()->record([x, gamma, beta, out, xhat = std::move(xhat),
                           inv_std = std::move(inv_std), training, batch, channels, plane,
                           count]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      for (std::int64_t c = 0; c < channels; ++c) {
        double sum_g = 0, sum_gx = 0;
        for (std::int64_t b = 0; b < batch; ++b) {
          const std::int64_t off = (b * channels + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            sum_g += g[off + i];
            sum_gx += g[off + i] * xhat[off + i];
          }
        }
        if (gamma.requires_grad()) gamma.grad_mut()[c] += static_cast<T>(sum_gx);
        if (beta.requires_grad()) beta.grad_mut()[c] += static_cast<T>(sum_g);
        if (!x.requires_grad()) continue;
        T* gx = x.grad_mut().data();
        const T k = gamma.data()[c] * inv_std[c];
        const T mean_g = static_cast<T>(sum_g / static_cast<double>(count));
        const T mean_gx = static_cast<T>(sum_gx / static_cast<double>(count));
        for (std::int64_t b = 0; b < batch; ++b) {
          const std::int64_t off = (b * channels + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            if (training) {
              gx[off + i] += k * (g[off + i] - mean_g - xhat[off + i] * mean_gx);
            } else {
              gx[off + i] += k * g[off + i];
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T p, std::mt19937_64& rng, bool training) {
  if (p < T(0) || p >= T(1)) {
    throw ConfigError("dropout: probability must lie in [0, 1)");
  }
  if (!training || p == T(0)) {
    return x;
  }
  const T keep_scale = T(1) / (T(1) - p);
  std::vector<T> mask(static_cast<std::size_t>(x.numel()));
  for (auto& m : mask) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u >= static_cast<double>(p) ? keep_scale : T(0);
  }
  Tensor<T> out(x.shape());
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] * mask[i];
  if (should_record(x)) {
    tracked(out);
    active_tape()->record([x, out, mask = std::move(mask)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const IntTensor& labels, int ignore_index) {
  require_rank(logits.shape(), 4, "cross_entropy logits");
  const std::int64_t batch = logits.dim(0), classes = logits.dim(1);
  const std::int64_t plane = logits.dim(2) * logits.dim(3);
  if (labels.shape() != Shape{batch, logits.dim(2), logits.dim(3)}) {
    throw ShapeError("cross_entropy: labels " + shape_str(labels.shape()) +
                     " do not match logits " + shape_str(logits.shape()));
  }
  std::int64_t count = 0;
  double total = 0;
  const T* z = logits.ptr();
  auto lbl = labels.data();
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t i = 0; i < plane; ++i) {
      const std::int32_t y = lbl[b * plane + i];
      if (y == ignore_index) continue;
      if (y < 0 || y >= classes) {
        throw ContractError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                            std::to_string(classes) + ")");
      }
      const T* zp = z + b * classes * plane + i;
      T mx = zp[0];
      for (std::int64_t c = 1; c < classes; ++c) mx = std::max(mx, zp[c * plane]);
      double acc = 0;
      for (std::int64_t c = 0; c < classes; ++c) acc += std::exp(static_cast<double>(zp[c * plane] - mx));
      total += std::log(acc) + static_cast<double>(mx) - static_cast<double>(zp[y * plane]);
      ++count;
    }
  }
  if (count == 0) {
    throw NumericalError("cross_entropy: every pixel carries the ignore label");
  }
  Tensor<T> out({1}, static_cast<T>(total / static_cast<double>(count)));
  if (should_record(logits)) {
    tracked(out);
    active_tape()->record([logits, labels, out, ignore_index, batch, classes, plane, count]() mutable {
      if (!out.has_grad()) return;
      const T scale_g = out.grad()[0] / static_cast<T>(count);
      const T* z = logits.ptr();
      T* gz = logits.grad_mut().data();
      auto lbl = labels.data();
      for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t i = 0; i < plane; ++i) {
          const std::int32_t y = lbl[b * plane + i];
          if (y == ignore_index) continue;
          const T* zp = z + b * classes * plane + i;
          T* gp = gz + b * classes * plane + i;
          T mx = zp[0];
          for (std::int64_t c = 1; c < classes; ++c) mx = std::max(mx, zp[c * plane]);
          T denom = 0;
          for (std::int64_t c = 0; c < classes; ++c) denom += std::exp(zp[c * plane] - mx);
          for (std::int64_t c = 0; c < classes; ++c) {
            const T prob = std::exp(zp[c * plane] - mx) / denom;
            gp[c * plane] += scale_g * (prob - (c == y ? T(1) : T(0)));
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
IntTensor argmax_channels(const Tensor<T>& logits) {
  require_rank(logits.shape(), 4, "argmax_channels");
  const std::int64_t batch = logits.dim(0), classes = logits.dim(1);
  const std::int64_t plane = logits.dim(2) * logits.dim(3);
  IntTensor out({batch, logits.dim(2), logits.dim(3)});
  auto o = out.data();
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t i = 0; i < plane; ++i) {
      const T* zp = logits.ptr() + b * classes * plane + i;
      std::int32_t best = 0;
      for (std::int64_t c = 1; c < classes; ++c) {
        if (zp[c * plane] > zp[best * plane]) best = static_cast<std::int32_t>(c);
      }
      o[b * plane + i] = best;
    }
  }
  return out;
}

#define FBNET_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                              \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                         \
  template Tensor<T> sum(const Tensor<T>&);                                                   \
  template Tensor<T> mean(const Tensor<T>&);                                                  \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                        \
  template Tensor<T> concat_channels(std::span<const Tensor<T>>);                             \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> batch_matmul(const Tensor<T>&, const Tensor<T>&, bool, bool);            \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                            const ConvGeometry&);                                             \
  template Tensor<T> softmax(const Tensor<T>&, int);                                          \
  template Tensor<T> resize_bilinear(const Tensor<T>&, std::int64_t, std::int64_t);          \
  template Tensor<T> upsample_bilinear(const Tensor<T>&, int);                                \
  template Tensor<T> relu(const Tensor<T>&);                                                  \
  template Tensor<T> max_pool2d(const Tensor<T>&, int, int);                                  \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                Tensor<T>&, Tensor<T>&, bool, T, T);                          \
  template Tensor<T> dropout(const Tensor<T>&, T, std::mt19937_64&, bool);                    \
  template Tensor<T> cross_entropy(const Tensor<T>&, const IntTensor&, int);                  \
  template IntTensor argmax_channels(const Tensor<T>&);

FBNET_INSTANTIATE_OPS(float)
FBNET_INSTANTIATE_OPS(double)

#undef FBNET_INSTANTIATE_OPS

}  // namespace fbnet::ops
