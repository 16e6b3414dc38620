// Structured differentiable ops: matrix products, 2-D convolution, 1-D
// correlation, row gather/scatter, resampling and horizontal warping.
//
// Matmul, convolution and correlation each come as a family of three
// kernels, the partial derivatives of one trilinear form. The backward pass of
// every member is expressed with the other two, so all of them are
// differentiable to any order.
#pragma once

#include <pointfix/tensor.hpp>

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <vector>

namespace pointfix {

// ---------------------------------------------------------------------------
// Matrix products. T(A, B, G) = sum(G .* (A B)).

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& g, const Tensor<T>& b);
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& g);

namespace detail {
inline void require_2d(const Shape& s, const char* what) {
  if (s.size() != 2) throw std::invalid_argument(std::string(what) + ": expected 2-D, got " + shape_str(s));
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C[m,n] = A[m,k] B[k,n] (or with either operand transposed), row-major.
template <typename T>
std::vector<T> gemm(const T* a, bool ta, const T* b, bool tb, std::size_t m, std::size_t k,
                    std::size_t n) {
  using Map = Eigen::Map<const RowMat<T>>;
  std::vector<T> c(m * n, T(0));
  Eigen::Map<RowMat<T>> cm(c.data(), Eigen::Index(m), Eigen::Index(n));
  if (m == 0 || n == 0 || k == 0) return c;
  const Map am(a, ta ? Eigen::Index(k) : Eigen::Index(m), ta ? Eigen::Index(m) : Eigen::Index(k));
  const Map bm(b, tb ? Eigen::Index(n) : Eigen::Index(k), tb ? Eigen::Index(k) : Eigen::Index(n));
  if (!ta && !tb) cm.noalias() = am * bm;
  else if (!ta && tb) cm.noalias() = am * bm.transpose();
  else if (ta && !tb) cm.noalias() = am.transpose() * bm;
  else cm.noalias() = am.transpose() * bm.transpose();
  return c;
}

template <typename T>
std::vector<T> mm_values(const std::vector<T>& a, const std::vector<T>& b, std::size_t m,
                         std::size_t k, std::size_t n) {
  return gemm(a.data(), false, b.data(), false, m, k, n);
}
}  // namespace detail

/// [M,K] x [K,N] -> [M,N]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_2d(a.shape(), "matmul");
  detail::require_2d(b.shape(), "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw std::invalid_argument("matmul: inner dimensions differ");
  return Tensor<T>::from_op(
      {m, n}, detail::mm_values(a.vec(), b.vec(), m, k, n), {a, b},
      [a, b](const Tensor<T>& u) {
        return std::vector<Tensor<T>>{a.requires_grad() ? matmul_nt(u, b) : Tensor<T>{},
                                      b.requires_grad() ? matmul_tn(a, u) : Tensor<T>{}};
      },
      "matmul");
}

/// G B^T: [M,N] x [K,N] -> [M,K]
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& g, const Tensor<T>& b) {
  const std::size_t m = g.dim(0), n = g.dim(1), k = b.dim(0);
  if (b.dim(1) != n) throw std::invalid_argument("matmul_nt: shapes differ");
  return Tensor<T>::from_op(
      {m, k}, detail::gemm(g.vec().data(), false, b.vec().data(), true, m, n, k), {g, b},
      [g, b](const Tensor<T>& u) {
        return std::vector<Tensor<T>>{g.requires_grad() ? matmul(u, b) : Tensor<T>{},
                                      b.requires_grad() ? matmul_tn(u, g) : Tensor<T>{}};
      },
      "matmul_nt");
}

/// A^T G: [M,K] x [M,N] -> [K,N]
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& g) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = g.dim(1);
  if (g.dim(0) != m) throw std::invalid_argument("matmul_tn: shapes differ");
  return Tensor<T>::from_op(
      {k, n}, detail::gemm(a.vec().data(), true, g.vec().data(), false, k, m, n), {a, g},
      [a, g](const Tensor<T>& u) {
        return std::vector<Tensor<T>>{a.requires_grad() ? matmul_nt(g, u) : Tensor<T>{},
                                      g.requires_grad() ? matmul(a, u) : Tensor<T>{}};
      },
      "matmul_tn");
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
  detail::require_2d(x.shape(), "transpose2d");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> v(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) v[j * r + i] = x[i * c + j];
  return Tensor<T>::from_op(
      {c, r}, std::move(v), {x},
      [](const Tensor<T>& g) { return std::vector<Tensor<T>>{transpose2d(g)}; }, "transpose2d");
}

// ---------------------------------------------------------------------------
// Convolution over HWC images with [K,K,Cin,Cout] kernels, "same" padding K/2.
// T(x, w, g) = sum(g .* conv(x, w)).

struct ConvGeometry {
  std::size_t h, w, cin, k, cout, stride, pad, oh, ow;

  static ConvGeometry make(const Shape& x, const Shape& wt, std::size_t stride) {
    if (x.size() != 3) throw std::invalid_argument("conv2d: input must be [H,W,C], got " + shape_str(x));
    if (wt.size() != 4 || wt[0] != wt[1])
      throw std::invalid_argument("conv2d: kernel must be [K,K,Cin,Cout], got " + shape_str(wt));
    if (wt[2] != x[2]) throw std::invalid_argument("conv2d: channel mismatch");
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
    ConvGeometry g{x[0], x[1], x[2], wt[0], wt[3], stride, wt[0] / 2, 0, 0};
    g.oh = (g.h + 2 * g.pad - g.k) / stride + 1;
    g.ow = (g.w + 2 * g.pad - g.k) / stride + 1;
    return g;
  }
  Shape out_shape() const { return {oh, ow, cout}; }
  Shape in_shape() const { return {h, w, cin}; }
  Shape kernel_shape() const { return {k, k, cin, cout}; }
};

template <typename T>
Tensor<T> conv2d_grad_input(const Tensor<T>& g, const Tensor<T>& w, const Shape& xshape,
                            std::size_t stride);
template <typename T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& x, const Tensor<T>& g, const Shape& wshape,
                             std::size_t stride);

namespace detail {

inline bool is_pointwise(const ConvGeometry& g) { return g.k == 1 && g.stride == 1; }

// Patch matrix [OH*OW, K*K*Cin] of zero-padded input windows.
template <typename T>
std::vector<T> im2col(const T* x, const ConvGeometry& g) {
  const std::size_t row = g.k * g.k * g.cin;
  std::vector<T> cols(g.oh * g.ow * row, T(0));
  for (std::size_t oy = 0; oy < g.oh; ++oy)
    for (std::size_t ox = 0; ox < g.ow; ++ox) {
      T* dst = cols.data() + (oy * g.ow + ox) * row;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pad);
        if (iy < 0 || iy >= std::ptrdiff_t(g.h)) continue;
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const std::ptrdiff_t ix = std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pad);
          if (ix < 0 || ix >= std::ptrdiff_t(g.w)) continue;
          std::copy_n(x + (std::size_t(iy) * g.w + std::size_t(ix)) * g.cin, g.cin,
                      dst + (ky * g.k + kx) * g.cin);
        }
      }
    }
  return cols;
}

// Adjoint of im2col: accumulates patch rows back into an [H,W,Cin] image.
template <typename T>
std::vector<T> col2im(const std::vector<T>& cols, const ConvGeometry& g) {
  const std::size_t row = g.k * g.k * g.cin;
  std::vector<T> x(g.h * g.w * g.cin, T(0));
  for (std::size_t oy = 0; oy < g.oh; ++oy)
    for (std::size_t ox = 0; ox < g.ow; ++ox) {
      const T* src = cols.data() + (oy * g.ow + ox) * row;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pad);
        if (iy < 0 || iy >= std::ptrdiff_t(g.h)) continue;
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const std::ptrdiff_t ix = std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pad);
          if (ix < 0 || ix >= std::ptrdiff_t(g.w)) continue;
          T* d = x.data() + (std::size_t(iy) * g.w + std::size_t(ix)) * g.cin;
          const T* s = src + (ky * g.k + kx) * g.cin;
          for (std::size_t c = 0; c < g.cin; ++c) d[c] += s[c];
        }
      }
    }
  return x;
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride = 1) {
  const auto geo = ConvGeometry::make(x.shape(), w.shape(), stride);
  const std::size_t p = geo.oh * geo.ow, kk = geo.k * geo.k * geo.cin;
  std::vector<T> out;
  if (detail::is_pointwise(geo)) {
    out = detail::gemm(x.vec().data(), false, w.vec().data(), false, p, kk, geo.cout);
  } else {
    const auto cols = detail::im2col(x.vec().data(), geo);
    out = detail::gemm(cols.data(), false, w.vec().data(), false, p, kk, geo.cout);
  }
  const Shape xs = x.shape(), ws = w.shape();
  return Tensor<T>::from_op(
      geo.out_shape(), std::move(out), {x, w},
      [x, w, xs, ws, stride](const Tensor<T>& u) {
        return std::vector<Tensor<T>>{
            x.requires_grad() ? conv2d_grad_input(u, w, xs, stride) : Tensor<T>{},
            w.requires_grad() ? conv2d_grad_weight(x, u, ws, stride) : Tensor<T>{}};
      },
      "conv2d");
}

template <typename T>
Tensor<T> conv2d_grad_input(const Tensor<T>& g, const Tensor<T>& w, const Shape& xshape,
                            std::size_t stride) {
  const auto geo = ConvGeometry::make(xshape, w.shape(), stride);
  if (g.shape() != geo.out_shape()) throw std::invalid_argument("conv2d_grad_input: bad grad shape");
  const std::size_t p = geo.oh * geo.ow, kk = geo.k * geo.k * geo.cin;
  auto gcols = detail::gemm(g.vec().data(), false, w.vec().data(), true, p, geo.cout, kk);
  std::vector<T> gx = detail::is_pointwise(geo) ? std::move(gcols) : detail::col2im(gcols, geo);
  return Tensor<T>::from_op(
      xshape, std::move(gx), {g, w},
      [g, w, stride](const Tensor<T>& u) {
        return std::vector<Tensor<T>>{
            g.requires_grad() ? conv2d(u, w, stride) : Tensor<T>{},
            w.requires_grad() ? conv2d_grad_weight(u, g, w.shape(), stride) : Tensor<T>{}};
      },
      "conv2d_grad_input");
}

template <typename T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& x, const Tensor<T>& g, const Shape& wshape,
                             std::size_t stride) {
  const auto geo = ConvGeometry::make(x.shape(), wshape, stride);
  if (g.shape() != geo.out_shape()) throw std::invalid_argument("conv2d_grad_weight: bad grad shape");
  const std::size_t p = geo.oh * geo.ow, kk = geo.k * geo.k * geo.cin;
  std::vector<T> gw;
  if (detail::is_pointwise(geo)) {
    gw = detail::gemm(x.vec().data(), true, g.vec().data(), false, kk, p, geo.cout);
  } else {
    const auto cols = detail::im2col(x.vec().data(), geo);
    gw = detail::gemm(cols.data(), true, g.vec().data(), false, kk, p, geo.cout);
  }
  return Tensor<T>::from_op(
      wshape, std::move(gw), {x, g},
      [x, g, stride](const Tensor<T>& u) {
        return std::vector<Tensor<T>>{
            x.requires_grad() ? conv2d_grad_input(g, u, x.shape(), stride) : Tensor<T>{},
            g.requires_grad() ? conv2d(x, u, stride) : Tensor<T>{}};
      },
      "conv2d_grad_weight");
}

// ---------------------------------------------------------------------------
// 1-D horizontal correlation.
// out[y,x,k] = (1/C) <fl[y,x], fr[y,x-k]>, zero where x-k < 0, k = 0..D.
// T(fl, fr, g) = sum(g .* corr(fl, fr)).

template <typename T>
Tensor<T> correlation_grad_left(const Tensor<T>& g, const Tensor<T>& fr, std::size_t max_disp);
template <typename T>
Tensor<T> correlation_grad_right(const Tensor<T>& g, const Tensor<T>& fl, std::size_t max_disp);

namespace detail {
inline void check_corr(const Shape& a, const Shape& b) {
  if (a.size() != 3 || a != b)
    throw std::invalid_argument("correlation: feature maps must be congruent [H,W,C], got " +
                                shape_str(a) + " and " + shape_str(b));
}
}  // namespace detail

template <typename T>
Tensor<T> correlation(const Tensor<T>& fl, const Tensor<T>& fr, std::size_t max_disp) {
  detail::check_corr(fl.shape(), fr.shape());
  if (max_disp < 1) throw std::invalid_argument("correlation: max_disp must be >= 1");
  const std::size_t h = fl.dim(0), w = fl.dim(1), c = fl.dim(2), nd = max_disp + 1;
  const T inv = T(1) / static_cast<T>(c);
  std::vector<T> out(h * w * nd, T(0));
  const T* lv = fl.vec().data();
  const T* rv = fr.vec().data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const T* a = lv + (y * w + x) * c;
      T* o = out.data() + (y * w + x) * nd;
      for (std::size_t k = 0; k < nd && k <= x; ++k) {
        const T* b = rv + (y * w + x - k) * c;
        T acc = 0;
        for (std::size_t ch = 0; ch < c; ++ch) acc += a[ch] * b[ch];
        o[k] = acc * inv;
      }
    }
  return Tensor<T>::from_op(
      {h, w, nd}, std::move(out), {fl, fr},
      [fl, fr, max_disp](const Tensor<T>& u) {
        return std::vector<Tensor<T>>{
            fl.requires_grad() ? correlation_grad_left(u, fr, max_disp) : Tensor<T>{},
            fr.requires_grad() ? correlation_grad_right(u, fl, max_disp) : Tensor<T>{}};
      },
      "correlation");
}

template <typename T>
Tensor<T> correlation_grad_left(const Tensor<T>& g, const Tensor<T>& fr, std::size_t max_disp) {
  const std::size_t h = fr.dim(0), w = fr.dim(1), c = fr.dim(2), nd = max_disp + 1;
  if (g.shape() != Shape{h, w, nd}) throw std::invalid_argument("correlation_grad_left: bad shape");
  const T inv = T(1) / static_cast<T>(c);
  std::vector<T> out(h * w * c, T(0));
  const T* gv = g.vec().data();
  const T* rv = fr.vec().data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      T* o = out.data() + (y * w + x) * c;
      const T* gk = gv + (y * w + x) * nd;
      for (std::size_t k = 0; k < nd && k <= x; ++k) {
        const T s = gk[k] * inv;
        const T* b = rv + (y * w + x - k) * c;
        for (std::size_t ch = 0; ch < c; ++ch) o[ch] += s * b[ch];
      }
    }
  return Tensor<T>::from_op(
      fr.shape(), std::move(out), {g, fr},
      [g, fr, max_disp](const Tensor<T>& u) {
        return std::vector<Tensor<T>>{
            g.requires_grad() ? correlation(u, fr, max_disp) : Tensor<T>{},
            fr.requires_grad() ? correlation_grad_right(g, u, max_disp) : Tensor<T>{}};
      },
      "correlation_grad_left");
}

template <typename T>
Tensor<T> correlation_grad_right(const Tensor<T>& g, const Tensor<T>& fl, std::size_t max_disp) {
  const std::size_t h = fl.dim(0), w = fl.dim(1), c = fl.dim(2), nd = max_disp + 1;
  if (g.shape() != Shape{h, w, nd}) throw std::invalid_argument("correlation_grad_right: bad shape");
  const T inv = T(1) / static_cast<T>(c);
  std::vector<T> out(h * w * c, T(0));
  const T* gv = g.vec().data();
  const T* lv = fl.vec().data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const T* a = lv + (y * w + x) * c;
      const T* gk = gv + (y * w + x) * nd;
      for (std::size_t k = 0; k < nd && k <= x; ++k) {
        const T s = gk[k] * inv;
        T* o = out.data() + (y * w + x - k) * c;
        for (std::size_t ch = 0; ch < c; ++ch) o[ch] += s * a[ch];
      }
    }
  return Tensor<T>::from_op(
      fl.shape(), std::move(out), {g, fl},
      [g, fl, max_disp](const Tensor<T>& u) {
        return std::vector<Tensor<T>>{
            g.requires_grad() ? correlation(fl, u, max_disp) : Tensor<T>{},
            fl.requires_grad() ? correlation_grad_left(g, u, max_disp) : Tensor<T>{}};
      },
      "correlation_grad_right");
}

// ---------------------------------------------------------------------------
// Row gather/scatter along axis 0 with a fixed integer index.

using RowIndex = std::shared_ptr<const std::vector<std::uint32_t>>;

inline RowIndex make_index(std::vector<std::uint32_t> idx) {
  return std::make_shared<const std::vector<std::uint32_t>>(std::move(idx));
}

template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& g, const RowIndex& idx, std::size_t rows);

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const RowIndex& idx) {
  if (x.ndim() < 1) throw std::invalid_argument("gather_rows: scalar input");
  const std::size_t n = x.dim(0), row = x.numel() / std::max<std::size_t>(n, 1);
  std::vector<T> out(idx->size() * row);
  const T* xv = x.vec().data();
  for (std::size_t i = 0; i < idx->size(); ++i) {
    const std::size_t r = (*idx)[i];
    if (r >= n) throw std::out_of_range("gather_rows: index out of range");
    std::copy_n(xv + r * row, row, out.data() + i * row);
  }
  Shape s = x.shape();
  s[0] = idx->size();
  return Tensor<T>::from_op(
      std::move(s), std::move(out), {x},
      [idx, n](const Tensor<T>& u) { return std::vector<Tensor<T>>{scatter_rows(u, idx, n)}; },
      "gather_rows");
}

template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& g, const RowIndex& idx, std::size_t rows) {
  if (g.ndim() < 1 || g.dim(0) != idx->size())
    throw std::invalid_argument("scatter_rows: grad rows do not match index");
  Shape s = g.shape();
  s[0] = 1;
  const std::size_t row = shape_numel(s);
  s[0] = rows;
  std::vector<T> out(rows * row, T(0));
  const T* gv = g.vec().data();
  for (std::size_t i = 0; i < idx->size(); ++i) {
    T* o = out.data() + std::size_t((*idx)[i]) * row;
    const T* src = gv + i * row;
    for (std::size_t j = 0; j < row; ++j) o[j] += src[j];
  }
  return Tensor<T>::from_op(
      std::move(s), std::move(out), {g},
      [idx](const Tensor<T>& u) { return std::vector<Tensor<T>>{gather_rows(u, idx)}; },
      "scatter_rows");
}

// ---------------------------------------------------------------------------
// Resampling built from gathers with constant weights.

/// Bilinear resize of an [h,w,c] map to [H,W,c] (half-pixel centres, clamped).
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  if (x.ndim() != 3) throw std::invalid_argument("resize_bilinear: expected [H,W,C]");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (h == out_h && w == out_w) return x;
  const std::size_t m = out_h * out_w;
  std::vector<std::uint32_t> i00(m), i01(m), i10(m), i11(m);
  std::vector<T> w00(m), w01(m), w10(m), w11(m);
  auto axis = [](std::size_t o, std::size_t in, std::size_t out, std::size_t& a, std::size_t& b,
                 double& f) {
    double s = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    a = static_cast<std::size_t>(std::floor(s));
    b = std::min(a + 1, in - 1);
    f = s - static_cast<double>(a);
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double fy;
    axis(y, h, out_h, y0, y1, fy);
    for (std::size_t xo = 0; xo < out_w; ++xo) {
      std::size_t x0, x1;
      double fx;
      axis(xo, w, out_w, x0, x1, fx);
      const std::size_t o = y * out_w + xo;
      i00[o] = std::uint32_t(y0 * w + x0);
      i01[o] = std::uint32_t(y0 * w + x1);
      i10[o] = std::uint32_t(y1 * w + x0);
      i11[o] = std::uint32_t(y1 * w + x1);
      w00[o] = T((1 - fy) * (1 - fx));
      w01[o] = T((1 - fy) * fx);
      w10[o] = T(fy * (1 - fx));
      w11[o] = T(fy * fx);
    }
  }
  const Tensor<T> flat = reshape(x, {h * w, c});
  auto term = [&](std::vector<std::uint32_t>& idx, std::vector<T>& wt) {
    return mul(gather_rows(flat, make_index(std::move(idx))),
               Tensor<T>::constant({m, 1}, std::move(wt)));
  };
  Tensor<T> out = add(add(term(i00, w00), term(i01, w01)), add(term(i10, w10), term(i11, w11)));
  return reshape(out, {out_h, out_w, c});
}

/// 3x3 mean filter over an [H,W,C] map with replicated borders.
template <typename T>
Tensor<T> box_filter3(const Tensor<T>& x) {
  if (x.ndim() != 3) throw std::invalid_argument("box_filter3: expected [H,W,C]");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  auto shifted = [&](const Tensor<T>& flat, int dy, int dx) {
    std::vector<std::uint32_t> idx(h * w);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        const auto sy = std::clamp<std::ptrdiff_t>(std::ptrdiff_t(y) + dy, 0, std::ptrdiff_t(h) - 1);
        const auto sx = std::clamp<std::ptrdiff_t>(std::ptrdiff_t(xx) + dx, 0, std::ptrdiff_t(w) - 1);
        idx[y * w + xx] = std::uint32_t(std::size_t(sy) * w + std::size_t(sx));
      }
    return gather_rows(flat, make_index(std::move(idx)));
  };
  const Tensor<T> flat = reshape(x, {h * w, c});
  const Tensor<T> horiz =
      scale(add(add(shifted(flat, 0, -1), flat), shifted(flat, 0, 1)), T(1) / T(3));
  const Tensor<T> both =
      scale(add(add(shifted(horiz, -1, 0), horiz), shifted(horiz, 1, 0)), T(1) / T(3));
  return reshape(both, {h, w, c});
}

// ---------------------------------------------------------------------------
// Horizontal warping for rectified stereo.

template <typename T>
struct WarpResult {
  Tensor<T> image;     ///< [H,W,C]
  Tensor<T> in_view;   ///< [H,W] constant, 1 where x - d lies in [0, W-1]
};

/// Samples image at (y, x - disparity[y,x]) with linear interpolation along x.
/// Out-of-view samples take the nearest border column and carry no gradient
/// with respect to the disparity.
template <typename T>
WarpResult<T> bilinear_warp_1d(const Tensor<T>& image, const Tensor<T>& disparity) {
  if (image.ndim() != 3) throw std::invalid_argument("bilinear_warp_1d: image must be [H,W,C]");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (disparity.shape() != Shape{h, w})
    throw std::invalid_argument("bilinear_warp_1d: disparity " + shape_str(disparity.shape()) +
                                " does not match image " + shape_str(image.shape()));
  const std::size_t m = h * w;
  std::vector<std::uint32_t> i0(m), i1(m);
  std::vector<T> offset(m, T(0)), mask(m, T(0));
  const auto& dv = disparity.vec();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t o = y * w + x;
      const T u = static_cast<T>(x) - dv[o];
      std::size_t x0, x1;
      if (u >= T(0) && u <= static_cast<T>(w - 1)) {
        x0 = static_cast<std::size_t>(std::floor(u));
        x1 = std::min(x0 + 1, w - 1);
        offset[o] = static_cast<T>(x) - static_cast<T>(x0);
        mask[o] = T(1);
      } else {
        x0 = x1 = u < T(0) ? 0 : w - 1;
      }
      i0[o] = std::uint32_t(y * w + x0);
      i1[o] = std::uint32_t(y * w + x1);
    }
  const Tensor<T> flat = reshape(image, {m, c});
  const Tensor<T> g0 = gather_rows(flat, make_index(std::move(i0)));
  const Tensor<T> g1 = gather_rows(flat, make_index(std::move(i1)));
  const Tensor<T> in_view = Tensor<T>::constant({m, 1}, mask);
  // Fractional weight (x - x0) - d inside the view, 0 outside.
  const Tensor<T> frac =
      mul(in_view, sub(Tensor<T>::constant({m, 1}, std::move(offset)), reshape(disparity, {m, 1})));
  const Tensor<T> out = add(g0, mul(frac, sub(g1, g0)));
  return {reshape(out, {h, w, c}), Tensor<T>::constant({h, w}, std::move(mask))};
}

}  // namespace pointfix
