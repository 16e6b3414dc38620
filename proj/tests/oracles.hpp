// Plain-loop reference implementations, written independently of the library
// kernels. Inputs and outputs are flat row-major vectors.
#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

namespace pointfix::oracle {

/// out[y][x][k] = mean_c l[y][x][c] * r[y][x-k][c], 0 when x-k < 0.
inline std::vector<double> correlation(const std::vector<double>& l, const std::vector<double>& r, std::size_t h,
                                       std::size_t w, std::size_t c, std::size_t dmax) {
  std::vector<double> out(h * w * (dmax + 1), 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k <= dmax; ++k) {
        if (k > x) continue;
        double s = 0;
        for (std::size_t ch = 0; ch < c; ++ch) s += l[(y * w + x) * c + ch] * r[(y * w + x - k) * c + ch];
        out[(y * w + x) * (dmax + 1) + k] = s / double(c);
      }
  return out;
}

/// image sampled at column x - d with linear interpolation; columns outside
/// [0, w-1] clamp to the border.
inline std::vector<double> warp(const std::vector<double>& img, const std::vector<double>& disp, std::size_t h,
                                std::size_t w, std::size_t c) {
  std::vector<double> out(h * w * c);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double u = double(x) - disp[y * w + x];
      for (std::size_t ch = 0; ch < c; ++ch) {
        auto at = [&](long col) { return img[(y * w + std::size_t(col)) * c + ch]; };
        double v;
        if (u < 0) {
          v = at(0);
        } else if (u > double(w - 1)) {
          v = at(long(w) - 1);
        } else {
          const long x0 = long(std::floor(u));
          const long x1 = std::min(x0 + 1, long(w) - 1);
          const double f = u - double(x0);
          v = (1 - f) * at(x0) + f * at(x1);
        }
        out[(y * w + x) * c + ch] = v;
      }
    }
  return out;
}

/// Conv with zero "same" padding, HWC input, [K,K,Cin,Cout] kernel.
inline std::vector<double> conv2d(const std::vector<double>& x, const std::vector<double>& wt, std::size_t h,
                                  std::size_t w, std::size_t cin, std::size_t k, std::size_t cout,
                                  std::size_t stride, std::size_t& oh, std::size_t& ow) {
  const long pad = long(k / 2);
  oh = (h + 2 * std::size_t(pad) - k) / stride + 1;
  ow = (w + 2 * std::size_t(pad) - k) / stride + 1;
  std::vector<double> out(oh * ow * cout, 0.0);
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox)
      for (std::size_t co = 0; co < cout; ++co) {
        double s = 0;
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) {
            const long iy = long(oy * stride + ky) - pad, ix = long(ox * stride + kx) - pad;
            if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(w)) continue;
            for (std::size_t ci = 0; ci < cin; ++ci)
              s += x[(std::size_t(iy) * w + std::size_t(ix)) * cin + ci] *
                   wt[((ky * k + kx) * cin + ci) * cout + co];
          }
        out[(oy * ow + ox) * cout + co] = s;
      }
  return out;
}

inline std::vector<std::pair<std::size_t, std::size_t>> select_points(const std::vector<double>& pred,
                                                                      const std::vector<double>& gt,
                                                                      const std::vector<double>& valid,
                                                                      std::size_t h, std::size_t w, double tau) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      if (valid[i] == 1.0 && std::fabs(pred[i] - gt[i]) > tau) out.emplace_back(y, x);
    }
  return out;
}

inline double d1_all(const std::vector<double>& pred, const std::vector<double>& gt,
                     const std::vector<double>& valid) {
  long bad = 0, n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (valid[i] == 1.0) {
      ++n;
      if (std::fabs(pred[i] - gt[i]) > 3.0) ++bad;
    }
  return 100.0 * double(bad) / double(n);
}

inline double epe(const std::vector<double>& pred, const std::vector<double>& gt, const std::vector<double>& valid) {
  double s = 0;
  long n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (valid[i] == 1.0) {
      ++n;
      s += std::fabs(pred[i] - gt[i]);
    }
  return s / double(n);
}

/// Mean over points of |pred + r - gt| (residual learning) or |r - gt|.
inline double point_loss(const std::vector<double>& pred, const std::vector<double>& r, const std::vector<double>& gt,
                         const std::vector<std::pair<std::size_t, std::size_t>>& pts, std::size_t w, bool mean,
                         bool residual) {
  double s = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const std::size_t p = pts[i].first * w + pts[i].second;
    s += std::fabs((residual ? pred[p] : 0.0) + r[i] - gt[p]);
  }
  return mean && !pts.empty() ? s / double(pts.size()) : s;
}

}  // namespace pointfix::oracle
