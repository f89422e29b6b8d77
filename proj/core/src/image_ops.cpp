#include <Eigen/Core>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tg3d/tensor.hpp"

namespace tg3d {

using detail::input_grad;
using detail::input_value;
using detail::make_result;
using detail::wants_grad;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

void require_rank4(const Tensor& x, const char* op) {
  if (x.rank() != 4) {
    throw std::invalid_argument(fmt::format("{}: expected [B, C, H, W], got {}", op, shape_str(x.shape())));
  }
}

// cols[(c*k + ky)*k + kx, y*W + x] = in[c, y+ky-pad, x+kx-pad]
void im2col(const double* in, int c, int h, int w, int k, int pad, double* cols) {
  const int hw = h * w;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* dst = cols + static_cast<int64_t>((ci * k + ky) * k + kx) * hw;
        const double* src = in + static_cast<int64_t>(ci) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) {
            std::fill(dst + y * w, dst + (y + 1) * w, 0.0);
            continue;
          }
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - pad;
            dst[y * w + x] = (sx < 0 || sx >= w) ? 0.0 : src[sy * w + sx];
          }
        }
      }
}

void col2im(const double* cols, int c, int h, int w, int k, int pad, double* out) {
  const int hw = h * w;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* src = cols + static_cast<int64_t>((ci * k + ky) * k + kx) * hw;
        double* dst = out + static_cast<int64_t>(ci) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - pad;
            if (sx >= 0 && sx < w) dst[sy * w + sx] += src[y * w + x];
          }
        }
      }
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double s = 0.0;
  for (int i = -radius; i <= radius; ++i) s += (k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma)));
  for (auto& v : k) v /= s;
  return k;
}

// One separable pass along x (horizontal=true) or y with edge-replicating borders.
// The adjoint scatters instead of gathers.
void blur_pass(const double* in, double* out, int planes, int h, int w, const std::vector<double>& k,
               bool horizontal, bool adjoint = false) {
  const int r = static_cast<int>(k.size() / 2);
  const int64_t hw = static_cast<int64_t>(h) * w;
  if (adjoint) std::fill(out, out + planes * hw, 0.0);
  for (int p = 0; p < planes; ++p) {
    const double* src = in + p * hw;
    double* dst = out + p * hw;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int t = -r; t <= r; ++t) {
          const int yy = horizontal ? y : std::clamp(y + t, 0, h - 1);
          const int xx = horizontal ? std::clamp(x + t, 0, w - 1) : x;
          if (adjoint) {
            dst[yy * w + xx] += k[static_cast<size_t>(t + r)] * src[y * w + x];
          } else {
            acc += k[static_cast<size_t>(t + r)] * src[yy * w + xx];
          }
        }
        if (!adjoint) dst[y * w + x] = acc;
      }
  }
}

struct ResizeTap {
  int i0, i1;
  double w0, w1;
};

std::vector<ResizeTap> resize_taps(int start, int len, int out_len, int bound) {
  std::vector<ResizeTap> taps(static_cast<size_t>(out_len));
  const double scale = static_cast<double>(len) / out_len;
  for (int o = 0; o < out_len; ++o) {
    double src = start + (o + 0.5) * scale - 0.5;
    src = std::clamp(src, static_cast<double>(start), static_cast<double>(start + len - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, std::min(start + len - 1, bound - 1));
    const double f = src - i0;
    taps[static_cast<size_t>(o)] = {i0, i1, 1.0 - f, f};
  }
  return taps;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int pad) {
  require_rank4(x, "conv2d");
  require_rank4(w, "conv2d weight");
  const int b = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(0), k = w.dim(2);
  if (w.dim(1) != ci || w.dim(3) != k) {
    throw std::invalid_argument(
        fmt::format("conv2d: input {} vs weight {}", shape_str(x.shape()), shape_str(w.shape())));
  }
  if (2 * pad != k - 1) throw std::invalid_argument("conv2d: only 'same' padding is supported");
  const int hw = h * wd;
  const int kk = ci * k * k;
  std::vector<double> out(static_cast<size_t>(b) * co * hw);
  std::vector<double> cols(static_cast<size_t>(kk) * hw);
  MapConstMat W(w.data().data(), co, kk);
  for (int n = 0; n < b; ++n) {
    im2col(x.data().data() + static_cast<int64_t>(n) * ci * hw, ci, h, wd, k, pad, cols.data());
    MapMat(out.data() + static_cast<int64_t>(n) * co * hw, co, hw).noalias() =
        W * MapConstMat(cols.data(), kk, hw);
  }
  return make_result({b, co, h, wd}, std::move(out), {x, w}, [=](Node& self) {
    const auto& xv = input_value(self, 0);
    MapConstMat Wv(input_value(self, 1).data(), co, kk);
    std::vector<double> col(static_cast<size_t>(kk) * hw);
    std::vector<double> dcol(static_cast<size_t>(kk) * hw);
    const bool gx = wants_grad(self, 0), gw = wants_grad(self, 1);
    for (int n = 0; n < b; ++n) {
      MapConstMat G(self.grad.data() + static_cast<int64_t>(n) * co * hw, co, hw);
      if (gw) {
        im2col(xv.data() + static_cast<int64_t>(n) * ci * hw, ci, h, wd, k, pad, col.data());
        MapMat(input_grad(self, 1).data(), co, kk).noalias() +=
            G * MapConstMat(col.data(), kk, hw).transpose();
      }
      if (gx) {
        MapMat(dcol.data(), kk, hw).noalias() = Wv.transpose() * G;
        col2im(dcol.data(), ci, h, wd, k, pad, input_grad(self, 0).data() + static_cast<int64_t>(n) * ci * hw);
      }
    }
  });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_rank4(x, "add_channel_bias");
  const int b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (bias.size() != c) throw std::invalid_argument("add_channel_bias: bias length mismatch");
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto& bv = bias.data();
  for (int n = 0; n < b; ++n)
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < hw; ++i) out[(static_cast<size_t>(n) * c + ch) * hw + i] += bv[static_cast<size_t>(ch)];
  return make_result(x.shape(), std::move(out), {x, bias}, [b, c, hw](Node& self) {
    detail::accumulate(self, 0, self.grad);
    if (wants_grad(self, 1)) {
      auto& g = input_grad(self, 1);
      for (int n = 0; n < b; ++n)
        for (int ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (int i = 0; i < hw; ++i) acc += self.grad[(static_cast<size_t>(n) * c + ch) * hw + i];
          g[static_cast<size_t>(ch)] += acc;
        }
    }
  });
}

Tensor scale_channels(const Tensor& x, const Tensor& s) {
  require_rank4(x, "scale_channels");
  const int b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (s.size() != static_cast<int64_t>(b) * c) {
    throw std::invalid_argument(
        fmt::format("scale_channels: {} vs scales {}", shape_str(x.shape()), shape_str(s.shape())));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto& sv = s.data();
  for (int bc = 0; bc < b * c; ++bc)
    for (int i = 0; i < hw; ++i) out[static_cast<size_t>(bc) * hw + i] *= sv[static_cast<size_t>(bc)];
  return make_result(x.shape(), std::move(out), {x, s}, [b, c, hw](Node& self) {
    const auto& xv = input_value(self, 0);
    const auto& sv2 = input_value(self, 1);
    if (wants_grad(self, 0)) {
      auto& g = input_grad(self, 0);
      for (int bc = 0; bc < b * c; ++bc)
        for (int i = 0; i < hw; ++i) {
          const size_t idx = static_cast<size_t>(bc) * hw + i;
          g[idx] += self.grad[idx] * sv2[static_cast<size_t>(bc)];
        }
    }
    if (wants_grad(self, 1)) {
      auto& g = input_grad(self, 1);
      for (int bc = 0; bc < b * c; ++bc) {
        double acc = 0.0;
        for (int i = 0; i < hw; ++i) {
          const size_t idx = static_cast<size_t>(bc) * hw + i;
          acc += self.grad[idx] * xv[idx];
        }
        g[static_cast<size_t>(bc)] += acc;
      }
    }
  });
}

Tensor avg_pool2(const Tensor& x) {
  require_rank4(x, "avg_pool2");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) throw std::invalid_argument("avg_pool2: odd spatial size");
  const int oh = h / 2, ow = w / 2;
  std::vector<double> out(static_cast<size_t>(b) * c * oh * ow);
  const auto& xv = x.data();
  for (int p = 0; p < b * c; ++p)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        const double* s = xv.data() + static_cast<int64_t>(p) * h * w;
        out[(static_cast<size_t>(p) * oh + y) * ow + xx] =
            0.25 * (s[(2 * y) * w + 2 * xx] + s[(2 * y) * w + 2 * xx + 1] + s[(2 * y + 1) * w + 2 * xx] +
                    s[(2 * y + 1) * w + 2 * xx + 1]);
      }
  return make_result({b, c, oh, ow}, std::move(out), {x}, [=](Node& self) {
    auto& g = input_grad(self, 0);
    for (int p = 0; p < b * c; ++p)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          const double gv = 0.25 * self.grad[(static_cast<size_t>(p) * oh + y) * ow + xx];
          double* d = g.data() + static_cast<int64_t>(p) * h * w;
          d[(2 * y) * w + 2 * xx] += gv;
          d[(2 * y) * w + 2 * xx + 1] += gv;
          d[(2 * y + 1) * w + 2 * xx] += gv;
          d[(2 * y + 1) * w + 2 * xx + 1] += gv;
        }
  });
}

Tensor upsample_nearest(const Tensor& x, int out_h, int out_w) {
  require_rank4(x, "upsample_nearest");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<int> sy(static_cast<size_t>(out_h)), sx(static_cast<size_t>(out_w));
  for (int y = 0; y < out_h; ++y) sy[static_cast<size_t>(y)] = std::min(h - 1, y * h / out_h);
  for (int xx = 0; xx < out_w; ++xx) sx[static_cast<size_t>(xx)] = std::min(w - 1, xx * w / out_w);
  std::vector<double> out(static_cast<size_t>(b) * c * out_h * out_w);
  const auto& xv = x.data();
  for (int p = 0; p < b * c; ++p)
    for (int y = 0; y < out_h; ++y)
      for (int xx = 0; xx < out_w; ++xx)
        out[(static_cast<size_t>(p) * out_h + y) * out_w + xx] =
            xv[(static_cast<size_t>(p) * h + sy[static_cast<size_t>(y)]) * w + sx[static_cast<size_t>(xx)]];
  return make_result({b, c, out_h, out_w}, std::move(out), {x}, [=](Node& self) {
    auto& g = input_grad(self, 0);
    for (int p = 0; p < b * c; ++p)
      for (int y = 0; y < out_h; ++y)
        for (int xx = 0; xx < out_w; ++xx)
          g[(static_cast<size_t>(p) * h + sy[static_cast<size_t>(y)]) * w + sx[static_cast<size_t>(xx)]] +=
              self.grad[(static_cast<size_t>(p) * out_h + y) * out_w + xx];
  });
}

Tensor crop_resize(const Tensor& x, int y0, int x0, int h, int w, int out_h, int out_w) {
  require_rank4(x, "crop_resize");
  const int b = x.dim(0), c = x.dim(1), ih = x.dim(2), iw = x.dim(3);
  if (h < 1 || w < 1 || y0 < 0 || x0 < 0 || y0 + h > ih || x0 + w > iw) {
    throw std::out_of_range(fmt::format("crop_resize: window ({}, {}, {}, {}) outside {}x{}", y0, x0, h,
                                        w, ih, iw));
  }
  const auto ty = resize_taps(y0, h, out_h, ih);
  const auto tx = resize_taps(x0, w, out_w, iw);
  std::vector<double> out(static_cast<size_t>(b) * c * out_h * out_w);
  const auto& xv = x.data();
  for (int p = 0; p < b * c; ++p) {
    const double* s = xv.data() + static_cast<int64_t>(p) * ih * iw;
    for (int y = 0; y < out_h; ++y) {
      const auto& a = ty[static_cast<size_t>(y)];
      for (int xx = 0; xx < out_w; ++xx) {
        const auto& q = tx[static_cast<size_t>(xx)];
        out[(static_cast<size_t>(p) * out_h + y) * out_w + xx] =
            a.w0 * (q.w0 * s[a.i0 * iw + q.i0] + q.w1 * s[a.i0 * iw + q.i1]) +
            a.w1 * (q.w0 * s[a.i1 * iw + q.i0] + q.w1 * s[a.i1 * iw + q.i1]);
      }
    }
  }
  return make_result({b, c, out_h, out_w}, std::move(out), {x}, [=](Node& self) {
    auto& g = input_grad(self, 0);
    for (int p = 0; p < b * c; ++p) {
      double* d = g.data() + static_cast<int64_t>(p) * ih * iw;
      for (int y = 0; y < out_h; ++y) {
        const auto& a = ty[static_cast<size_t>(y)];
        for (int xx = 0; xx < out_w; ++xx) {
          const auto& q = tx[static_cast<size_t>(xx)];
          const double gv = self.grad[(static_cast<size_t>(p) * out_h + y) * out_w + xx];
          d[a.i0 * iw + q.i0] += gv * a.w0 * q.w0;
          d[a.i0 * iw + q.i1] += gv * a.w0 * q.w1;
          d[a.i1 * iw + q.i0] += gv * a.w1 * q.w0;
          d[a.i1 * iw + q.i1] += gv * a.w1 * q.w1;
        }
      }
    }
  });
}

Tensor gaussian_blur(const Tensor& x, double sigma) {
  require_rank4(x, "gaussian_blur");
  if (sigma <= 0.0) return x;
  const int planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  auto k = gaussian_kernel(sigma);
  std::vector<double> tmp(static_cast<size_t>(x.size())), out(static_cast<size_t>(x.size()));
  blur_pass(x.data().data(), tmp.data(), planes, h, w, k, true);
  blur_pass(tmp.data(), out.data(), planes, h, w, k, false);
  return make_result(x.shape(), std::move(out), {x}, [=](Node& self) {
    std::vector<double> t1(self.grad.size()), t2(self.grad.size());
    blur_pass(self.grad.data(), t1.data(), planes, h, w, k, false, true);
    blur_pass(t1.data(), t2.data(), planes, h, w, k, true, true);
    detail::accumulate(self, 0, t2);
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank4(x, "global_avg_pool");
  const int b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(static_cast<size_t>(b) * c);
  const auto& xv = x.data();
  for (int p = 0; p < b * c; ++p) {
    double s = 0.0;
    for (int i = 0; i < hw; ++i) s += xv[static_cast<size_t>(p) * hw + i];
    out[static_cast<size_t>(p)] = s / hw;
  }
  return make_result({b, c}, std::move(out), {x}, [b, c, hw](Node& self) {
    auto& g = input_grad(self, 0);
    for (int p = 0; p < b * c; ++p)
      for (int i = 0; i < hw; ++i) g[static_cast<size_t>(p) * hw + i] += self.grad[static_cast<size_t>(p)] / hw;
  });
}

Tensor mask_pixels(const Tensor& x, std::span<const double> mask) {
  require_rank4(x, "mask_pixels");
  const int b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (static_cast<int64_t>(mask.size()) != static_cast<int64_t>(b) * hw) {
    throw std::invalid_argument("mask_pixels: mask size mismatch");
  }
  std::vector<double> m(mask.begin(), mask.end());
  std::vector<double> out(x.data().begin(), x.data().end());
  for (int n = 0; n < b; ++n)
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < hw; ++i) out[(static_cast<size_t>(n) * c + ch) * hw + i] *= m[static_cast<size_t>(n) * hw + i];
  return make_result(x.shape(), std::move(out), {x}, [b, c, hw, m](Node& self) {
    auto& g = input_grad(self, 0);
    for (int n = 0; n < b; ++n)
      for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < hw; ++i) {
          const size_t idx = (static_cast<size_t>(n) * c + ch) * hw + i;
          g[idx] += self.grad[idx] * m[static_cast<size_t>(n) * hw + i];
        }
  });
}

}  // namespace tg3d
