#pragma once

#include <array>

#include "sifuse/autograd.hpp"

namespace sifuse {

// ---------------------------------------------------------------------------
// Color space plumbing. BT.601 full-range with offset-binary chroma, so a
// neutral gray sits at cb = cr = 0.5 and all planes stay in [0,1] for
// in-gamut RGB.
// ---------------------------------------------------------------------------

inline constexpr real kLumaR = 0.299, kLumaG = 0.587, kLumaB = 0.114;
inline constexpr real kCbScale = 1.772, kCrScale = 1.402;

struct YcbcrImage {
  Tensor y, cb, cr;  // each (1, h, w)
};

inline YcbcrImage rgb_to_ycbcr(const Tensor& rgb) {
  check_image(rgb, "rgb_to_ycbcr");
  YcbcrImage out{Tensor(1, rgb.h, rgb.w), Tensor(1, rgb.h, rgb.w),
                 Tensor(1, rgb.h, rgb.w)};
  size_t plane = size_t(rgb.h) * rgb.w;
  for (size_t i = 0; i < plane; ++i) {
    real r = rgb.v[i], g = rgb.v[plane + i], b = rgb.v[2 * plane + i];
    real y = kLumaR * r + kLumaG * g + kLumaB * b;
    out.y.v[i] = y;
    out.cb.v[i] = (b - y) / kCbScale + 0.5;
    out.cr.v[i] = (r - y) / kCrScale + 0.5;
  }
  return out;
}

inline Tensor ycbcr_to_rgb(const YcbcrImage& img) {
  Tensor rgb(3, img.y.h, img.y.w);
  size_t plane = size_t(img.y.h) * img.y.w;
  for (size_t i = 0; i < plane; ++i) {
    real y = img.y.v[i];
    real r = y + kCrScale * (img.cr.v[i] - 0.5);
    real b = y + kCbScale * (img.cb.v[i] - 0.5);
    real g = (y - kLumaR * r - kLumaB * b) / kLumaG;
    rgb.v[i] = r;
    rgb.v[plane + i] = g;
    rgb.v[2 * plane + i] = b;
  }
  return rgb;
}

// rows = M * channels(x) + offset, as a taped op.
inline Var channel_affine(const Var& x, const std::vector<std::vector<real>>& M,
                          const std::vector<real>& offset) {
  const int rows = int(M.size());
  if (rows == 0 || int(offset.size()) != rows)
    throw ParamError("channel_affine: bad coefficient shape");
  for (auto& r : M)
    if (int(r.size()) != x.c())
      throw ParamError("channel_affine: matrix width != channels");
  size_t plane = size_t(x.h()) * x.w();
  Tensor out(rows, x.h(), x.w());
  for (int r = 0; r < rows; ++r)
    for (size_t i = 0; i < plane; ++i) {
      real acc = offset[r];
      for (int ci = 0; ci < x.c(); ++ci)
        acc += M[r][ci] * x.val().v[ci * plane + i];
      out.v[r * plane + i] = acc;
    }
  return detail::make_result(
      std::move(out), {x},
      [x, M, rows, plane](VarNode& n) mutable {
        x.node->ensure_grad();
        for (int ci = 0; ci < x.c(); ++ci)
          for (size_t i = 0; i < plane; ++i) {
            real acc = 0.0;
            for (int r = 0; r < rows; ++r)
              acc += n.grad.v[r * plane + i] * M[r][ci];
            x.node->grad.v[ci * plane + i] += acc;
          }
      },
      detail::tape_active(x));
}

inline Var luma(const Var& rgb) {
  return channel_affine(rgb, {{kLumaR, kLumaG, kLumaB}}, {0.0});
}

// (cb, cr) as a 2-channel grid.
inline Var chroma(const Var& rgb) {
  const real ib = 1.0 / kCbScale, ir = 1.0 / kCrScale;
  return channel_affine(rgb,
                        {{-kLumaR * ib, -kLumaG * ib, (1.0 - kLumaB) * ib},
                         {(1.0 - kLumaR) * ir, -kLumaG * ir, -kLumaB * ir}},
                        {0.5, 0.5});
}

// ---------------------------------------------------------------------------
// Sobel gradient, replicate padding, magnitude sqrt(gx^2 + gy^2).
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr std::array<real, 9> kSobelX = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
inline constexpr std::array<real, 9> kSobelY = {-1, -2, -1, 0, 0, 0, 1, 2, 1};

inline int clampi(int x, int lo, int hi) { return std::min(std::max(x, lo), hi); }

inline void sobel_responses(const Tensor& p, Tensor& gx, Tensor& gy) {
  for (int y = 0; y < p.h; ++y)
    for (int x = 0; x < p.w; ++x) {
      real ax = 0.0, ay = 0.0;
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          real v = p.at(0, clampi(y + ky - 1, 0, p.h - 1),
                        clampi(x + kx - 1, 0, p.w - 1));
          ax += kSobelX[ky * 3 + kx] * v;
          ay += kSobelY[ky * 3 + kx] * v;
        }
      gx.at(0, y, x) = ax;
      gy.at(0, y, x) = ay;
    }
}

}  // namespace detail

inline void check_sobel_input(const Tensor& plane) {
  if (plane.c != 1) throw ParamError("sobel: expected a single plane");
  if (plane.h < 3 || plane.w < 3)
    throw ParamError("sobel: plane must be at least 3x3");
}

inline std::pair<Tensor, Tensor> sobel_xy(const Tensor& plane) {
  check_sobel_input(plane);
  Tensor gx(1, plane.h, plane.w), gy(1, plane.h, plane.w);
  detail::sobel_responses(plane, gx, gy);
  return {gx, gy};
}

inline Tensor sobel_grad(const Tensor& plane) {
  auto [gx, gy] = sobel_xy(plane);
  Tensor mag(1, plane.h, plane.w);
  for (size_t i = 0; i < mag.v.size(); ++i)
    mag.v[i] = std::sqrt(gx.v[i] * gx.v[i] + gy.v[i] * gy.v[i]);
  return mag;
}

inline Var sobel_grad(const Var& plane) {
  check_sobel_input(plane.val());
  Tensor gx(1, plane.h(), plane.w()), gy(1, plane.h(), plane.w());
  detail::sobel_responses(plane.val(), gx, gy);
  Tensor mag(1, plane.h(), plane.w());
  for (size_t i = 0; i < mag.v.size(); ++i)
    mag.v[i] = std::sqrt(gx.v[i] * gx.v[i] + gy.v[i] * gy.v[i]);
  Tensor saved = mag;
  return detail::make_result(
      std::move(mag), {plane},
      [plane, gx, gy, saved](VarNode& n) mutable {
        plane.node->ensure_grad();
        Tensor& gp = plane.node->grad;
        const int h = saved.h, w = saved.w;
        // Scatter d|g|/dplane through both kernels; zero magnitude pixels
        // contribute nothing (subgradient 0 at the cone tip).
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            real m = saved.at(0, y, x);
            if (m <= 0.0) continue;
            real go = n.grad.at(0, y, x);
            real cx = go * gx.at(0, y, x) / m;
            real cy = go * gy.at(0, y, x) / m;
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                int iy = detail::clampi(y + ky - 1, 0, h - 1);
                int ix = detail::clampi(x + kx - 1, 0, w - 1);
                gp.at(0, iy, ix) += cx * detail::kSobelX[ky * 3 + kx] +
                                    cy * detail::kSobelY[ky * 3 + kx];
              }
          }
      },
      detail::tape_active(plane));
}

// ---------------------------------------------------------------------------
// Visual regularization: contrast / texture / color terms, each a mean
// absolute deviation from its target.
// ---------------------------------------------------------------------------

struct VisualLosses {
  Var contrast, texture, color, total;
};

inline VisualLosses visual_losses(const Var& fused, const Var& dec_a,
                                  const Var& dec_b) {
  if (!fused.val().same_shape(dec_a.val()) ||
      !fused.val().same_shape(dec_b.val()))
    throw ParamError("visual_losses: image dimensions differ");
  if (fused.c() != 3) throw ParamError("visual_losses: expected RGB images");

  Var y_f = luma(fused);
  Var y_a = luma(dec_a);
  Var y_b = luma(dec_b);

  VisualLosses out;
  out.contrast = mean_all(abs_v(sub(y_f, maximum(y_a, y_b))));
  out.texture = mean_all(abs_v(
      sub(sobel_grad(y_f), maximum(sobel_grad(y_a), sobel_grad(y_b)))));
  out.color = mean_all(abs_v(sub(chroma(fused), chroma(dec_a))));
  out.total = add(add(out.contrast, out.texture), out.color);
  return out;
}

struct VisualLossValues {
  real contrast, texture, color, total;
};

inline VisualLossValues visual_losses(const Tensor& fused, const Tensor& dec_a,
                                      const Tensor& dec_b) {
  NoGrad ng;
  VisualLosses l = visual_losses(Var(fused), Var(dec_a), Var(dec_b));
  return {l.contrast.val().v[0], l.texture.val().v[0], l.color.val().v[0],
          l.total.val().v[0]};
}

}  // namespace sifuse
