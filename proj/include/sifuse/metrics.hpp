#pragma once

#include <array>
#include <vector>

#include "sifuse/losses.hpp"
#include "sifuse/tensor.hpp"

namespace sifuse {

// Fusion-quality metrics over 8-bit quantized luminance. Histogram metrics
// use 256 bins and log2, PSNR uses the [0,255] scale, and identical images
// report the capped sentinel instead of infinity.

inline constexpr real kPsnrCap = 99.0;

struct MetricReport {
  real en = 0, ssim = 0, mi = 0, qabf = 0, psnr = 0;
};

namespace detail {

inline std::vector<int> gray_u8(const Tensor& img) {
  const Tensor* luma_src = &img;
  Tensor tmp;
  if (img.c == 3) {
    tmp = Tensor(1, img.h, img.w);
    size_t plane = size_t(img.h) * img.w;
    for (size_t i = 0; i < plane; ++i)
      tmp.v[i] = kLumaR * img.v[i] + kLumaG * img.v[plane + i] +
                 kLumaB * img.v[2 * plane + i];
    luma_src = &tmp;
  } else if (img.c != 1) {
    throw ParamError("metrics: images must have 1 or 3 channels");
  }
  std::vector<int> q(luma_src->v.size());
  for (size_t i = 0; i < q.size(); ++i) {
    long b = std::lround(std::clamp(luma_src->v[i], 0.0, 1.0) * 255.0);
    q[i] = int(std::clamp(b, 0l, 255l));
  }
  return q;
}

inline std::array<real, 256> histogram(const std::vector<int>& g) {
  std::array<real, 256> h{};
  for (int x : g) h[x] += 1.0;
  real inv = 1.0 / real(g.size());
  for (auto& x : h) x *= inv;
  return h;
}

}  // namespace detail

// Shannon entropy (bits) of the 256-bin grayscale histogram.
inline real entropy(const Tensor& img) {
  auto h = detail::histogram(detail::gray_u8(img));
  real e = 0.0;
  for (real p : h)
    if (p > 0.0) e -= p * std::log2(p);
  return e;
}

// Joint-histogram mutual information (bits).
inline real mutual_information(const Tensor& a, const Tensor& b) {
  if (a.h != b.h || a.w != b.w)
    throw ParamError("mutual_information: dimension mismatch");
  auto ga = detail::gray_u8(a);
  auto gb = detail::gray_u8(b);
  std::vector<real> joint(256 * 256, 0.0);
  for (size_t i = 0; i < ga.size(); ++i) joint[ga[i] * 256 + gb[i]] += 1.0;
  real inv = 1.0 / real(ga.size());
  std::array<real, 256> pa{}, pb{};
  for (int i = 0; i < 256; ++i)
    for (int j = 0; j < 256; ++j) {
      joint[i * 256 + j] *= inv;
      pa[i] += joint[i * 256 + j];
      pb[j] += joint[i * 256 + j];
    }
  real mi = 0.0;
  for (int i = 0; i < 256; ++i)
    for (int j = 0; j < 256; ++j) {
      real p = joint[i * 256 + j];
      if (p > 0.0) mi += p * std::log2(p / (pa[i] * pb[j]));
    }
  return mi;
}

inline real psnr(const Tensor& a, const Tensor& b) {
  if (a.h != b.h || a.w != b.w) throw ParamError("psnr: dimension mismatch");
  auto ga = detail::gray_u8(a);
  auto gb = detail::gray_u8(b);
  real mse = 0.0;
  for (size_t i = 0; i < ga.size(); ++i) {
    real d = real(ga[i] - gb[i]);
    mse += d * d;
  }
  mse /= real(ga.size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

// Gaussian-window SSIM; images smaller than the window fall back to one
// global window.
inline real ssim(const Tensor& a, const Tensor& b) {
  if (a.h != b.h || a.w != b.w) throw ParamError("ssim: dimension mismatch");
  auto qa = detail::gray_u8(a);
  auto qb = detail::gray_u8(b);
  const int h = a.h, w = a.w;
  const real c1 = 6.5025, c2 = 58.5225;  // (0.01*255)^2, (0.03*255)^2

  auto window_ssim = [&](int y0, int x0, int win, const std::vector<real>& g) {
    real ma = 0, mb = 0, wsum = 0;
    for (int dy = 0; dy < win; ++dy)
      for (int dx = 0; dx < win; ++dx) {
        real gw = g[dy * win + dx];
        size_t idx = size_t(y0 + dy) * w + (x0 + dx);
        ma += gw * qa[idx];
        mb += gw * qb[idx];
        wsum += gw;
      }
    ma /= wsum;
    mb /= wsum;
    real va = 0, vb = 0, cov = 0;
    for (int dy = 0; dy < win; ++dy)
      for (int dx = 0; dx < win; ++dx) {
        real gw = g[dy * win + dx] / wsum;
        size_t idx = size_t(y0 + dy) * w + (x0 + dx);
        real da = qa[idx] - ma, db = qb[idx] - mb;
        va += gw * da * da;
        vb += gw * db * db;
        cov += gw * da * db;
      }
    return ((2 * ma * mb + c1) * (2 * cov + c2)) /
           ((ma * ma + mb * mb + c1) * (va + vb + c2));
  };

  int win = std::min({11, h, w});
  std::vector<real> g(size_t(win) * win);
  real sigma = 1.5;
  for (int dy = 0; dy < win; ++dy)
    for (int dx = 0; dx < win; ++dx) {
      real yy = dy - (win - 1) / 2.0, xx = dx - (win - 1) / 2.0;
      g[dy * win + dx] = std::exp(-(yy * yy + xx * xx) / (2 * sigma * sigma));
    }

  real acc = 0.0;
  int count = 0;
  for (int y0 = 0; y0 + win <= h; ++y0)
    for (int x0 = 0; x0 + win <= w; ++x0) {
      acc += window_ssim(y0, x0, win, g);
      ++count;
    }
  return acc / real(count);
}

// Gradient-preservation index after Xydeas & Petrovic, normalized so perfect
// preservation scores 1.
inline real qabf(const Tensor& fused, const Tensor& src_a,
                 const Tensor& src_b) {
  if (fused.h != src_a.h || fused.w != src_a.w || fused.h != src_b.h ||
      fused.w != src_b.w)
    throw ParamError("qabf: dimension mismatch");

  auto to_luma = [](const Tensor& img) {
    Tensor l(1, img.h, img.w);
    size_t plane = size_t(img.h) * img.w;
    if (img.c == 3) {
      for (size_t i = 0; i < plane; ++i)
        l.v[i] = (kLumaR * img.v[i] + kLumaG * img.v[plane + i] +
                  kLumaB * img.v[2 * plane + i]) *
                 255.0;
    } else {
      for (size_t i = 0; i < plane; ++i) l.v[i] = img.v[i] * 255.0;
    }
    return l;
  };

  struct Edges {
    Tensor g, alpha;
  };
  auto edges = [&](const Tensor& img) {
    Tensor l = to_luma(img);
    auto [gx, gy] = sobel_xy(l);
    Edges e{Tensor(1, img.h, img.w), Tensor(1, img.h, img.w)};
    for (size_t i = 0; i < e.g.v.size(); ++i) {
      e.g.v[i] = std::sqrt(gx.v[i] * gx.v[i] + gy.v[i] * gy.v[i]);
      e.alpha.v[i] = (gx.v[i] == 0.0 && gy.v[i] == 0.0)
                         ? 0.0
                         : std::atan(gy.v[i] / (gx.v[i] == 0.0
                                                    ? 1e-30
                                                    : gx.v[i]));
    }
    return e;
  };

  Edges ef = edges(fused), ea = edges(src_a), eb = edges(src_b);

  const real gamma_g = 0.9994, gamma_a = 0.9879;
  const real kg = -15.0, ka = -22.0, sg = 0.5, sa = 0.8;
  auto qg = [&](real G) { return gamma_g / (1.0 + std::exp(kg * (G - sg))); };
  auto qa = [&](real A) { return gamma_a / (1.0 + std::exp(ka * (A - sa))); };
  const real q_perfect = qg(1.0) * qa(1.0);

  auto preservation = [&](const Edges& s, size_t i) {
    real gs = s.g.v[i], gf = ef.g.v[i];
    real G;
    if (gs > gf)
      G = gs == 0.0 ? 0.0 : gf / gs;
    else if (gf > gs)
      G = gf == 0.0 ? 0.0 : gs / gf;
    else
      G = gs == 0.0 ? 0.0 : 1.0;
    real A = 1.0 - std::abs(s.alpha.v[i] - ef.alpha.v[i]) / (kPi / 2.0);
    return qg(G) * qa(A) / q_perfect;
  };

  real num = 0.0, den = 0.0;
  for (size_t i = 0; i < ef.g.v.size(); ++i) {
    real wa = ea.g.v[i], wb = eb.g.v[i];
    num += preservation(ea, i) * wa + preservation(eb, i) * wb;
    den += wa + wb;
  }
  return den > 0.0 ? num / den : 0.0;
}

inline MetricReport fusion_metrics(const Tensor& fused, const Tensor& src_a,
                                   const Tensor& src_b) {
  if (fused.h != src_a.h || fused.w != src_a.w || fused.h != src_b.h ||
      fused.w != src_b.w)
    throw ParamError("fusion_metrics: dimension mismatch");
  MetricReport r;
  r.en = entropy(fused);
  r.mi = mutual_information(fused, src_a) + mutual_information(fused, src_b);
  r.ssim = 0.5 * (ssim(fused, src_a) + ssim(fused, src_b));
  r.psnr = 0.5 * (psnr(fused, src_a) + psnr(fused, src_b));
  r.qabf = qabf(fused, src_a, src_b);
  return r;
}

// Per-class intersection-over-union; classes absent from both maps are
// excluded from the mean.
inline std::pair<std::vector<real>, real> miou(const GridI& pred,
                                               const GridI& label,
                                               int n_class) {
  if (!pred.same_shape(label)) throw ParamError("miou: dimension mismatch");
  std::vector<long> inter(n_class, 0), uni(n_class, 0);
  for (size_t i = 0; i < pred.v.size(); ++i) {
    int p = pred.v[i], l = label.v[i];
    if (p < 0 || p >= n_class || l < 0 || l >= n_class)
      throw ParamError("miou: class index out of range");
    if (p == l) {
      ++inter[p];
      ++uni[p];
    } else {
      ++uni[p];
      ++uni[l];
    }
  }
  std::vector<real> ious(n_class, 0.0);
  real sum = 0.0;
  int present = 0;
  for (int c = 0; c < n_class; ++c) {
    if (uni[c] == 0) {
      ious[c] = -1.0;  // absent from both maps
      continue;
    }
    ious[c] = real(inter[c]) / real(uni[c]);
    sum += ious[c];
    ++present;
  }
  return {ious, present > 0 ? sum / real(present) : 0.0};
}

}  // namespace sifuse
