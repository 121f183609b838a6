#pragma once

#include <algorithm>
#include <initializer_list>
#include <vector>

#include "sifuse/common.hpp"

namespace sifuse {

// Dense row-major (c, h, w) grid of reals. Rank-1 data lives in (n, 1, 1).
// Conv weights are stored as (out_channels, in_channels, k*k).
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<real> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_) {
    if (c_ <= 0 || h_ <= 0 || w_ <= 0)
      throw ParamError("Tensor: dimensions must be positive");
    v.assign(size_t(c_) * h_ * w_, 0.0);
  }

  static Tensor full(int c, int h, int w, real x) {
    Tensor t(c, h, w);
    std::fill(t.v.begin(), t.v.end(), x);
    return t;
  }
  static Tensor vec(std::initializer_list<real> xs) {
    Tensor t(int(xs.size()), 1, 1);
    std::copy(xs.begin(), xs.end(), t.v.begin());
    return t;
  }

  size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }
  bool same_shape(const Tensor& o) const {
    return c == o.c && h == o.h && w == o.w;
  }

  real& at(int i, int j, int k) { return v[(size_t(i) * h + j) * w + k]; }
  real at(int i, int j, int k) const { return v[(size_t(i) * h + j) * w + k]; }

  Tensor& operator+=(const Tensor& o) {
    for (size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
    return *this;
  }
  Tensor& operator*=(real s) {
    for (auto& x : v) x *= s;
    return *this;
  }
  void fill(real x) { std::fill(v.begin(), v.end(), x); }
};

// Integer grid for segmentation maps and masks.
struct GridI {
  int h = 0, w = 0;
  std::vector<int> v;

  GridI() = default;
  GridI(int h_, int w_, int init = 0) : h(h_), w(w_) {
    if (h_ <= 0 || w_ <= 0) throw ParamError("GridI: dimensions must be positive");
    v.assign(size_t(h_) * w_, init);
  }
  int& at(int j, int k) { return v[size_t(j) * w + k]; }
  int at(int j, int k) const { return v[size_t(j) * w + k]; }
  size_t size() const { return v.size(); }
  bool same_shape(const GridI& o) const { return h == o.h && w == o.w; }
};

inline Tensor normal_tensor(Rng& rng, int c, int h, int w) {
  Tensor t(c, h, w);
  for (auto& x : t.v) x = rng.normal();
  return t;
}

inline Tensor uniform_tensor(Rng& rng, int c, int h, int w, real lo = 0.0,
                             real hi = 1.0) {
  Tensor t(c, h, w);
  for (auto& x : t.v) x = rng.uniform(lo, hi);
  return t;
}

inline real mean_of(const Tensor& t) {
  real s = 0.0;
  for (real x : t.v) s += x;
  return s / real(t.size());
}

inline real min_of(const Tensor& t) {
  return *std::min_element(t.v.begin(), t.v.end());
}

inline real max_of(const Tensor& t) {
  return *std::max_element(t.v.begin(), t.v.end());
}

inline real max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ParamError("max_abs_diff: shape mismatch");
  real m = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i)
    m = std::max(m, std::abs(a.v[i] - b.v[i]));
  return m;
}

inline real l2_norm(const Tensor& t) {
  real s = 0.0;
  for (real x : t.v) s += x * x;
  return std::sqrt(s);
}

inline bool all_finite(const Tensor& t) {
  for (real x : t.v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline bool in_unit_range(const Tensor& t) {
  for (real x : t.v)
    if (!(x >= 0.0 && x <= 1.0)) return false;
  return true;
}

// Images are (3, h, w) tensors with finite values in [0, 1].
inline void check_image(const Tensor& img, const char* what) {
  if (img.c != 3) throw ParamError(std::string(what) + ": expected 3 channels");
  if (!all_finite(img) || !in_unit_range(img))
    throw ParamError(std::string(what) + ": values must be finite in [0,1]");
}

inline Tensor clamp01(Tensor t) {
  for (auto& x : t.v) x = std::clamp(x, 0.0, 1.0);
  return t;
}

}  // namespace sifuse
