#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "sifuse/autograd.hpp"

namespace sifuse {

// ---------------------------------------------------------------------------
// Structured ops. All backward passes are written in gather form (each output
// element accumulated by exactly one loop iteration) so results are
// bit-stable.
// ---------------------------------------------------------------------------

// x: (ci, h, w); W: (co, ci, k*k); b: (co, 1, 1). Zero padding.
inline Var conv2d(const Var& x, const Var& W, const Var& b, int k, int stride,
                  int pad) {
  const Tensor& xv = x.val();
  const Tensor& wv = W.val();
  const Tensor& bv = b.val();
  if (wv.h != xv.c || wv.w != k * k)
    throw ParamError("conv2d: weight shape does not match input");
  if (bv.c != wv.c) throw ParamError("conv2d: bias shape mismatch");
  const int ci = xv.c, co = wv.c;
  const int oh = (xv.h + 2 * pad - k) / stride + 1;
  const int ow = (xv.w + 2 * pad - k) / stride + 1;
  if (oh <= 0 || ow <= 0) throw ParamError("conv2d: output would be empty");

  Tensor out(co, oh, ow);
#pragma omp parallel for schedule(static) if (co * oh >= 64)
  for (int o = 0; o < co; ++o) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        real acc = bv.v[o];
        for (int ic = 0; ic < ci; ++ic) {
          for (int ky = 0; ky < k; ++ky) {
            int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= xv.h) continue;
            const real* xrow = &xv.v[(size_t(ic) * xv.h + iy) * xv.w];
            const real* wrow = &wv.v[(size_t(o) * ci + ic) * k * k + ky * k];
            for (int kx = 0; kx < k; ++kx) {
              int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= xv.w) continue;
              acc += xrow[ix] * wrow[kx];
            }
          }
        }
        out.at(o, oy, ox) = acc;
      }
    }
  }

  return detail::make_result(
      std::move(out), {x, W, b},
      [x, W, b, k, stride, pad, ci, co, oh, ow](VarNode& n) mutable {
        const Tensor& g = n.grad;
        const Tensor& xv = x.val();
        const Tensor& wv = W.val();
        if (detail::connected(x)) {
          x.node->ensure_grad();
          Tensor& gx = x.node->grad;
#pragma omp parallel for schedule(static) if (ci * xv.h >= 64)
          for (int ic = 0; ic < ci; ++ic) {
            for (int iy = 0; iy < xv.h; ++iy) {
              for (int ix = 0; ix < xv.w; ++ix) {
                real acc = 0.0;
                for (int o = 0; o < co; ++o) {
                  for (int ky = 0; ky < k; ++ky) {
                    int num_y = iy + pad - ky;
                    if (num_y < 0 || num_y % stride) continue;
                    int oy = num_y / stride;
                    if (oy >= oh) continue;
                    for (int kx = 0; kx < k; ++kx) {
                      int num_x = ix + pad - kx;
                      if (num_x < 0 || num_x % stride) continue;
                      int ox = num_x / stride;
                      if (ox >= ow) continue;
                      acc += g.at(o, oy, ox) *
                             wv.v[(size_t(o) * ci + ic) * k * k + ky * k + kx];
                    }
                  }
                }
                gx.at(ic, iy, ix) += acc;
              }
            }
          }
        }
        if (detail::connected(W)) {
          W.node->ensure_grad();
          Tensor& gw = W.node->grad;
#pragma omp parallel for schedule(static) if (co >= 8)
          for (int o = 0; o < co; ++o) {
            for (int ic = 0; ic < ci; ++ic) {
              for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                  real acc = 0.0;
                  for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= xv.h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                      int ix = ox * stride - pad + kx;
                      if (ix < 0 || ix >= xv.w) continue;
                      acc += g.at(o, oy, ox) * xv.at(ic, iy, ix);
                    }
                  }
                  gw.v[(size_t(o) * ci + ic) * k * k + ky * k + kx] += acc;
                }
              }
            }
          }
        }
        if (detail::connected(b)) {
          b.node->ensure_grad();
          for (int o = 0; o < co; ++o) {
            real acc = 0.0;
            for (int oy = 0; oy < oh; ++oy)
              for (int ox = 0; ox < ow; ++ox) acc += g.at(o, oy, ox);
            b.node->grad.v[o] += acc;
          }
        }
      },
      detail::tape_active(x, W, b));
}

// x: (n, 1, 1); W: (out, n, 1); b: (out, 1, 1).
inline Var linear(const Var& x, const Var& W, const Var& b) {
  const Tensor& xv = x.val();
  const Tensor& wv = W.val();
  if (wv.h != xv.c || xv.h != 1 || xv.w != 1)
    throw ParamError("linear: shape mismatch");
  int nin = xv.c, nout = wv.c;
  Tensor out(nout, 1, 1);
  for (int o = 0; o < nout; ++o) {
    real acc = b.val().v[o];
    for (int i = 0; i < nin; ++i) acc += wv.v[size_t(o) * nin + i] * xv.v[i];
    out.v[o] = acc;
  }
  return detail::make_result(
      std::move(out), {x, W, b},
      [x, W, b, nin, nout](VarNode& n) mutable {
        if (detail::connected(x)) {
          x.node->ensure_grad();
          for (int i = 0; i < nin; ++i) {
            real acc = 0.0;
            for (int o = 0; o < nout; ++o)
              acc += n.grad.v[o] * W.val().v[size_t(o) * nin + i];
            x.node->grad.v[i] += acc;
          }
        }
        if (detail::connected(W)) {
          W.node->ensure_grad();
          for (int o = 0; o < nout; ++o)
            for (int i = 0; i < nin; ++i)
              W.node->grad.v[size_t(o) * nin + i] +=
                  n.grad.v[o] * x.val().v[i];
        }
        if (detail::connected(b)) {
          b.node->ensure_grad();
          for (int o = 0; o < nout; ++o) b.node->grad.v[o] += n.grad.v[o];
        }
      },
      detail::tape_active(x, W, b));
}

// x + b broadcast over space; b: (c, 1, 1).
inline Var channel_bias(const Var& x, const Var& b) {
  if (b.c() != x.c() || b.h() != 1 || b.w() != 1)
    throw ParamError("channel_bias: bias must be (c,1,1)");
  Tensor out = x.val();
  size_t plane = size_t(x.h()) * x.w();
  for (int ic = 0; ic < x.c(); ++ic) {
    real bb = b.val().v[ic];
    for (size_t i = 0; i < plane; ++i) out.v[ic * plane + i] += bb;
  }
  return detail::make_result(
      std::move(out), {x, b},
      [x, b, plane](VarNode& n) mutable {
        if (detail::connected(x)) {
          x.node->ensure_grad();
          for (size_t i = 0; i < n.grad.v.size(); ++i)
            x.node->grad.v[i] += n.grad.v[i];
        }
        if (detail::connected(b)) {
          b.node->ensure_grad();
          for (int ic = 0; ic < x.c(); ++ic) {
            real acc = 0.0;
            for (size_t i = 0; i < plane; ++i) acc += n.grad.v[ic * plane + i];
            b.node->grad.v[ic] += acc;
          }
        }
      },
      detail::tape_active(x, b));
}

// Per-channel spatial normalization, no affine parameters: hooks can verify
// the output is exactly standardized.
inline Var instance_norm(const Var& x, real eps = 1e-5) {
  const Tensor& xv = x.val();
  size_t plane = size_t(xv.h) * xv.w;
  Tensor out(xv.c, xv.h, xv.w);
  std::vector<real> means(xv.c), inv_stds(xv.c);
  for (int ic = 0; ic < xv.c; ++ic) {
    real m = 0.0;
    for (size_t i = 0; i < plane; ++i) m += xv.v[ic * plane + i];
    m /= real(plane);
    real var = 0.0;
    for (size_t i = 0; i < plane; ++i) {
      real d = xv.v[ic * plane + i] - m;
      var += d * d;
    }
    var /= real(plane);
    real inv = 1.0 / std::sqrt(var + eps);
    means[ic] = m;
    inv_stds[ic] = inv;
    for (size_t i = 0; i < plane; ++i)
      out.v[ic * plane + i] = (xv.v[ic * plane + i] - m) * inv;
  }
  Tensor saved = out;
  return detail::make_result(
      std::move(out), {x},
      [x, saved, plane, means, inv_stds](VarNode& n) mutable {
        x.node->ensure_grad();
        for (int ic = 0; ic < x.c(); ++ic) {
          real gsum = 0.0, gxsum = 0.0;
          for (size_t i = 0; i < plane; ++i) {
            gsum += n.grad.v[ic * plane + i];
            gxsum += n.grad.v[ic * plane + i] * saved.v[ic * plane + i];
          }
          real gmean = gsum / real(plane);
          real gxmean = gxsum / real(plane);
          for (size_t i = 0; i < plane; ++i) {
            real xh = saved.v[ic * plane + i];
            x.node->grad.v[ic * plane + i] +=
                inv_stds[ic] * (n.grad.v[ic * plane + i] - gmean - xh * gxmean);
          }
        }
      },
      detail::tape_active(x));
}

inline Var upsample_nearest(const Var& x, int f) {
  if (f < 1) throw ParamError("upsample_nearest: factor must be >= 1");
  const Tensor& xv = x.val();
  Tensor out(xv.c, xv.h * f, xv.w * f);
  for (int ic = 0; ic < xv.c; ++ic)
    for (int oy = 0; oy < out.h; ++oy)
      for (int ox = 0; ox < out.w; ++ox)
        out.at(ic, oy, ox) = xv.at(ic, oy / f, ox / f);
  return detail::make_result(
      std::move(out), {x},
      [x, f](VarNode& n) mutable {
        x.node->ensure_grad();
        Tensor& gx = x.node->grad;
        for (int ic = 0; ic < x.c(); ++ic)
          for (int oy = 0; oy < n.grad.h; ++oy)
            for (int ox = 0; ox < n.grad.w; ++ox)
              gx.at(ic, oy / f, ox / f) += n.grad.at(ic, oy, ox);
      },
      detail::tape_active(x));
}

// Mean pixel-wise cross-entropy over softmaxed class logits.
inline Var softmax_cross_entropy(const Var& logits, const GridI& label) {
  const Tensor& lv = logits.val();
  if (lv.h != label.h || lv.w != label.w)
    throw ParamError("softmax_cross_entropy: label shape mismatch");
  const int nc = lv.c;
  size_t plane = size_t(lv.h) * lv.w;
  // Softmax probabilities are saved for the backward pass.
  Tensor probs(nc, lv.h, lv.w);
  real loss = 0.0;
  for (size_t p = 0; p < plane; ++p) {
    int y = label.v[p];
    if (y < 0 || y >= nc)
      throw ParamError("softmax_cross_entropy: label index out of range");
    real mx = lv.v[p];
    for (int ic = 1; ic < nc; ++ic)
      mx = std::max(mx, lv.v[ic * plane + p]);
    real z = 0.0;
    for (int ic = 0; ic < nc; ++ic)
      z += std::exp(lv.v[ic * plane + p] - mx);
    real logz = std::log(z) + mx;
    for (int ic = 0; ic < nc; ++ic)
      probs.v[ic * plane + p] = std::exp(lv.v[ic * plane + p] - logz);
    loss -= lv.v[size_t(y) * plane + p] - logz;
  }
  Tensor out(1, 1, 1);
  out.v[0] = loss / real(plane);
  return detail::make_result(
      std::move(out), {logits},
      [logits, probs, label, plane, nc](VarNode& n) mutable {
        logits.node->ensure_grad();
        real g = n.grad.v[0] / real(plane);
        for (size_t p = 0; p < plane; ++p) {
          int y = label.v[p];
          for (int ic = 0; ic < nc; ++ic) {
            real d = probs.v[ic * plane + p] - (ic == y ? 1.0 : 0.0);
            logits.node->grad.v[ic * plane + p] += g * d;
          }
        }
      },
      detail::tape_active(logits));
}

// Sinusoidal position features for a (1-indexed) timestep.
inline Tensor timestep_embedding(int t, int dim) {
  if (dim < 2 || dim % 2) throw ParamError("timestep_embedding: dim must be even");
  Tensor e(dim, 1, 1);
  int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    real freq = std::exp(-std::log(10000.0) * real(i) / real(half));
    e.v[i] = std::sin(real(t) * freq);
    e.v[half + i] = std::cos(real(t) * freq);
  }
  return e;
}

// ---------------------------------------------------------------------------
// Layers.
// ---------------------------------------------------------------------------

struct Conv2d {
  int ci = 0, co = 0, k = 3, stride = 1, pad = 1;
  Var W, b;

  Conv2d() = default;
  Conv2d(int ci_, int co_, int k_, int stride_, int pad_, Rng& rng)
      : ci(ci_), co(co_), k(k_), stride(stride_), pad(pad_) {
    Tensor w(co, ci, k * k);
    real std = std::sqrt(2.0 / real(ci * k * k));
    for (auto& x : w.v) x = rng.normal() * std;
    W = Var(std::move(w), true);
    b = Var(Tensor(co, 1, 1), true);
  }

  Var forward(const Var& x) const { return conv2d(x, W, b, k, stride, pad); }

  void named_params(const std::string& prefix,
                    std::vector<std::pair<std::string, Var*>>& out) {
    out.push_back({prefix + ".W", &W});
    out.push_back({prefix + ".b", &b});
  }
};

struct Linear {
  int nin = 0, nout = 0;
  Var W, b;

  Linear() = default;
  Linear(int nin_, int nout_, Rng& rng) : nin(nin_), nout(nout_) {
    Tensor w(nout, nin, 1);
    real std = std::sqrt(2.0 / real(nin));
    for (auto& x : w.v) x = rng.normal() * std;
    W = Var(std::move(w), true);
    b = Var(Tensor(nout, 1, 1), true);
  }

  Var forward(const Var& x) const { return linear(x, W, b); }

  void named_params(const std::string& prefix,
                    std::vector<std::pair<std::string, Var*>>& out) {
    out.push_back({prefix + ".W", &W});
    out.push_back({prefix + ".b", &b});
  }
};

using NamedParams = std::vector<std::pair<std::string, Var*>>;

inline std::vector<Var*> param_list(const NamedParams& named) {
  std::vector<Var*> out;
  out.reserve(named.size());
  for (auto& [name, p] : named) out.push_back(p);
  return out;
}

inline void set_requires_grad(const NamedParams& named, bool on) {
  for (auto& [name, p] : named) p->node->requires_grad = on;
}

inline size_t param_count(const NamedParams& named) {
  size_t n = 0;
  for (auto& [name, p] : named) n += p->val().size();
  return n;
}

// FNV-1a over the raw parameter bytes; used to verify freeze contracts.
inline uint64_t param_checksum(const NamedParams& named) {
  uint64_t h = 1469598103934665603ULL;
  for (auto& [name, p] : named) {
    const auto& vv = p->val().v;
    const unsigned char* bytes =
        reinterpret_cast<const unsigned char*>(vv.data());
    for (size_t i = 0; i < vv.size() * sizeof(real); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Optimizers.
// ---------------------------------------------------------------------------

struct Sgd {
  real lr;
  explicit Sgd(real lr_) : lr(lr_) {}

  void step(const std::vector<Var*>& params) {
    for (Var* p : params) {
      if (p->node->grad.empty()) continue;
      auto& val = p->node->val.v;
      auto& g = p->node->grad.v;
      for (size_t i = 0; i < val.size(); ++i) val[i] -= lr * g[i];
    }
  }
};

struct Adam {
  real lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t t = 0;
  std::vector<Tensor> m_, v_;

  explicit Adam(real lr_) : lr(lr_) {}

  void step(const std::vector<Var*>& params) {
    if (m_.empty()) {
      for (Var* p : params) {
        m_.emplace_back(p->val().c, p->val().h, p->val().w);
        v_.emplace_back(p->val().c, p->val().h, p->val().w);
      }
    }
    ++t;
    real bc1 = 1.0 - std::pow(beta1, real(t));
    real bc2 = 1.0 - std::pow(beta2, real(t));
    for (size_t pi = 0; pi < params.size(); ++pi) {
      Var* p = params[pi];
      if (p->node->grad.empty()) continue;
      auto& val = p->node->val.v;
      auto& g = p->node->grad.v;
      auto& m = m_[pi].v;
      auto& v = v_[pi].v;
      for (size_t i = 0; i < val.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        real mh = m[i] / bc1;
        real vh = v[i] / bc2;
        val[i] -= lr * mh / (std::sqrt(vh) + eps);
      }
    }
  }
};

inline void zero_grads(const std::vector<Var*>& params) {
  for (Var* p : params) p->zero_grad();
}

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
inline real clip_grad_norm(const std::vector<Var*>& params, real max_norm) {
  real sq = 0.0;
  for (Var* p : params) {
    if (p->node->grad.empty()) continue;
    for (real g : p->node->grad.v) sq += g * g;
  }
  real norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    real scale = max_norm / norm;
    for (Var* p : params) {
      if (p->node->grad.empty()) continue;
      for (real& g : p->node->grad.v) g *= scale;
    }
  }
  return norm;
}

}  // namespace sifuse
