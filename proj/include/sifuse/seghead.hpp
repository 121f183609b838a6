#pragma once

#include <iostream>
#include <set>
#include <vector>

#include "sifuse/nn.hpp"

namespace sifuse {

// Segmentation head threaded through the fusion loop. Each step consumes the
// previous logits plus the fusion network's attention taps (upsampled to
// image resolution) and emits the next logits; the class map is their argmax.

struct SegHeadConfig {
  int n_class = 4;
  int tap_channels = 16;  // channels of each attention tap
  int n_taps = 3;
  int width = 16;
  int factor = 4;  // latent -> image upsample
};

struct SegHead {
  SegHeadConfig cfg;
  Conv2d tap_reduce;  // 1x1 fusion of the concatenated taps at latent scale
  Conv2d s0, s1, s2;

  SegHead() = default;
  SegHead(const SegHeadConfig& c, Rng& rng) : cfg(c) {
    tap_reduce = Conv2d(c.tap_channels * c.n_taps, c.width, 1, 1, 0, rng);
    s0 = Conv2d(c.width + c.n_class, c.width, 3, 1, 1, rng);
    s1 = Conv2d(c.width, c.width, 3, 1, 1, rng);
    s2 = Conv2d(c.width, c.n_class, 3, 1, 1, rng);
  }

  Var forward(const Var& state, const std::vector<Var>& taps) const {
    if (int(taps.size()) != cfg.n_taps)
      throw ParamError("SegHead: wrong number of attention taps");
    if (state.c() != cfg.n_class)
      throw ParamError("SegHead: state channel count mismatch");
    Var t = silu(tap_reduce.forward(concat_c(taps)));
    Var up = upsample_nearest(t, cfg.factor);
    if (up.h() != state.h() || up.w() != state.w())
      throw ParamError("SegHead: taps and state are spatially misaligned");
    Var h = silu(s0.forward(concat_c({up, state})));
    h = silu(s1.forward(h));
    return s2.forward(h);
  }

  NamedParams named_params(const std::string& prefix = "seg") {
    NamedParams ps;
    tap_reduce.named_params(prefix + ".tap_reduce", ps);
    s0.named_params(prefix + ".s0", ps);
    s1.named_params(prefix + ".s1", ps);
    s2.named_params(prefix + ".s2", ps);
    return ps;
  }
};

// Argmax over the class axis; ties pick the lowest index.
inline GridI argmax_classes(const Tensor& logits) {
  GridI map(logits.h, logits.w);
  size_t plane = size_t(logits.h) * logits.w;
  for (size_t p = 0; p < plane; ++p) {
    int best = 0;
    real best_v = logits.v[p];
    for (int c = 1; c < logits.c; ++c)
      if (logits.v[c * plane + p] > best_v) {
        best_v = logits.v[c * plane + p];
        best = c;
      }
    map.v[p] = best;
  }
  return map;
}

// Advances the head one timestep: returns the next carried state (raw logits)
// and the predicted class map.
inline std::pair<Var, GridI> seg_step(const Var& state,
                                      const std::vector<Var>& taps,
                                      const SegHead& net) {
  Var next = net.forward(state, taps);
  return {next, argmax_classes(next.val())};
}

// Binary mask of pixels whose class is a thermal-signature category.
inline GridI radiation_mask(const GridI& gamma,
                            const std::set<int>& thermal_classes) {
  if (thermal_classes.empty())
    std::cerr << "sifuse: warning: empty thermal class set, radiation mask is "
                 "all zero\n";
  GridI mask(gamma.h, gamma.w, 0);
  for (size_t i = 0; i < gamma.v.size(); ++i)
    mask.v[i] = thermal_classes.count(gamma.v[i]) ? 1 : 0;
  return mask;
}

inline Var seg_loss(const Var& logits, const GridI& label) {
  return softmax_cross_entropy(logits, label);
}

}  // namespace sifuse
