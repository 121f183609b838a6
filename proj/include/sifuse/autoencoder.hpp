#pragma once

#include <vector>

#include "sifuse/nn.hpp"

namespace sifuse {

// Lightweight image <-> latent mapping shared by both diffusion streams.
// Instance normalization keeps encoder features content-centric; the decoder
// ends in a sigmoid so outputs always land in [0,1].

struct AutoencoderConfig {
  int in_channels = 3;
  int base_width = 12;
  int latent_channels = 4;
  int factor = 4;  // spatial downsample, fixed by the two stride-2 stages
};

struct Autoencoder {
  AutoencoderConfig cfg;
  Conv2d e0, e1, e2, e3;
  Conv2d d0, d1, d2, d3;

  Autoencoder() = default;
  Autoencoder(const AutoencoderConfig& c, Rng& rng) : cfg(c) {
    int w = c.base_width;
    e0 = Conv2d(c.in_channels, w, 3, 1, 1, rng);
    e1 = Conv2d(w, w, 3, 2, 1, rng);
    e2 = Conv2d(w, 2 * w, 3, 2, 1, rng);
    e3 = Conv2d(2 * w, c.latent_channels, 3, 1, 1, rng);
    d0 = Conv2d(c.latent_channels, 2 * w, 3, 1, 1, rng);
    d1 = Conv2d(2 * w, w, 3, 1, 1, rng);
    d2 = Conv2d(w, w, 3, 1, 1, rng);
    d3 = Conv2d(w, c.in_channels, 3, 1, 1, rng);
  }

  // norm_probe, when given, receives the first normalization layer's output.
  Var encode(const Var& img, Tensor* norm_probe = nullptr) const {
    if (img.c() != cfg.in_channels)
      throw ParamError("Autoencoder::encode: channel count mismatch");
    if (img.h() % cfg.factor || img.w() % cfg.factor)
      throw ParamError(
          "Autoencoder::encode: dimensions must be divisible by the factor");
    Var h = instance_norm(e0.forward(img));
    if (norm_probe) *norm_probe = h.val();
    h = silu(h);
    h = silu(instance_norm(e1.forward(h)));
    h = silu(instance_norm(e2.forward(h)));
    return e3.forward(h);
  }

  Var decode(const Var& z) const {
    if (z.c() != cfg.latent_channels)
      throw ParamError("Autoencoder::decode: latent channel mismatch");
    Var h = silu(instance_norm(d0.forward(z)));
    h = upsample_nearest(h, 2);
    h = silu(instance_norm(d1.forward(h)));
    h = upsample_nearest(h, 2);
    h = silu(instance_norm(d2.forward(h)));
    return sigmoid(d3.forward(h));
  }

  Tensor encode(const Tensor& img) const {
    NoGrad ng;
    return encode(Var(img)).val();
  }
  Tensor decode(const Tensor& z) const {
    NoGrad ng;
    return decode(Var(z)).val();
  }

  NamedParams named_params(const std::string& prefix = "ae") {
    NamedParams out;
    e0.named_params(prefix + ".e0", out);
    e1.named_params(prefix + ".e1", out);
    e2.named_params(prefix + ".e2", out);
    e3.named_params(prefix + ".e3", out);
    d0.named_params(prefix + ".d0", out);
    d1.named_params(prefix + ".d1", out);
    d2.named_params(prefix + ".d2", out);
    d3.named_params(prefix + ".d3", out);
    return out;
  }
};

struct AeTrainConfig {
  real lr = 2e-3;
  int steps = 400;
  int batch = 4;
  uint64_t seed = 1;
};

// L1 reconstruction training; returns the per-step loss history.
inline std::vector<real> train_autoencoder(Autoencoder& ae,
                                           const std::vector<Tensor>& images,
                                           const AeTrainConfig& cfg) {
  if (images.empty())
    throw ParamError("train_autoencoder: dataset must be non-empty");
  for (const auto& img : images) check_image(img, "train_autoencoder");

  NamedParams named = ae.named_params();
  auto params = param_list(named);
  Adam opt(cfg.lr);
  Rng rng(Rng::derive(cfg.seed, 0xae));

  std::vector<real> history;
  history.reserve(cfg.steps);
  for (int step = 0; step < cfg.steps; ++step) {
    zero_grads(params);
    Var loss;
    for (int b = 0; b < cfg.batch; ++b) {
      const Tensor& img = images[rng.uniform_int(0, int(images.size()) - 1)];
      Var x(img);
      Var rec = ae.decode(ae.encode(x));
      Var l = mean_all(abs_v(sub(rec, x)));
      loss = loss.defined() ? add(loss, l) : l;
    }
    loss = mul_scalar(loss, 1.0 / real(cfg.batch));
    backward(loss);
    opt.step(params);
    history.push_back(loss.val().v[0]);
  }
  return history;
}

inline real reconstruction_error(const Autoencoder& ae, const Tensor& img) {
  Tensor rec = ae.decode(ae.encode(img));
  real acc = 0.0;
  for (size_t i = 0; i < img.v.size(); ++i)
    acc += std::abs(rec.v[i] - img.v[i]);
  return acc / real(img.v.size());
}

}  // namespace sifuse
