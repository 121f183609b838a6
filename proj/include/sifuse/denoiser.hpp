#pragma once

#include <vector>

#include "sifuse/autoencoder.hpp"
#include "sifuse/schedule.hpp"

namespace sifuse {

// Conditional noise predictor for one diffusion stream: a small
// encoder-decoder with one skip connection and a timestep embedding injected
// as per-channel biases. The condition latent is joined along channels.

enum class StreamRole { restoration, translation };

inline const char* to_string(StreamRole r) {
  return r == StreamRole::restoration ? "restoration" : "translation";
}

inline StreamRole stream_role_from_string(const std::string& s) {
  if (s == "restoration") return StreamRole::restoration;
  if (s == "translation") return StreamRole::translation;
  throw ParamError("unknown stream role '" + s + "'");
}

struct DenoiserConfig {
  int latent_channels = 4;
  int cond_channels = 4;
  int width = 12;  // translation streams get twice the restoration width
  int temb_dim = 32;
  StreamRole role = StreamRole::restoration;
};

struct Denoiser {
  DenoiserConfig cfg;
  Linear t_trunk;
  Linear p_enc, p_mid, p_dec;
  Conv2d enc_a, enc_b, down, mid_a, mid_b, up_conv, dec_a, dec_b, out;

  Denoiser() = default;
  Denoiser(const DenoiserConfig& c, Rng& rng) : cfg(c) {
    const int w = c.width, in = c.latent_channels + c.cond_channels;
    t_trunk = Linear(c.temb_dim, c.temb_dim, rng);
    p_enc = Linear(c.temb_dim, w, rng);
    p_mid = Linear(c.temb_dim, 2 * w, rng);
    p_dec = Linear(c.temb_dim, w, rng);
    enc_a = Conv2d(in, w, 3, 1, 1, rng);
    enc_b = Conv2d(w, w, 3, 1, 1, rng);
    down = Conv2d(w, 2 * w, 3, 2, 1, rng);
    mid_a = Conv2d(2 * w, 2 * w, 3, 1, 1, rng);
    mid_b = Conv2d(2 * w, 2 * w, 3, 1, 1, rng);
    up_conv = Conv2d(2 * w, w, 3, 1, 1, rng);
    dec_a = Conv2d(2 * w, w, 3, 1, 1, rng);
    dec_b = Conv2d(w, w, 3, 1, 1, rng);
    out = Conv2d(w, c.latent_channels, 3, 1, 1, rng);
  }

  Var forward(const Var& z_t, const Var& cond, int t) const {
    if (z_t.h() != cond.h() || z_t.w() != cond.w())
      throw ParamError("Denoiser: latent and condition are misaligned");
    if (z_t.c() != cfg.latent_channels || cond.c() != cfg.cond_channels)
      throw ParamError("Denoiser: channel counts do not match the config");

    Var temb = silu(t_trunk.forward(Var(timestep_embedding(t, cfg.temb_dim))));

    Var x = concat_c({z_t, cond});
    Var e = silu(channel_bias(enc_a.forward(x), p_enc.forward(temb)));
    e = silu(enc_b.forward(e));

    Var m = silu(down.forward(e));
    m = silu(channel_bias(mid_a.forward(m), p_mid.forward(temb)));
    m = silu(mid_b.forward(m));

    Var u = silu(up_conv.forward(upsample_nearest(m, 2)));
    Var d = silu(channel_bias(dec_a.forward(concat_c({u, e})),
                              p_dec.forward(temb)));
    d = silu(dec_b.forward(d));
    return out.forward(d);
  }

  NamedParams named_params(const std::string& prefix = "denoiser") {
    NamedParams ps;
    t_trunk.named_params(prefix + ".t_trunk", ps);
    p_enc.named_params(prefix + ".p_enc", ps);
    p_mid.named_params(prefix + ".p_mid", ps);
    p_dec.named_params(prefix + ".p_dec", ps);
    enc_a.named_params(prefix + ".enc_a", ps);
    enc_b.named_params(prefix + ".enc_b", ps);
    down.named_params(prefix + ".down", ps);
    mid_a.named_params(prefix + ".mid_a", ps);
    mid_b.named_params(prefix + ".mid_b", ps);
    up_conv.named_params(prefix + ".up_conv", ps);
    dec_a.named_params(prefix + ".dec_a", ps);
    dec_b.named_params(prefix + ".dec_b", ps);
    out.named_params(prefix + ".out", ps);
    return ps;
  }
};

inline Tensor predict_noise(const Denoiser& net, const Tensor& z_t,
                            const Tensor& cond, int t) {
  NoGrad ng;
  return net.forward(Var(z_t), Var(cond), t).val();
}

// Per-timestep bundle carried along one stream's reverse trajectory. After a
// step, (eps, x0_hat) are the values that produced z at timestep t, so
// z == sqrt(abar_t) x0_hat + sqrt(1-abar_t) eps holds by construction.
struct DiffusionStreamState {
  Tensor z;
  int t = 0;
  Tensor eps;
  Tensor x0_hat;
  Tensor cond;
  bool has_knowledge = false;  // eps/x0_hat valid once a step has run

  static DiffusionStreamState start(Tensor z_T, int t_start, Tensor cond) {
    DiffusionStreamState s;
    s.z = std::move(z_T);
    s.t = t_start;
    s.cond = std::move(cond);
    return s;
  }

  // Residual of the self-consistency identity.
  real consistency_residual(const NoiseSchedule& sched) const {
    if (!has_knowledge)
      throw ContractError("DiffusionStreamState: no knowledge recorded yet");
    real ab = sched.alpha_bar(t);
    real c0 = std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
    real worst = 0.0;
    for (size_t i = 0; i < z.v.size(); ++i)
      worst = std::max(worst,
                       std::abs(z.v[i] - (c0 * x0_hat.v[i] + c1 * eps.v[i])));
    return worst;
  }
};

inline DiffusionStreamState reverse_step(const DiffusionStreamState& state,
                                         const Denoiser& net,
                                         const NoiseSchedule& sched,
                                         int t_next) {
  if (t_next < 0 || t_next >= state.t)
    throw ParamError("reverse_step: timestep must strictly decrease");
  Tensor eps = predict_noise(net, state.z, state.cond, state.t);
  Tensor x0 = estimate_x0(state.z, eps, state.t, sched);
  DiffusionStreamState next;
  next.z = ddim_step(x0, eps, t_next, sched);
  next.t = t_next;
  next.eps = std::move(eps);
  next.x0_hat = std::move(x0);
  next.cond = state.cond;
  next.has_knowledge = true;
  return next;
}

// Full reverse chain over the plan, decoded to an image. The final plan step
// ends with a transition to t = 0, which returns the last clean estimate.
inline Tensor sample_full(const Tensor& cond_latent, const Tensor& z_T,
                          const Denoiser& net, const Autoencoder& dec_ae,
                          const NoiseSchedule& sched, const TimestepPlan& plan) {
  if (plan.size() == 0) throw ParamError("sample_full: empty plan");
  DiffusionStreamState state =
      DiffusionStreamState::start(z_T, plan[0], cond_latent);
  for (size_t k = 0; k < plan.size(); ++k)
    state = reverse_step(state, net, sched, plan.next_after(k));
  return dec_ae.decode(state.x0_hat);
}

struct StreamTrainConfig {
  real lr = 2e-3;
  int steps = 600;
  int batch = 4;
  uint64_t seed = 1;
};

// Noise-prediction objective: t ~ U[1,T], eps ~ N(0,I), minimize
// ||eps - predict(sqrt(abar) z0 + sqrt(1-abar) eps, cond, t)||^2.
inline std::vector<real> train_stream_latents(
    Denoiser& net, const std::vector<std::pair<Tensor, Tensor>>& latent_pairs,
    const NoiseSchedule& sched, const StreamTrainConfig& cfg) {
  if (latent_pairs.empty())
    throw ParamError("train_stream: need at least one pair");
  NamedParams named = net.named_params();
  auto params = param_list(named);
  Adam opt(cfg.lr);
  Rng rng(Rng::derive(cfg.seed, 0x57));

  std::vector<real> history;
  history.reserve(cfg.steps);
  for (int step = 0; step < cfg.steps; ++step) {
    zero_grads(params);
    Var loss;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& [cond, z0] =
          latent_pairs[rng.uniform_int(0, int(latent_pairs.size()) - 1)];
      int t = rng.uniform_int(1, sched.t_train);
      Tensor eps = normal_tensor(rng, z0.c, z0.h, z0.w);
      Tensor z_t = forward_sample(z0, t, eps, sched);
      Var pred = net.forward(Var(z_t), Var(cond), t);
      Var diff = sub(pred, Var(eps));
      Var l = mean_all(mul(diff, diff));
      loss = loss.defined() ? add(loss, l) : l;
    }
    loss = mul_scalar(loss, 1.0 / real(cfg.batch));
    backward(loss);
    opt.step(params);
    history.push_back(loss.val().v[0]);
  }
  return history;
}

// Noise-prediction MSE over a fixed probe set of (pair, t, eps) draws;
// seeded, so before/after comparisons see identical probes.
inline real eval_stream_mse(const Denoiser& net,
                            const std::vector<std::pair<Tensor, Tensor>>&
                                latent_pairs,
                            const NoiseSchedule& sched, uint64_t seed,
                            int n_probes = 64) {
  if (latent_pairs.empty())
    throw ParamError("eval_stream_mse: need at least one pair");
  Rng rng(Rng::derive(seed, 0xe7a));
  real acc = 0.0;
  for (int i = 0; i < n_probes; ++i) {
    const auto& [cond, z0] =
        latent_pairs[rng.uniform_int(0, int(latent_pairs.size()) - 1)];
    int t = rng.uniform_int(1, sched.t_train);
    Tensor eps = normal_tensor(rng, z0.c, z0.h, z0.w);
    Tensor z_t = forward_sample(z0, t, eps, sched);
    Tensor pred = predict_noise(net, z_t, cond, t);
    real mse = 0.0;
    for (size_t j = 0; j < eps.v.size(); ++j) {
      real d = pred.v[j] - eps.v[j];
      mse += d * d;
    }
    acc += mse / real(eps.v.size());
  }
  return acc / real(n_probes);
}

// Image-pair front end: encodes (condition, target) through the given
// autoencoders, then trains on the latents.
inline std::vector<real> train_stream(
    Denoiser& net, const std::vector<std::pair<Tensor, Tensor>>& image_pairs,
    const Autoencoder& cond_ae, const Autoencoder& target_ae,
    const NoiseSchedule& sched, const StreamTrainConfig& cfg) {
  if (image_pairs.empty())
    throw ParamError("train_stream: need at least one pair");
  std::vector<std::pair<Tensor, Tensor>> latents;
  latents.reserve(image_pairs.size());
  for (const auto& [cond_img, target_img] : image_pairs)
    latents.emplace_back(cond_ae.encode(cond_img), target_ae.encode(target_img));
  return train_stream_latents(net, latents, sched, cfg);
}

}  // namespace sifuse
