#pragma once

#include <set>
#include <vector>

#include "sifuse/denoiser.hpp"
#include "sifuse/seghead.hpp"

namespace sifuse {

// Knowledge fusion branch: a shallow convolutional network estimates a
// latent-shaped weight map from both streams' knowledge plus the fusion
// trajectory's own state, the segmentation-derived radiation mask caps the
// weight inside thermal regions, and the capped map blends the two predicted
// noises into one sampling trajectory.

struct FusionNetConfig {
  int latent_channels = 4;
  int width = 16;
  int temb_dim = 32;
  int temb_channels = 4;  // broadcast timestep feature planes
  bool use_x0_inputs = true;
  int n_taps = 3;
};

struct FusionForward {
  Var w;                 // latent-shaped, in [0,1] by the closing sigmoid
  std::vector<Var> taps; // attention features for the segmentation head
};

struct FusionNet {
  FusionNetConfig cfg;
  Linear t_trunk, t_proj;
  Conv2d c0, c1, c2, c3;

  FusionNet() = default;
  FusionNet(const FusionNetConfig& c, Rng& rng) : cfg(c) {
    int grids = c.use_x0_inputs ? 5 : 3;
    int in = grids * c.latent_channels + c.temb_channels;
    t_trunk = Linear(c.temb_dim, c.temb_dim, rng);
    t_proj = Linear(c.temb_dim, c.temb_channels, rng);
    c0 = Conv2d(in, c.width, 3, 1, 1, rng);
    c1 = Conv2d(c.width, c.width, 3, 1, 1, rng);
    c2 = Conv2d(c.width, c.width, 3, 1, 1, rng);
    c3 = Conv2d(c.width, c.latent_channels, 3, 1, 1, rng);
  }

  FusionForward forward(const Var& x0_psi, const Var& x0_phi, const Var& z_f,
                        const Var& eps_psi, const Var& eps_phi, int t) const {
    for (const Var* g : {&x0_psi, &x0_phi, &eps_psi, &eps_phi})
      if (!g->val().same_shape(z_f.val()))
        throw ParamError("FusionNet: input grids are not shape-aligned");

    Var temb = silu(t_trunk.forward(Var(timestep_embedding(t, cfg.temb_dim))));
    Var tfeat = t_proj.forward(temb);
    // Broadcast the timestep feature over space.
    Tensor tgrid(cfg.temb_channels, z_f.h(), z_f.w());
    size_t plane = size_t(z_f.h()) * z_f.w();
    for (int ci = 0; ci < cfg.temb_channels; ++ci)
      std::fill(tgrid.v.begin() + ci * plane,
                tgrid.v.begin() + (ci + 1) * plane, tfeat.val().v[ci]);

    std::vector<Var> inputs;
    if (cfg.use_x0_inputs) {
      inputs = {x0_psi, x0_phi, z_f, eps_psi, eps_phi, Var(tgrid)};
    } else {
      inputs = {z_f, eps_psi, eps_phi, Var(tgrid)};
    }

    FusionForward out;
    Var h = silu(c0.forward(concat_c(inputs)));
    out.taps.push_back(h);
    h = silu(c1.forward(h));
    out.taps.push_back(h);
    h = silu(c2.forward(h));
    out.taps.push_back(h);
    out.w = sigmoid(c3.forward(h));
    return out;
  }

  NamedParams named_params(const std::string& prefix = "fnet") {
    NamedParams ps;
    t_trunk.named_params(prefix + ".t_trunk", ps);
    t_proj.named_params(prefix + ".t_proj", ps);
    c0.named_params(prefix + ".c0", ps);
    c1.named_params(prefix + ".c1", ps);
    c2.named_params(prefix + ".c2", ps);
    c3.named_params(prefix + ".c3", ps);
    return ps;
  }
};

// Nearest-neighbor (center sample) downscale of a binary mask to latent
// resolution, as a single broadcast plane.
inline Tensor downsample_mask(const GridI& mask, int factor) {
  if (mask.h % factor || mask.w % factor)
    throw ParamError("downsample_mask: dimensions not divisible by factor");
  Tensor out(1, mask.h / factor, mask.w / factor);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      out.at(0, y, x) = real(mask.at(y * factor + factor / 2,
                                     x * factor + factor / 2));
  return out;
}

inline Tensor broadcast_mask(const Tensor& mask_plane, int channels) {
  Tensor out(channels, mask_plane.h, mask_plane.w);
  size_t plane = size_t(mask_plane.h) * mask_plane.w;
  for (int c = 0; c < channels; ++c)
    std::copy(mask_plane.v.begin(), mask_plane.v.end(),
              out.v.begin() + c * plane);
  return out;
}

// w_r = M * min(w, tau) + (1 - M) * w, with M a binary mask broadcast across
// channels.
inline Var modulate_weights(const Var& w, const Tensor& mask, real tau) {
  if (!(tau >= 0.0 && tau <= 1.0))
    throw ParamError("modulate_weights: tau must lie in [0,1]");
  Tensor m = mask;
  if (m.c == 1 && w.c() != 1) m = broadcast_mask(m, w.c());
  if (!m.same_shape(w.val()))
    throw ParamError("modulate_weights: mask shape mismatch");
  for (real x : m.v)
    if (x != 0.0 && x != 1.0)
      throw ParamError("modulate_weights: mask must be binary");
  Tensor inv = m;
  for (auto& x : inv.v) x = 1.0 - x;
  return add(mul_const(minimum_scalar(w, tau), m), mul_const(w, inv));
}

inline Tensor modulate_weights(const Tensor& w, const Tensor& mask, real tau) {
  NoGrad ng;
  return modulate_weights(Var(w), mask, tau).val();
}

// eps_f = w_r eps_psi + (1 - w_r) eps_phi
inline Var fuse_noise(const Var& eps_psi, const Var& eps_phi, const Var& w_r) {
  check_same_shape(eps_psi, eps_phi, "fuse_noise");
  check_same_shape(eps_psi, w_r, "fuse_noise");
  for (real x : w_r.val().v)
    if (!(x >= 0.0 && x <= 1.0))
      throw ParamError("fuse_noise: weights must lie in [0,1]");
  return add(mul(w_r, eps_psi), mul(one_minus(w_r), eps_phi));
}

inline Tensor fuse_noise(const Tensor& eps_psi, const Tensor& eps_phi,
                         const Tensor& w_r) {
  NoGrad ng;
  return fuse_noise(Var(eps_psi), Var(eps_phi), Var(w_r)).val();
}

// ---------------------------------------------------------------------------
// The full fusion sampling loop.
// ---------------------------------------------------------------------------

struct FusionModels {
  Autoencoder vis_ae, ir_ae;
  Denoiser psi, phi;
  FusionNet fnet;
  SegHead seg;

  void check_ready() const {
    if (!vis_ae.e0.W.defined() || !ir_ae.e0.W.defined() ||
        !psi.out.W.defined() || !phi.out.W.defined() ||
        !fnet.c3.W.defined() || !seg.s2.W.defined())
      throw ConfigError("fusion: model parameters are missing");
  }
};

struct FusionConfig {
  real tau = 0.4;
  std::set<int> thermal_classes{1, 2};
  uint64_t seed = 0;
  bool modulation_enabled = true;
};

struct FusionStepRecord {
  int t = 0;
  real w_mean = 0, w_min = 0, w_max = 0;
  real wr_mean_in_mask = -1.0;  // -1 when the mask is empty
  real mask_fraction = 0;
  real x0_psi_norm = 0, x0_phi_norm = 0, x0_f_norm = 0;
};

// One fusion-branch step at timestep t given both streams' knowledge.
// Gradient flow follows the ambient grad mode: the caller decides whether
// this step is taped.
struct FusionStepOutput {
  FusionForward fwd;
  Var w_r;
  Var eps_f;
  Var x0_f;
  Var seg_next;
  GridI gamma;
  GridI mask;
};

inline FusionStepOutput fusion_step(const FusionModels& models,
                                    const DiffusionStreamState& psi_state,
                                    const DiffusionStreamState& phi_state,
                                    const Var& z_f, const Var& seg_state, int t,
                                    const NoiseSchedule& sched,
                                    const FusionConfig& cfg) {
  FusionStepOutput out;
  out.fwd = models.fnet.forward(Var(psi_state.x0_hat), Var(phi_state.x0_hat),
                                z_f, Var(psi_state.eps), Var(phi_state.eps), t);
  auto [seg_next, gamma] = seg_step(seg_state, out.fwd.taps, models.seg);
  out.seg_next = seg_next;
  out.gamma = gamma;
  out.mask = radiation_mask(gamma, cfg.thermal_classes);
  if (cfg.modulation_enabled) {
    Tensor mask_latent = downsample_mask(out.mask, models.vis_ae.cfg.factor);
    out.w_r = modulate_weights(out.fwd.w, mask_latent, cfg.tau);
  } else {
    out.w_r = out.fwd.w;
  }
  out.eps_f = fuse_noise(Var(psi_state.eps), Var(phi_state.eps), out.w_r);
  out.x0_f = estimate_x0(z_f, out.eps_f, t, sched);
  return out;
}

inline FusionStepRecord make_step_record(int t, const FusionStepOutput& step,
                                         const Tensor& x0_psi,
                                         const Tensor& x0_phi) {
  FusionStepRecord rec;
  rec.t = t;
  const Tensor& w = step.fwd.w.val();
  rec.w_mean = mean_of(w);
  rec.w_min = min_of(w);
  rec.w_max = max_of(w);
  rec.x0_psi_norm = l2_norm(x0_psi);
  rec.x0_phi_norm = l2_norm(x0_phi);
  rec.x0_f_norm = l2_norm(step.x0_f.val());

  // Mean of the modulated weight inside the (latent-resolution) mask.
  long in_n = 0;
  real in_sum = 0.0;
  const Tensor& wr = step.w_r.val();
  int fy = step.mask.h / wr.h, fx = step.mask.w / wr.w;
  size_t plane = size_t(wr.h) * wr.w;
  long mask_on = 0;
  for (int y = 0; y < wr.h; ++y)
    for (int x = 0; x < wr.w; ++x) {
      bool on = step.mask.at(y * fy + fy / 2, x * fx + fx / 2) != 0;
      if (!on) continue;
      ++mask_on;
      for (int c = 0; c < wr.c; ++c) {
        in_sum += wr.v[c * plane + size_t(y) * wr.w + x];
        ++in_n;
      }
    }
  rec.wr_mean_in_mask = in_n > 0 ? in_sum / real(in_n) : -1.0;
  rec.mask_fraction = real(mask_on) / real(plane);
  return rec;
}

struct FusionResult {
  Tensor mag_img;
  GridI gamma;
  std::vector<FusionStepRecord> trace;
};

// Runs both streams and the fusion branch from a shared z_T down the whole
// plan, decoding the final clean estimate with the visible-domain decoder.
inline FusionResult run_fusion_sampling(const Tensor& input_degraded,
                                        const Tensor& z_T,
                                        const FusionModels& models,
                                        const NoiseSchedule& sched,
                                        const TimestepPlan& plan,
                                        const FusionConfig& cfg) {
  models.check_ready();
  check_image(input_degraded, "run_fusion_sampling");
  if (plan.size() == 0) throw ParamError("run_fusion_sampling: empty plan");

  NoGrad ng;
  Tensor cond = models.vis_ae.encode(input_degraded);

  // Shared trajectory start for both streams and the fusion branch.
  DiffusionStreamState psi_state =
      DiffusionStreamState::start(z_T, plan[0], cond);
  DiffusionStreamState phi_state =
      DiffusionStreamState::start(z_T, plan[0], cond);
  Var z_f{Tensor(z_T)};

  Rng seg_rng(Rng::derive(cfg.seed, 0x5e6));
  Var seg_state{normal_tensor(seg_rng, models.seg.cfg.n_class,
                              input_degraded.h, input_degraded.w)};

  FusionResult out;
  out.trace.reserve(plan.size());
  Var x0_f;
  for (size_t k = 0; k < plan.size(); ++k) {
    int t = plan[k];
    int t_next = plan.next_after(k);
    psi_state = reverse_step(psi_state, models.psi, sched, t_next);
    phi_state = reverse_step(phi_state, models.phi, sched, t_next);
    FusionStepOutput step = fusion_step(models, psi_state, phi_state, z_f,
                                        seg_state, t, sched, cfg);
    seg_state = step.seg_next;
    x0_f = step.x0_f;
    out.trace.push_back(make_step_record(t, step, psi_state.x0_hat,
                                         phi_state.x0_hat));
    out.gamma = step.gamma;
    z_f = ddim_step(x0_f, step.eps_f, t_next, sched);
  }
  out.mag_img = models.vis_ae.decode(x0_f.val());
  return out;
}

}  // namespace sifuse
