#include <catch2/catch_amalgamated.hpp>

#include "sifuse/denoiser.hpp"
#include "sifuse/metrics.hpp"
#include "sifuse/synthdata.hpp"

using namespace sifuse;

namespace {

DenoiserConfig small_cfg(StreamRole role = StreamRole::restoration) {
  DenoiserConfig c;
  c.width = 8;
  c.role = role;
  return c;
}

}  // namespace

TEST_CASE("predict_noise contracts") {
  Rng rng(1);
  Denoiser net(small_cfg(), rng);
  Tensor z = normal_tensor(rng, 4, 8, 8);
  Tensor c = normal_tensor(rng, 4, 8, 8);

  Tensor eps = predict_noise(net, z, c, 5);
  REQUIRE(eps.c == 4);
  REQUIRE(eps.h == 8);
  REQUIRE(eps.w == 8);
  REQUIRE(all_finite(eps));

  // Deterministic.
  REQUIRE(max_abs_diff(predict_noise(net, z, c, 5), eps) == 0.0);

  // Timestep matters.
  REQUIRE(max_abs_diff(predict_noise(net, z, c, 900), eps) > 0.0);

  // Misaligned shapes are rejected.
  Tensor c_bad = normal_tensor(rng, 4, 4, 4);
  REQUIRE_THROWS_AS(predict_noise(net, z, c_bad, 5), ParamError);
}

TEST_CASE("single-pair overfit drives the objective under 1e-3") {
  Rng rng(2);
  Denoiser net(small_cfg(), rng);
  NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02);

  // One fixed (z0, cond, t, eps) tuple; the objective is plain regression.
  Rng data(3);
  Tensor z0 = normal_tensor(data, 4, 8, 8);
  Tensor cond = normal_tensor(data, 4, 8, 8);
  Tensor eps = normal_tensor(data, 4, 8, 8);
  const int t = 500;
  Tensor z_t = forward_sample(z0, t, eps, sched);

  auto params = param_list(net.named_params());
  Adam opt(5e-3);
  real objective = 0.0;
  for (int step = 0; step < 400; ++step) {
    zero_grads(params);
    Var pred = net.forward(Var(z_t), Var(cond), t);
    Var diff = sub(pred, Var(eps));
    Var loss = mean_all(mul(diff, diff));
    backward(loss);
    opt.step(params);
    objective = loss.val().v[0];
  }
  REQUIRE(objective < 1e-3);
}

TEST_CASE("train_stream halves the noise-prediction error", "[slow]") {
  NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02);
  Rng rng(4);
  DenoiserConfig dc;
  dc.width = 12;
  Denoiser net(dc, rng);

  // Latents of synthetic scenes through an untrained encoder: structured
  // targets, like the real pipeline provides.
  Rng aerng(12);
  Autoencoder ae(AutoencoderConfig{}, aerng);
  auto samples = make_dataset(8, 32, 17, all_degradations(), 0.7);
  std::vector<std::pair<Tensor, Tensor>> latent_pairs;
  for (const auto& s : samples)
    latent_pairs.emplace_back(ae.encode(s.degraded_vis),
                              ae.encode(s.clean_vis));

  real before = eval_stream_mse(net, latent_pairs, sched, 99);
  StreamTrainConfig cfg;
  cfg.steps = 500;
  cfg.batch = 4;
  cfg.lr = 2e-3;
  train_stream_latents(net, latent_pairs, sched, cfg);
  real after = eval_stream_mse(net, latent_pairs, sched, 99);
  INFO("eps-MSE " << before << " -> " << after);
  REQUIRE(after < 0.5 * before);

  SECTION("zero learning rate leaves parameters unchanged") {
    Rng r(6);
    Denoiser frozen(small_cfg(), r);
    uint64_t before = param_checksum(frozen.named_params());
    StreamTrainConfig zero = cfg;
    zero.lr = 0.0;
    zero.steps = 10;
    train_stream_latents(frozen, latent_pairs, sched, zero);
    REQUIRE(param_checksum(frozen.named_params()) == before);
  }

  SECTION("empty pair list is rejected") {
    Rng r(7);
    Denoiser d(small_cfg(), r);
    std::vector<std::pair<Tensor, Tensor>> none;
    REQUIRE_THROWS_AS(train_stream_latents(d, none, sched, cfg), ParamError);
  }
}

TEST_CASE("reverse_step state algebra") {
  NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02);
  TimestepPlan plan = subsample_timesteps(1000, 25);
  Rng rng(8);
  Denoiser net(small_cfg(), rng);
  Tensor cond = normal_tensor(rng, 4, 8, 8);
  Tensor z_T = normal_tensor(rng, 4, 8, 8);

  SECTION("emitted states satisfy the self-consistency identity") {
    DiffusionStreamState state =
        DiffusionStreamState::start(z_T, plan[0], cond);
    for (size_t k = 0; k < plan.size(); ++k) {
      state = reverse_step(state, net, sched, plan.next_after(k));
      REQUIRE(state.consistency_residual(sched) < 1e-5);
      REQUIRE(state.z.c == 4);
      REQUIRE(state.z.h == 8);
      REQUIRE(all_finite(state.z));
    }
    REQUIRE(all_finite(state.x0_hat));
  }

  SECTION("non-decreasing timestep is rejected") {
    DiffusionStreamState state =
        DiffusionStreamState::start(z_T, 500, cond);
    REQUIRE_THROWS_AS(reverse_step(state, net, sched, 500), ParamError);
    REQUIRE_THROWS_AS(reverse_step(state, net, sched, 600), ParamError);
  }

  SECTION("repeated calls are deterministic") {
    DiffusionStreamState s0 = DiffusionStreamState::start(z_T, 1000, cond);
    DiffusionStreamState a = reverse_step(s0, net, sched, 500);
    DiffusionStreamState b = reverse_step(s0, net, sched, 500);
    REQUIRE(max_abs_diff(a.z, b.z) == 0.0);
    REQUIRE(max_abs_diff(a.eps, b.eps) == 0.0);
  }
}

TEST_CASE("sample_full determinism and shape") {
  NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02);
  TimestepPlan plan = subsample_timesteps(1000, 25);
  Rng rng(9);
  Autoencoder ae(AutoencoderConfig{}, rng);
  Denoiser net(small_cfg(), rng);
  Tensor cond = normal_tensor(rng, 4, 8, 8);
  Tensor z_T = normal_tensor(rng, 4, 8, 8);

  Tensor img1 = sample_full(cond, z_T, net, ae, sched, plan);
  Tensor img2 = sample_full(cond, z_T, net, ae, sched, plan);
  REQUIRE(max_abs_diff(img1, img2) == 0.0);
  REQUIRE(img1.c == 3);
  REQUIRE(img1.h == 32);
  REQUIRE(in_unit_range(img1));
}

// Trains a small restoration stream end-to-end on synthetic scenes and
// verifies that restoring a degraded image beats the degraded input in PSNR
// against the clean ground truth.
TEST_CASE("restoration smoke run improves PSNR", "[slow]") {
  const int size = 32;
  auto samples = make_dataset(8, size, 21, all_degradations(), 0.7);

  // Autoencoder for the visible domain.
  Rng rng(10);
  Autoencoder vis_ae(AutoencoderConfig{}, rng);
  std::vector<Tensor> vis_imgs;
  for (const auto& s : samples) {
    vis_imgs.push_back(s.clean_vis);
    vis_imgs.push_back(s.degraded_vis);
  }
  AeTrainConfig ae_cfg;
  ae_cfg.steps = 250;
  ae_cfg.lr = 3e-3;
  train_autoencoder(vis_ae, vis_imgs, ae_cfg);

  NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02);
  TimestepPlan plan = subsample_timesteps(1000, 25);
  Denoiser psi(small_cfg(), rng);
  std::vector<std::pair<Tensor, Tensor>> pairs;
  for (const auto& s : samples) pairs.emplace_back(s.degraded_vis, s.clean_vis);
  StreamTrainConfig cfg;
  cfg.steps = 450;
  cfg.batch = 4;
  cfg.lr = 2e-3;
  train_stream(psi, pairs, vis_ae, vis_ae, sched, cfg);

  // Held-out scene.
  SceneSample test = make_sample(Rng::derive(99, 0), size, all_degradations(),
                                 0.7);
  Rng zrng(11);
  Tensor z_T = normal_tensor(zrng, 4, size / 4, size / 4);
  Tensor restored =
      sample_full(vis_ae.encode(test.degraded_vis), z_T, psi, vis_ae, sched,
                  plan);
  real psnr_restored = psnr(restored, test.clean_vis);
  real psnr_degraded = psnr(test.degraded_vis, test.clean_vis);
  INFO("restored " << psnr_restored << " dB vs degraded " << psnr_degraded
                   << " dB");
  REQUIRE(psnr_restored > psnr_degraded);
}
