#pragma once

#include <filesystem>

#include "sifuse/checkpoint.hpp"
#include "sifuse/training.hpp"

namespace sifuse {

// Stage-specific save/load on top of the checkpoint container. Architecture
// descriptors ride in the checkpoint config so models are reconstructed from
// the file alone.

inline void save_autoencoder(const std::string& path, Autoencoder& ae,
                             int64_t step = 0) {
  nlohmann::json desc = {{"in_channels", ae.cfg.in_channels},
                         {"base_width", ae.cfg.base_width},
                         {"latent_channels", ae.cfg.latent_channels},
                         {"factor", ae.cfg.factor}};
  save_checkpoint(path, checkpoint_from_params("autoencoder",
                                               ae.named_params(), desc, step));
}

inline Autoencoder load_autoencoder(const std::string& path) {
  Checkpoint ck = load_checkpoint(path, "autoencoder");
  AutoencoderConfig cfg;
  cfg.in_channels = ck.config.value("in_channels", cfg.in_channels);
  cfg.base_width = ck.config.value("base_width", cfg.base_width);
  cfg.latent_channels = ck.config.value("latent_channels", cfg.latent_channels);
  cfg.factor = ck.config.value("factor", cfg.factor);
  Rng rng(0);
  Autoencoder ae(cfg, rng);
  NamedParams named = ae.named_params();
  load_into_params(ck, named);
  return ae;
}

inline void save_denoiser(const std::string& path, Denoiser& net,
                          const std::string& stage, int64_t step = 0) {
  nlohmann::json desc = {{"latent_channels", net.cfg.latent_channels},
                         {"cond_channels", net.cfg.cond_channels},
                         {"width", net.cfg.width},
                         {"temb_dim", net.cfg.temb_dim},
                         {"role", to_string(net.cfg.role)}};
  save_checkpoint(path,
                  checkpoint_from_params(stage, net.named_params(), desc, step));
}

inline Denoiser load_denoiser(const std::string& path,
                              const std::string& stage) {
  Checkpoint ck = load_checkpoint(path, stage);
  DenoiserConfig cfg;
  cfg.latent_channels = ck.config.value("latent_channels", cfg.latent_channels);
  cfg.cond_channels = ck.config.value("cond_channels", cfg.cond_channels);
  cfg.width = ck.config.value("width", cfg.width);
  cfg.temb_dim = ck.config.value("temb_dim", cfg.temb_dim);
  cfg.role = stream_role_from_string(
      ck.config.value("role", std::string("restoration")));
  Rng rng(0);
  Denoiser net(cfg, rng);
  NamedParams named = net.named_params();
  load_into_params(ck, named);
  return net;
}

// The fusion stage bundles the weight network and the segmentation head.
inline void save_fusion_stage(const std::string& path, FusionNet& fnet,
                              SegHead& seg, int64_t step = 0) {
  nlohmann::json desc = {
      {"fnet",
       {{"latent_channels", fnet.cfg.latent_channels},
        {"width", fnet.cfg.width},
        {"temb_dim", fnet.cfg.temb_dim},
        {"temb_channels", fnet.cfg.temb_channels},
        {"use_x0_inputs", fnet.cfg.use_x0_inputs},
        {"n_taps", fnet.cfg.n_taps}}},
      {"seg",
       {{"n_class", seg.cfg.n_class},
        {"tap_channels", seg.cfg.tap_channels},
        {"n_taps", seg.cfg.n_taps},
        {"width", seg.cfg.width},
        {"factor", seg.cfg.factor}}}};
  NamedParams named = fnet.named_params();
  NamedParams seg_named = seg.named_params();
  named.insert(named.end(), seg_named.begin(), seg_named.end());
  save_checkpoint(path, checkpoint_from_params("fusion", named, desc, step));
}

inline std::pair<FusionNet, SegHead> load_fusion_stage(
    const std::string& path) {
  Checkpoint ck = load_checkpoint(path, "fusion");
  FusionNetConfig fcfg;
  const auto& fd = ck.config.at("fnet");
  fcfg.latent_channels = fd.value("latent_channels", fcfg.latent_channels);
  fcfg.width = fd.value("width", fcfg.width);
  fcfg.temb_dim = fd.value("temb_dim", fcfg.temb_dim);
  fcfg.temb_channels = fd.value("temb_channels", fcfg.temb_channels);
  fcfg.use_x0_inputs = fd.value("use_x0_inputs", fcfg.use_x0_inputs);
  fcfg.n_taps = fd.value("n_taps", fcfg.n_taps);
  SegHeadConfig scfg;
  const auto& sd = ck.config.at("seg");
  scfg.n_class = sd.value("n_class", scfg.n_class);
  scfg.tap_channels = sd.value("tap_channels", scfg.tap_channels);
  scfg.n_taps = sd.value("n_taps", scfg.n_taps);
  scfg.width = sd.value("width", scfg.width);
  scfg.factor = sd.value("factor", scfg.factor);
  Rng rng(0);
  FusionNet fnet(fcfg, rng);
  SegHead seg(scfg, rng);
  NamedParams named = fnet.named_params();
  NamedParams seg_named = seg.named_params();
  named.insert(named.end(), seg_named.begin(), seg_named.end());
  load_into_params(ck, named);
  return {fnet, seg};
}

// Standard checkpoint-directory layout.
inline std::string ckpt_path(const std::string& dir, const char* name) {
  return (std::filesystem::path(dir) / (std::string(name) + ".ckpt")).string();
}

inline FusionModels load_models(const std::string& dir) {
  FusionModels m;
  m.vis_ae = load_autoencoder(ckpt_path(dir, "vis_ae"));
  m.ir_ae = load_autoencoder(ckpt_path(dir, "ir_ae"));
  m.psi = load_denoiser(ckpt_path(dir, "psi"), "psi");
  m.phi = load_denoiser(ckpt_path(dir, "phi"), "phi");
  auto [fnet, seg] = load_fusion_stage(ckpt_path(dir, "fusion"));
  m.fnet = fnet;
  m.seg = seg;
  return m;
}

}  // namespace sifuse
