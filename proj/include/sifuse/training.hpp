#pragma once

#include <nlohmann/json.hpp>
#include <optional>

#include "sifuse/checkpoint.hpp"
#include "sifuse/fusion.hpp"
#include "sifuse/metrics.hpp"
#include "sifuse/synthdata.hpp"

namespace sifuse {

// ---------------------------------------------------------------------------
// Configuration.
// ---------------------------------------------------------------------------

enum class OptimizerKind { adam, sgd };

inline const char* to_string(OptimizerKind k) {
  return k == OptimizerKind::adam ? "adam" : "sgd";
}
inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ParamError("unknown optimizer kind '" + s + "'");
}

struct StageConfig {
  OptimizerKind opt = OptimizerKind::adam;
  real lr = 1e-3;
  int batch = 4;
  int steps = 300;      // gradient steps; the fusion stage reads this as epochs
  real grad_clip = 0;   // global-norm cap, 0 disables

  void validate(const char* stage) const {
    if (!(lr >= 0.0)) throw ConfigError(std::string(stage) + ": lr must be >= 0");
    if (batch < 1) throw ConfigError(std::string(stage) + ": batch must be >= 1");
    if (steps < 0) throw ConfigError(std::string(stage) + ": steps must be >= 0");
    if (grad_clip < 0)
      throw ConfigError(std::string(stage) + ": grad_clip must be >= 0");
  }
};

struct TrainConfig {
  uint64_t seed = 7;
  int t_train = 1000;
  int t_infer = 25;
  real beta_min = 1e-4;
  real beta_max = 0.02;
  real tau = 0.4;
  int image_size = 32;
  int latent_channels = 4;
  int factor = 4;
  int n_class = 4;
  std::set<int> thermal_classes{1, 2};
  int ae_width = 12;
  int psi_width = 16;
  int phi_width = 32;  // translation is the harder task, give it 2x capacity
  int fusion_width = 16;
  int seg_width = 16;
  int temb_dim = 32;
  real degrade_severity = 0.9;
  StageConfig ae{OptimizerKind::adam, 3e-3, 4, 350};
  StageConfig psi{OptimizerKind::adam, 2e-3, 4, 900};
  StageConfig phi{OptimizerKind::adam, 2e-3, 4, 800};
  // The gated step at t near T scales gradients by 1/sqrt(abar_t), so the
  // fusion stage clips the global gradient norm.
  StageConfig fusion{OptimizerKind::sgd, 0.05, 1, 10, 1.0};

  // Settings as published for the full-scale system: Adam at 1e-4 (batch 16)
  // and 1e-5 (batch 4) for the two streams, SGD at 1e-3 (batch 1) for the
  // fusion/segmentation stage, 1000 training and 25 inference timesteps.
  static TrainConfig reference() {
    TrainConfig c;
    c.psi = {OptimizerKind::adam, 1e-4, 16, 600};
    c.phi = {OptimizerKind::adam, 1e-5, 4, 700};
    c.fusion = {OptimizerKind::sgd, 1e-3, 1, 10, 1.0};
    return c;
  }

  // Desk-scale defaults sized for CPU smoke runs on 32x32 scenes.
  static TrainConfig smoke() { return TrainConfig{}; }

  void validate() const {
    if (t_train < 1 || t_infer < 1 || t_infer > t_train)
      throw ConfigError("TrainConfig: bad timestep settings");
    if (!(tau >= 0.0 && tau <= 1.0))
      throw ConfigError("TrainConfig: tau must lie in [0,1]");
    if (image_size % factor)
      throw ConfigError("TrainConfig: image_size must be divisible by factor");
    ae.validate("ae");
    psi.validate("psi");
    phi.validate("phi");
    fusion.validate("fusion");
  }

  NoiseSchedule schedule() const {
    return build_schedule(t_train, beta_min, beta_max);
  }
  TimestepPlan plan() const { return subsample_timesteps(t_train, t_infer); }

  AutoencoderConfig ae_config() const {
    AutoencoderConfig c;
    c.base_width = ae_width;
    c.latent_channels = latent_channels;
    c.factor = factor;
    return c;
  }
  DenoiserConfig psi_config() const {
    DenoiserConfig c;
    c.width = psi_width;
    c.latent_channels = latent_channels;
    c.cond_channels = latent_channels;
    c.temb_dim = temb_dim;
    c.role = StreamRole::restoration;
    return c;
  }
  DenoiserConfig phi_config() const {
    DenoiserConfig c = psi_config();
    c.width = phi_width;
    c.role = StreamRole::translation;
    return c;
  }
  FusionNetConfig fusion_config(bool use_x0_inputs = true) const {
    FusionNetConfig c;
    c.latent_channels = latent_channels;
    c.width = fusion_width;
    c.temb_dim = temb_dim;
    c.use_x0_inputs = use_x0_inputs;
    return c;
  }
  SegHeadConfig seg_config() const {
    SegHeadConfig c;
    c.n_class = n_class;
    c.tap_channels = fusion_width;
    c.width = seg_width;
    c.factor = factor;
    return c;
  }
  FusionConfig fusion_runtime(uint64_t run_seed,
                              bool modulation_enabled = true) const {
    FusionConfig c;
    c.tau = tau;
    c.thermal_classes = thermal_classes;
    c.seed = run_seed;
    c.modulation_enabled = modulation_enabled;
    return c;
  }
};

inline void to_json(nlohmann::json& j, const StageConfig& s) {
  j = {{"optimizer", to_string(s.opt)},
       {"lr", s.lr},
       {"batch", s.batch},
       {"steps", s.steps},
       {"grad_clip", s.grad_clip}};
}
inline void from_json(const nlohmann::json& j, StageConfig& s) {
  if (j.contains("optimizer"))
    s.opt = optimizer_from_string(j.at("optimizer").get<std::string>());
  s.lr = j.value("lr", s.lr);
  s.batch = j.value("batch", s.batch);
  s.steps = j.value("steps", s.steps);
  s.grad_clip = j.value("grad_clip", s.grad_clip);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"seed", c.seed},
       {"t_train", c.t_train},
       {"t_infer", c.t_infer},
       {"beta_min", c.beta_min},
       {"beta_max", c.beta_max},
       {"tau", c.tau},
       {"image_size", c.image_size},
       {"latent_channels", c.latent_channels},
       {"factor", c.factor},
       {"n_class", c.n_class},
       {"thermal_classes", c.thermal_classes},
       {"ae_width", c.ae_width},
       {"psi_width", c.psi_width},
       {"phi_width", c.phi_width},
       {"fusion_width", c.fusion_width},
       {"seg_width", c.seg_width},
       {"temb_dim", c.temb_dim},
       {"degrade_severity", c.degrade_severity},
       {"ae", c.ae},
       {"psi", c.psi},
       {"phi", c.phi},
       {"fusion", c.fusion}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.seed = j.value("seed", c.seed);
  c.t_train = j.value("t_train", c.t_train);
  c.t_infer = j.value("t_infer", c.t_infer);
  c.beta_min = j.value("beta_min", c.beta_min);
  c.beta_max = j.value("beta_max", c.beta_max);
  c.tau = j.value("tau", c.tau);
  c.image_size = j.value("image_size", c.image_size);
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.factor = j.value("factor", c.factor);
  c.n_class = j.value("n_class", c.n_class);
  if (j.contains("thermal_classes"))
    c.thermal_classes = j.at("thermal_classes").get<std::set<int>>();
  c.ae_width = j.value("ae_width", c.ae_width);
  c.psi_width = j.value("psi_width", c.psi_width);
  c.phi_width = j.value("phi_width", c.phi_width);
  c.fusion_width = j.value("fusion_width", c.fusion_width);
  c.seg_width = j.value("seg_width", c.seg_width);
  c.temb_dim = j.value("temb_dim", c.temb_dim);
  c.degrade_severity = j.value("degrade_severity", c.degrade_severity);
  if (j.contains("ae")) j.at("ae").get_to(c.ae);
  if (j.contains("psi")) j.at("psi").get_to(c.psi);
  if (j.contains("phi")) j.at("phi").get_to(c.phi);
  if (j.contains("fusion")) j.at("fusion").get_to(c.fusion);
}

// ---------------------------------------------------------------------------
// Phase 1: the two streams, trained independently on their pair types.
// ---------------------------------------------------------------------------

struct Phase1Result {
  Denoiser psi, phi;
  real psi_mse_before = 0, psi_mse_after = 0;
  real phi_mse_before = 0, phi_mse_after = 0;
  std::vector<real> psi_history, phi_history;
};

inline void check_dataset(const std::vector<SceneSample>& data,
                          bool need_labels) {
  if (data.empty()) throw ConfigError("training: dataset is empty");
  for (const auto& s : data) {
    if (s.clean_vis.empty() || s.degraded_vis.empty())
      throw ConfigError("training: dataset lacks degraded/clean visible pairs");
    if (s.infrared.empty())
      throw ConfigError("training: dataset lacks infrared counterparts");
    if (need_labels && s.label.size() == 0)
      throw ConfigError("training: dataset lacks segmentation labels");
  }
}

inline Phase1Result phase1_train(const std::vector<SceneSample>& data,
                                 const Autoencoder& vis_ae,
                                 const Autoencoder& ir_ae,
                                 const NoiseSchedule& sched,
                                 const TrainConfig& cfg) {
  cfg.validate();
  check_dataset(data, /*need_labels=*/false);

  std::vector<std::pair<Tensor, Tensor>> psi_pairs, phi_pairs;
  for (const auto& s : data) {
    Tensor cond = vis_ae.encode(s.degraded_vis);
    psi_pairs.emplace_back(cond, vis_ae.encode(s.clean_vis));
    phi_pairs.emplace_back(std::move(cond),
                           ir_ae.encode(ir_to_rgb(s.infrared)));
  }

  Phase1Result r;
  Rng init_rng(Rng::derive(cfg.seed, 0x951));
  r.psi = Denoiser(cfg.psi_config(), init_rng);
  r.phi = Denoiser(cfg.phi_config(), init_rng);

  r.psi_mse_before = eval_stream_mse(r.psi, psi_pairs, sched, cfg.seed);
  r.phi_mse_before = eval_stream_mse(r.phi, phi_pairs, sched, cfg.seed);

  StreamTrainConfig psi_cfg{cfg.psi.lr, cfg.psi.steps, cfg.psi.batch,
                            Rng::derive(cfg.seed, 0x951a)};
  StreamTrainConfig phi_cfg{cfg.phi.lr, cfg.phi.steps, cfg.phi.batch,
                            Rng::derive(cfg.seed, 0x951b)};
  r.psi_history = train_stream_latents(r.psi, psi_pairs, sched, psi_cfg);
  r.phi_history = train_stream_latents(r.phi, phi_pairs, sched, phi_cfg);

  r.psi_mse_after = eval_stream_mse(r.psi, psi_pairs, sched, cfg.seed);
  r.phi_mse_after = eval_stream_mse(r.phi, phi_pairs, sched, cfg.seed);
  return r;
}

// ---------------------------------------------------------------------------
// Phase 2: freeze the streams, train the fusion network and the segmentation
// head through the gradient-gated reverse loop.
// ---------------------------------------------------------------------------

struct Phase2Options {
  bool modulation_enabled = true;
  bool use_seg_loss = true;    // dropped by the Model II ablation
  bool use_x0_inputs = true;   // dropped by the Model I ablation
};

struct Phase2StepLog {
  int epoch = 0;
  int sample = 0;
  int gate_t = 0;
  real visual = 0, seg = 0, total = 0;
  real w_mean = 0;
  real wr_mean_in_mask = -1;
};

struct Phase2Result {
  FusionNet fnet;
  SegHead seg;
  std::vector<Phase2StepLog> step_logs;
  std::vector<real> epoch_total, epoch_visual, epoch_seg, epoch_w_mean;
};

struct Phase2SampleOutcome {
  Var total;          // scalar loss at the gated step, ready for backward
  Var visual_total;
  Var seg_total;      // undefined when the seg loss is disabled
  FusionStepOutput gate;
  int gate_t = 0;
};

// Runs one sample's reverse loop from T down to the gated plan position.
// Every step before the gate runs untaped; only the gated step records
// gradients for the fusion network and the segmentation head.
inline Phase2SampleOutcome phase2_process_sample(
    const SceneSample& sample, const Autoencoder& vis_ae,
    const Autoencoder& ir_ae, const Denoiser& psi, const Denoiser& phi,
    const FusionNet& fnet, const SegHead& seg, const NoiseSchedule& sched,
    const TimestepPlan& plan, size_t gate_index, uint64_t sample_seed,
    const TrainConfig& cfg, const Phase2Options& opts) {
  if (gate_index >= plan.size())
    throw ParamError("phase2: gate index outside the plan");

  FusionModels models;  // non-owning view is unnecessary at desk scale
  models.vis_ae = vis_ae;
  models.ir_ae = ir_ae;
  models.psi = psi;
  models.phi = phi;
  models.fnet = fnet;
  models.seg = seg;

  FusionConfig fcfg =
      cfg.fusion_runtime(sample_seed, opts.modulation_enabled);

  Tensor cond;
  {
    NoGrad ng;
    cond = vis_ae.encode(sample.degraded_vis);
  }
  Rng rng(Rng::derive(sample_seed, 0x9e2));
  Tensor z_T = normal_tensor(rng, cond.c, cond.h, cond.w);
  Tensor z_s0 = normal_tensor(rng, cfg.n_class, sample.degraded_vis.h,
                              sample.degraded_vis.w);

  DiffusionStreamState psi_state =
      DiffusionStreamState::start(z_T, plan[0], cond);
  DiffusionStreamState phi_state = psi_state;
  Var z_f{Tensor(z_T)};
  Var seg_state{std::move(z_s0)};

  Phase2SampleOutcome out;
  for (size_t k = 0; k <= gate_index; ++k) {
    int t = plan[k];
    int t_next = plan.next_after(k);
    psi_state = reverse_step(psi_state, psi, sched, t_next);
    phi_state = reverse_step(phi_state, phi, sched, t_next);
    if (k < gate_index) {
      NoGrad ng;
      FusionStepOutput step = fusion_step(models, psi_state, phi_state, z_f,
                                          seg_state, t, sched, fcfg);
      seg_state = step.seg_next;
      z_f = ddim_step(step.x0_f, step.eps_f, t_next, sched);
      continue;
    }

    // Gated step: taped fusion/segmentation pass and the loss assembly.
    out.gate = fusion_step(models, psi_state, phi_state, z_f, seg_state, t,
                           sched, fcfg);
    out.gate_t = t;
    Var mag = vis_ae.decode(out.gate.x0_f);
    Tensor dec_psi, dec_phi;
    {
      NoGrad ng;
      dec_psi = vis_ae.decode(psi_state.x0_hat);
      dec_phi = ir_ae.decode(phi_state.x0_hat);
    }
    VisualLosses vl = visual_losses(mag, Var(dec_psi), Var(dec_phi));
    out.visual_total = vl.total;
    out.total = vl.total;
    if (opts.use_seg_loss) {
      out.seg_total = seg_loss(out.gate.seg_next, sample.label);
      out.total = add(out.total, out.seg_total);
    }
  }
  return out;
}

inline Phase2Result phase2_train(const std::vector<SceneSample>& data,
                                 const Autoencoder& vis_ae,
                                 const Autoencoder& ir_ae, const Denoiser& psi,
                                 const Denoiser& phi,
                                 const NoiseSchedule& sched,
                                 const TrainConfig& cfg,
                                 const Phase2Options& opts = {}) {
  cfg.validate();
  check_dataset(data, /*need_labels=*/true);

  // Freeze contract: the streams and autoencoders must not move. Parameter
  // handles are shared, so marking them non-trainable here also covers the
  // aliased copies used inside the loop.
  Autoencoder vis_frozen = vis_ae, ir_frozen = ir_ae;
  Denoiser psi_frozen = psi, phi_frozen = phi;
  NamedParams psi_named = psi_frozen.named_params();
  NamedParams phi_named = phi_frozen.named_params();
  set_requires_grad(psi_named, false);
  set_requires_grad(phi_named, false);
  NamedParams vis_named = vis_frozen.named_params();
  NamedParams ir_named = ir_frozen.named_params();
  set_requires_grad(vis_named, false);
  set_requires_grad(ir_named, false);
  for (const auto& [name, p] : psi_named)
    if (p->requires_grad())
      throw ContractError("phase2: stream parameters must be frozen");
  uint64_t psi_sum = param_checksum(psi_named);
  uint64_t phi_sum = param_checksum(phi_named);

  Phase2Result r;
  Rng init_rng(Rng::derive(cfg.seed, 0xf2));
  r.fnet = FusionNet(cfg.fusion_config(opts.use_x0_inputs), init_rng);
  r.seg = SegHead(cfg.seg_config(), init_rng);

  NamedParams trainables = r.fnet.named_params();
  NamedParams seg_named = r.seg.named_params();
  trainables.insert(trainables.end(), seg_named.begin(), seg_named.end());
  auto params = param_list(trainables);

  std::optional<Adam> adam;
  std::optional<Sgd> sgd;
  if (cfg.fusion.opt == OptimizerKind::adam)
    adam.emplace(cfg.fusion.lr);
  else
    sgd.emplace(cfg.fusion.lr);

  TimestepPlan plan = cfg.plan();
  const int epochs = cfg.fusion.steps;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    real ep_total = 0, ep_visual = 0, ep_seg = 0, ep_w = 0, ep_wr = 0;
    long wr_count = 0;
    for (size_t si = 0; si < data.size(); ++si) {
      uint64_t sample_seed =
          Rng::derive(cfg.seed, 0xf200 + uint64_t(epoch) * 10007 + si);
      Rng gate_rng(Rng::derive(sample_seed, 0x6a7e));
      size_t gate_index =
          size_t(gate_rng.uniform_int(0, int(plan.size()) - 1));

      zero_grads(params);
      Phase2SampleOutcome outcome = phase2_process_sample(
          data[si], vis_frozen, ir_frozen, psi_frozen, phi_frozen, r.fnet,
          r.seg, sched, plan, gate_index, sample_seed, cfg, opts);
      backward(outcome.total);
      if (cfg.fusion.grad_clip > 0)
        clip_grad_norm(params, cfg.fusion.grad_clip);
      if (adam)
        adam->step(params);
      else
        sgd->step(params);

      Phase2StepLog log;
      log.epoch = epoch;
      log.sample = int(si);
      log.gate_t = outcome.gate_t;
      log.visual = outcome.visual_total.val().v[0];
      log.seg = outcome.seg_total.defined() ? outcome.seg_total.val().v[0] : 0;
      log.total = outcome.total.val().v[0];
      log.w_mean = mean_of(outcome.gate.fwd.w.val());
      FusionStepRecord rec = make_step_record(
          outcome.gate_t, outcome.gate, Tensor(1, 1, 1), Tensor(1, 1, 1));
      log.wr_mean_in_mask = rec.wr_mean_in_mask;
      r.step_logs.push_back(log);

      ep_total += log.total;
      ep_visual += log.visual;
      ep_seg += log.seg;
      ep_w += log.w_mean;
      if (log.wr_mean_in_mask >= 0) {
        ep_wr += log.wr_mean_in_mask;
        ++wr_count;
      }
    }
    real n = real(data.size());
    r.epoch_total.push_back(ep_total / n);
    r.epoch_visual.push_back(ep_visual / n);
    r.epoch_seg.push_back(ep_seg / n);
    r.epoch_w_mean.push_back(ep_w / n);
  }

  if (param_checksum(psi_named) != psi_sum ||
      param_checksum(phi_named) != phi_sum)
    throw ContractError("phase2: frozen stream parameters were mutated");
  return r;
}

// ---------------------------------------------------------------------------
// Probe segmenter: a small stand-alone network retrained per image source,
// standing in for the full-scale downstream segmenter when scoring semantic
// quality of restored/fused outputs.
// ---------------------------------------------------------------------------

struct ProbeSegmenter {
  int n_class = 4;
  Conv2d c0, c1, c2;

  ProbeSegmenter() = default;
  ProbeSegmenter(int n_class_, int width, Rng& rng) : n_class(n_class_) {
    c0 = Conv2d(3, width, 3, 1, 1, rng);
    c1 = Conv2d(width, width, 3, 1, 1, rng);
    c2 = Conv2d(width, n_class_, 3, 1, 1, rng);
  }

  Var forward(const Var& img) const {
    Var h = silu(c0.forward(img));
    h = silu(c1.forward(h));
    return c2.forward(h);
  }

  NamedParams named_params() {
    NamedParams ps;
    c0.named_params("probe.c0", ps);
    c1.named_params("probe.c1", ps);
    c2.named_params("probe.c2", ps);
    return ps;
  }
};

inline ProbeSegmenter train_probe_segmenter(const std::vector<Tensor>& images,
                                            const std::vector<GridI>& labels,
                                            int n_class, uint64_t seed,
                                            int steps = 300, real lr = 2e-3) {
  if (images.empty() || images.size() != labels.size())
    throw ParamError("train_probe_segmenter: bad dataset");
  Rng rng(Rng::derive(seed, 0x9b0e));
  ProbeSegmenter probe(n_class, 12, rng);
  auto params = param_list(probe.named_params());
  Adam opt(lr);
  const int batch = 4;
  for (int step = 0; step < steps; ++step) {
    zero_grads(params);
    Var loss;
    for (int b = 0; b < batch; ++b) {
      int i = rng.uniform_int(0, int(images.size()) - 1);
      Var l = softmax_cross_entropy(probe.forward(Var(images[i])), labels[i]);
      loss = loss.defined() ? add(loss, l) : l;
    }
    loss = mul_scalar(loss, 1.0 / batch);
    backward(loss);
    opt.step(params);
  }
  return probe;
}

inline real probe_miou(const ProbeSegmenter& probe,
                       const std::vector<Tensor>& images,
                       const std::vector<GridI>& labels, int n_class) {
  NoGrad ng;
  real acc = 0;
  for (size_t i = 0; i < images.size(); ++i) {
    GridI pred = argmax_classes(probe.forward(Var(images[i])).val());
    acc += miou(pred, labels[i], n_class).second;
  }
  return acc / real(images.size());
}

// ---------------------------------------------------------------------------
// Ablation harness and the tau sweep.
// ---------------------------------------------------------------------------

enum class AblationVariant {
  model_i = 1,    // drop the clean-estimate inputs from the weight network
  model_ii = 2,   // drop the segmentation loss (mask plumbing stays)
  model_iii = 3,  // average decoded stream outputs instead of fusing noise
  model_iv = 4,   // restoration stream only
  full = 0,
};

inline const char* to_string(AblationVariant v) {
  switch (v) {
    case AblationVariant::model_i: return "model_i";
    case AblationVariant::model_ii: return "model_ii";
    case AblationVariant::model_iii: return "model_iii";
    case AblationVariant::model_iv: return "model_iv";
    default: return "full";
  }
}

struct VariantOutputs {
  std::vector<Tensor> images;  // fused/enhanced output per input sample
  std::vector<GridI> gammas;   // head predictions (empty for III/IV)
};

struct AblationReport {
  std::string variant;
  MetricReport visual;      // averaged over the evaluation set
  real head_miou = -1.0;    // segmentation head accuracy, when a head exists
  real probe_miou = -1.0;   // retrained probe segmenter accuracy
  VariantOutputs test_outputs;
};

// One trajectory start per evaluation run, shared by every image: outputs of
// a run then form a consistent domain for downstream scoring, and variants
// stay comparable against each other.
inline Tensor run_z_T(const TrainConfig& cfg, int latent_h, int latent_w) {
  Rng rng(Rng::derive(cfg.seed, 0x27a0));
  return normal_tensor(rng, cfg.latent_channels, latent_h, latent_w);
}

inline VariantOutputs variant_outputs(AblationVariant v,
                                      const std::vector<SceneSample>& samples,
                                      const FusionModels& models,
                                      const NoiseSchedule& sched,
                                      const TimestepPlan& plan,
                                      const TrainConfig& cfg) {
  VariantOutputs out;
  const int lh = cfg.image_size / cfg.factor, lw = lh;
  Tensor z_T = run_z_T(cfg, lh, lw);
  for (size_t i = 0; i < samples.size(); ++i) {
    const Tensor& input = samples[i].degraded_vis;
    if (v == AblationVariant::model_iii) {
      Tensor cond = models.vis_ae.encode(input);
      Tensor i_psi =
          sample_full(cond, z_T, models.psi, models.vis_ae, sched, plan);
      Tensor i_phi =
          sample_full(cond, z_T, models.phi, models.ir_ae, sched, plan);
      Tensor avg(3, i_psi.h, i_psi.w);
      for (size_t j = 0; j < avg.v.size(); ++j)
        avg.v[j] = 0.5 * (i_psi.v[j] + i_phi.v[j]);
      out.images.push_back(std::move(avg));
    } else if (v == AblationVariant::model_iv) {
      Tensor cond = models.vis_ae.encode(input);
      out.images.push_back(
          sample_full(cond, z_T, models.psi, models.vis_ae, sched, plan));
    } else {
      FusionConfig fcfg = cfg.fusion_runtime(Rng::derive(cfg.seed, 0xf0a));
      FusionResult r =
          run_fusion_sampling(input, z_T, models, sched, plan, fcfg);
      out.images.push_back(std::move(r.mag_img));
      out.gammas.push_back(std::move(r.gamma));
    }
  }
  return out;
}

inline MetricReport average_fusion_metrics(
    const std::vector<Tensor>& outputs,
    const std::vector<SceneSample>& samples) {
  MetricReport acc;
  for (size_t i = 0; i < outputs.size(); ++i) {
    MetricReport r = fusion_metrics(outputs[i], samples[i].clean_vis,
                                    ir_to_rgb(samples[i].infrared));
    acc.en += r.en;
    acc.ssim += r.ssim;
    acc.mi += r.mi;
    acc.qabf += r.qabf;
    acc.psnr += r.psnr;
  }
  real n = real(outputs.size());
  acc.en /= n;
  acc.ssim /= n;
  acc.mi /= n;
  acc.qabf /= n;
  acc.psnr /= n;
  return acc;
}

// Trains the variant (when it has trainable parts), runs it on the test set,
// and scores visual metrics plus head/probe segmentation accuracy.
inline AblationReport run_ablation(AblationVariant v,
                                   const std::vector<SceneSample>& train_set,
                                   const std::vector<SceneSample>& test_set,
                                   const Autoencoder& vis_ae,
                                   const Autoencoder& ir_ae,
                                   const Denoiser& psi, const Denoiser& phi,
                                   const NoiseSchedule& sched,
                                   const TrainConfig& cfg) {
  AblationReport report;
  report.variant = to_string(v);

  FusionModels models;
  models.vis_ae = vis_ae;
  models.ir_ae = ir_ae;
  models.psi = psi;
  models.phi = phi;

  bool needs_phase2 = v == AblationVariant::full ||
                      v == AblationVariant::model_i ||
                      v == AblationVariant::model_ii;
  if (needs_phase2) {
    Phase2Options opts;
    opts.use_x0_inputs = v != AblationVariant::model_i;
    opts.use_seg_loss = v != AblationVariant::model_ii;
    Phase2Result p2 =
        phase2_train(train_set, vis_ae, ir_ae, psi, phi, sched, cfg, opts);
    models.fnet = p2.fnet;
    models.seg = p2.seg;
  } else {
    // Untrained placeholders; variants III/IV never invoke them.
    Rng rng(Rng::derive(cfg.seed, 0xab));
    models.fnet = FusionNet(cfg.fusion_config(), rng);
    models.seg = SegHead(cfg.seg_config(), rng);
  }

  TimestepPlan plan = cfg.plan();
  report.test_outputs = variant_outputs(v, test_set, models, sched, plan, cfg);
  report.visual = average_fusion_metrics(report.test_outputs.images, test_set);

  if (!report.test_outputs.gammas.empty()) {
    real acc = 0;
    for (size_t i = 0; i < test_set.size(); ++i)
      acc += miou(report.test_outputs.gammas[i], test_set[i].label,
                  cfg.n_class)
                 .second;
    report.head_miou = acc / real(test_set.size());
  }

  // Probe segmenter retrained on this variant's train-set outputs.
  VariantOutputs train_outputs =
      variant_outputs(v, train_set, models, sched, plan, cfg);
  std::vector<GridI> train_labels, test_labels;
  for (const auto& s : train_set) train_labels.push_back(s.label);
  for (const auto& s : test_set) test_labels.push_back(s.label);
  ProbeSegmenter probe = train_probe_segmenter(
      train_outputs.images, train_labels, cfg.n_class, cfg.seed);
  report.probe_miou = probe_miou(probe, report.test_outputs.images,
                                 test_labels, cfg.n_class);
  return report;
}

struct TauSweepRow {
  real tau = 0;
  MetricReport visual;
  real head_miou = 0;
};

// Inference-only sweep over the modulation cap.
inline std::vector<TauSweepRow> sweep_tau(const std::vector<real>& taus,
                                          const std::vector<SceneSample>& test_set,
                                          const FusionModels& models,
                                          const NoiseSchedule& sched,
                                          const TimestepPlan& plan,
                                          const TrainConfig& cfg) {
  if (taus.empty()) throw ParamError("sweep_tau: no tau values");
  std::vector<TauSweepRow> rows;
  const int lh = cfg.image_size / cfg.factor;
  for (real tau : taus) {
    if (!(tau >= 0.0 && tau <= 1.0))
      throw ParamError("sweep_tau: tau values must lie in [0,1]");
    TauSweepRow row;
    row.tau = tau;
    std::vector<Tensor> outputs;
    real head_acc = 0;
    Tensor z_T = run_z_T(cfg, lh, lh);
    for (size_t i = 0; i < test_set.size(); ++i) {
      FusionConfig fcfg = cfg.fusion_runtime(Rng::derive(cfg.seed, 0xf0a));
      fcfg.tau = tau;
      FusionResult r = run_fusion_sampling(test_set[i].degraded_vis, z_T,
                                           models, sched, plan, fcfg);
      head_acc += miou(r.gamma, test_set[i].label, cfg.n_class).second;
      outputs.push_back(std::move(r.mag_img));
    }
    row.visual = average_fusion_metrics(outputs, test_set);
    row.head_miou = head_acc / real(test_set.size());
    rows.push_back(row);
  }
  return rows;
}

}  // namespace sifuse
