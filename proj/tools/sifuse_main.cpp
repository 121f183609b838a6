// Command-line front end: data synthesis, the two training phases, fusion
// inference, evaluation, ablations, and the tau sweep.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "sifuse/sifuse.hpp"

namespace fs = std::filesystem;
using namespace sifuse;
using nlohmann::json;

namespace {

// Shared options with flag > config file > built-in default precedence.
struct CommonOpts {
  std::string config_path;
  uint64_t seed = 0;
  double tau = 0;
  int t_train = 0, t_infer = 0, size = 0;
  double severity = -1;
  int ae_steps = -1, psi_steps = -1, phi_steps = -1, fusion_epochs = -1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--seed", seed, "master RNG seed");
    cmd->add_option("--tau", tau, "radiation modulation cap in [0,1]");
    cmd->add_option("--t-train", t_train, "training timesteps");
    cmd->add_option("--t-infer", t_infer, "inference plan length");
    cmd->add_option("--size", size, "image size in pixels");
    cmd->add_option("--severity", severity, "degradation severity in [0,1]");
    cmd->add_option("--ae-steps", ae_steps, "autoencoder training steps");
    cmd->add_option("--psi-steps", psi_steps, "restoration stream steps");
    cmd->add_option("--phi-steps", phi_steps, "translation stream steps");
    cmd->add_option("--fusion-epochs", fusion_epochs, "fusion stage epochs");
  }

  std::pair<TrainConfig, json> resolve(CLI::App* cmd) const {
    TrainConfig cfg = TrainConfig::smoke();
    json prov = json::object();
    json full = cfg;
    for (auto& [k, v] : full.items()) prov[k] = "default";

    if (!config_path.empty()) {
      std::ifstream f(config_path);
      if (!f) throw ConfigError("cannot open config file " + config_path);
      json file_cfg;
      try {
        f >> file_cfg;
      } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config file: ") + e.what());
      }
      file_cfg.get_to(cfg);
      for (auto& [k, v] : file_cfg.items()) prov[k] = "file";
    }

    auto flag = [&](const char* name, auto&& apply, const char* key) {
      if (cmd->count(name)) {
        apply();
        prov[key] = "flag";
      }
    };
    flag("--seed", [&] { cfg.seed = seed; }, "seed");
    flag("--tau", [&] { cfg.tau = tau; }, "tau");
    flag("--t-train", [&] { cfg.t_train = t_train; }, "t_train");
    flag("--t-infer", [&] { cfg.t_infer = t_infer; }, "t_infer");
    flag("--size", [&] { cfg.image_size = size; }, "image_size");
    flag("--severity", [&] { cfg.degrade_severity = severity; },
         "degrade_severity");
    flag("--ae-steps", [&] { cfg.ae.steps = ae_steps; }, "ae");
    flag("--psi-steps", [&] { cfg.psi.steps = psi_steps; }, "psi");
    flag("--phi-steps", [&] { cfg.phi.steps = phi_steps; }, "phi");
    flag("--fusion-epochs", [&] { cfg.fusion.steps = fusion_epochs; },
         "fusion");
    cfg.validate();
    return {cfg, prov};
  }
};

RunManifest make_manifest(const std::string& command, const TrainConfig& cfg,
                          const json& prov,
                          std::vector<std::string> artifacts) {
  RunManifest m;
  m.command = command;
  m.resolved_config = cfg;
  m.config_provenance = prov;
  m.seed = cfg.seed;
  m.artifacts = std::move(artifacts);
  return m;
}

void write_jsonl(const std::string& path, const std::vector<json>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  for (const auto& r : rows) f << r.dump() << "\n";
}

json metric_json(const MetricReport& r) {
  return {{"en", r.en},
          {"ssim", r.ssim},
          {"mi", r.mi},
          {"qabf", r.qabf},
          {"psnr", r.psnr}};
}

std::vector<json> history_rows(const std::vector<real>& h) {
  std::vector<json> rows;
  rows.reserve(h.size());
  for (size_t i = 0; i < h.size(); ++i)
    rows.push_back({{"step", i}, {"loss", h[i]}});
  return rows;
}

// ---------------------------------------------------------------------------
// Subcommand implementations.
// ---------------------------------------------------------------------------

int cmd_make_synthetic(const CommonOpts& opts, CLI::App* cmd, int n,
                       const std::string& out) {
  auto [cfg, prov] = opts.resolve(cmd);
  std::string dir = resolve_out_dir(out);
  write_manifest(dir, make_manifest("make-synthetic", cfg, prov,
                                    {"vis/", "ir/", "labels/", "degraded/"}));
  auto samples = make_dataset(n, cfg.image_size, cfg.seed, all_degradations(),
                              cfg.degrade_severity);
  write_dataset_dir(samples, dir, cfg.n_class);
  std::cout << "wrote " << samples.size() << " triplets to " << dir << "\n";
  return 0;
}

int cmd_train_ae(const CommonOpts& opts, CLI::App* cmd, const std::string& data,
                 const std::string& out) {
  auto [cfg, prov] = opts.resolve(cmd);
  std::string dir = resolve_out_dir(out);
  write_manifest(dir, make_manifest("train-ae", cfg, prov,
                                    {"vis_ae.ckpt", "ir_ae.ckpt",
                                     "ae_loss_vis.jsonl", "ae_loss_ir.jsonl"}));
  auto samples = load_dataset_dir(data);
  if (samples.empty()) throw ConfigError("train-ae: dataset is empty");

  std::vector<Tensor> vis_imgs, ir_imgs;
  for (const auto& s : samples) {
    vis_imgs.push_back(s.clean_vis);
    vis_imgs.push_back(s.degraded_vis);
    ir_imgs.push_back(ir_to_rgb(s.infrared));
  }
  Rng rng(Rng::derive(cfg.seed, 1));
  Autoencoder vis_ae(cfg.ae_config(), rng), ir_ae(cfg.ae_config(), rng);
  AeTrainConfig acfg{cfg.ae.lr, cfg.ae.steps, cfg.ae.batch, cfg.seed};
  auto h_vis = train_autoencoder(vis_ae, vis_imgs, acfg);
  auto h_ir = train_autoencoder(ir_ae, ir_imgs, acfg);
  save_autoencoder(ckpt_path(dir, "vis_ae"), vis_ae, cfg.ae.steps);
  save_autoencoder(ckpt_path(dir, "ir_ae"), ir_ae, cfg.ae.steps);
  write_jsonl((fs::path(dir) / "ae_loss_vis.jsonl").string(),
              history_rows(h_vis));
  write_jsonl((fs::path(dir) / "ae_loss_ir.jsonl").string(),
              history_rows(h_ir));
  std::cout << "autoencoders trained: vis loss " << h_vis.back() << ", ir loss "
            << h_ir.back() << "\n";
  return 0;
}

int cmd_train_stream(const CommonOpts& opts, CLI::App* cmd,
                     const std::string& role_str, const std::string& data,
                     const std::string& ae_dir, const std::string& out) {
  auto [cfg, prov] = opts.resolve(cmd);
  StreamRole role = stream_role_from_string(role_str);
  const char* stage = role == StreamRole::restoration ? "psi" : "phi";
  std::string dir = resolve_out_dir(out);
  write_manifest(dir, make_manifest("train-stream", cfg, prov,
                                    {std::string(stage) + ".ckpt",
                                     std::string(stage) + "_loss.jsonl"}));
  auto samples = load_dataset_dir(data);
  if (samples.empty()) throw ConfigError("train-stream: dataset is empty");

  Autoencoder vis_ae = load_autoencoder(ckpt_path(ae_dir, "vis_ae"));
  Autoencoder ir_ae = load_autoencoder(ckpt_path(ae_dir, "ir_ae"));
  NoiseSchedule sched = cfg.schedule();

  std::vector<std::pair<Tensor, Tensor>> pairs;
  for (const auto& s : samples) {
    if (role == StreamRole::restoration)
      pairs.emplace_back(s.degraded_vis, s.clean_vis);
    else
      pairs.emplace_back(s.degraded_vis, ir_to_rgb(s.infrared));
  }
  Rng rng(Rng::derive(cfg.seed, role == StreamRole::restoration ? 2 : 3));
  Denoiser net(role == StreamRole::restoration ? cfg.psi_config()
                                               : cfg.phi_config(),
               rng);
  const StageConfig& sc = role == StreamRole::restoration ? cfg.psi : cfg.phi;
  StreamTrainConfig tcfg{sc.lr, sc.steps, sc.batch,
                         Rng::derive(cfg.seed, 0x57)};
  const Autoencoder& target_ae =
      role == StreamRole::restoration ? vis_ae : ir_ae;
  auto history = train_stream(net, pairs, vis_ae, target_ae, sched, tcfg);
  save_denoiser(ckpt_path(dir, stage), net, stage, sc.steps);
  write_jsonl((fs::path(dir) / (std::string(stage) + "_loss.jsonl")).string(),
              history_rows(history));
  std::cout << stage << " trained: final loss " << history.back() << "\n";
  return 0;
}

int cmd_train_fusion(const CommonOpts& opts, CLI::App* cmd,
                     const std::string& data, const std::string& ckpt_dir,
                     const std::string& out, bool no_modulation) {
  auto [cfg, prov] = opts.resolve(cmd);
  std::string dir = resolve_out_dir(out);
  write_manifest(dir, make_manifest("train-fusion", cfg, prov,
                                    {"fusion.ckpt", "fusion_loss.jsonl",
                                     "fusion_epochs.json"}));
  auto samples = load_dataset_dir(data);
  if (samples.empty()) throw ConfigError("train-fusion: dataset is empty");

  Autoencoder vis_ae = load_autoencoder(ckpt_path(ckpt_dir, "vis_ae"));
  Autoencoder ir_ae = load_autoencoder(ckpt_path(ckpt_dir, "ir_ae"));
  Denoiser psi = load_denoiser(ckpt_path(ckpt_dir, "psi"), "psi");
  Denoiser phi = load_denoiser(ckpt_path(ckpt_dir, "phi"), "phi");
  NoiseSchedule sched = cfg.schedule();

  Phase2Options popts;
  popts.modulation_enabled = !no_modulation;
  Phase2Result r =
      phase2_train(samples, vis_ae, ir_ae, psi, phi, sched, cfg, popts);
  save_fusion_stage(ckpt_path(dir, "fusion"), r.fnet, r.seg, cfg.fusion.steps);

  std::vector<json> rows;
  for (const auto& log : r.step_logs)
    rows.push_back({{"epoch", log.epoch},
                    {"sample", log.sample},
                    {"gate_t", log.gate_t},
                    {"visual", log.visual},
                    {"seg", log.seg},
                    {"total", log.total},
                    {"w_mean", log.w_mean},
                    {"wr_mean_in_mask", log.wr_mean_in_mask}});
  write_jsonl((fs::path(dir) / "fusion_loss.jsonl").string(), rows);
  json epochs = {{"total", r.epoch_total},
                 {"visual", r.epoch_visual},
                 {"seg", r.epoch_seg},
                 {"w_mean", r.epoch_w_mean}};
  std::ofstream((fs::path(dir) / "fusion_epochs.json").string())
      << epochs.dump(2) << "\n";
  std::cout << "fusion stage trained: epoch loss " << r.epoch_total.front()
            << " -> " << r.epoch_total.back() << "\n";
  return 0;
}

int cmd_infer(const CommonOpts& opts, CLI::App* cmd, const std::string& input,
              const std::string& out, const std::string& ckpt_dir,
              std::string trace_path, const std::string& gamma_path) {
  auto [cfg, prov] = opts.resolve(cmd);
  fs::path out_file(resolve_out_dir(out));
  if (trace_path.empty()) trace_path = out_file.string() + ".trace.jsonl";
  std::string dir = out_file.has_parent_path() ? out_file.parent_path().string()
                                               : ".";
  write_manifest(dir, make_manifest("infer", cfg, prov,
                                    {out_file.filename().string(), trace_path}));

  FusionModels models = load_models(ckpt_dir);
  NoiseSchedule sched = cfg.schedule();
  TimestepPlan plan = cfg.plan();
  Tensor img = read_png_rgb(input);
  const int fct = models.vis_ae.cfg.factor;
  Rng zrng(Rng::derive(cfg.seed, 0x27a0));
  Tensor z_T = normal_tensor(zrng, models.vis_ae.cfg.latent_channels,
                             img.h / fct, img.w / fct);
  FusionConfig fcfg = cfg.fusion_runtime(cfg.seed);
  FusionResult r = run_fusion_sampling(img, z_T, models, sched, plan, fcfg);

  write_png_rgb(out_file.string(), r.mag_img);
  if (!gamma_path.empty())
    write_png_indexed(resolve_out_dir(gamma_path), r.gamma,
                      models.seg.cfg.n_class);
  std::vector<json> rows;
  for (const auto& rec : r.trace)
    rows.push_back({{"t", rec.t},
                    {"w_mean", rec.w_mean},
                    {"w_min", rec.w_min},
                    {"w_max", rec.w_max},
                    {"wr_mean_in_mask", rec.wr_mean_in_mask},
                    {"mask_fraction", rec.mask_fraction},
                    {"x0_psi_norm", rec.x0_psi_norm},
                    {"x0_phi_norm", rec.x0_phi_norm},
                    {"x0_f_norm", rec.x0_f_norm}});
  write_jsonl(trace_path, rows);
  std::cout << "fused image written to " << out_file.string() << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts, CLI::App* cmd, const std::string& data,
             const std::string& ckpt_dir, const std::string& out,
             bool write_csv) {
  auto [cfg, prov] = opts.resolve(cmd);
  std::string dir = resolve_out_dir(out);
  write_manifest(dir, make_manifest("eval", cfg, prov,
                                    {"eval.json", "eval.csv", "mag/"}));
  auto samples = load_dataset_dir(data);
  if (samples.empty()) throw ConfigError("eval: dataset is empty");

  FusionModels models = load_models(ckpt_dir);
  NoiseSchedule sched = cfg.schedule();
  TimestepPlan plan = cfg.plan();
  fs::create_directories(fs::path(dir) / "mag");

  const int lh = cfg.image_size / cfg.factor;
  Tensor z_T = run_z_T(cfg, lh, lh);
  json per_image = json::array();
  MetricReport agg;
  real head_acc = 0, psnr_deg_acc = 0;
  for (size_t i = 0; i < samples.size(); ++i) {
    FusionConfig fcfg = cfg.fusion_runtime(Rng::derive(cfg.seed, 0xf0a));
    FusionResult r = run_fusion_sampling(samples[i].degraded_vis, z_T, models,
                                         sched, plan, fcfg);
    Tensor ir_rgb = ir_to_rgb(samples[i].infrared);
    MetricReport m = fusion_metrics(r.mag_img, samples[i].clean_vis, ir_rgb);
    real head = miou(r.gamma, samples[i].label, cfg.n_class).second;
    real psnr_deg = psnr(samples[i].degraded_vis, samples[i].clean_vis);
    char name[32];
    std::snprintf(name, sizeof(name), "%05zu.png", i);
    write_png_rgb((fs::path(dir) / "mag" / name).string(), r.mag_img);
    per_image.push_back({{"index", i},
                         {"metrics", metric_json(m)},
                         {"head_miou", head},
                         {"psnr_degraded", psnr_deg}});
    agg.en += m.en;
    agg.ssim += m.ssim;
    agg.mi += m.mi;
    agg.qabf += m.qabf;
    agg.psnr += m.psnr;
    head_acc += head;
    psnr_deg_acc += psnr_deg;
  }
  real n = real(samples.size());
  agg.en /= n;
  agg.ssim /= n;
  agg.mi /= n;
  agg.qabf /= n;
  agg.psnr /= n;

  json report = {{"aggregate", metric_json(agg)},
                 {"aggregate_head_miou", head_acc / n},
                 {"aggregate_psnr_degraded", psnr_deg_acc / n},
                 {"per_image", per_image}};
  std::ofstream((fs::path(dir) / "eval.json").string()) << report.dump(2)
                                                        << "\n";
  if (write_csv) {
    std::ofstream csv((fs::path(dir) / "eval.csv").string());
    csv << "index,en,ssim,mi,qabf,psnr,head_miou\n";
    for (const auto& row : per_image)
      csv << row["index"] << "," << row["metrics"]["en"] << ","
          << row["metrics"]["ssim"] << "," << row["metrics"]["mi"] << ","
          << row["metrics"]["qabf"] << "," << row["metrics"]["psnr"] << ","
          << row["head_miou"] << "\n";
  }
  std::cout << "eval aggregate: EN " << agg.en << " SSIM " << agg.ssim
            << " MI " << agg.mi << " Qabf " << agg.qabf << " PSNR " << agg.psnr
            << " head mIoU " << head_acc / n << "\n";
  return 0;
}

int cmd_ablate(const CommonOpts& opts, CLI::App* cmd, int variant,
               const std::string& data, const std::string& test_data,
               const std::string& ckpt_dir, const std::string& out) {
  auto [cfg, prov] = opts.resolve(cmd);
  if (variant < 1 || variant > 4)
    throw ConfigError("ablate: variant must be in {1,2,3,4}");
  std::string dir = resolve_out_dir(out);
  write_manifest(dir, make_manifest("ablate", cfg, prov,
                                    {"report.json", "outputs/"}));

  std::vector<SceneSample> train_set =
      data.empty() ? make_dataset(16, cfg.image_size, cfg.seed,
                                  all_degradations(), cfg.degrade_severity)
                   : load_dataset_dir(data);
  std::vector<SceneSample> test_set =
      test_data.empty()
          ? make_dataset(8, cfg.image_size, Rng::derive(cfg.seed, 0x7e57),
                         all_degradations(), cfg.degrade_severity)
          : load_dataset_dir(test_data);

  Autoencoder vis_ae = load_autoencoder(ckpt_path(ckpt_dir, "vis_ae"));
  Autoencoder ir_ae = load_autoencoder(ckpt_path(ckpt_dir, "ir_ae"));
  Denoiser psi = load_denoiser(ckpt_path(ckpt_dir, "psi"), "psi");
  Denoiser phi = load_denoiser(ckpt_path(ckpt_dir, "phi"), "phi");
  NoiseSchedule sched = cfg.schedule();

  AblationReport r =
      run_ablation(AblationVariant(variant), train_set, test_set, vis_ae,
                   ir_ae, psi, phi, sched, cfg);

  fs::create_directories(fs::path(dir) / "outputs");
  for (size_t i = 0; i < r.test_outputs.images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%05zu.png", i);
    write_png_rgb((fs::path(dir) / "outputs" / name).string(),
                  r.test_outputs.images[i]);
  }
  json report = {{"variant", r.variant},
                 {"visual", metric_json(r.visual)},
                 {"head_miou", r.head_miou},
                 {"probe_miou", r.probe_miou}};
  std::ofstream((fs::path(dir) / "report.json").string()) << report.dump(2)
                                                          << "\n";
  std::cout << "ablation " << r.variant << ": EN " << r.visual.en << " PSNR "
            << r.visual.psnr << " probe mIoU " << r.probe_miou << "\n";
  return 0;
}

int cmd_sweep_tau(const CommonOpts& opts, CLI::App* cmd,
                  const std::string& values, const std::string& data,
                  const std::string& ckpt_dir, const std::string& out) {
  auto [cfg, prov] = opts.resolve(cmd);
  std::vector<real> taus;
  std::stringstream ss(values);
  std::string item;
  while (std::getline(ss, item, ',')) taus.push_back(std::stod(item));
  if (taus.empty()) throw ConfigError("sweep-tau: no values given");

  std::string dir = resolve_out_dir(out);
  write_manifest(dir, make_manifest("sweep-tau", cfg, prov,
                                    {"sweep.json", "sweep.csv"}));
  std::vector<SceneSample> test_set =
      data.empty() ? make_dataset(8, cfg.image_size,
                                  Rng::derive(cfg.seed, 0x7e57),
                                  all_degradations(), cfg.degrade_severity)
                   : load_dataset_dir(data);

  FusionModels models = load_models(ckpt_dir);
  NoiseSchedule sched = cfg.schedule();
  TimestepPlan plan = cfg.plan();
  auto rows = sweep_tau(taus, test_set, models, sched, plan, cfg);

  json jrows = json::array();
  std::ofstream csv((fs::path(dir) / "sweep.csv").string());
  csv << "tau,en,ssim,mi,qabf,psnr,head_miou\n";
  for (const auto& row : rows) {
    jrows.push_back({{"tau", row.tau},
                     {"visual", metric_json(row.visual)},
                     {"head_miou", row.head_miou}});
    csv << row.tau << "," << row.visual.en << "," << row.visual.ssim << ","
        << row.visual.mi << "," << row.visual.qabf << "," << row.visual.psnr
        << "," << row.head_miou << "\n";
    std::cout << "tau " << row.tau << ": EN " << row.visual.en << " PSNR "
              << row.visual.psnr << " head mIoU " << row.head_miou << "\n";
  }
  std::ofstream((fs::path(dir) / "sweep.json").string()) << jrows.dump(2)
                                                         << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"single-image fusion: diffusion-based restoration and "
               "visible-to-infrared translation fused in noise space"};
  app.require_subcommand(1);

  CommonOpts opts;

  // make-synthetic
  int n = 4;
  std::string out_dir, data_dir, test_dir, ckpt_dir, ae_dir;
  auto* mk = app.add_subcommand("make-synthetic",
                                "generate aligned synthetic scene triplets");
  mk->add_option("--n", n, "number of scenes")->required();
  mk->add_option("--out", out_dir, "output dataset directory")->required();
  opts.attach(mk);

  // train-ae
  auto* tae = app.add_subcommand("train-ae",
                                 "train visible and infrared autoencoders");
  tae->add_option("--data", data_dir, "dataset directory")->required();
  tae->add_option("--out", out_dir, "checkpoint output directory")->required();
  opts.attach(tae);

  // train-stream
  std::string role;
  auto* ts = app.add_subcommand("train-stream",
                                "train one conditional diffusion stream");
  ts->add_option("--role", role, "restoration|translation")->required();
  ts->add_option("--data", data_dir, "dataset directory")->required();
  ts->add_option("--ae-dir", ae_dir, "directory with autoencoder checkpoints")
      ->required();
  ts->add_option("--out", out_dir, "checkpoint output directory")->required();
  opts.attach(ts);

  // train-fusion
  bool no_modulation = false;
  auto* tf = app.add_subcommand(
      "train-fusion", "train the fusion network and segmentation head");
  tf->add_option("--data", data_dir, "dataset directory")->required();
  tf->add_option("--ckpt-dir", ckpt_dir, "phase-1 checkpoint directory")
      ->required();
  tf->add_option("--out", out_dir, "checkpoint output directory")->required();
  tf->add_flag("--no-modulation", no_modulation,
               "disable the radiation-mask weight cap");
  opts.attach(tf);

  // infer
  std::string input, out_file, trace_path, gamma_path;
  auto* inf = app.add_subcommand("infer", "fuse a single degraded image");
  inf->add_option("--input", input, "input PNG")->required();
  inf->add_option("--out", out_file, "output PNG")->required();
  inf->add_option("--ckpt-dir", ckpt_dir, "checkpoint directory")->required();
  inf->add_option("--trace", trace_path, "trace JSONL path");
  inf->add_option("--gamma", gamma_path, "segmentation map PNG path");
  opts.attach(inf);

  // eval
  bool csv = true;
  auto* ev = app.add_subcommand("eval", "run inference and score metrics");
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--ckpt-dir", ckpt_dir, "checkpoint directory")->required();
  ev->add_option("--out", out_dir, "report output directory")->required();
  ev->add_flag("--csv,!--no-csv", csv, "also write CSV (default on)");
  opts.attach(ev);

  // ablate
  int variant = 1;
  auto* ab = app.add_subcommand("ablate", "run one ablation variant");
  ab->add_option("--variant", variant, "1=no-x0 2=no-seg 3=post-hoc 4=psi-only")
      ->required();
  ab->add_option("--data", data_dir, "training dataset directory");
  ab->add_option("--test", test_dir, "test dataset directory");
  ab->add_option("--ckpt-dir", ckpt_dir, "phase-1 checkpoint directory")
      ->required();
  ab->add_option("--out", out_dir, "report output directory")->required();
  opts.attach(ab);

  // sweep-tau
  std::string values = "0,0.2,0.4,0.6,0.8";
  auto* sw = app.add_subcommand("sweep-tau",
                                "evaluate a grid of modulation caps");
  sw->add_option("--values", values, "comma-separated tau grid");
  sw->add_option("--data", data_dir, "test dataset directory");
  sw->add_option("--ckpt-dir", ckpt_dir, "full checkpoint directory")
      ->required();
  sw->add_option("--out", out_dir, "report output directory")->required();
  opts.attach(sw);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help() << "\n";
    return 2;
  }

  try {
    if (mk->parsed()) return cmd_make_synthetic(opts, mk, n, out_dir);
    if (tae->parsed()) return cmd_train_ae(opts, tae, data_dir, out_dir);
    if (ts->parsed())
      return cmd_train_stream(opts, ts, role, data_dir, ae_dir, out_dir);
    if (tf->parsed())
      return cmd_train_fusion(opts, tf, data_dir, ckpt_dir, out_dir,
                              no_modulation);
    if (inf->parsed())
      return cmd_infer(opts, inf, input, out_file, ckpt_dir, trace_path,
                       gamma_path);
    if (ev->parsed()) return cmd_eval(opts, ev, data_dir, ckpt_dir, out_dir, csv);
    if (ab->parsed())
      return cmd_ablate(opts, ab, variant, data_dir, test_dir, ckpt_dir,
                        out_dir);
    if (sw->parsed())
      return cmd_sweep_tau(opts, sw, values, data_dir, ckpt_dir, out_dir);
  } catch (const std::exception& e) {
    json err = {{"error", e.what()}, {"type", "stage_failure"}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 2;
}
