#include <catch2/catch_amalgamated.hpp>

#include "sifuse/training.hpp"

using namespace sifuse;

namespace {

// Trimmed configuration for fast unit runs: 16x16 scenes, short plans.
TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.image_size = 16;
  cfg.t_infer = 8;
  cfg.ae_width = 8;
  cfg.psi_width = 8;
  cfg.phi_width = 12;
  cfg.fusion_width = 8;
  cfg.seg_width = 8;
  cfg.psi.steps = 60;
  cfg.phi.steps = 60;
  cfg.fusion.steps = 2;
  cfg.seed = 11;
  return cfg;
}

struct TinyWorld {
  TrainConfig cfg = tiny_config();
  NoiseSchedule sched;
  std::vector<SceneSample> data;
  Autoencoder vis_ae, ir_ae;

  TinyWorld() {
    sched = cfg.schedule();
    data = make_dataset(3, cfg.image_size, 5, all_degradations(),
                        cfg.degrade_severity);
    Rng rng(2);
    vis_ae = Autoencoder(cfg.ae_config(), rng);
    ir_ae = Autoencoder(cfg.ae_config(), rng);
  }
};

}  // namespace

TEST_CASE("reference configuration carries the published settings") {
  TrainConfig ref = TrainConfig::reference();
  REQUIRE(ref.psi.opt == OptimizerKind::adam);
  REQUIRE(ref.psi.lr == 1e-4);
  REQUIRE(ref.psi.batch == 16);
  REQUIRE(ref.phi.opt == OptimizerKind::adam);
  REQUIRE(ref.phi.lr == 1e-5);
  REQUIRE(ref.phi.batch == 4);
  REQUIRE(ref.fusion.opt == OptimizerKind::sgd);
  REQUIRE(ref.fusion.lr == 1e-3);
  REQUIRE(ref.fusion.batch == 1);
  REQUIRE(ref.t_train == 1000);
  REQUIRE(ref.t_infer == 25);
  REQUIRE(ref.tau == 0.4);
}

TEST_CASE("train config JSON round trip") {
  TrainConfig cfg = tiny_config();
  cfg.tau = 0.35;
  cfg.thermal_classes = {1, 3};
  nlohmann::json j = cfg;
  TrainConfig back = j.get<TrainConfig>();
  REQUIRE(back.tau == cfg.tau);
  REQUIRE(back.thermal_classes == cfg.thermal_classes);
  REQUIRE(back.psi.steps == cfg.psi.steps);
  REQUIRE(back.fusion.lr == cfg.fusion.lr);
  REQUIRE(back.image_size == 16);

  TrainConfig bad = cfg;
  bad.tau = 2.0;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.t_infer = 5000;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("phase 1 trains both streams") {
  TinyWorld w;

  SECTION("zero steps leave both streams at initialization") {
    TrainConfig cfg = w.cfg;
    cfg.psi.steps = 0;
    cfg.phi.steps = 0;
    Phase1Result r = phase1_train(w.data, w.vis_ae, w.ir_ae, w.sched, cfg);
    REQUIRE(r.psi_mse_after == r.psi_mse_before);
    REQUIRE(r.phi_mse_after == r.phi_mse_before);
  }

  SECTION("short run reduces both objectives") {
    Phase1Result r = phase1_train(w.data, w.vis_ae, w.ir_ae, w.sched, w.cfg);
    REQUIRE(r.psi_mse_after < r.psi_mse_before);
    REQUIRE(r.phi_mse_after < r.phi_mse_before);
    REQUIRE(r.psi.cfg.role == StreamRole::restoration);
    REQUIRE(r.phi.cfg.role == StreamRole::translation);
  }

  SECTION("empty dataset is a configuration error") {
    std::vector<SceneSample> none;
    REQUIRE_THROWS_AS(phase1_train(none, w.vis_ae, w.ir_ae, w.sched, w.cfg),
                      ConfigError);
  }

  SECTION("missing pair type is a configuration error") {
    auto broken = w.data;
    broken[0].infrared = Tensor();
    REQUIRE_THROWS_AS(phase1_train(broken, w.vis_ae, w.ir_ae, w.sched, w.cfg),
                      ConfigError);
  }
}

TEST_CASE("phase 2 mechanics") {
  TinyWorld w;
  TrainConfig cfg = w.cfg;
  cfg.psi.steps = 40;
  cfg.phi.steps = 40;
  Phase1Result p1 = phase1_train(w.data, w.vis_ae, w.ir_ae, w.sched, cfg);

  SECTION("gradient gate: no gradients before backward, gradients at gate") {
    Rng rng(3);
    FusionNet fnet(cfg.fusion_config(), rng);
    SegHead seg(cfg.seg_config(), rng);
    NamedParams fnet_named = fnet.named_params();
    auto fnet_params = param_list(fnet_named);

    NamedParams psi_named = p1.psi.named_params();
    zero_grads(param_list(psi_named));

    Phase2SampleOutcome outcome = phase2_process_sample(
        w.data[0], w.vis_ae, w.ir_ae, p1.psi, p1.phi, fnet, seg, w.sched,
        cfg.plan(), /*gate_index=*/4, /*sample_seed=*/99, cfg,
        Phase2Options{});

    // The pre-gate steps ran untaped, so every parameter gradient is still
    // exactly zero.
    for (Var* p : fnet_params)
      for (real g : p->grad().v) REQUIRE(g == 0.0);

    backward(outcome.total);
    real total_grad = 0;
    for (Var* p : fnet_params)
      for (real g : p->grad().v) total_grad += std::abs(g);
    REQUIRE(total_grad > 0.0);

    // Frozen stream parameters collected nothing.
    for (auto& [name, p] : psi_named) {
      real acc = 0;
      for (real g : p->node->grad.v) acc += std::abs(g);
      REQUIRE(acc == 0.0);
    }
  }

  SECTION("seeded reproducibility of the loss trajectory") {
    auto run = [&] {
      Phase2Result r = phase2_train(w.data, w.vis_ae, w.ir_ae, p1.psi, p1.phi,
                                    w.sched, cfg);
      return r;
    };
    Phase2Result a = run();
    Phase2Result b = run();
    REQUIRE(a.step_logs.size() == b.step_logs.size());
    for (size_t i = 0; i < a.step_logs.size(); ++i) {
      REQUIRE(std::abs(a.step_logs[i].total - b.step_logs[i].total) < 1e-6);
      REQUIRE(a.step_logs[i].gate_t == b.step_logs[i].gate_t);
    }
  }

  SECTION("frozen streams keep their bytes") {
    uint64_t psi_before = param_checksum(p1.psi.named_params());
    uint64_t phi_before = param_checksum(p1.phi.named_params());
    phase2_train(w.data, w.vis_ae, w.ir_ae, p1.psi, p1.phi, w.sched, cfg);
    REQUIRE(param_checksum(p1.psi.named_params()) == psi_before);
    REQUIRE(param_checksum(p1.phi.named_params()) == phi_before);
  }

  SECTION("labels are required") {
    auto unlabeled = w.data;
    unlabeled[0].label = GridI();
    REQUIRE_THROWS_AS(phase2_train(unlabeled, w.vis_ae, w.ir_ae, p1.psi,
                                   p1.phi, w.sched, cfg),
                      ConfigError);
  }
}

TEST_CASE("probe segmenter learns an easy split") {
  auto samples = make_dataset(4, 16, 3, all_degradations(), 0.5);
  std::vector<Tensor> images;
  std::vector<GridI> labels;
  for (const auto& s : samples) {
    images.push_back(s.clean_vis);
    labels.push_back(s.label);
  }
  ProbeSegmenter probe = train_probe_segmenter(images, labels, 4, 7, 150);
  real score = probe_miou(probe, images, labels, 4);
  REQUIRE(score > 0.3);  // far above the ~0.1 of an untrained head
  REQUIRE(score <= 1.0);
}

TEST_CASE("ablation variants III and IV run without a fusion stage") {
  TinyWorld w;
  TrainConfig cfg = w.cfg;
  cfg.psi.steps = 30;
  cfg.phi.steps = 30;
  Phase1Result p1 = phase1_train(w.data, w.vis_ae, w.ir_ae, w.sched, cfg);

  std::vector<SceneSample> train(w.data.begin(), w.data.begin() + 2);
  std::vector<SceneSample> test(w.data.begin() + 2, w.data.end());

  AblationReport r3 = run_ablation(AblationVariant::model_iii, train, test,
                                   w.vis_ae, w.ir_ae, p1.psi, p1.phi, w.sched,
                                   cfg);
  REQUIRE(r3.variant == "model_iii");
  REQUIRE(r3.test_outputs.images.size() == test.size());
  REQUIRE(r3.head_miou == -1.0);
  REQUIRE(r3.probe_miou >= 0.0);
  REQUIRE(in_unit_range(r3.test_outputs.images[0]));

  AblationReport r4 = run_ablation(AblationVariant::model_iv, train, test,
                                   w.vis_ae, w.ir_ae, p1.psi, p1.phi, w.sched,
                                   cfg);
  REQUIRE(r4.variant == "model_iv");
  // The restoration-only variant and the post-hoc average must differ.
  REQUIRE(max_abs_diff(r3.test_outputs.images[0], r4.test_outputs.images[0]) >
          1e-6);
}
