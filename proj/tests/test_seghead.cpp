#include <catch2/catch_amalgamated.hpp>

#include "sifuse/seghead.hpp"

using namespace sifuse;

namespace {

std::vector<Var> make_taps(Rng& rng, int n, int ch, int h, int w) {
  std::vector<Var> taps;
  for (int i = 0; i < n; ++i) taps.emplace_back(normal_tensor(rng, ch, h, w));
  return taps;
}

}  // namespace

TEST_CASE("seg_step shape and argmax contracts") {
  Rng rng(1);
  SegHeadConfig cfg;
  SegHead net(cfg, rng);

  Var state(normal_tensor(rng, cfg.n_class, 32, 32));
  auto taps = make_taps(rng, cfg.n_taps, cfg.tap_channels, 8, 8);

  auto [next, gamma] = seg_step(state, taps, net);
  REQUIRE(next.c() == cfg.n_class);
  REQUIRE(next.h() == 32);
  REQUIRE(next.w() == 32);
  REQUIRE(gamma.h == 32);
  for (int v : gamma.v) {
    REQUIRE(v >= 0);
    REQUIRE(v < cfg.n_class);
  }

  // Wrong tap count rejected.
  auto short_taps = make_taps(rng, cfg.n_taps - 1, cfg.tap_channels, 8, 8);
  REQUIRE_THROWS_AS(seg_step(state, short_taps, net), ParamError);
}

TEST_CASE("argmax semantics") {
  Tensor logits(3, 2, 2);
  // Class 2 strictly dominates everywhere.
  for (size_t i = 0; i < 4; ++i) {
    logits.v[i] = 0.1;
    logits.v[4 + i] = 0.2;
    logits.v[8 + i] = 5.0;
  }
  GridI gamma = argmax_classes(logits);
  for (int v : gamma.v) REQUIRE(v == 2);

  // Adding a per-pixel constant across channels changes nothing.
  Rng rng(2);
  Tensor shifted = logits;
  for (size_t p = 0; p < 4; ++p) {
    real c = rng.normal() * 10.0;
    for (int ch = 0; ch < 3; ++ch) shifted.v[ch * 4 + p] += c;
  }
  REQUIRE(argmax_classes(shifted).v == gamma.v);
}

TEST_CASE("radiation mask") {
  GridI gamma(4, 4, 1);  // everything is class 1
  GridI m = radiation_mask(gamma, {1, 2});
  for (int v : m.v) REQUIRE(v == 1);

  GridI gamma2(4, 4, 0);
  GridI m2 = radiation_mask(gamma2, {1, 2});
  for (int v : m2.v) REQUIRE(v == 0);

  // Empty thermal set: all-zero mask, still valid.
  GridI m3 = radiation_mask(gamma, {});
  for (int v : m3.v) REQUIRE(v == 0);

  // Mask depends only on the map and the class set.
  REQUIRE(radiation_mask(gamma, {1, 2}).v == m.v);
}

TEST_CASE("segmentation loss") {
  SECTION("uniform logits cost ln K") {
    Tensor logits(4, 3, 3);
    GridI label(3, 3, 2);
    Var l = seg_loss(Var(logits), label);
    REQUIRE(l.val().v[0] == Catch::Approx(std::log(4.0)));
  }

  SECTION("large-margin correct logits cost almost nothing") {
    GridI label(3, 3);
    for (size_t i = 0; i < label.v.size(); ++i) label.v[i] = int(i % 4);
    Tensor logits(4, 3, 3);
    size_t plane = 9;
    for (size_t p = 0; p < plane; ++p)
      logits.v[size_t(label.v[p]) * plane + p] = 30.0;
    Var l = seg_loss(Var(logits), label);
    REQUIRE(l.val().v[0] < 1e-3);
    REQUIRE(l.val().v[0] >= 0.0);
  }

  SECTION("loss decreases under training on a fixed target") {
    Rng rng(3);
    SegHeadConfig cfg;
    SegHead net(cfg, rng);
    auto taps = make_taps(rng, cfg.n_taps, cfg.tap_channels, 8, 8);
    Tensor state0 = normal_tensor(rng, cfg.n_class, 32, 32);
    GridI label(32, 32);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) label.at(y, x) = (x < 16) ? 1 : 3;

    auto params = param_list(net.named_params());
    Adam opt(2e-3);
    real first = 0, last = 0;
    for (int step = 0; step < 60; ++step) {
      zero_grads(params);
      Var logits = net.forward(Var(state0), taps);
      Var loss = seg_loss(logits, label);
      backward(loss);
      opt.step(params);
      if (step == 0) first = loss.val().v[0];
      last = loss.val().v[0];
    }
    REQUIRE(last < first);
  }
}
