#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "sifuse/synthdata.hpp"

using namespace sifuse;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("sifuse_test_" + std::to_string(Catch::rngSeed()) + "_" +
            std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("scene generation is deterministic per seed") {
  SceneTriplet a = synthesize_scene(1234, 32);
  SceneTriplet b = synthesize_scene(1234, 32);
  REQUIRE(max_abs_diff(a.clean_vis, b.clean_vis) == 0.0);
  REQUIRE(max_abs_diff(a.infrared, b.infrared) == 0.0);
  REQUIRE(a.label.v == b.label.v);

  SceneTriplet c = synthesize_scene(1235, 32);
  REQUIRE(max_abs_diff(a.clean_vis, c.clean_vis) > 0.0);
}

TEST_CASE("scene invariants") {
  ScenePalette palette;
  for (uint64_t seed : {1ull, 7ull, 99ull, 12345ull}) {
    SceneTriplet s = synthesize_scene(seed, 32, palette);
    REQUIRE(in_unit_range(s.clean_vis));
    REQUIRE(in_unit_range(s.infrared));
    for (int v : s.label.v) {
      REQUIRE(v >= 0);
      REQUIRE(v < palette.n_class);
    }
    // Thermal objects run hotter than the rest by the configured margin.
    real in_sum = 0, out_sum = 0;
    long in_n = 0, out_n = 0;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        if (palette.thermal_classes.count(s.label.at(y, x))) {
          in_sum += s.infrared.at(0, y, x);
          ++in_n;
        } else {
          out_sum += s.infrared.at(0, y, x);
          ++out_n;
        }
      }
    REQUIRE(in_n > 0);
    REQUIRE(in_sum / in_n - out_sum / out_n >= kThermalMargin);
  }
  REQUIRE_THROWS_AS(synthesize_scene(1, 8), ParamError);
}

TEST_CASE("degradations") {
  SceneTriplet s = synthesize_scene(5, 32);

  SECTION("severity zero is the identity") {
    Tensor out = degrade(s.clean_vis, all_degradations(), 0.0, 9);
    REQUIRE(max_abs_diff(out, s.clean_vis) == 0.0);
  }

  SECTION("full low light darkens a white image below the floor") {
    Tensor white = Tensor::full(3, 8, 8, 1.0);
    Tensor dark = degrade(white, {DegradeKind::low_light}, 1.0, 0);
    REQUIRE(mean_of(dark) < 0.3);
  }

  SECTION("noise realization is seed-stable") {
    Tensor a = degrade(s.clean_vis, {DegradeKind::noise}, 0.7, 42);
    Tensor b = degrade(s.clean_vis, {DegradeKind::noise}, 0.7, 42);
    Tensor c = degrade(s.clean_vis, {DegradeKind::noise}, 0.7, 43);
    REQUIRE(max_abs_diff(a, b) == 0.0);
    REQUIRE(max_abs_diff(a, c) > 0.0);
  }

  SECTION("outputs stay inside [0,1] for any severity") {
    for (real sev : {0.1, 0.5, 0.9, 1.0}) {
      Tensor out = degrade(s.clean_vis, all_degradations(), sev, 3);
      REQUIRE(in_unit_range(out));
    }
  }

  SECTION("unknown kind names are rejected") {
    REQUIRE_THROWS_AS(degrade_kind_from_string("motion_blur"), ParamError);
    REQUIRE_THROWS_AS(degrade(s.clean_vis, all_degradations(), 1.5, 0),
                      ParamError);
  }
}

TEST_CASE("dataset directory round trip") {
  TempDir tmp;
  auto samples = make_dataset(3, 32, 77, all_degradations(), 0.6);
  write_dataset_dir(samples, tmp.path.string());

  auto loaded = load_dataset_dir(tmp.path.string());
  REQUIRE(loaded.size() == 3);
  for (size_t i = 0; i < loaded.size(); ++i) {
    // PNG quantization allows at most half a bin of drift.
    REQUIRE(max_abs_diff(loaded[i].clean_vis, samples[i].clean_vis) <
            0.5 / 255.0 + 1e-9);
    REQUIRE(max_abs_diff(loaded[i].degraded_vis, samples[i].degraded_vis) <
            0.5 / 255.0 + 1e-9);
    REQUIRE(loaded[i].label.v == samples[i].label.v);
  }
}

TEST_CASE("dataset ingestion diagnostics") {
  SECTION("empty directory yields an empty sequence") {
    TempDir tmp;
    REQUIRE(load_dataset_dir(tmp.path.string()).empty());
  }

  SECTION("single complete triplet loads") {
    TempDir tmp;
    write_dataset_dir(make_dataset(1, 32, 5, all_degradations(), 0.5),
                      tmp.path.string());
    REQUIRE(load_dataset_dir(tmp.path.string()).size() == 1);
  }

  SECTION("vis without ir names the offender") {
    TempDir tmp;
    write_dataset_dir(make_dataset(2, 32, 5, all_degradations(), 0.5),
                      tmp.path.string());
    fs::remove(tmp.path / "ir" / "00001.png");
    try {
      load_dataset_dir(tmp.path.string());
      FAIL("expected IoError");
    } catch (const IoError& e) {
      REQUIRE(std::string(e.what()).find("00001.png") != std::string::npos);
    }
  }

  SECTION("orphaned ir file is rejected") {
    TempDir tmp;
    auto samples = make_dataset(1, 32, 5, all_degradations(), 0.5);
    write_dataset_dir(samples, tmp.path.string());
    write_png_gray((tmp.path / "ir" / "zz_extra.png").string(),
                   samples[0].infrared);
    REQUIRE_THROWS_AS(load_dataset_dir(tmp.path.string()), IoError);
  }

  SECTION("missing directory is an error") {
    REQUIRE_THROWS_AS(load_dataset_dir("/nonexistent/sifuse_data"), IoError);
  }
}

TEST_CASE("png round trips") {
  TempDir tmp;

  SECTION("rgb hits the 8-bit grid exactly") {
    Tensor img(3, 5, 4);
    Rng rng(3);
    for (auto& v : img.v) v = real(rng.uniform_int(0, 255)) / 255.0;
    std::string p = (tmp.path / "rgb.png").string();
    write_png_rgb(p, img);
    Tensor back = read_png_rgb(p);
    REQUIRE(max_abs_diff(img, back) < 1e-12);
  }

  SECTION("indexed map is exact") {
    GridI map(6, 6);
    for (size_t i = 0; i < map.v.size(); ++i) map.v[i] = int(i % 4);
    std::string p = (tmp.path / "label.png").string();
    write_png_indexed(p, map, 4);
    GridI back = read_png_indexed(p);
    REQUIRE(back.v == map.v);
  }

  SECTION("gray plane") {
    Tensor ir(1, 4, 4);
    Rng rng(4);
    for (auto& v : ir.v) v = real(rng.uniform_int(0, 255)) / 255.0;
    std::string p = (tmp.path / "ir.png").string();
    write_png_gray(p, ir);
    Tensor back = read_png_gray(p);
    REQUIRE(max_abs_diff(ir, back) < 1e-12);
  }
}
