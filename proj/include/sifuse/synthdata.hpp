#pragma once

#include <filesystem>
#include <set>
#include <vector>

#include "sifuse/image_io.hpp"
#include "sifuse/tensor.hpp"

namespace sifuse {

// Synthetic scenes: a textured background with a road band and geometric
// "thermal" objects (person/car analogues) whose infrared intensity clears
// the background by a fixed margin, so a visible-to-infrared mapping is
// learnable at desk scale.

struct ScenePalette {
  int n_class = 4;  // 0 background, 1 person, 2 car, 3 road
  std::set<int> thermal_classes{1, 2};
};

inline constexpr real kThermalMargin = 0.3;

struct SceneTriplet {
  Tensor clean_vis;  // (3, s, s)
  Tensor infrared;   // (1, s, s)
  GridI label;
};

struct SceneSample {
  Tensor clean_vis;
  Tensor infrared;
  GridI label;
  Tensor degraded_vis;
  uint64_t seed = 0;
};

namespace detail {

// Coarse value-noise field in [0,1], bilinearly upsampled from a seeded grid.
inline Tensor noise_field(Rng& rng, int size, int cell) {
  int gn = size / cell + 2;
  std::vector<real> grid(size_t(gn) * gn);
  for (auto& g : grid) g = rng.uniform();
  Tensor out(1, size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      real fy = real(y) / cell, fx = real(x) / cell;
      int iy = int(fy), ix = int(fx);
      real ty = fy - iy, tx = fx - ix;
      real v00 = grid[iy * gn + ix], v01 = grid[iy * gn + ix + 1];
      real v10 = grid[(iy + 1) * gn + ix], v11 = grid[(iy + 1) * gn + ix + 1];
      out.at(0, y, x) = (1 - ty) * ((1 - tx) * v00 + tx * v01) +
                        ty * ((1 - tx) * v10 + tx * v11);
    }
  return out;
}

inline void paint_rgb(Tensor& img, int y, int x, real r, real g, real b) {
  img.at(0, y, x) = r;
  img.at(1, y, x) = g;
  img.at(2, y, x) = b;
}

}  // namespace detail

inline SceneTriplet synthesize_scene(uint64_t seed, int size,
                                     const ScenePalette& palette = {}) {
  if (size < 16) throw ParamError("synthesize_scene: size must be >= 16");
  Rng rng(Rng::derive(seed, 0xace));

  SceneTriplet s{Tensor(3, size, size), Tensor(1, size, size),
                 GridI(size, size, 0)};

  Tensor field = detail::noise_field(rng, size, std::max(4, size / 8));
  Tensor fine = detail::noise_field(rng, size, 2);

  // Background: two-tone mix driven by the coarse field.
  const real bg_a[3] = {0.28, 0.36, 0.24};
  const real bg_b[3] = {0.45, 0.42, 0.33};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      real t = field.at(0, y, x);
      real tex = 0.06 * (fine.at(0, y, x) - 0.5);
      for (int ch = 0; ch < 3; ++ch)
        s.clean_vis.at(ch, y, x) =
            std::clamp(bg_a[ch] + (bg_b[ch] - bg_a[ch]) * t + tex, 0.0, 1.0);
    }

  // Road band across the lower third.
  int road_top = int(size * 0.68), road_bot = int(size * 0.88);
  for (int y = road_top; y < road_bot; ++y)
    for (int x = 0; x < size; ++x) {
      real shade = 0.5 + 0.08 * (fine.at(0, y, x) - 0.5);
      detail::paint_rgb(s.clean_vis, y, x, shade, shade, shade * 1.03);
      s.label.at(y, x) = 3;
    }

  // Cars: axis-aligned rectangles near the road.
  int n_cars = rng.uniform_int(1, 2);
  for (int i = 0; i < n_cars; ++i) {
    int cw = rng.uniform_int(size / 5, size / 3);
    int ch = rng.uniform_int(size / 8, size / 6);
    int cx = rng.uniform_int(1, size - cw - 2);
    int cy = rng.uniform_int(road_top - ch - 2, road_bot - ch - 1);
    real col[3] = {rng.uniform(0.5, 0.9), rng.uniform(0.1, 0.4),
                   rng.uniform(0.1, 0.5)};
    for (int y = cy; y < cy + ch; ++y)
      for (int x = cx; x < cx + cw; ++x) {
        detail::paint_rgb(s.clean_vis, y, x, col[0], col[1], col[2]);
        s.label.at(y, x) = 2;
      }
  }

  // Persons: upright ellipses in the upper scene.
  int n_persons = rng.uniform_int(1, 2);
  for (int i = 0; i < n_persons; ++i) {
    int ry = rng.uniform_int(size / 7, size / 5);
    int rx = std::max(2, ry / 2);
    int px = rng.uniform_int(rx + 1, size - rx - 2);
    int py = rng.uniform_int(ry + 1, road_top - ry - 1);
    real col[3] = {rng.uniform(0.2, 0.5), rng.uniform(0.3, 0.7),
                   rng.uniform(0.5, 0.9)};
    for (int y = py - ry; y <= py + ry; ++y)
      for (int x = px - rx; x <= px + rx; ++x) {
        real dy = real(y - py) / ry, dx = real(x - px) / rx;
        if (dy * dy + dx * dx > 1.0) continue;
        detail::paint_rgb(s.clean_vis, y, x, col[0], col[1], col[2]);
        s.label.at(y, x) = 1;
      }
  }

  // Infrared: class-driven base intensity plus a mild smoothed component.
  Tensor ir_noise = detail::noise_field(rng, size, std::max(4, size / 8));
  const real ir_base[4] = {0.15, 0.90, 0.80, 0.30};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      int cls = s.label.at(y, x);
      real wobble = 0.08 * (ir_noise.at(0, y, x) - 0.5);
      s.infrared.at(0, y, x) = std::clamp(ir_base[cls] + wobble, 0.0, 1.0);
    }

  // Thermal-contrast contract.
  real in_sum = 0, out_sum = 0;
  long in_n = 0, out_n = 0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      if (palette.thermal_classes.count(s.label.at(y, x))) {
        in_sum += s.infrared.at(0, y, x);
        ++in_n;
      } else {
        out_sum += s.infrared.at(0, y, x);
        ++out_n;
      }
    }
  if (in_n == 0 || out_n == 0 ||
      in_sum / in_n - out_sum / out_n < kThermalMargin)
    throw ContractError("synthesize_scene: thermal contrast margin violated");

  for (int v : s.label.v)
    if (v < 0 || v >= palette.n_class)
      throw ContractError("synthesize_scene: label outside palette");
  return s;
}

// ---------------------------------------------------------------------------
// Degradations: low light (gamma + gain), haze (airlight blend), additive
// Gaussian noise. Kinds compose in that order; severity 0 is the identity.
// ---------------------------------------------------------------------------

enum class DegradeKind { low_light, haze, noise };

inline DegradeKind degrade_kind_from_string(const std::string& s) {
  if (s == "low_light") return DegradeKind::low_light;
  if (s == "haze") return DegradeKind::haze;
  if (s == "noise") return DegradeKind::noise;
  throw ParamError("degrade: unknown kind '" + s + "'");
}

inline Tensor degrade(const Tensor& clean, const std::vector<DegradeKind>& kinds,
                      real severity, uint64_t seed) {
  check_image(clean, "degrade");
  if (!(severity >= 0.0 && severity <= 1.0))
    throw ParamError("degrade: severity must be in [0,1]");
  Tensor out = clean;
  if (severity == 0.0) return out;
  for (DegradeKind kind : kinds) {
    switch (kind) {
      case DegradeKind::low_light: {
        real gamma = 1.0 + 2.0 * severity;
        real gain = 1.0 - 0.75 * severity;
        for (auto& x : out.v) x = gain * std::pow(x, gamma);
        break;
      }
      case DegradeKind::haze: {
        const real airlight = 0.92;
        real trans = 1.0 - 0.75 * severity;
        for (auto& x : out.v) x = trans * x + (1.0 - trans) * airlight;
        break;
      }
      case DegradeKind::noise: {
        Rng rng(Rng::derive(seed, 0xd06));
        real sigma = 0.15 * severity;
        for (auto& x : out.v)
          x = std::clamp(x + sigma * rng.normal(), 0.0, 1.0);
        break;
      }
    }
  }
  return clamp01(std::move(out));
}

inline std::vector<DegradeKind> all_degradations() {
  return {DegradeKind::low_light, DegradeKind::haze, DegradeKind::noise};
}

inline SceneSample make_sample(uint64_t seed, int size,
                               const std::vector<DegradeKind>& kinds,
                               real severity, const ScenePalette& palette = {}) {
  SceneTriplet t = synthesize_scene(seed, size, palette);
  SceneSample s;
  s.clean_vis = std::move(t.clean_vis);
  s.infrared = std::move(t.infrared);
  s.label = std::move(t.label);
  s.degraded_vis = degrade(s.clean_vis, kinds, severity, seed);
  s.seed = seed;
  return s;
}

inline std::vector<SceneSample> make_dataset(int n, int size, uint64_t base_seed,
                                             const std::vector<DegradeKind>& kinds,
                                             real severity,
                                             const ScenePalette& palette = {}) {
  if (n < 0) throw ParamError("make_dataset: negative count");
  std::vector<SceneSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i)
    out.push_back(
        make_sample(Rng::derive(base_seed, uint64_t(i)), size, kinds, severity,
                    palette));
  return out;
}

// ---------------------------------------------------------------------------
// Dataset directory layout: vis/, ir/, labels/ (and degraded/) holding
// matching file names.
// ---------------------------------------------------------------------------

inline Tensor ir_to_rgb(const Tensor& ir) {
  if (ir.c != 1) throw ParamError("ir_to_rgb: expected a single plane");
  Tensor rgb(3, ir.h, ir.w);
  size_t plane = size_t(ir.h) * ir.w;
  for (int ch = 0; ch < 3; ++ch)
    std::copy(ir.v.begin(), ir.v.end(), rgb.v.begin() + ch * plane);
  return rgb;
}

inline void write_dataset_dir(const std::vector<SceneSample>& samples,
                              const std::string& path, int n_class = 4) {
  namespace fs = std::filesystem;
  for (const char* sub : {"vis", "ir", "labels", "degraded"})
    fs::create_directories(fs::path(path) / sub);
  char name[32];
  for (size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "%05zu.png", i);
    const auto& s = samples[i];
    write_png_rgb((fs::path(path) / "vis" / name).string(), s.clean_vis);
    write_png_gray((fs::path(path) / "ir" / name).string(), s.infrared);
    write_png_indexed((fs::path(path) / "labels" / name).string(), s.label,
                      n_class);
    write_png_rgb((fs::path(path) / "degraded" / name).string(),
                  s.degraded_vis);
  }
}

inline std::vector<SceneSample> load_dataset_dir(const std::string& path) {
  namespace fs = std::filesystem;
  if (!fs::exists(path))
    throw IoError("load_dataset_dir: no such directory: " + path);

  auto listing = [&](const char* sub) {
    std::vector<std::string> names;
    fs::path dir = fs::path(path) / sub;
    if (!fs::exists(dir)) return names;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".png")
        names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    return names;
  };

  auto vis = listing("vis");
  auto ir = listing("ir");
  auto labels = listing("labels");

  auto require = [&](const std::vector<std::string>& have, const char* sub,
                     const std::string& name) {
    if (!std::binary_search(have.begin(), have.end(), name))
      throw IoError("load_dataset_dir: " + std::string(sub) + "/" + name +
                    " is missing its counterpart for vis/" + name);
  };

  std::vector<SceneSample> out;
  for (const auto& name : vis) {
    require(ir, "ir", name);
    require(labels, "labels", name);
    SceneSample s;
    s.clean_vis = read_png_rgb((fs::path(path) / "vis" / name).string());
    s.infrared = read_png_gray((fs::path(path) / "ir" / name).string());
    s.label = read_png_indexed((fs::path(path) / "labels" / name).string());
    if (s.infrared.h != s.clean_vis.h || s.infrared.w != s.clean_vis.w ||
        s.label.h != s.clean_vis.h || s.label.w != s.clean_vis.w)
      throw IoError("load_dataset_dir: dimension mismatch in triplet " + name);
    fs::path deg = fs::path(path) / "degraded" / name;
    if (fs::exists(deg)) {
      s.degraded_vis = read_png_rgb(deg.string());
      if (s.degraded_vis.h != s.clean_vis.h ||
          s.degraded_vis.w != s.clean_vis.w)
        throw IoError("load_dataset_dir: dimension mismatch in degraded/" +
                      name);
    } else {
      // No stored degraded image; derive one deterministically from the name.
      uint64_t h = 1469598103934665603ULL;
      for (char ch : name) h = (h ^ uint64_t(ch)) * 1099511628211ULL;
      s.degraded_vis = degrade(s.clean_vis, all_degradations(), 0.6, h);
      s.seed = h;
    }
    out.push_back(std::move(s));
  }

  // Orphans in ir/ or labels/ are alignment bugs too.
  for (const auto& name : ir)
    if (!std::binary_search(vis.begin(), vis.end(), name))
      throw IoError("load_dataset_dir: ir/" + name + " has no vis/ counterpart");
  for (const auto& name : labels)
    if (!std::binary_search(vis.begin(), vis.end(), name))
      throw IoError("load_dataset_dir: labels/" + name +
                    " has no vis/ counterpart");
  return out;
}

}  // namespace sifuse
