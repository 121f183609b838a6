#include <catch2/catch_amalgamated.hpp>

#include "sifuse/metrics.hpp"

using namespace sifuse;

namespace {

Tensor random_image(uint64_t seed, int h, int w) {
  Rng rng(seed);
  Tensor img(3, h, w);
  for (auto& v : img.v) v = rng.uniform();
  return img;
}

// Brute-force oracle, written independently of the library internals: builds
// the joint count table directly and derives both entropies and MI from it.
struct HistOracle {
  std::vector<long> joint;
  long n = 0;

  HistOracle(const Tensor& a, const Tensor& b) : joint(256 * 256, 0) {
    auto quant = [](const Tensor& t, size_t i) {
      size_t plane = size_t(t.h) * t.w;
      real y = 0.299 * t.v[i] + 0.587 * t.v[plane + i] +
               0.114 * t.v[2 * plane + i];
      return int(std::lround(std::clamp(y, 0.0, 1.0) * 255.0));
    };
    size_t plane = size_t(a.h) * a.w;
    for (size_t i = 0; i < plane; ++i) ++joint[quant(a, i) * 256 + quant(b, i)];
    n = long(plane);
  }

  real entropy_a() const {
    real e = 0;
    for (int i = 0; i < 256; ++i) {
      long c = 0;
      for (int j = 0; j < 256; ++j) c += joint[i * 256 + j];
      if (c) {
        real p = real(c) / n;
        e -= p * std::log2(p);
      }
    }
    return e;
  }

  real mi() const {
    std::vector<long> ra(256, 0), rb(256, 0);
    for (int i = 0; i < 256; ++i)
      for (int j = 0; j < 256; ++j) {
        ra[i] += joint[i * 256 + j];
        rb[j] += joint[i * 256 + j];
      }
    real m = 0;
    for (int i = 0; i < 256; ++i)
      for (int j = 0; j < 256; ++j)
        if (joint[i * 256 + j]) {
          real p = real(joint[i * 256 + j]) / n;
          m += p * std::log2(p * n * n / (real(ra[i]) * real(rb[j])));
        }
    return m;
  }
};

}  // namespace

TEST_CASE("entropy of a constant image is zero") {
  REQUIRE(entropy(Tensor::full(3, 8, 8, 0.5)) == 0.0);
}

TEST_CASE("EN and MI match the brute-force histogram oracle") {
  for (uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    Tensor a = random_image(seed, 8, 8);
    Tensor b = random_image(seed + 100, 8, 8);
    HistOracle oab(a, b);
    REQUIRE(std::abs(entropy(a) - oab.entropy_a()) < 1e-9);
    REQUIRE(std::abs(mutual_information(a, b) - oab.mi()) < 1e-9);
    // Self-information equals entropy under identical binning.
    REQUIRE(std::abs(mutual_information(a, a) - entropy(a)) < 1e-9);
  }
}

TEST_CASE("identity fusion scores perfectly") {
  Tensor x = random_image(7, 16, 16);
  MetricReport r = fusion_metrics(x, x, x);
  REQUIRE(r.ssim == Catch::Approx(1.0).margin(1e-9));
  REQUIRE(r.qabf >= 0.99);
  REQUIRE(r.psnr == kPsnrCap);
  REQUIRE(std::abs(r.mi - 2.0 * entropy(x)) < 1e-9);
}

TEST_CASE("fusion metrics are symmetric in the two sources") {
  Tensor f = random_image(11, 12, 12);
  Tensor a = random_image(12, 12, 12);
  Tensor b = random_image(13, 12, 12);
  MetricReport rab = fusion_metrics(f, a, b);
  MetricReport rba = fusion_metrics(f, b, a);
  REQUIRE(rab.en == rba.en);
  REQUIRE(rab.ssim == Catch::Approx(rba.ssim).margin(1e-12));
  REQUIRE(rab.mi == Catch::Approx(rba.mi).margin(1e-12));
  REQUIRE(rab.psnr == Catch::Approx(rba.psnr).margin(1e-12));
  REQUIRE(rab.qabf == Catch::Approx(rba.qabf).margin(1e-12));
}

TEST_CASE("metric ranges on random inputs") {
  Tensor f = random_image(21, 10, 10);
  Tensor a = random_image(22, 10, 10);
  Tensor b = random_image(23, 10, 10);
  MetricReport r = fusion_metrics(f, a, b);
  REQUIRE(r.en >= 0.0);
  REQUIRE(r.ssim >= -1.0);
  REQUIRE(r.ssim <= 1.0);
  REQUIRE(r.mi >= 0.0);
  REQUIRE(r.qabf >= 0.0);
  REQUIRE(r.qabf <= 1.0);
  REQUIRE(r.psnr >= 0.0);
  REQUIRE_THROWS_AS(fusion_metrics(f, a, random_image(5, 4, 4)), ParamError);
}

TEST_CASE("noise strictly degrades PSNR") {
  // Smooth base image so quantization noise does not dominate.
  Tensor clean(3, 24, 24);
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 24; ++x)
        clean.at(ch, y, x) = 0.2 + 0.5 * real(x + y) / 46.0;

  Rng rng(31);
  real prev = kPsnrCap + 1.0;
  for (real sigma : {0.01, 0.03, 0.08, 0.2}) {
    Tensor noisy = clean;
    for (auto& v : noisy.v) v = std::clamp(v + sigma * rng.normal(), 0.0, 1.0);
    real p = 0.5 * (psnr(noisy, clean) + psnr(noisy, clean));
    REQUIRE(p < prev);
    prev = p;
  }
}

TEST_CASE("miou behaviour") {
  SECTION("perfect prediction") {
    GridI m(6, 6);
    for (size_t i = 0; i < m.v.size(); ++i) m.v[i] = int(i % 3);
    auto [ious, mean] = miou(m, m, 4);
    REQUIRE(mean == 1.0);
    for (int c = 0; c < 3; ++c) REQUIRE(ious[c] == 1.0);
    REQUIRE(ious[3] == -1.0);  // absent from both, excluded
  }

  SECTION("disjoint single-class maps score zero") {
    GridI pred(4, 4, 1), label(4, 4, 2);
    auto [ious, mean] = miou(pred, label, 3);
    REQUIRE(ious[1] == 0.0);
    REQUIRE(ious[2] == 0.0);
    REQUIRE(mean == 0.0);
  }

  SECTION("invalid class index rejected") {
    GridI pred(2, 2, 5), label(2, 2, 0);
    REQUIRE_THROWS_AS(miou(pred, label, 4), ParamError);
  }

  SECTION("partial overlap") {
    // pred marks the left half class 1, label marks the top half class 1.
    GridI pred(4, 4, 0), label(4, 4, 0);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 2; ++x) pred.at(y, x) = 1;
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 4; ++x) label.at(y, x) = 1;
    auto [ious, mean] = miou(pred, label, 2);
    // intersection 4, union 12 for class 1; class 0 likewise 4/12.
    REQUIRE(ious[1] == Catch::Approx(4.0 / 12.0));
    REQUIRE(ious[0] == Catch::Approx(4.0 / 12.0));
  }
}
