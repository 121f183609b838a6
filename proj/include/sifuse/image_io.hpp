#pragma once

#include <png.h>

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "sifuse/tensor.hpp"

namespace sifuse {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline uint8_t to_byte(real x) {
  long q = std::lround(std::clamp(x, 0.0, 1.0) * 255.0);
  return uint8_t(std::clamp(q, 0l, 255l));
}

}  // namespace detail

// 8-bit PNG I/O. Images are (3,h,w) or (1,h,w) tensors in [0,1];
// segmentation maps are indexed single-channel PNGs.

inline void write_png_rgb(const std::string& path, const Tensor& img) {
  if (img.c != 3 && img.c != 1)
    throw ParamError("write_png_rgb: expected 1 or 3 channels");
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("write_png_rgb: cannot open " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("write_png_rgb: libpng failure on " + path);
  }
  png_init_io(png, fp.get());
  bool gray = img.c == 1;
  png_set_IHDR(png, info, img.w, img.h, 8,
               gray ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<uint8_t> row(size_t(img.w) * (gray ? 1 : 3));
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      if (gray) {
        row[x] = detail::to_byte(img.at(0, y, x));
      } else {
        row[3 * x + 0] = detail::to_byte(img.at(0, y, x));
        row[3 * x + 1] = detail::to_byte(img.at(1, y, x));
        row[3 * x + 2] = detail::to_byte(img.at(2, y, x));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline void write_png_gray(const std::string& path, const Tensor& img) {
  if (img.c != 1) throw ParamError("write_png_gray: expected 1 channel");
  write_png_rgb(path, img);
}

// Class indices as palette entries; the palette spreads hues so label maps
// stay inspectable in an image viewer.
inline void write_png_indexed(const std::string& path, const GridI& map,
                              int n_class) {
  if (n_class < 1 || n_class > 256)
    throw ParamError("write_png_indexed: n_class out of [1,256]");
  for (int x : map.v)
    if (x < 0 || x >= n_class)
      throw ParamError("write_png_indexed: index out of range");
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("write_png_indexed: cannot open " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("write_png_indexed: libpng failure on " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, map.w, map.h, 8, PNG_COLOR_TYPE_PALETTE,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_color> palette(n_class);
  for (int i = 0; i < n_class; ++i) {
    real hue = real(i) / real(n_class) * 6.0;
    int k = int(hue);
    real f = hue - k;
    real q = 1.0 - f;
    real rgb[3] = {0, 0, 0};
    switch (k % 6) {
      case 0: rgb[0] = 1; rgb[1] = f; break;
      case 1: rgb[0] = q; rgb[1] = 1; break;
      case 2: rgb[1] = 1; rgb[2] = f; break;
      case 3: rgb[1] = q; rgb[2] = 1; break;
      case 4: rgb[0] = f; rgb[2] = 1; break;
      default: rgb[0] = 1; rgb[2] = q; break;
    }
    real lev = i == 0 ? 0.0 : 0.35 + 0.65 * real(i) / real(n_class);
    palette[i].red = detail::to_byte(rgb[0] * lev);
    palette[i].green = detail::to_byte(rgb[1] * lev);
    palette[i].blue = detail::to_byte(rgb[2] * lev);
  }
  png_set_PLTE(png, info, palette.data(), n_class);
  png_write_info(png, info);
  std::vector<uint8_t> row(map.w);
  for (int y = 0; y < map.h; ++y) {
    for (int x = 0; x < map.w; ++x) row[x] = uint8_t(map.at(y, x));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

namespace detail {

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FilePtr fp;
  int width = 0, height = 0, color_type = 0;
  std::vector<std::vector<uint8_t>> rows;

  explicit PngReader(const std::string& path) {
    fp.reset(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("read_png: cannot open " + path);
    uint8_t sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
      throw IoError("read_png: not a PNG file: " + path);
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                 nullptr);
    info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_read_struct(&png, &info, nullptr);
      throw IoError("read_png: libpng failure on " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    width = int(png_get_image_width(png, info));
    height = int(png_get_image_height(png, info));
    color_type = png_get_color_type(png, info);
  }

  // Normalizes to 8-bit RGB and reads all rows.
  void read_rgb8() {
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY ||
        color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
      png_set_gray_to_rgb(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS))
      png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    read_rows(3);
  }

  // Keeps raw palette indices (or gray bytes) as-is.
  void read_index8() {
    if (png_get_bit_depth(png, info) < 8) png_set_packing(png);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    png_read_update_info(png, info);
    int ch = int(png_get_channels(png, info));
    read_rows(ch);
  }

  void read_rows(int channels) {
    rows.assign(height, std::vector<uint8_t>(size_t(width) * channels));
    std::vector<png_bytep> ptrs(height);
    for (int y = 0; y < height; ++y) ptrs[y] = rows[y].data();
    png_read_image(png, ptrs.data());
    png_read_end(png, nullptr);
  }

  ~PngReader() {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
  }
};

}  // namespace detail

inline Tensor read_png_rgb(const std::string& path) {
  detail::PngReader r(path);
  r.read_rgb8();
  Tensor img(3, r.height, r.width);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      for (int ch = 0; ch < 3; ++ch)
        img.at(ch, y, x) = real(r.rows[y][3 * x + ch]) / 255.0;
  return img;
}

inline Tensor read_png_gray(const std::string& path) {
  Tensor rgb = read_png_rgb(path);
  Tensor g(1, rgb.h, rgb.w);
  for (int y = 0; y < rgb.h; ++y)
    for (int x = 0; x < rgb.w; ++x)
      g.at(0, y, x) =
          (rgb.at(0, y, x) + rgb.at(1, y, x) + rgb.at(2, y, x)) / 3.0;
  return g;
}

inline GridI read_png_indexed(const std::string& path) {
  detail::PngReader r(path);
  if (r.color_type != PNG_COLOR_TYPE_PALETTE &&
      r.color_type != PNG_COLOR_TYPE_GRAY)
    throw IoError("read_png_indexed: " + path +
                  " is neither palette nor grayscale");
  r.read_index8();
  GridI map(r.height, r.width);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) map.at(y, x) = int(r.rows[y][x]);
  return map;
}

}  // namespace sifuse
