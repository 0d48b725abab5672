#pragma once

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "dpa/image.hpp"

// 8-bit PNG read/write via libpng. Color images are written as RGB; masks as
// grayscale. On load, gray and palette files are expanded to RGB and any alpha
// channel is dropped.

namespace dpa {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

inline Image read_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw ValidationError("read_png: cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("read_png: png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("read_png: png_create_info_struct failed");
  }
  std::vector<png_bytep> row_ptrs;
  std::vector<png_byte> data;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("read_png: failed to decode " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color_type = png_get_color_type(png, info);
  const int bit_depth = png_get_bit_depth(png, info);

  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const std::size_t stride = png_get_rowbytes(png, info);
  data.resize(stride * h);
  row_ptrs.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) row_ptrs[y] = data.data() + y * stride;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image im = Image::zeros(Index(w), Index(h));
  for (png_uint_32 y = 0; y < h; ++y) {
    const png_bytep row = data.data() + y * stride;
    for (png_uint_32 x = 0; x < w; ++x) {
      im.r(y, x) = row[3 * x + 0] / 255.0;
      im.g(y, x) = row[3 * x + 1] / 255.0;
      im.b(y, x) = row[3 * x + 2] / 255.0;
    }
  }
  return im;
}

// Masks are 8-bit rasters thresholded at 128 on load.
inline Mask read_png_mask(const std::string& path) {
  const Image im = read_png(path);
  Mask m(im.height, im.width);
  for (Index y = 0; y < im.height; ++y)
    for (Index x = 0; x < im.width; ++x)
      m(y, x) = (im.r(y, x) * 255.0 >= 128.0) ? 1.0 : 0.0;
  return m;
}

namespace detail {

inline void write_png_bytes(const std::string& path, const std::vector<png_byte>& data,
                            Index width, Index height, int color_type, int channels) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw ValidationError("write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("write_png: png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("write_png: png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("write_png: failed to encode " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (Index y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(data.data() + std::size_t(y) * width * channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline png_byte to_byte(double v) {
  const double s = clip01(v) * 255.0 + 0.5;
  return png_byte(s >= 255.0 ? 255 : int(s));
}

}  // namespace detail

inline void write_png(const std::string& path, const Image& im) {
  im.validate();
  std::vector<png_byte> data(std::size_t(im.width) * im.height * 3);
  for (Index y = 0; y < im.height; ++y)
    for (Index x = 0; x < im.width; ++x) {
      const std::size_t k = (std::size_t(y) * im.width + x) * 3;
      data[k + 0] = detail::to_byte(im.r(y, x));
      data[k + 1] = detail::to_byte(im.g(y, x));
      data[k + 2] = detail::to_byte(im.b(y, x));
    }
  detail::write_png_bytes(path, data, im.width, im.height, PNG_COLOR_TYPE_RGB, 3);
}

inline void write_png_gray(const std::string& path, const Mat& plane) {
  if (!plane.allFinite()) throw ValidationError("write_png_gray: non-finite values");
  std::vector<png_byte> data(std::size_t(plane.cols()) * plane.rows());
  for (Index y = 0; y < plane.rows(); ++y)
    for (Index x = 0; x < plane.cols(); ++x)
      data[std::size_t(y) * plane.cols() + x] = detail::to_byte(plane(y, x));
  detail::write_png_bytes(path, data, plane.cols(), plane.rows(), PNG_COLOR_TYPE_GRAY, 1);
}

}  // namespace dpa
