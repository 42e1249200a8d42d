#pragma once

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "sst/tile.hpp"

namespace sst {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

// Writes an 8-bit RGB PNG. Values are rounded from [0,1] to [0,255].
inline void write_png_rgb8(const std::string& path, const ColorTile& tile) {
  validate_color_tile(tile, "write_png_rgb8");
  const int d = tile.d;
  std::vector<unsigned char> rows(static_cast<std::size_t>(d) * d * 3);
  for (int y = 0; y < d; ++y)
    for (int x = 0; x < d; ++x)
      for (int c = 0; c < 3; ++c)
        rows[(static_cast<std::size_t>(y) * d + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(tile.at(c, y, x) * 255.0));

  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("write_png_rgb8: cannot open " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("write_png_rgb8: libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("write_png_rgb8: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png_rgb8: libpng error writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(d), static_cast<png_uint_32>(d), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(d));
  for (int y = 0; y < d; ++y) row_ptrs[static_cast<std::size_t>(y)] = rows.data() + static_cast<std::size_t>(y) * d * 3;
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads an 8-bit RGB PNG (alpha, if present, is stripped). Square images only.
inline ColorTile read_png_rgb8(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("read_png_rgb8: cannot open " + path);

  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw std::runtime_error("read_png_rgb8: not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("read_png_rgb8: libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("read_png_rgb8: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png_rgb8: libpng error reading " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);

  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);

  if (png_get_channels(png, info) != 3 || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png_rgb8: unsupported pixel layout in " + path);
  }
  if (w != h) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png_rgb8: image is not square: " + path);
  }

  const int d = static_cast<int>(w);
  std::vector<unsigned char> rows(static_cast<std::size_t>(d) * d * 3);
  std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(d));
  for (int y = 0; y < d; ++y) row_ptrs[static_cast<std::size_t>(y)] = rows.data() + static_cast<std::size_t>(y) * d * 3;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  ColorTile tile(d);
  for (int y = 0; y < d; ++y)
    for (int x = 0; x < d; ++x)
      for (int c = 0; c < 3; ++c)
        tile.at(c, y, x) = rows[(static_cast<std::size_t>(y) * d + x) * 3 + c] / 255.0;
  return tile;
}

}  // namespace sst
