#pragma once

// 8-bit single-channel PNG read/write for label and mask frames.

#include <png.h>

#include <algorithm>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "decaf/error.hpp"
#include "decaf/tensor.hpp"

namespace decaf {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace detail

/// Reads an 8-bit PNG. Gray images are returned as-is; palette images yield
/// palette indices; RGB(A) images are reduced to their first channel.
inline LabelImage read_png_gray(const std::filesystem::path& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw FormatError("cannot open " + path.string());

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, detail::png_warning_fn);
  if (!png) throw FormatError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* png;
    png_infop* info;
    ~Guard() { png_destroy_read_struct(png, info, nullptr); }
  } guard{&png, &info};
  if (!info) throw FormatError("png_create_info_struct failed");

  // Buffers live outside the setjmp scope so a libpng longjmp never skips a destructor.
  std::vector<png_byte> buf;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0, height = 0;
  std::size_t channels = 1;
  if (setjmp(png_jmpbuf(png))) throw FormatError(path.string() + ": corrupt PNG");

  png_init_io(png, fp.get());
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (depth < 8 && color == PNG_COLOR_TYPE_GRAY) png_set_expand_gray_1_2_4_to_8(png);
  if (depth < 8 && color == PNG_COLOR_TYPE_PALETTE) png_set_packing(png);
  png_read_update_info(png, info);
  channels = png_get_channels(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buf.resize(rowbytes * height);
  rows.resize(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = buf.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);

  LabelImage img(height, width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) img(y, x) = rows[y][x * channels];
  return img;
}

inline void write_png_gray(const LabelImage& img, const std::filesystem::path& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw FormatError("cannot write " + path.string());
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, detail::png_warning_fn);
  if (!png) throw FormatError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* png;
    png_infop* info;
    ~Guard() { png_destroy_write_struct(png, info); }
  } guard{&png, &info};
  if (!info) throw FormatError("png_create_info_struct failed");

  std::vector<png_byte> row(img.width());
  if (setjmp(png_jmpbuf(png))) throw FormatError("failed writing " + path.string());
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()),
               static_cast<png_uint_32>(img.height()), 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) row[x] = img(y, x);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
}

/// Sorted *.png paths of a directory.
inline std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw FormatError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::ranges::sort(out);
  return out;
}

inline std::vector<LabelImage> read_png_sequence(const std::filesystem::path& dir) {
  std::vector<LabelImage> frames;
  for (const auto& p : list_pngs(dir)) frames.push_back(read_png_gray(p));
  if (frames.empty()) throw FormatError("no PNG frames in " + dir.string());
  for (const auto& f : frames)
    if (!f.same_shape(frames.front()))
      throw FormatError("frames in " + dir.string() + " differ in size");
  return frames;
}

inline std::string frame_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu.png", index);
  return buf;
}

}  // namespace decaf
