// PNG read/write through libpng: 8-bit RGB images and 16-bit disparity maps.
//
// Disparity PNGs follow the KITTI convention: value 0 marks an invalid pixel,
// otherwise disparity = value / 256.
#pragma once

#include <pointfix/tensor.hpp>

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace pointfix {

struct PngImage {
  std::size_t width = 0, height = 0, channels = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;  ///< row-major, interleaved
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] inline void png_fail(png_structp, png_const_charp msg) { throw std::runtime_error(std::string("png: ") + msg); }
inline void png_warn(png_structp, png_const_charp) {}

}  // namespace detail

inline void write_png(const std::string& path, const PngImage& img) {
  if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("write_png: 1 or 3 channels");
  if (img.samples.size() != img.width * img.height * img.channels)
    throw std::invalid_argument("write_png: sample count mismatch");
  detail::FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_fail, detail::png_warn);
  png_infop info = png_create_info_struct(png);
  try {
    png_init_io(png, f.get());
    png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), img.bit_depth,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t bps = img.bit_depth == 16 ? 2 : 1;
    std::vector<unsigned char> row(img.width * img.channels * bps);
    for (std::size_t y = 0; y < img.height; ++y) {
      const std::uint16_t* src = img.samples.data() + y * img.width * img.channels;
      for (std::size_t i = 0; i < img.width * img.channels; ++i) {
        if (bps == 1) {
          row[i] = static_cast<unsigned char>(src[i]);
        } else {
          row[2 * i] = static_cast<unsigned char>(src[i] >> 8);  // PNG is big-endian
          row[2 * i + 1] = static_cast<unsigned char>(src[i] & 0xFF);
        }
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, info);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
}

inline PngImage read_png(const std::string& path) {
  detail::FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("read_png: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_fail, detail::png_warn);
  png_infop info = png_create_info_struct(png);
  PngImage img;
  try {
    png_init_io(png, f.get());
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    img.bit_depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && img.bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (img.bit_depth < 8) img.bit_depth = 8;
    png_read_update_info(png, info);
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.channels = png_get_channels(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<unsigned char> row(rowbytes);
    img.samples.resize(img.width * img.height * img.channels);
    for (std::size_t y = 0; y < img.height; ++y) {
      png_read_row(png, row.data(), nullptr);
      std::uint16_t* dst = img.samples.data() + y * img.width * img.channels;
      for (std::size_t i = 0; i < img.width * img.channels; ++i)
        dst[i] = img.bit_depth == 16 ? std::uint16_t((row[2 * i] << 8) | row[2 * i + 1]) : row[i];
    }
    png_read_end(png, nullptr);
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

/// [H,W,3] in [0,1] -> 8-bit RGB.
template <typename T>
void write_rgb_png(const std::string& path, const Tensor<T>& image) {
  if (image.ndim() != 3 || image.dim(2) != 3) throw std::invalid_argument("write_rgb_png: image must be [H,W,3]");
  PngImage img{image.dim(1), image.dim(0), 3, 8, {}};
  img.samples.reserve(image.numel());
  for (T v : image.values())
    img.samples.push_back(std::uint16_t(std::lround(std::clamp(double(v), 0.0, 1.0) * 255.0)));
  write_png(path, img);
}

template <typename T>
Tensor<T> read_rgb_png(const std::string& path) {
  const PngImage img = read_png(path);
  if (img.channels != 3) throw std::runtime_error("read_rgb_png: " + path + " is not RGB");
  const double scale = img.bit_depth == 16 ? 65535.0 : 255.0;
  std::vector<T> v;
  v.reserve(img.samples.size());
  for (auto s : img.samples) v.push_back(T(double(s) / scale));
  return Tensor<T>::constant({img.height, img.width, 3}, std::move(v));
}

/// Disparity [H,W] and validity -> 16-bit PNG (0 = invalid, d * 256 otherwise).
template <typename T>
void write_disparity_png(const std::string& path, const Tensor<T>& disp, const Tensor<T>* valid = nullptr) {
  if (disp.ndim() != 2) throw std::invalid_argument("write_disparity_png: disparity must be [H,W]");
  PngImage img{disp.dim(1), disp.dim(0), 1, 16, {}};
  img.samples.reserve(disp.numel());
  for (std::size_t i = 0; i < disp.numel(); ++i) {
    if (valid && (*valid)[i] <= T(0.5)) {
      img.samples.push_back(0);
      continue;
    }
    const long q = std::lround(std::max(0.0, double(disp[i])) * 256.0);
    img.samples.push_back(std::uint16_t(std::clamp(q, 1L, 65535L)));
  }
  write_png(path, img);
}

/// 16-bit disparity PNG -> (disparity, valid).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> read_disparity_png(const std::string& path) {
  const PngImage img = read_png(path);
  if (img.channels != 1 || img.bit_depth != 16)
    throw std::runtime_error("read_disparity_png: " + path + " is not a 16-bit grayscale PNG");
  std::vector<T> d, v;
  for (auto s : img.samples) {
    d.push_back(T(double(s) / 256.0));
    v.push_back(s > 0 ? T(1) : T(0));
  }
  const Shape shape{img.height, img.width};
  return {Tensor<T>::constant(shape, std::move(d)), Tensor<T>::constant(shape, std::move(v))};
}

}  // namespace pointfix
