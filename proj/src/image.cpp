/*
Copyright 2026 The posefit Authors
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at
    http://www.apache.org/licenses/LICENSE-2.0
Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#include "posefit/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "posefit/common.hpp"

namespace posefit {

void ImageTensor::validate() const {
  POSEFIT_CHECK_SHAPE(data.ndim() == 3, "ImageTensor must be (H,W,C)");
  const int c = channels();
  POSEFIT_CHECK_SHAPE(c == 3 || c == 4, "ImageTensor needs 3 or 4 channels");
  const int color = 3;
  for (int y = 0; y < height(); ++y)
    for (int x = 0; x < width(); ++x) {
      for (int ch = 0; ch < color; ++ch) {
        double v = at(y, x, ch);
        if (!(v >= 0.0 && v <= 1.0))
          throw std::domain_error(strprintf(
              "color value %g out of [0,1] at (%d,%d,%d)", v, y, x, ch));
      }
      if (c == 4 && !(at(y, x, 3) >= 0.0))
        throw std::domain_error("negative depth value");
    }
}

Tensor hwc_to_chw(const ImageTensor& img) {
  const int h = img.height(), w = img.width(), c = img.channels();
  Tensor out(std::vector<int>{c, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        out[(static_cast<int64_t>(ch) * h + y) * w + x] = img.at(y, x, ch);
  return out;
}

ImageTensor chw_to_hwc(const Tensor& chw) {
  POSEFIT_CHECK_SHAPE(chw.ndim() == 3, "chw_to_hwc: need (C,H,W)");
  const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  ImageTensor img(h, w, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        img.at(y, x, ch) = chw[(static_cast<int64_t>(ch) * h + y) * w + x];
  return img;
}

void chw_slice_to_hwc(const Tensor& bchw, int b, ImageTensor* out) {
  POSEFIT_CHECK_SHAPE(bchw.ndim() == 4, "chw_slice_to_hwc: need (B,C,H,W)");
  const int c = bchw.dim(1), h = bchw.dim(2), w = bchw.dim(3);
  *out = ImageTensor(h, w, c);
  const double* base = bchw.data() + static_cast<int64_t>(b) * c * h * w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        out->at(y, x, ch) = base[(static_cast<int64_t>(ch) * h + y) * w + x];
}

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

inline uint8_t to_u8(double v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_png_rgb(const std::string& path, const ImageTensor& img) {
  const int h = img.height(), w = img.width();
  FilePtr fp(fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
               8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) row[static_cast<size_t>(x) * 3 + c] = to_u8(img.at(y, x, c));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageTensor read_png_rgb(const std::string& path) {
  FilePtr fp(fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png read failed: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int w = static_cast<int>(png_get_image_width(png, info));
  ImageTensor img(h, w, 3);
  std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = row[static_cast<size_t>(x) * 3 + c] / 255.0;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png_depth16(const std::string& path, const Tensor& depth) {
  POSEFIT_CHECK_SHAPE(depth.ndim() == 2, "depth map must be (H,W)");
  const int h = depth.dim(0), w = depth.dim(1);
  FilePtr fp(fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
               16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<uint8_t> row(static_cast<size_t>(w) * 2);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v = depth[static_cast<int64_t>(y) * w + x] * kDepthPngScale;
      auto q = static_cast<uint16_t>(std::lround(std::clamp(v, 0.0, 65535.0)));
      row[static_cast<size_t>(x) * 2] = static_cast<uint8_t>(q >> 8);  // big-endian
      row[static_cast<size_t>(x) * 2 + 1] = static_cast<uint8_t>(q & 0xff);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor read_png_depth16(const std::string& path) {
  FilePtr fp(fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png read failed: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  if (png_get_bit_depth(png, info) != 16 ||
      png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("expected 16-bit gray png: " + path);
  }
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int w = static_cast<int>(png_get_image_width(png, info));
  Tensor depth(std::vector<int>{h, w});
  std::vector<uint8_t> row(static_cast<size_t>(w) * 2);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x) {
      uint16_t q = static_cast<uint16_t>((row[static_cast<size_t>(x) * 2] << 8) |
                                         row[static_cast<size_t>(x) * 2 + 1]);
      depth[static_cast<int64_t>(y) * w + x] = q / kDepthPngScale;
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return depth;
}

}  // namespace posefit
