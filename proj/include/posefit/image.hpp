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
#pragma once

#include <string>
#include <vector>

#include "posefit/tensor.hpp"

namespace posefit {

enum class ImageKind { RGB, RGBD };

// H x W x C image, color channels in [0,1]. For RGBD the fourth channel is
// nonnegative depth; which encoding (relative or absolute scene units) it
// carries depends on context and is documented at each producer.
struct ImageTensor {
  Tensor data;  // shape (H, W, C)
  ImageKind kind = ImageKind::RGB;

  ImageTensor() = default;
  ImageTensor(int h, int w, int c)
      : data(std::vector<int>{h, w, c}), kind(c == 4 ? ImageKind::RGBD : ImageKind::RGB) {}

  int height() const { return data.dim(0); }
  int width() const { return data.dim(1); }
  int channels() const { return data.dim(2); }

  double& at(int y, int x, int c) {
    return data[(static_cast<int64_t>(y) * width() + x) * channels() + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<int64_t>(y) * width() + x) * channels() + c];
  }

  void validate() const;  // range invariants
};

// Layout conversions between the HWC domain type and the CHW planes the
// network and the geometry cores operate on.
Tensor hwc_to_chw(const ImageTensor& img);                    // (C,H,W)
ImageTensor chw_to_hwc(const Tensor& chw);                    // from (C,H,W)
void chw_slice_to_hwc(const Tensor& bchw, int b, ImageTensor* out);

// Lossless PNG io. Color images are 8-bit RGB; depth maps are 16-bit gray
// with a fixed counts-per-scene-unit scale.
constexpr double kDepthPngScale = 20000.0;

void write_png_rgb(const std::string& path, const ImageTensor& img);   // first 3 channels
ImageTensor read_png_rgb(const std::string& path);
void write_png_depth16(const std::string& path, const Tensor& depth);  // (H,W) scene units
Tensor read_png_depth16(const std::string& path);

}  // namespace posefit
