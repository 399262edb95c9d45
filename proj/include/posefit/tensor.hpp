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

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "posefit/common.hpp"

namespace posefit {

// Dense row-major double tensor. All network math runs in double so analytic
// gradients can be checked against central finite differences directly.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    v.assign(static_cast<size_t>(numel_of(shape)), 0.0);
  }
  Tensor(std::vector<int> s, double fill) : shape(std::move(s)) {
    v.assign(static_cast<size_t>(numel_of(shape)), fill);
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  double* data() { return v.data(); }
  const double* data() const { return v.data(); }

  double& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(double x) { std::fill(v.begin(), v.end(), x); }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }

  double sum() const { return std::accumulate(v.begin(), v.end(), 0.0); }

  double abs_max() const {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::fabs(x));
    return m;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

}  // namespace posefit
