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
// Independent oracles used by the test suites. Everything here is written
// from first principles (plain loops, no shared helpers) so it stays
// independent of the library implementation it checks.
#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include "posefit/rng.hpp"
#include "posefit/tensor.hpp"

namespace oracles {

// ---- brute-force 3x3 matrix product -------------------------------------

using M33 = std::array<std::array<double, 3>, 3>;

inline M33 mm(const M33& a, const M33& b) {
  M33 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a[i][k] * b[k][j];
      r[i][j] = s;
    }
  return r;
}

inline M33 mrx(double a) {
  return {{{1, 0, 0}, {0, std::cos(a), -std::sin(a)}, {0, std::sin(a), std::cos(a)}}};
}
inline M33 mry(double a) {
  return {{{std::cos(a), 0, std::sin(a)}, {0, 1, 0}, {-std::sin(a), 0, std::cos(a)}}};
}
inline M33 mrz(double a) {
  return {{{std::cos(a), -std::sin(a), 0}, {std::sin(a), std::cos(a), 0}, {0, 0, 1}}};
}

// ---- independent bilinear sampler + Eq.-style warp loop ------------------

// Samples a (H,W) plane at continuous pixel coords with zero fill.
inline double bilinear_ref(const std::vector<double>& plane, int h, int w,
                           double y, double x) {
  int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  double fx = x - x0, fy = y - y0;
  auto px = [&](int yy, int xx) -> double {
    if (xx < 0 || yy < 0 || xx >= w || yy >= h) return 0.0;
    return plane[static_cast<size_t>(yy) * w + xx];
  };
  return px(y0, x0) * (1 - fx) * (1 - fy) + px(y0, x0 + 1) * fx * (1 - fy) +
         px(y0 + 1, x0) * (1 - fx) * fy + px(y0 + 1, x0 + 1) * fx * fy;
}

// Evaluates the similarity warp at every output pixel of one channel plane:
// content map m(q) = (f/tz)(Rz q + [tx,-ty]) in centered normalized coords,
// v axis pointing down, active rotation.
inline std::vector<double> warp_ref(const std::vector<double>& plane, int h, int w,
                                    double tx, double ty, double tz, double rz,
                                    double f) {
  std::vector<double> out(static_cast<size_t>(h) * w, 0.0);
  double c = std::cos(rz), s = std::sin(rz);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double pu = (j + 0.5) / w - 0.5;
      double pv = (i + 0.5) / h - 0.5;
      // invert m: q = Rz^{-1}((tz/f) p - t_img); image-frame active rotation
      // by rz is [[c, s], [-s, c]], so the inverse is its transpose.
      double au = (tz / f) * pu - tx;
      double av = (tz / f) * pv + ty;
      double qu = c * au + s * av;
      double qv = -s * au + c * av;
      double x = (qu + 0.5) * w - 0.5;
      double y = (qv + 0.5) * h - 0.5;
      out[static_cast<size_t>(i) * w + j] = bilinear_ref(plane, h, w, y, x);
    }
  return out;
}

// ---- finite differences ---------------------------------------------------

// Central finite-difference gradient of f at x.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double step = 1e-4) {
  std::vector<double> grad(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double orig = x[i];
    x[i] = orig + step;
    double fp = f(x);
    x[i] = orig - step;
    double fm = f(x);
    x[i] = orig;
    grad[i] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

inline double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / (std::sqrt(den) + 1e-30);
}

// ---- smooth band-limited test signals -------------------------------------

// Low-frequency sinusoid mixture on a (H,W) plane in [0,1], tapered to zero
// at the border like a segmented object image. The taper keeps zero-fill
// boundary effects out of interpolation-kink-sensitive finite differences.
inline std::vector<double> smooth_plane(int h, int w, posefit::Rng& rng) {
  std::vector<double> p(static_cast<size_t>(h) * w);
  double a1 = rng.uniform(0.5, 1.2), a2 = rng.uniform(0.5, 1.2);
  double p1 = rng.uniform(0, 6.28), p2 = rng.uniform(0, 6.28);
  auto taper = [](double t) {  // 1 in the middle, smooth falloff to 0 at edges
    double d = std::min(t, 1.0 - t) * 2.0;  // 0 at edge, 1 at center
    double s = std::min(1.0, d / 0.6);
    return s * s * (3 - 2 * s);
  };
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double u = (j + 0.5) / w, v = (i + 0.5) / h;
      double val = 0.5 + 0.25 * std::sin(a1 * 6.28 * u + p1) * std::cos(a2 * 6.28 * v + p2);
      p[static_cast<size_t>(i) * w + j] = val * taper(u) * taper(v);
    }
  return p;
}

// Band-limited volume with a radial taper to zero before the cube boundary,
// so rotations do not clip appreciable content at the corners.
inline posefit::Tensor smooth_volume(int c, int side, posefit::Rng& rng) {
  posefit::Tensor t(std::vector<int>{c, side, side, side});
  for (int ch = 0; ch < c; ++ch) {
    double ax = rng.uniform(0.4, 0.9), ay = rng.uniform(0.4, 0.9), az = rng.uniform(0.4, 0.9);
    double ph = rng.uniform(0, 6.28);
    for (int d = 0; d < side; ++d)
      for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) {
          double x = 2.0 * j / (side - 1) - 1, y = 2.0 * i / (side - 1) - 1,
                 z = 2.0 * d / (side - 1) - 1;
          double r = std::sqrt(x * x + y * y + z * z);
          double s = std::clamp((0.85 - r) / 0.35, 0.0, 1.0);
          double wgt = s * s * (3 - 2 * s);
          t[((static_cast<int64_t>(ch) * side + d) * side + i) * side + j] =
              (0.5 + 0.3 * std::sin(2.2 * (ax * x + ay * y + az * z) + ph)) * wgt;
        }
  }
  return t;
}

// ---- counting AP oracle ----------------------------------------------------

// precision at each threshold = included records with error <= t / included
inline std::vector<double> ap_counting_ref(const std::vector<double>& errors,
                                           const std::vector<double>& overlaps,
                                           const std::vector<double>& thresholds,
                                           double detection_threshold) {
  std::vector<double> out;
  for (double t : thresholds) {
    int n = 0, hit = 0;
    for (size_t i = 0; i < errors.size(); ++i) {
      if (overlaps[i] < detection_threshold) continue;
      ++n;
      if (errors[i] <= t) ++hit;
    }
    out.push_back(n == 0 ? -1.0 : static_cast<double>(hit) / n);
  }
  return out;
}

// ---- Gaussian KL by quadrature (d = 1) -------------------------------------

// KL(N(mu, sigma^2) || N(0,1)) via Simpson integration
inline double kl_quadrature_ref(double mu, double sigma) {
  auto logpdf = [](double x, double m, double s) {
    return -0.5 * std::log(2.0 * M_PI) - std::log(s) - (x - m) * (x - m) / (2 * s * s);
  };
  double lo = mu - 12 * sigma - 12, hi = mu + 12 * sigma + 12;
  int n = 20000;  // even
  double hstep = (hi - lo) / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    double x = lo + i * hstep;
    double p = std::exp(logpdf(x, mu, sigma));
    double f = p * (logpdf(x, mu, sigma) - logpdf(x, 0.0, 1.0));
    double wgt = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += wgt * f;
  }
  return acc * hstep / 3.0;
}

}  // namespace oracles
