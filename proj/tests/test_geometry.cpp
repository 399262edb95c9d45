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
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "posefit/geometry.hpp"
#include "posefit/rng.hpp"

using namespace posefit;

namespace {

ImageTensor smooth_image(int n, Rng& rng, int c = 3) {
  ImageTensor img(n, n, c);
  for (int ch = 0; ch < c; ++ch) {
    auto p = oracles::smooth_plane(n, n, rng);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) img.at(y, x, ch) = p[static_cast<size_t>(y) * n + x];
  }
  return img;
}

}  // namespace

TEST_CASE("euler_to_rotation basics") {
  Mat3 id = euler_to_rotation(0, 0, 0);
  CHECK((id - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-15);

  Mat3 halfturn = euler_to_rotation(0, 0, M_PI);
  Mat3 expect;
  expect << -1, 0, 0, 0, -1, 0, 0, 0, 1;
  CHECK((halfturn - expect).cwiseAbs().maxCoeff() < 1e-12);

  // against the independent brute-force product
  double rx = 0.3, ry = -0.7, rz = 1.1;
  auto ref = oracles::mm(oracles::mrx(rx), oracles::mm(oracles::mry(ry), oracles::mrz(rz)));
  Mat3 got = euler_to_rotation(rx, ry, rz);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(got(i, j) == doctest::Approx(ref[i][j]).epsilon(1e-12));

  CHECK(is_rotation_matrix(got));
}

TEST_CASE("euler round trip") {
  Rng rng(7);
  for (int t = 0; t < 50; ++t) {
    double rx = rng.uniform(-1.4, 1.4), ry = rng.uniform(-1.4, 1.4), rz = rng.uniform(-3.1, 3.1);
    Mat3 r = euler_to_rotation(rx, ry, rz);
    double ax, ay, az;
    euler_from_rotation(r, &ax, &ay, &az);
    Mat3 r2 = euler_to_rotation(ax, ay, az);
    CHECK((r - r2).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("pose invariants") {
  Pose p(0.2, 1.0, -0.4, 0.1, -0.1, 1.2);
  p.validate();
  CHECK((p.rotation * p.rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(p.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-12));

  Pose bad = p;
  bad.tz = -0.5;
  CHECK_THROWS_AS(bad.validate(), std::domain_error);

  Pose mismatched = p;
  mismatched.rx += 0.2;  // stored factors no longer reproduce the matrix
  CHECK_THROWS_AS(mismatched.validate(), std::domain_error);
}

TEST_CASE("similarity_warp identity and scaling") {
  Rng rng(11);
  ImageTensor img = smooth_image(32, rng);

  // tz = f: scale 1, identity map
  ImageTensor same = similarity_warp(img, Vec3(0, 0, 1.0), 0.0, 1.0);
  double derr = 0;
  for (int64_t i = 0; i < img.data.numel(); ++i)
    derr = std::max(derr, std::fabs(same.data[i] - img.data[i]));
  CHECK(derr < 1e-6);

  // tz = 2f halves the image about its center: the content point that was at
  // normalized (0.4, 0) must land at (0.2, 0).
  ImageTensor half = similarity_warp(img, Vec3(0, 0, 2.0), 0.0, 1.0);
  auto norm_to_px = [&](double u, double v, int* x, int* y) {
    *x = static_cast<int>(std::lround((u + 0.5) * img.width() - 0.5));
    *y = static_cast<int>(std::lround((v + 0.5) * img.height() - 0.5));
  };
  // the content point at normalized (0.4, 0) lands at (0.2, 0): the output
  // pixel nearest (0.2, 0) must sample the input at exactly twice its
  // normalized coordinates (checked with the independent reference sampler)
  int xd, yd;
  norm_to_px(0.2, 0.0, &xd, &yd);
  double out_u = (xd + 0.5) / img.width() - 0.5;
  double out_v = (yd + 0.5) / img.height() - 0.5;
  double src_x = (2.0 * out_u + 0.5) * img.width() - 0.5;
  double src_y = (2.0 * out_v + 0.5) * img.height() - 0.5;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> plane(static_cast<size_t>(img.height()) * img.width());
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x)
        plane[static_cast<size_t>(y) * img.width() + x] = img.at(y, x, c);
    double expect = oracles::bilinear_ref(plane, img.height(), img.width(), src_y, src_x);
    CHECK(half.at(yd, xd, c) == doctest::Approx(expect).epsilon(1e-10));
  }

  CHECK_THROWS_AS(similarity_warp(img, Vec3(0, 0, -1.0), 0.0, 1.0), std::domain_error);
  CHECK_THROWS_AS(similarity_warp(img, Vec3(0, 0, 0.0), 0.0, 1.0), std::domain_error);
}

TEST_CASE("similarity_warp matches brute-force per-pixel oracle") {
  Rng rng(13);
  const int n = 24;
  ImageTensor img = smooth_image(n, rng);
  double tx = 0.1, ty = -0.2, tz = 1.0, rz = M_PI / 2;
  ImageTensor got = similarity_warp(img, Vec3(tx, ty, tz), rz, 1.0);
  for (int c = 0; c < 3; ++c) {
    std::vector<double> plane(static_cast<size_t>(n) * n);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) plane[static_cast<size_t>(y) * n + x] = img.at(y, x, c);
    auto ref = oracles::warp_ref(plane, n, n, tx, ty, tz, rz, 1.0);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        CHECK(got.at(y, x, c) == doctest::Approx(ref[static_cast<size_t>(y) * n + x]).epsilon(1e-10));
  }
}

TEST_CASE("similarity_warp inverse recovers image") {
  Rng rng(17);
  const int n = 48;
  ImageTensor img = smooth_image(n, rng);
  double tx = 0.05, ty = 0.08, tz = 1.1, rz = 0.4;
  ImageTensor fwd = similarity_warp(img, Vec3(tx, ty, tz), rz, 1.0);
  // inverse warp parameters: rz' = -rz, tz' = f^2/tz, and the translation
  // chosen so the composed content map is the identity
  double c = std::cos(rz), s = std::sin(rz);
  double txr = (-c * tx + s * ty) / tz, tyr = -(s * tx + c * ty) / tz;
  ImageTensor back = similarity_warp(fwd, Vec3(txr, tyr, 1.0 / tz), -rz, 1.0);
  double mae = 0;
  int cnt = 0;
  for (int y = 2; y < n - 2; ++y)
    for (int x = 2; x < n - 2; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        mae += std::fabs(back.at(y, x, ch) - img.at(y, x, ch));
        ++cnt;
      }
  CHECK(mae / cnt < 1e-2);
}

TEST_CASE("warp analytic gradients vs finite differences") {
  Rng rng(19);
  const int n = 32;
  double max_re = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    auto plane = oracles::smooth_plane(n, n, rng);
    std::vector<double> params = {rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15),
                                  rng.uniform(0.7, 1.4), rng.uniform(-1.0, 1.0)};
    auto f = [&](const std::vector<double>& p) {
      std::vector<double> out(plane.size());
      WarpParams wp{p[0], p[1], p[2], p[3]};
      warp_forward(plane.data(), 1, n, n, wp, 1.0, out.data());
      double s = 0;
      for (size_t i = 0; i < out.size(); ++i) s += out[i] * (0.3 + 0.1 * (i % 7));
      return s;
    };
    // analytic
    std::vector<double> dout(plane.size());
    for (size_t i = 0; i < dout.size(); ++i) dout[i] = 0.3 + 0.1 * (i % 7);
    double dparams[4] = {0, 0, 0, 0};
    WarpParams wp{params[0], params[1], params[2], params[3]};
    warp_backward(plane.data(), 1, n, n, wp, 1.0, dout.data(), nullptr, dparams);
    auto fd = oracles::fd_gradient(f, params);
    double re = oracles::rel_error({dparams[0], dparams[1], dparams[2], dparams[3]}, fd);
    max_re = std::max(max_re, re);
  }
  CHECK(max_re < 1e-3);
}

TEST_CASE("warp gradient w.r.t. source image") {
  Rng rng(23);
  const int n = 10;
  auto plane = oracles::smooth_plane(n, n, rng);
  WarpParams wp{0.04, -0.06, 1.15, 0.3};
  std::vector<double> dout(plane.size());
  for (size_t i = 0; i < dout.size(); ++i) dout[i] = 0.5 + 0.01 * (i % 5);
  std::vector<double> dsrc(plane.size(), 0.0);
  warp_backward(plane.data(), 1, n, n, wp, 1.0, dout.data(), dsrc.data(), nullptr);
  auto f = [&](const std::vector<double>& img) {
    std::vector<double> out(img.size());
    warp_forward(img.data(), 1, n, n, wp, 1.0, out.data());
    double s = 0;
    for (size_t i = 0; i < out.size(); ++i) s += out[i] * dout[i];
    return s;
  };
  auto fd = oracles::fd_gradient(f, plane);
  CHECK(oracles::rel_error(dsrc, fd) < 1e-6);  // warp is linear in the image
}

TEST_CASE("transform_volume identity and involution") {
  Rng rng(29);
  FeatureVolume vol;
  vol.data = oracles::smooth_volume(2, 12, rng);

  FeatureVolume same = transform_volume(vol, Mat3::Identity());
  double m = 0;
  for (int64_t i = 0; i < vol.data.numel(); ++i)
    m = std::max(m, std::fabs(same.data.data()[i] - vol.data.data()[i]));
  CHECK(m < 1e-6);

  Mat3 rzpi = rot_z(M_PI);
  FeatureVolume once = transform_volume(vol, rzpi);
  FeatureVolume twice = transform_volume(once, rzpi);
  double m2 = 0;
  for (int64_t i = 0; i < vol.data.numel(); ++i)
    m2 = std::max(m2, std::fabs(twice.data.data()[i] - vol.data.data()[i]));
  CHECK(m2 < 1e-4);

  FeatureVolume bad;
  bad.data = Tensor(std::vector<int>{2, 4, 4, 5});
  CHECK_THROWS_AS(transform_volume(bad, Mat3::Identity()), ShapeError);
}

TEST_CASE("transform_volume composition") {
  Rng rng(31);
  FeatureVolume vol;
  vol.data = oracles::smooth_volume(1, 16, rng);
  Mat3 ra = euler_to_rotation(0.3, 0.5, 0.0);
  Mat3 rb = euler_to_rotation(-0.2, 0.0, 0.4);
  FeatureVolume seq = transform_volume(transform_volume(vol, ra), rb);
  FeatureVolume direct = transform_volume(vol, rb * ra);
  double mad = 0;
  for (int64_t i = 0; i < vol.data.numel(); ++i)
    mad += std::fabs(seq.data.data()[i] - direct.data.data()[i]);
  mad /= static_cast<double>(vol.data.numel());
  CHECK(mad < 2e-2);
}

TEST_CASE("rotate_volume gradients vs finite differences") {
  Rng rng(37);
  const int side = 12;
  double max_re = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Tensor vol = oracles::smooth_volume(1, side, rng);
    std::vector<double> angles = {rng.uniform(-0.5, 1.0), rng.uniform(-3.0, 3.0)};
    std::vector<double> dout(static_cast<size_t>(vol.numel()));
    for (size_t i = 0; i < dout.size(); ++i) dout[i] = 0.4 + 0.05 * (i % 9);
    auto f = [&](const std::vector<double>& a) {
      Tensor out(vol.shape);
      rotate_volume_forward(vol.data(), 1, side, rot_x(a[0]) * rot_y(a[1]), out.data());
      double s = 0;
      for (int64_t i = 0; i < out.numel(); ++i) s += out[i] * dout[static_cast<size_t>(i)];
      return s;
    };
    double ax = angles[0], ay = angles[1];
    Mat3 rx = rot_x(ax), ry = rot_y(ay);
    Mat3 drx, dry;
    drx << 0, 0, 0, 0, -std::sin(ax), -std::cos(ax), 0, std::cos(ax), -std::sin(ax);
    dry << -std::sin(ay), 0, std::cos(ay), 0, 0, 0, -std::cos(ay), 0, -std::sin(ay);
    double dparams[2] = {0, 0};
    rotate_volume_backward(vol.data(), 1, side, rx * ry, {drx * ry, rx * dry},
                           dout.data(), nullptr, dparams);
    auto fd = oracles::fd_gradient(f, angles);
    max_re = std::max(max_re, oracles::rel_error({dparams[0], dparams[1]}, fd));
  }
  CHECK(max_re < 1e-3);
}

TEST_CASE("project_volume") {
  FeatureVolume ones(4, 8);
  // non-cubic projection is fine; only rotation needs cubic grids
  Tensor vol(std::vector<int>{4, 8, 16, 16});
  for (auto& v : vol.v) v = 1.0;
  FeatureVolume fv;
  fv.data = vol;
  Tensor proj = project_volume(fv);
  CHECK(proj.shape == std::vector<int>{32, 16, 16});
  for (double v : proj.v) CHECK(v == 1.0);

  // exhaustive index oracle on a small volume
  Tensor small(std::vector<int>{2, 2, 3, 3});
  for (int64_t i = 0; i < small.numel(); ++i) small[i] = static_cast<double>(i) * 0.25;
  FeatureVolume sv;
  sv.data = small;
  Tensor p2 = project_volume(sv);
  const int d = 2, h = 3, w = 3;
  for (int c = 0; c < 2; ++c)
    for (int dd = 0; dd < d; ++dd)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          CHECK(p2[((static_cast<int64_t>(c * d + dd)) * h + y) * w + x] ==
                small[((static_cast<int64_t>(c) * d + dd) * h + y) * w + x]);
}

TEST_CASE("rotation_error") {
  Mat3 id = Mat3::Identity();
  CHECK(rotation_error(id, id, false) == doctest::Approx(0.0));
  CHECK(rotation_error(rot_z(M_PI), id, false) == doctest::Approx(180.0));
  CHECK(rotation_error(rot_y(47.0 * M_PI / 180.0), id, true) == doctest::Approx(0.0).epsilon(1e-9));

  Mat3 junk = Mat3::Identity() * 2.0;
  CHECK_THROWS_AS(rotation_error(junk, id, false), std::domain_error);

  // symmetry + left-invariance properties
  Rng rng(41);
  for (int t = 0; t < 25; ++t) {
    Mat3 a = euler_to_rotation(rng.uniform(-1, 1), rng.uniform(-3, 3), rng.uniform(-1, 1));
    Mat3 b = euler_to_rotation(rng.uniform(-1, 1), rng.uniform(-3, 3), rng.uniform(-1, 1));
    Mat3 q = euler_to_rotation(rng.uniform(-1, 1), rng.uniform(-3, 3), rng.uniform(-1, 1));
    double e1 = rotation_error(a, b, false);
    CHECK(rotation_error(b, a, false) == doctest::Approx(e1).epsilon(1e-9));
    CHECK(rotation_error(q * a, q * b, false) == doctest::Approx(e1).epsilon(1e-7));
    // symmetric flag never increases the error
    CHECK(rotation_error(a, b, true) <= e1 + 1e-12);
  }

  // no NaN when the trace is at the numerical edge
  Mat3 nearly = euler_to_rotation(1e-9, -1e-9, 1e-9);
  double e = rotation_error(nearly, id, false);
  CHECK(std::isfinite(e));
}

TEST_CASE("translation_error") {
  CHECK(translation_error(Vec3(1, 2, 3), Vec3(1, 2, 3)) == 0.0);
  CHECK(translation_error(Vec3(1, 0, 0), Vec3(0, 0, 0)) == 1.0);
  CHECK(translation_error(Vec3(0.3, -0.4, 1.2), Vec3(0, 0, 1)) ==
        doctest::Approx(0.53852).epsilon(1e-5));
}

TEST_CASE("batched variants match per-item results") {
  Rng rng(43);
  const int n = 16, b = 3;
  Tensor batch(std::vector<int>{b, 2, n, n});
  std::vector<WarpParams> params;
  for (int i = 0; i < b; ++i) {
    for (int c = 0; c < 2; ++c) {
      auto p = oracles::smooth_plane(n, n, rng);
      std::copy(p.begin(), p.end(),
                batch.data() + (static_cast<int64_t>(i) * 2 + c) * n * n);
    }
    params.push_back({rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1),
                      rng.uniform(0.8, 1.3), rng.uniform(-1, 1)});
  }
  Tensor out;
  warp_batch(batch, params, 1.0, &out);
  for (int i = 0; i < b; ++i) {
    Tensor one(std::vector<int>{2, n, n});
    warp_forward(batch.data() + static_cast<int64_t>(i) * 2 * n * n, 2, n, n,
                 params[i], 1.0, one.data());
    for (int64_t k = 0; k < one.numel(); ++k)
      CHECK(out[static_cast<int64_t>(i) * 2 * n * n + k] == one[k]);
  }
}
