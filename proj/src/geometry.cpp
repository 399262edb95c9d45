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
#include "posefit/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace posefit {

Mat3 rot_x(double a) {
  Mat3 m;
  m << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return m;
}

Mat3 rot_y(double a) {
  Mat3 m;
  m << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return m;
}

Mat3 rot_z(double a) {
  Mat3 m;
  m << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return m;
}

Mat3 euler_to_rotation(double rx, double ry, double rz) {
  return rot_x(rx) * rot_y(ry) * rot_z(rz);
}

void euler_from_rotation(const Mat3& R, double* rx, double* ry, double* rz) {
  // R = Rx Ry Rz gives R(0,2) = sin(ry), R(1,2) = -sin(rx)cos(ry),
  // R(2,2) = cos(rx)cos(ry), R(0,0) = cos(ry)cos(rz), R(0,1) = -cos(ry)sin(rz).
  double sy = std::clamp(R(0, 2), -1.0, 1.0);
  *ry = std::asin(sy);
  if (std::abs(std::cos(*ry)) > 1e-8) {
    *rx = std::atan2(-R(1, 2), R(2, 2));
    *rz = std::atan2(-R(0, 1), R(0, 0));
  } else {
    // gimbal: only rx +- rz observable; pin rz = 0
    *rz = 0.0;
    *rx = std::atan2(R(2, 1), R(1, 1));
  }
}

bool is_rotation_matrix(const Mat3& R, double tol) {
  Mat3 e = R * R.transpose() - Mat3::Identity();
  return e.cwiseAbs().maxCoeff() < tol && std::abs(R.determinant() - 1.0) < tol;
}

Pose::Pose(double rx_, double ry_, double rz_, double tx_, double ty_, double tz_,
           double focal_)
    : rx(rx_), ry(ry_), rz(rz_), tx(tx_), ty(ty_), tz(tz_), focal(focal_) {
  rotation = euler_to_rotation(rx, ry, rz);
}

void Pose::validate() const {
  if (!is_rotation_matrix(rotation, 1e-6 * 10))
    throw std::domain_error("pose rotation is not orthonormal");
  if (!(tz > 0.0)) throw std::domain_error("object behind camera (tz <= 0)");
  Mat3 rebuilt = euler_to_rotation(rx, ry, rz);
  if ((rebuilt - rotation).cwiseAbs().maxCoeff() > 1e-6)
    throw std::domain_error("pose Euler factors do not reproduce the matrix");
}

// --------------------------------------------------------------------------
// Bilinear warp
// --------------------------------------------------------------------------

namespace {

inline double sample_plane(const double* p, int h, int w, int y, int x) {
  if (x < 0 || y < 0 || x >= w || y >= h) return 0.0;
  return p[static_cast<int64_t>(y) * w + x];
}

struct Bilinear {
  int x0, y0;
  double fx, fy;
  double c00, c01, c10, c11;  // c[dy][dx]

  void fetch(const double* plane, int h, int w, double x, double y) {
    x0 = static_cast<int>(std::floor(x));
    y0 = static_cast<int>(std::floor(y));
    fx = x - x0;
    fy = y - y0;
    c00 = sample_plane(plane, h, w, y0, x0);
    c01 = sample_plane(plane, h, w, y0, x0 + 1);
    c10 = sample_plane(plane, h, w, y0 + 1, x0);
    c11 = sample_plane(plane, h, w, y0 + 1, x0 + 1);
  }
  double value() const {
    double top = c00 * (1 - fx) + c01 * fx;
    double bot = c10 * (1 - fx) + c11 * fx;
    return top * (1 - fy) + bot * fy;
  }
  double dvalue_dx() const { return (c01 - c00) * (1 - fy) + (c11 - c10) * fy; }
  double dvalue_dy() const { return (c10 - c00) * (1 - fx) + (c11 - c01) * fx; }
};

inline void scatter_plane(double* p, int h, int w, int y, int x, double g) {
  if (x < 0 || y < 0 || x >= w || y >= h) return;
  p[static_cast<int64_t>(y) * w + x] += g;
}

struct WarpMap {
  double s, c, sn, txi, tyi, focal;
  int h, w;

  WarpMap(const WarpParams& p, double f, int h_, int w_) {
    if (!(p.tz > 0.0)) throw std::domain_error("object behind camera (tz <= 0)");
    s = p.tz / f;  // inverse of the content scale f/tz
    c = std::cos(p.rz);
    sn = std::sin(p.rz);
    txi = p.tx;
    tyi = -p.ty;  // world +y is up, image v grows downward
    focal = f;
    h = h_;
    w = w_;
  }

  // normalized coords of output pixel (i=row, j=col)
  inline void norm(int i, int j, double* pu, double* pv) const {
    *pu = (j + 0.5) / w - 0.5;
    *pv = (i + 0.5) / h - 0.5;
  }

  // inverse content map: q = Rz(rz)^T (s p - t_img). With v pointing down the
  // active world rotation by rz appears as [[c, sn], [-sn, c]] in (u,v).
  inline void src(double pu, double pv, double* qu, double* qv) const {
    double au = s * pu - txi;
    double av = s * pv - tyi;
    *qu = c * au + sn * av;
    *qv = -sn * au + c * av;
  }

  // d(qu,qv)/d{tx,ty,tz,rz} at output point p
  inline void jacobian(double pu, double pv, double dqu[4], double dqv[4]) const {
    double au = s * pu - txi;
    double av = s * pv - tyi;
    dqu[0] = -c;             // d/dtx  (txi = tx)
    dqv[0] = sn;
    dqu[1] = sn;             // d/dty  (tyi = -ty)
    dqv[1] = c;
    dqu[2] = (c * pu + sn * pv) / focal;   // d/dtz via s
    dqv[2] = (-sn * pu + c * pv) / focal;
    dqu[3] = -sn * au + c * av;            // d/drz
    dqv[3] = -c * au - sn * av;
  }
};

}  // namespace

void warp_forward(const double* src, int channels, int h, int w,
                  const WarpParams& p, double focal, double* dst) {
  WarpMap m(p, focal, h, w);
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double pu, pv, qu, qv;
      m.norm(i, j, &pu, &pv);
      m.src(pu, pv, &qu, &qv);
      double x = (qu + 0.5) * w - 0.5;
      double y = (qv + 0.5) * h - 0.5;
      for (int ch = 0; ch < channels; ++ch) {
        Bilinear b;
        b.fetch(src + ch * plane, h, w, x, y);
        dst[ch * plane + i * static_cast<int64_t>(w) + j] = b.value();
      }
    }
  }
}

void warp_backward(const double* src, int channels, int h, int w,
                   const WarpParams& p, double focal, const double* dout,
                   double* dsrc, double* dparams) {
  WarpMap m(p, focal, h, w);
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double pu, pv, qu, qv;
      m.norm(i, j, &pu, &pv);
      m.src(pu, pv, &qu, &qv);
      double x = (qu + 0.5) * w - 0.5;
      double y = (qv + 0.5) * h - 0.5;
      double dqu[4], dqv[4];
      if (dparams) m.jacobian(pu, pv, dqu, dqv);
      for (int ch = 0; ch < channels; ++ch) {
        double g = dout[ch * plane + i * static_cast<int64_t>(w) + j];
        if (g == 0.0) continue;
        Bilinear b;
        b.fetch(src + ch * plane, h, w, x, y);
        if (dparams) {
          double gx = b.dvalue_dx() * w;  // d pixel / d normalized coord
          double gy = b.dvalue_dy() * h;
          for (int k = 0; k < 4; ++k)
            dparams[k] += g * (gx * dqu[k] + gy * dqv[k]);
        }
        if (dsrc) {
          double* dpl = dsrc + ch * plane;
          scatter_plane(dpl, h, w, b.y0, b.x0, g * (1 - b.fx) * (1 - b.fy));
          scatter_plane(dpl, h, w, b.y0, b.x0 + 1, g * b.fx * (1 - b.fy));
          scatter_plane(dpl, h, w, b.y0 + 1, b.x0, g * (1 - b.fx) * b.fy);
          scatter_plane(dpl, h, w, b.y0 + 1, b.x0 + 1, g * b.fx * b.fy);
        }
      }
    }
  }
}

// --------------------------------------------------------------------------
// Trilinear volume rotation
// --------------------------------------------------------------------------

namespace {

// Grid/world mapping for a cubic side-n grid, align-corners over [-1,1].
// Axis order of the data is (d, h, w) -> world (z, -y, x): rows grow downward.
struct VolGrid {
  int n;
  double step;  // world distance between grid points

  explicit VolGrid(int n_) : n(n_), step(n_ > 1 ? 2.0 / (n_ - 1) : 2.0) {}

  inline Vec3 world(int d, int h, int w) const {
    return Vec3(-1.0 + w * step, 1.0 - h * step, -1.0 + d * step);
  }
  // continuous grid coords (fd, fh, fw) of world point
  inline void grid(const Vec3& x, double* fd, double* fh, double* fw) const {
    *fw = (x.x() + 1.0) / step;
    *fh = (1.0 - x.y()) / step;
    *fd = (x.z() + 1.0) / step;
  }
};

struct Trilinear {
  int d0, h0, w0;
  double fd, fh, fw;
  double c[2][2][2];  // [dd][dh][dw]

  void fetch(const double* vol, int n, double d, double h, double w) {
    d0 = static_cast<int>(std::floor(d));
    h0 = static_cast<int>(std::floor(h));
    w0 = static_cast<int>(std::floor(w));
    fd = d - d0;
    fh = h - h0;
    fw = w - w0;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        for (int cix = 0; cix < 2; ++cix) {
          int dd = d0 + a, hh = h0 + b, ww = w0 + cix;
          bool in = dd >= 0 && hh >= 0 && ww >= 0 && dd < n && hh < n && ww < n;
          c[a][b][cix] =
              in ? vol[(static_cast<int64_t>(dd) * n + hh) * n + ww] : 0.0;
        }
  }
  double value() const {
    double v = 0.0;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        for (int cix = 0; cix < 2; ++cix)
          v += c[a][b][cix] * (a ? fd : 1 - fd) * (b ? fh : 1 - fh) *
               (cix ? fw : 1 - fw);
    return v;
  }
  double dvalue_dd() const {
    double v = 0.0;
    for (int b = 0; b < 2; ++b)
      for (int cix = 0; cix < 2; ++cix)
        v += (c[1][b][cix] - c[0][b][cix]) * (b ? fh : 1 - fh) * (cix ? fw : 1 - fw);
    return v;
  }
  double dvalue_dh() const {
    double v = 0.0;
    for (int a = 0; a < 2; ++a)
      for (int cix = 0; cix < 2; ++cix)
        v += (c[a][1][cix] - c[a][0][cix]) * (a ? fd : 1 - fd) * (cix ? fw : 1 - fw);
    return v;
  }
  double dvalue_dw() const {
    double v = 0.0;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        v += (c[a][b][1] - c[a][b][0]) * (a ? fd : 1 - fd) * (b ? fh : 1 - fh);
    return v;
  }
};

inline void scatter_vol(double* vol, int n, int d, int h, int w, double g) {
  if (d < 0 || h < 0 || w < 0 || d >= n || h >= n || w >= n) return;
  vol[(static_cast<int64_t>(d) * n + h) * n + w] += g;
}

}  // namespace

void rotate_volume_forward(const double* src, int channels, int side,
                           const Mat3& R, double* dst) {
  VolGrid grid(side);
  Mat3 S = R.transpose();  // inverse warp
  const int64_t plane = static_cast<int64_t>(side) * side * side;
  for (int d = 0; d < side; ++d)
    for (int h = 0; h < side; ++h)
      for (int w = 0; w < side; ++w) {
        Vec3 x = grid.world(d, h, w);
        Vec3 q = S * x;
        double fd, fh, fw;
        grid.grid(q, &fd, &fh, &fw);
        int64_t off = (static_cast<int64_t>(d) * side + h) * side + w;
        for (int ch = 0; ch < channels; ++ch) {
          Trilinear t;
          t.fetch(src + ch * plane, side, fd, fh, fw);
          dst[ch * plane + off] = t.value();
        }
      }
}

void rotate_volume_backward(const double* src, int channels, int side,
                            const Mat3& R, const std::vector<Mat3>& dR,
                            const double* dout, double* dsrc, double* dparams) {
  VolGrid grid(side);
  Mat3 S = R.transpose();
  std::vector<Mat3> dS(dR.size());
  for (size_t k = 0; k < dR.size(); ++k) dS[k] = dR[k].transpose();
  const int64_t plane = static_cast<int64_t>(side) * side * side;
  // d(grid coords)/d(world coords): w ~ +x, h ~ -y, d ~ +z, all / step
  const double inv_step = 1.0 / grid.step;

  for (int d = 0; d < side; ++d)
    for (int h = 0; h < side; ++h)
      for (int w = 0; w < side; ++w) {
        Vec3 x = grid.world(d, h, w);
        Vec3 q = S * x;
        double fd, fh, fw;
        grid.grid(q, &fd, &fh, &fw);
        int64_t off = (static_cast<int64_t>(d) * side + h) * side + w;
        for (int ch = 0; ch < channels; ++ch) {
          double g = dout[ch * plane + off];
          if (g == 0.0) continue;
          Trilinear t;
          t.fetch(src + ch * plane, side, fd, fh, fw);
          if (dparams && !dS.empty()) {
            // gradient in world coords of the sampled value
            double gw = t.dvalue_dw() * inv_step;
            double gh = -t.dvalue_dh() * inv_step;
            double gd = t.dvalue_dd() * inv_step;
            Vec3 gx(gw, gh, gd);
            for (size_t k = 0; k < dS.size(); ++k) {
              Vec3 dq = dS[k] * x;
              dparams[k] += g * gx.dot(dq);
            }
          }
          if (dsrc) {
            double* dpl = dsrc + ch * plane;
            for (int a = 0; a < 2; ++a)
              for (int b = 0; b < 2; ++b)
                for (int cix = 0; cix < 2; ++cix) {
                  double wgt = (a ? t.fd : 1 - t.fd) * (b ? t.fh : 1 - t.fh) *
                               (cix ? t.fw : 1 - t.fw);
                  scatter_vol(dpl, side, t.d0 + a, t.h0 + b, t.w0 + cix, g * wgt);
                }
          }
        }
      }
}

// --------------------------------------------------------------------------
// Public ops on domain types
// --------------------------------------------------------------------------

ImageTensor similarity_warp(const ImageTensor& image, const Vec3& translation,
                            double rz, double focal) {
  POSEFIT_CHECK_SHAPE(image.height() == image.width(), "similarity_warp expects a square image");
  Tensor chw = hwc_to_chw(image);
  Tensor out(chw.shape);
  WarpParams p{translation.x(), translation.y(), translation.z(), rz};
  warp_forward(chw.data(), image.channels(), image.height(), image.width(), p,
               focal, out.data());
  ImageTensor result = chw_to_hwc(out);
  result.kind = image.kind;
  return result;
}

FeatureVolume transform_volume(const FeatureVolume& vol, const Mat3& R) {
  POSEFIT_CHECK_SHAPE(vol.cubic(), "transform_volume requires a cubic volume (D = H = W)");
  if (!is_rotation_matrix(R)) throw std::domain_error("transform_volume: R is not a rotation");
  FeatureVolume out(vol.channels(), vol.side());
  rotate_volume_forward(vol.data.data(), vol.channels(), vol.side(), R,
                        out.data.data());
  return out;
}

Tensor project_volume(const FeatureVolume& vol) {
  const int c = vol.data.dim(0), d = vol.data.dim(1), h = vol.data.dim(2),
            w = vol.data.dim(3);
  Tensor out(std::vector<int>{c * d, h, w});
  // contiguous (c,d) major order: a plain copy
  std::copy(vol.data.v.begin(), vol.data.v.end(), out.v.begin());
  return out;
}

void warp_batch(const Tensor& src, const std::vector<WarpParams>& params,
                double focal, Tensor* dst) {
  POSEFIT_CHECK_SHAPE(src.ndim() == 4, "warp_batch expects (B,C,H,W)");
  const int b = src.dim(0), c = src.dim(1), h = src.dim(2), w = src.dim(3);
  POSEFIT_CHECK_SHAPE(static_cast<int>(params.size()) == b, "one WarpParams per batch item");
  *dst = Tensor(src.shape);
  const int64_t item = static_cast<int64_t>(c) * h * w;
  for (int i = 0; i < b; ++i)
    warp_forward(src.data() + i * item, c, h, w, params[i], focal,
                 dst->data() + i * item);
}

void rotate_volume_batch(const Tensor& src, const std::vector<Mat3>& rots,
                         Tensor* dst) {
  POSEFIT_CHECK_SHAPE(src.ndim() == 5, "rotate_volume_batch expects (B,C,D,H,W)");
  const int b = src.dim(0), c = src.dim(1), side = src.dim(2);
  POSEFIT_CHECK_SHAPE(src.dim(2) == src.dim(3) && src.dim(3) == src.dim(4),
                      "rotate_volume_batch requires cubic volumes");
  POSEFIT_CHECK_SHAPE(static_cast<int>(rots.size()) == b, "one rotation per batch item");
  *dst = Tensor(src.shape);
  const int64_t item = static_cast<int64_t>(c) * side * side * side;
  for (int i = 0; i < b; ++i)
    rotate_volume_forward(src.data() + i * item, c, side, rots[i],
                          dst->data() + i * item);
}

double rotation_error(const Mat3& pred, const Mat3& gt, bool symmetric) {
  if (!is_rotation_matrix(pred) || !is_rotation_matrix(gt))
    throw std::domain_error("rotation_error: inputs must be rotations");
  auto err = [](const Mat3& a, const Mat3& b) {
    double tr = (a * b.transpose()).trace();
    double arg = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(arg) * 180.0 / M_PI;
  };
  if (!symmetric) return err(pred, gt);
  // vertical-axis (y) rotations of the ground truth are free; 1-degree grid
  double best = 360.0;
  for (int deg = 0; deg < 360; ++deg) {
    double th = deg * M_PI / 180.0;
    best = std::min(best, err(pred, gt * rot_y(th)));
  }
  return best;
}

double translation_error(const Vec3& pred, const Vec3& gt) {
  return (pred - gt).norm();
}

}  // namespace posefit
