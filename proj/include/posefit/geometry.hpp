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

#include <Eigen/Dense>
#include <vector>

#include "posefit/image.hpp"
#include "posefit/tensor.hpp"

namespace posefit {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

// Rotation factors. Convention throughout: R = Rx(rx) * Ry(ry) * Rz(rz),
// applied actively to object points. Camera looks down +z, world y points up,
// image rows increase downward. rx is elevation, ry azimuth, rz in-plane.
Mat3 rot_x(double a);
Mat3 rot_y(double a);
Mat3 rot_z(double a);
Mat3 euler_to_rotation(double rx, double ry, double rz);
// Inverse of euler_to_rotation away from the ry = +-pi/2 gimbal configuration.
void euler_from_rotation(const Mat3& R, double* rx, double* ry, double* rz);

// Rigid object pose plus camera focal length (pixel-free normalized units:
// an object point at lateral offset x and depth tz lands at f*x/tz of the
// image width from the center).
struct Pose {
  double rx = 0.0, ry = 0.0, rz = 0.0;
  double tx = 0.0, ty = 0.0, tz = 1.0;
  double focal = 1.0;
  Mat3 rotation = Mat3::Identity();

  Pose() = default;
  Pose(double rx_, double ry_, double rz_, double tx_, double ty_, double tz_,
       double focal_ = 1.0);

  Vec3 translation() const { return Vec3(tx, ty, tz); }
  // Throws std::domain_error on violated invariants (orthonormality, det,
  // tz > 0, factors reproducing the stored matrix).
  void validate() const;
};

// C x D x H x W feature grid over the cube [-1,1]^3, grid points at
// align-corners positions. Rotation requires D = H = W.
struct FeatureVolume {
  Tensor data;

  FeatureVolume() = default;
  explicit FeatureVolume(int c, int side)
      : data(std::vector<int>{c, side, side, side}) {}

  int channels() const { return data.dim(0); }
  int side() const { return data.dim(1); }
  bool cubic() const {
    return data.ndim() == 4 && data.dim(1) == data.dim(2) && data.dim(2) == data.dim(3);
  }
};

// ---------------------------------------------------------------------------
// Differentiable cores. These operate on contiguous channel planes (CHW /
// CDHW) and expose analytic adjoints; the autodiff layer wraps them and the
// public ImageTensor/FeatureVolume ops below convert layouts.
// ---------------------------------------------------------------------------

struct WarpParams {
  double tx = 0.0, ty = 0.0, tz = 1.0, rz = 0.0;
};

// Similarity warp. In normalized image coordinates about the center
// (u right, v down, range [-0.5, 0.5]), content points move under
//   m(q) = (f/tz) * (Rz(rz) q + [tx, -ty])
// (active rotation; world +ty moves the object up, i.e. -v). The output is
// the input resampled at m^{-1}(p) with bilinear interpolation and zero fill.
// Throws std::domain_error if tz <= 0.
void warp_forward(const double* src, int channels, int h, int w,
                  const WarpParams& p, double focal, double* dst);
// Accumulates into dsrc (same layout as src) and dparams[4] = d/d{tx,ty,tz,rz}.
// Either output may be null.
void warp_backward(const double* src, int channels, int h, int w,
                   const WarpParams& p, double focal, const double* dout,
                   double* dsrc, double* dparams);

// Volume rotation by R (active): out(x) = trilinear(src at R^T x), zero fill
// outside [-1,1]^3. dR lists derivative matrices of R with respect to each
// parameter of interest; dparams receives one entry per dR matrix.
void rotate_volume_forward(const double* src, int channels, int side,
                           const Mat3& R, double* dst);
void rotate_volume_backward(const double* src, int channels, int side,
                            const Mat3& R, const std::vector<Mat3>& dR,
                            const double* dout, double* dsrc, double* dparams);

// ---------------------------------------------------------------------------
// Public operations on domain types.
// ---------------------------------------------------------------------------

// Resamples an HWC image under the similarity warp above.
ImageTensor similarity_warp(const ImageTensor& image, const Vec3& translation,
                            double rz, double focal);

// Rigid rotation of the feature grid; R must be orthonormal, volume cubic.
FeatureVolume transform_volume(const FeatureVolume& vol, const Mat3& R);

// Deterministic depth-to-channel collapse: (C,D,H,W) -> (C*D,H,W) with
// out[c*D+d] = in[c,d]. The learned 1x1 mixing that follows lives in the
// generator.
Tensor project_volume(const FeatureVolume& vol);

// Batched variants (leading batch axis); restarts can be processed as a batch.
void warp_batch(const Tensor& src_bchw, const std::vector<WarpParams>& params,
                double focal, Tensor* dst_bchw);
void rotate_volume_batch(const Tensor& src_bcdhw, const std::vector<Mat3>& rots,
                         Tensor* dst_bcdhw);

// Pose error metrics. rotation_error returns degrees,
//   e_R = arccos((Tr(pred * gt^T) - 1) / 2)
// with the arccos argument clamped to [-1,1]. With symmetric=true the error
// is minimized over rotations of gt about the object's vertical (y) axis on
// a 1-degree grid. Throws std::domain_error for non-orthonormal inputs.
double rotation_error(const Mat3& pred, const Mat3& gt, bool symmetric);
double translation_error(const Vec3& pred, const Vec3& gt);

bool is_rotation_matrix(const Mat3& R, double tol = 1e-5);

}  // namespace posefit
