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

#include <functional>
#include <vector>

#include "posefit/tensor.hpp"

namespace posefit::ag {

// Reverse-mode tape over dense double tensors. A graph is built per forward
// pass (training step or fitting iteration); backward() walks the tape in
// reverse. Leaves with needs_grad=false prune gradient work below them, which
// is how fitting keeps generator weights frozen at zero cost.
class Graph {
 public:
  // back(graph, self_id) accumulates into the parents' grad_buf()s.
  using BackFn = std::function<void(Graph&, int)>;

  int leaf(Tensor value, bool needs_grad = false);
  int push(Tensor value, bool needs_grad, BackFn back);

  const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool needs(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

  // Gradient of the last backward() root w.r.t. node id (zero if none reached).
  Tensor grad(int id) const;

  void backward(int root);  // root must be scalar

  double* grad_buf(int id);                     // allocate-on-demand accumulator
  const double* grad_if_any(int id) const;      // null if nothing accumulated

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool grad_alloc = false;
    bool needs_grad = false;
    BackFn back;
  };
  std::vector<Node> nodes_;
};

// elementwise / scalar
int add(Graph& g, int a, int b);
int sub(Graph& g, int a, int b);
int mul(Graph& g, int a, int b);
int div(Graph& g, int a, int b);
int scale(Graph& g, int a, double c);
int add_const(Graph& g, int a, double c);
int silu(Graph& g, int a);
int sigmoid(Graph& g, int a);
int exp(Graph& g, int a);
int square(Graph& g, int a);

// shape
int reshape(Graph& g, int a, std::vector<int> shape);
int repeat_batch(Graph& g, int a, int batch);            // (..) -> (B,..)
int concat_cols(Graph& g, int a, int b);                 // (B,Na)+(B,Nb)
int gather_cols(Graph& g, int a, const std::vector<int>& idx);
int slice_channels(Graph& g, int a, int c0, int c1);     // (B,C,..) channel range

// dense / conv
int linear(Graph& g, int x, int w, int b);               // (B,I)x(O,I)+(O)
int conv2d(Graph& g, int x, int w, int b, int stride, int pad);
int conv3d(Graph& g, int x, int w, int b, int pad);      // stride 1
int upsample2d(Graph& g, int x);                         // nearest 2x
int upsample3d(Graph& g, int x);

// adaptive instance normalization: standardize per (item, channel) over the
// spatial axes (eps inside the sqrt), then scale/shift ((B,C) each).
int adain(Graph& g, int x, int scale_bc, int shift_bc, double eps = 1e-5);

// geometry (differentiable wrappers over the analytic cores)
int rotate_volume_xy(Graph& g, int vol, int angles_b2);  // R = Rx(a0) Ry(a1)
int warp_image(Graph& g, int img, int params_b4, double focal);  // tx,ty,tz,rz
int add_per_item(Graph& g, int x, int s_b);              // x[b,...] += s[b]

// fixed 11x11 Gaussian blur (sigma 1.5), valid region only
int gauss_blur11(Graph& g, int x);

// reductions
int sum_pb(Graph& g, int x);                      // (B,...) -> (B)
int mean_pb(Graph& g, int x);
int mean_abs_pb(Graph& g, int a, int b);          // mean |a-b| per item
int mean_sq_pb(Graph& g, int a, int b);
int l2norm_pb(Graph& g, int x, double eps2 = 1e-16);  // sqrt(sum x^2 + eps2)
int total(Graph& g, int x);                       // sum of everything -> (1)

}  // namespace posefit::ag
