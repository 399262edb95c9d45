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
#include "posefit/autodiff.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <memory>

#include "posefit/geometry.hpp"

namespace posefit::ag {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

int Graph::leaf(Tensor value, bool needs_grad) {
  return push(std::move(value), needs_grad, nullptr);
}

int Graph::push(Tensor value, bool needs_grad, BackFn back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.back = needs_grad ? std::move(back) : nullptr;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

double* Graph::grad_buf(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.grad_alloc) {
    n.grad = Tensor(n.value.shape);
    n.grad_alloc = true;
  }
  return n.grad.data();
}

const double* Graph::grad_if_any(int id) const {
  const Node& n = nodes_[static_cast<size_t>(id)];
  return n.grad_alloc ? n.grad.data() : nullptr;
}

Tensor Graph::grad(int id) const {
  const Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad_alloc) return n.grad;
  return Tensor(n.value.shape);
}

void Graph::backward(int root) {
  POSEFIT_CHECK(val(root).numel() == 1, "backward root must be scalar");
  for (auto& n : nodes_) {
    if (n.grad_alloc) n.grad.fill(0.0);
    n.grad_alloc = false;
  }
  grad_buf(root)[0] = 1.0;
  for (int id = root; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad_alloc && n.back) n.back(*this, id);
  }
}

namespace {

inline void axpy(double* dst, const double* src, int64_t n, double c = 1.0) {
  for (int64_t i = 0; i < n; ++i) dst[i] += c * src[i];
}

inline int64_t item_size(const Tensor& t) {
  int64_t s = 1;
  for (int i = 1; i < t.ndim(); ++i) s *= t.dim(i);
  return s;
}

}  // namespace

// --------------------------------------------------------------------------
// elementwise
// --------------------------------------------------------------------------

int add(Graph& g, int a, int b) {
  POSEFIT_CHECK(g.val(a).same_shape(g.val(b)), "add: shape mismatch");
  Tensor out = g.val(a);
  const Tensor& tb = g.val(b);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += tb[i];
  return g.push(std::move(out), g.needs(a) || g.needs(b),
                [a, b](Graph& gg, int self) {
                  const double* go = gg.grad_if_any(self);
                  int64_t n = gg.val(self).numel();
                  if (gg.needs(a)) axpy(gg.grad_buf(a), go, n);
                  if (gg.needs(b)) axpy(gg.grad_buf(b), go, n);
                });
}

int sub(Graph& g, int a, int b) {
  POSEFIT_CHECK(g.val(a).same_shape(g.val(b)), "sub: shape mismatch");
  Tensor out = g.val(a);
  const Tensor& tb = g.val(b);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= tb[i];
  return g.push(std::move(out), g.needs(a) || g.needs(b),
                [a, b](Graph& gg, int self) {
                  const double* go = gg.grad_if_any(self);
                  int64_t n = gg.val(self).numel();
                  if (gg.needs(a)) axpy(gg.grad_buf(a), go, n);
                  if (gg.needs(b)) axpy(gg.grad_buf(b), go, n, -1.0);
                });
}

int mul(Graph& g, int a, int b) {
  POSEFIT_CHECK(g.val(a).same_shape(g.val(b)), "mul: shape mismatch");
  Tensor out = g.val(a);
  const Tensor& tb = g.val(b);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= tb[i];
  return g.push(std::move(out), g.needs(a) || g.needs(b),
                [a, b](Graph& gg, int self) {
                  const double* go = gg.grad_if_any(self);
                  const Tensor& va = gg.val(a);
                  const Tensor& vb = gg.val(b);
                  int64_t n = va.numel();
                  if (gg.needs(a)) {
                    double* da = gg.grad_buf(a);
                    for (int64_t i = 0; i < n; ++i) da[i] += go[i] * vb[i];
                  }
                  if (gg.needs(b)) {
                    double* db = gg.grad_buf(b);
                    for (int64_t i = 0; i < n; ++i) db[i] += go[i] * va[i];
                  }
                });
}

int div(Graph& g, int a, int b) {
  POSEFIT_CHECK(g.val(a).same_shape(g.val(b)), "div: shape mismatch");
  Tensor out = g.val(a);
  const Tensor& tb = g.val(b);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] /= tb[i];
  return g.push(std::move(out), g.needs(a) || g.needs(b),
                [a, b](Graph& gg, int self) {
                  const double* go = gg.grad_if_any(self);
                  const Tensor& vb = gg.val(b);
                  const Tensor& vo = gg.val(self);
                  int64_t n = vb.numel();
                  if (gg.needs(a)) {
                    double* da = gg.grad_buf(a);
                    for (int64_t i = 0; i < n; ++i) da[i] += go[i] / vb[i];
                  }
                  if (gg.needs(b)) {
                    double* db = gg.grad_buf(b);
                    for (int64_t i = 0; i < n; ++i) db[i] -= go[i] * vo[i] / vb[i];
                  }
                });
}

int scale(Graph& g, int a, double c) {
  Tensor out = g.val(a);
  for (double& x : out.v) x *= c;
  return g.push(std::move(out), g.needs(a), [a, c](Graph& gg, int self) {
    axpy(gg.grad_buf(a), gg.grad_if_any(self), gg.val(a).numel(), c);
  });
}

int add_const(Graph& g, int a, double c) {
  Tensor out = g.val(a);
  for (double& x : out.v) x += c;
  return g.push(std::move(out), g.needs(a), [a](Graph& gg, int self) {
    axpy(gg.grad_buf(a), gg.grad_if_any(self), gg.val(a).numel());
  });
}

int silu(Graph& g, int a) {
  Tensor out = g.val(a);
  for (double& x : out.v) x = x / (1.0 + std::exp(-x));
  return g.push(std::move(out), g.needs(a), [a](Graph& gg, int self) {
    const double* go = gg.grad_if_any(self);
    const Tensor& vx = gg.val(a);
    double* da = gg.grad_buf(a);
    for (int64_t i = 0; i < vx.numel(); ++i) {
      double s = 1.0 / (1.0 + std::exp(-vx[i]));
      da[i] += go[i] * (s + vx[i] * s * (1.0 - s));
    }
  });
}

int sigmoid(Graph& g, int a) {
  Tensor out = g.val(a);
  for (double& x : out.v) x = 1.0 / (1.0 + std::exp(-x));
  return g.push(std::move(out), g.needs(a), [a](Graph& gg, int self) {
    const double* go = gg.grad_if_any(self);
    const Tensor& vo = gg.val(self);
    double* da = gg.grad_buf(a);
    for (int64_t i = 0; i < vo.numel(); ++i)
      da[i] += go[i] * vo[i] * (1.0 - vo[i]);
  });
}

int exp(Graph& g, int a) {
  Tensor out = g.val(a);
  for (double& x : out.v) x = std::exp(x);
  return g.push(std::move(out), g.needs(a), [a](Graph& gg, int self) {
    const double* go = gg.grad_if_any(self);
    const Tensor& vo = gg.val(self);
    double* da = gg.grad_buf(a);
    for (int64_t i = 0; i < vo.numel(); ++i) da[i] += go[i] * vo[i];
  });
}

int square(Graph& g, int a) {
  Tensor out = g.val(a);
  for (double& x : out.v) x = x * x;
  return g.push(std::move(out), g.needs(a), [a](Graph& gg, int self) {
    const double* go = gg.grad_if_any(self);
    const Tensor& vx = gg.val(a);
    double* da = gg.grad_buf(a);
    for (int64_t i = 0; i < vx.numel(); ++i) da[i] += go[i] * 2.0 * vx[i];
  });
}

// --------------------------------------------------------------------------
// shape
// --------------------------------------------------------------------------

int reshape(Graph& g, int a, std::vector<int> shape) {
  Tensor out = g.val(a);
  POSEFIT_CHECK(Tensor::numel_of(shape) == out.numel(), "reshape: numel mismatch");
  out.shape = std::move(shape);
  return g.push(std::move(out), g.needs(a), [a](Graph& gg, int self) {
    axpy(gg.grad_buf(a), gg.grad_if_any(self), gg.val(a).numel());
  });
}

int repeat_batch(Graph& g, int a, int batch) {
  const Tensor& x = g.val(a);
  std::vector<int> shape;
  shape.push_back(batch);
  for (int d : x.shape) shape.push_back(d);
  Tensor out(shape);
  for (int i = 0; i < batch; ++i)
    std::copy(x.v.begin(), x.v.end(), out.v.begin() + i * x.numel());
  return g.push(std::move(out), g.needs(a), [a, batch](Graph& gg, int self) {
    const double* go = gg.grad_if_any(self);
    double* da = gg.grad_buf(a);
    int64_t n = gg.val(a).numel();
    for (int i = 0; i < batch; ++i) axpy(da, go + i * n, n);
  });
}

int concat_cols(Graph& g, int a, int b) {
  const Tensor& xa = g.val(a);
  const Tensor& xb = g.val(b);
  POSEFIT_CHECK(xa.ndim() == 2 && xb.ndim() == 2 && xa.dim(0) == xb.dim(0),
                "concat_cols: need matching (B,*) inputs");
  const int bsz = xa.dim(0), na = xa.dim(1), nb = xb.dim(1);
  Tensor out(std::vector<int>{bsz, na + nb});
  for (int i = 0; i < bsz; ++i) {
    std::copy_n(xa.data() + i * na, na, out.data() + i * (na + nb));
    std::copy_n(xb.data() + i * nb, nb, out.data() + i * (na + nb) + na);
  }
  return g.push(std::move(out), g.needs(a) || g.needs(b),
                [a, b, bsz, na, nb](Graph& gg, int self) {
                  const double* go = gg.grad_if_any(self);
                  if (gg.needs(a)) {
                    double* da = gg.grad_buf(a);
                    for (int i = 0; i < bsz; ++i)
                      axpy(da + i * na, go + i * (na + nb), na);
                  }
                  if (gg.needs(b)) {
                    double* db = gg.grad_buf(b);
                    for (int i = 0; i < bsz; ++i)
                      axpy(db + i * nb, go + i * (na + nb) + na, nb);
                  }
                });
}

int gather_cols(Graph& g, int a, const std::vector<int>& idx) {
  const Tensor& x = g.val(a);
  POSEFIT_CHECK(x.ndim() == 2, "gather_cols: need (B,N)");
  const int bsz = x.dim(0), n = x.dim(1), k = static_cast<int>(idx.size());
  Tensor out(std::vector<int>{bsz, k});
  for (int i = 0; i < bsz; ++i)
    for (int j = 0; j < k; ++j) out[i * k + j] = x[i * n + idx[static_cast<size_t>(j)]];
  return g.push(std::move(out), g.needs(a), [a, idx, bsz, n, k](Graph& gg, int self) {
    const double* go = gg.grad_if_any(self);
    double* da = gg.grad_buf(a);
    for (int i = 0; i < bsz; ++i)
      for (int j = 0; j < k; ++j)
        da[i * n + idx[static_cast<size_t>(j)]] += go[i * k + j];
  });
}

int slice_channels(Graph& g, int a, int c0, int c1) {
  const Tensor& x = g.val(a);
  POSEFIT_CHECK(x.ndim() >= 2 && c0 >= 0 && c1 <= x.dim(1) && c0 < c1,
                "slice_channels: bad range");
  const int bsz = x.dim(0), c = x.dim(1);
  int64_t spatial = 1;
  for (int i = 2; i < x.ndim(); ++i) spatial *= x.dim(i);
  std::vector<int> shape = x.shape;
  shape[1] = c1 - c0;
  Tensor out(shape);
  for (int i = 0; i < bsz; ++i)
    std::copy_n(x.data() + (static_cast<int64_t>(i) * c + c0) * spatial,
                static_cast<int64_t>(c1 - c0) * spatial,
                out.data() + static_cast<int64_t>(i) * (c1 - c0) * spatial);
  return g.push(std::move(out), g.needs(a),
                [a, c0, c1, bsz, c, spatial](Graph& gg, int self) {
                  const double* go = gg.grad_if_any(self);
                  double* da = gg.grad_buf(a);
                  for (int i = 0; i < bsz; ++i)
                    axpy(da + (static_cast<int64_t>(i) * c + c0) * spatial,
                         go + static_cast<int64_t>(i) * (c1 - c0) * spatial,
                         static_cast<int64_t>(c1 - c0) * spatial);
                });
}

// --------------------------------------------------------------------------
// dense / conv
// --------------------------------------------------------------------------

int linear(Graph& g, int x, int w, int b) {
  const Tensor& vx = g.val(x);
  const Tensor& vw = g.val(w);
  const Tensor& vb = g.val(b);
  POSEFIT_CHECK(vx.ndim() == 2 && vw.ndim() == 2 && vx.dim(1) == vw.dim(1) &&
                    vb.numel() == vw.dim(0),
                "linear: shape mismatch");
  const int bsz = vx.dim(0), in = vx.dim(1), outn = vw.dim(0);
  Tensor out(std::vector<int>{bsz, outn});
  CMapMat xm(vx.data(), bsz, in);
  CMapMat wm(vw.data(), outn, in);
  MapMat om(out.data(), bsz, outn);
  om.noalias() = xm * wm.transpose();
  for (int i = 0; i < bsz; ++i)
    for (int j = 0; j < outn; ++j) out[i * outn + j] += vb[j];
  return g.push(std::move(out), g.needs(x) || g.needs(w) || g.needs(b),
                [x, w, b, bsz, in, outn](Graph& gg, int self) {
                  CMapMat go(gg.grad_if_any(self), bsz, outn);
                  if (gg.needs(x)) {
                    CMapMat wm(gg.val(w).data(), outn, in);
                    MapMat dx(gg.grad_buf(x), bsz, in);
                    dx.noalias() += go * wm;
                  }
                  if (gg.needs(w)) {
                    CMapMat xm(gg.val(x).data(), bsz, in);
                    MapMat dw(gg.grad_buf(w), outn, in);
                    dw.noalias() += go.transpose() * xm;
                  }
                  if (gg.needs(b)) {
                    double* db = gg.grad_buf(b);
                    for (int i = 0; i < bsz; ++i)
                      for (int j = 0; j < outn; ++j) db[j] += go(i, j);
                  }
                });
}

namespace {

// im2col for 2d convs; col is (C*kh*kw) x (oh*ow), row-major
void im2col2d(const double* x, int c, int h, int w, int kh, int kw, int stride,
              int pad, int oh, int ow, double* col) {
  for (int ci = 0; ci < c; ++ci)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        double* row = col + ((static_cast<int64_t>(ci) * kh + ki) * kw + kj) *
                                (static_cast<int64_t>(oh) * ow);
        for (int oi = 0; oi < oh; ++oi) {
          int yi = oi * stride - pad + ki;
          for (int oj = 0; oj < ow; ++oj) {
            int xj = oj * stride - pad + kj;
            row[oi * ow + oj] =
                (yi >= 0 && yi < h && xj >= 0 && xj < w)
                    ? x[(static_cast<int64_t>(ci) * h + yi) * w + xj]
                    : 0.0;
          }
        }
      }
}

void col2im2d(const double* col, int c, int h, int w, int kh, int kw, int stride,
              int pad, int oh, int ow, double* dx) {
  for (int ci = 0; ci < c; ++ci)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        const double* row = col + ((static_cast<int64_t>(ci) * kh + ki) * kw + kj) *
                                      (static_cast<int64_t>(oh) * ow);
        for (int oi = 0; oi < oh; ++oi) {
          int yi = oi * stride - pad + ki;
          if (yi < 0 || yi >= h) continue;
          for (int oj = 0; oj < ow; ++oj) {
            int xj = oj * stride - pad + kj;
            if (xj < 0 || xj >= w) continue;
            dx[(static_cast<int64_t>(ci) * h + yi) * w + xj] += row[oi * ow + oj];
          }
        }
      }
}

// the 3d analogues; col is (C*k^3) x (od*oh*ow)
void im2col3d(const double* x, int c, int d, int h, int w, int k, int pad,
              double* col) {
  const int od = d + 2 * pad - k + 1, oh = h + 2 * pad - k + 1,
            ow = w + 2 * pad - k + 1;
  const int64_t on = static_cast<int64_t>(od) * oh * ow;
  for (int ci = 0; ci < c; ++ci)
    for (int kd = 0; kd < k; ++kd)
      for (int ki = 0; ki < k; ++ki)
        for (int kj = 0; kj < k; ++kj) {
          double* row =
              col + (((static_cast<int64_t>(ci) * k + kd) * k + ki) * k + kj) * on;
          int64_t idx = 0;
          for (int oz = 0; oz < od; ++oz) {
            int zz = oz - pad + kd;
            for (int oi = 0; oi < oh; ++oi) {
              int yi = oi - pad + ki;
              for (int oj = 0; oj < ow; ++oj, ++idx) {
                int xj = oj - pad + kj;
                row[idx] = (zz >= 0 && zz < d && yi >= 0 && yi < h && xj >= 0 &&
                            xj < w)
                               ? x[((static_cast<int64_t>(ci) * d + zz) * h + yi) * w + xj]
                               : 0.0;
              }
            }
          }
        }
}

void col2im3d(const double* col, int c, int d, int h, int w, int k, int pad,
              double* dx) {
  const int od = d + 2 * pad - k + 1, oh = h + 2 * pad - k + 1,
            ow = w + 2 * pad - k + 1;
  const int64_t on = static_cast<int64_t>(od) * oh * ow;
  for (int ci = 0; ci < c; ++ci)
    for (int kd = 0; kd < k; ++kd)
      for (int ki = 0; ki < k; ++ki)
        for (int kj = 0; kj < k; ++kj) {
          const double* row =
              col + (((static_cast<int64_t>(ci) * k + kd) * k + ki) * k + kj) * on;
          int64_t idx = 0;
          for (int oz = 0; oz < od; ++oz) {
            int zz = oz - pad + kd;
            for (int oi = 0; oi < oh; ++oi) {
              int yi = oi - pad + ki;
              for (int oj = 0; oj < ow; ++oj, ++idx) {
                int xj = oj - pad + kj;
                if (zz < 0 || zz >= d || yi < 0 || yi >= h || xj < 0 || xj >= w)
                  continue;
                dx[((static_cast<int64_t>(ci) * d + zz) * h + yi) * w + xj] += row[idx];
              }
            }
          }
        }
}

}  // namespace

int conv2d(Graph& g, int x, int w, int b, int stride, int pad) {
  const Tensor& vx = g.val(x);
  const Tensor& vw = g.val(w);
  const Tensor& vb = g.val(b);
  POSEFIT_CHECK(vx.ndim() == 4 && vw.ndim() == 4 && vx.dim(1) == vw.dim(1) &&
                    vb.numel() == vw.dim(0),
                "conv2d: shape mismatch");
  const int bsz = vx.dim(0), c = vx.dim(1), h = vx.dim(2), wd = vx.dim(3);
  const int o = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  const int ck = c * kh * kw;
  const int64_t on = static_cast<int64_t>(oh) * ow;
  Tensor out(std::vector<int>{bsz, o, oh, ow});
  {
    std::vector<double> col(static_cast<size_t>(ck) * on);
    CMapMat wm(vw.data(), o, ck);
    for (int i = 0; i < bsz; ++i) {
      im2col2d(vx.data() + static_cast<int64_t>(i) * c * h * wd, c, h, wd, kh, kw,
               stride, pad, oh, ow, col.data());
      CMapMat cm(col.data(), ck, on);
      MapMat om(out.data() + static_cast<int64_t>(i) * o * on, o, on);
      om.noalias() = wm * cm;
      for (int ci = 0; ci < o; ++ci)
        for (int64_t s = 0; s < on; ++s) om(ci, s) += vb[ci];
    }
  }
  return g.push(
      std::move(out), g.needs(x) || g.needs(w) || g.needs(b),
      [x, w, b, bsz, c, h, wd, o, kh, kw, stride, pad, oh, ow, ck,
       on](Graph& gg, int self) {
        const double* go = gg.grad_if_any(self);
        const Tensor& vx2 = gg.val(x);
        const Tensor& vw2 = gg.val(w);
        std::vector<double> col(static_cast<size_t>(ck) * on);
        CMapMat wm(vw2.data(), o, ck);
        for (int i = 0; i < bsz; ++i) {
          CMapMat gom(go + static_cast<int64_t>(i) * o * on, o, on);
          if (gg.needs(w) || gg.needs(x)) {
            if (gg.needs(w)) {
              im2col2d(vx2.data() + static_cast<int64_t>(i) * c * h * wd, c, h, wd,
                       kh, kw, stride, pad, oh, ow, col.data());
              CMapMat cm(col.data(), ck, on);
              MapMat dwm(gg.grad_buf(w), o, ck);
              dwm.noalias() += gom * cm.transpose();
            }
            if (gg.needs(x)) {
              MapMat cm(col.data(), ck, on);
              cm.noalias() = wm.transpose() * gom;
              col2im2d(col.data(), c, h, wd, kh, kw, stride, pad, oh, ow,
                       gg.grad_buf(x) + static_cast<int64_t>(i) * c * h * wd);
            }
          }
          if (gg.needs(b)) {
            double* db = gg.grad_buf(b);
            for (int ci = 0; ci < o; ++ci)
              for (int64_t s = 0; s < on; ++s) db[ci] += gom(ci, s);
          }
        }
      });
}

int conv3d(Graph& g, int x, int w, int b, int pad) {
  const Tensor& vx = g.val(x);
  const Tensor& vw = g.val(w);
  const Tensor& vb = g.val(b);
  POSEFIT_CHECK(vx.ndim() == 5 && vw.ndim() == 5 && vx.dim(1) == vw.dim(1) &&
                    vb.numel() == vw.dim(0),
                "conv3d: shape mismatch");
  const int bsz = vx.dim(0), c = vx.dim(1), d = vx.dim(2), h = vx.dim(3),
            wd = vx.dim(4);
  const int o = vw.dim(0), k = vw.dim(2);
  const int od = d + 2 * pad - k + 1, oh = h + 2 * pad - k + 1,
            ow = wd + 2 * pad - k + 1;
  const int ck = c * k * k * k;
  const int64_t on = static_cast<int64_t>(od) * oh * ow;
  const int64_t in_item = static_cast<int64_t>(c) * d * h * wd;
  Tensor out(std::vector<int>{bsz, o, od, oh, ow});
  {
    std::vector<double> col(static_cast<size_t>(ck) * on);
    CMapMat wm(vw.data(), o, ck);
    for (int i = 0; i < bsz; ++i) {
      im2col3d(vx.data() + i * in_item, c, d, h, wd, k, pad, col.data());
      CMapMat cm(col.data(), ck, on);
      MapMat om(out.data() + static_cast<int64_t>(i) * o * on, o, on);
      om.noalias() = wm * cm;
      for (int ci = 0; ci < o; ++ci)
        for (int64_t s = 0; s < on; ++s) om(ci, s) += vb[ci];
    }
  }
  return g.push(std::move(out), g.needs(x) || g.needs(w) || g.needs(b),
                [x, w, b, bsz, c, d, h, wd, o, k, pad, ck, on,
                 in_item](Graph& gg, int self) {
                  const double* go = gg.grad_if_any(self);
                  const Tensor& vx2 = gg.val(x);
                  const Tensor& vw2 = gg.val(w);
                  std::vector<double> col(static_cast<size_t>(ck) * on);
                  CMapMat wm(vw2.data(), o, ck);
                  for (int i = 0; i < bsz; ++i) {
                    CMapMat gom(go + static_cast<int64_t>(i) * o * on, o, on);
                    if (gg.needs(w)) {
                      im2col3d(vx2.data() + i * in_item, c, d, h, wd, k, pad,
                               col.data());
                      CMapMat cm(col.data(), ck, on);
                      MapMat dwm(gg.grad_buf(w), o, ck);
                      dwm.noalias() += gom * cm.transpose();
                    }
                    if (gg.needs(x)) {
                      MapMat cm(col.data(), ck, on);
                      cm.noalias() = wm.transpose() * gom;
                      col2im3d(col.data(), c, d, h, wd, k, pad,
                               gg.grad_buf(x) + i * in_item);
                    }
                    if (gg.needs(b)) {
                      double* db = gg.grad_buf(b);
                      for (int ci = 0; ci < o; ++ci)
                        for (int64_t s = 0; s < on; ++s) db[ci] += gom(ci, s);
                    }
                  }
                });
}

int upsample2d(Graph& g, int x) {
  const Tensor& vx = g.val(x);
  POSEFIT_CHECK(vx.ndim() == 4, "upsample2d: need (B,C,H,W)");
  const int bsz = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
  Tensor out(std::vector<int>{bsz, c, 2 * h, 2 * w});
  for (int bc = 0; bc < bsz * c; ++bc) {
    const double* src = vx.data() + static_cast<int64_t>(bc) * h * w;
    double* dst = out.data() + static_cast<int64_t>(bc) * 4 * h * w;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double v = src[i * w + j];
        dst[(2 * i) * 2 * w + 2 * j] = v;
        dst[(2 * i) * 2 * w + 2 * j + 1] = v;
        dst[(2 * i + 1) * 2 * w + 2 * j] = v;
        dst[(2 * i + 1) * 2 * w + 2 * j + 1] = v;
      }
  }
  return g.push(std::move(out), g.needs(x), [x, bsz, c, h, w](Graph& gg, int self) {
    const double* go = gg.grad_if_any(self);
    double* dx = gg.grad_buf(x);
    for (int bc = 0; bc < bsz * c; ++bc) {
      const double* gsl = go + static_cast<int64_t>(bc) * 4 * h * w;
      double* dsl = dx + static_cast<int64_t>(bc) * h * w;
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
          dsl[i * w + j] += gsl[(2 * i) * 2 * w + 2 * j] +
                            gsl[(2 * i) * 2 * w + 2 * j + 1] +
                            gsl[(2 * i + 1) * 2 * w + 2 * j] +
                            gsl[(2 * i + 1) * 2 * w + 2 * j + 1];
    }
  });
}

int upsample3d(Graph& g, int x) {
  const Tensor& vx = g.val(x);
  POSEFIT_CHECK(vx.ndim() == 5, "upsample3d: need (B,C,D,H,W)");
  const int bsz = vx.dim(0), c = vx.dim(1), d = vx.dim(2), h = vx.dim(3),
            w = vx.dim(4);
  Tensor out(std::vector<int>{bsz, c, 2 * d, 2 * h, 2 * w});
  const int64_t sin = static_cast<int64_t>(d) * h * w;
  const int64_t sout = 8 * sin;
  for (int bc = 0; bc < bsz * c; ++bc) {
    const double* src = vx.data() + bc * sin;
    double* dst = out.data() + bc * sout;
    for (int z = 0; z < d; ++z)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          double v = src[(static_cast<int64_t>(z) * h + i) * w + j];
          for (int a = 0; a < 2; ++a)
            for (int b2 = 0; b2 < 2; ++b2)
              for (int c2 = 0; c2 < 2; ++c2)
                dst[((static_cast<int64_t>(2 * z + a) * 2 * h) + 2 * i + b2) * 2 * w +
                    2 * j + c2] = v;
        }
  }
  return g.push(std::move(out), g.needs(x),
                [x, bsz, c, d, h, w, sin, sout](Graph& gg, int self) {
                  const double* go = gg.grad_if_any(self);
                  double* dx = gg.grad_buf(x);
                  for (int bc = 0; bc < bsz * c; ++bc) {
                    const double* gsl = go + bc * sout;
                    double* dsl = dx + bc * sin;
                    for (int z = 0; z < d; ++z)
                      for (int i = 0; i < h; ++i)
                        for (int j = 0; j < w; ++j) {
                          double s = 0.0;
                          for (int a = 0; a < 2; ++a)
                            for (int b2 = 0; b2 < 2; ++b2)
                              for (int c2 = 0; c2 < 2; ++c2)
                                s += gsl[((static_cast<int64_t>(2 * z + a) * 2 * h) +
                                          2 * i + b2) *
                                             2 * w +
                                         2 * j + c2];
                          dsl[(static_cast<int64_t>(z) * h + i) * w + j] += s;
                        }
                  }
                });
}

int adain(Graph& g, int x, int scale_bc, int shift_bc, double eps) {
  const Tensor& vx = g.val(x);
  const Tensor& vs = g.val(scale_bc);
  const Tensor& vt = g.val(shift_bc);
  POSEFIT_CHECK(vx.ndim() >= 3, "adain: need (B,C,spatial...)");
  const int bsz = vx.dim(0), c = vx.dim(1);
  int64_t sp = 1;
  for (int i = 2; i < vx.ndim(); ++i) sp *= vx.dim(i);
  POSEFIT_CHECK(vs.numel() == static_cast<int64_t>(bsz) * c && vt.numel() == vs.numel(),
                "adain: scale/shift must be (B,C)");
  POSEFIT_CHECK(sp >= 1, "adain: empty spatial extent");

  Tensor out(vx.shape);
  // keep per-(b,c) statistics for the backward pass
  auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(bsz) * c * 2);
  for (int bc = 0; bc < bsz * c; ++bc) {
    const double* src = vx.data() + bc * sp;
    double m = 0.0;
    for (int64_t i = 0; i < sp; ++i) m += src[i];
    m /= static_cast<double>(sp);
    double var = 0.0;
    for (int64_t i = 0; i < sp; ++i) var += (src[i] - m) * (src[i] - m);
    var /= static_cast<double>(sp);
    double inv = 1.0 / std::sqrt(var + eps);
    (*stats)[2 * static_cast<size_t>(bc)] = m;
    (*stats)[2 * static_cast<size_t>(bc) + 1] = inv;
    double sc = vs[bc], sh = vt[bc];
    double* dst = out.data() + bc * sp;
    for (int64_t i = 0; i < sp; ++i) dst[i] = sc * (src[i] - m) * inv + sh;
  }
  return g.push(
      std::move(out), g.needs(x) || g.needs(scale_bc) || g.needs(shift_bc),
      [x, scale_bc, shift_bc, bsz, c, sp, stats](Graph& gg, int self) {
        const double* go = gg.grad_if_any(self);
        const Tensor& vx2 = gg.val(x);
        const Tensor& vs2 = gg.val(scale_bc);
        for (int bc = 0; bc < bsz * c; ++bc) {
          const double* src = vx2.data() + bc * sp;
          const double* gsl = go + bc * sp;
          double m = (*stats)[2 * static_cast<size_t>(bc)];
          double inv = (*stats)[2 * static_cast<size_t>(bc) + 1];
          double sc = vs2[bc];
          if (gg.needs(shift_bc)) {
            double s = 0.0;
            for (int64_t i = 0; i < sp; ++i) s += gsl[i];
            gg.grad_buf(shift_bc)[bc] += s;
          }
          if (gg.needs(scale_bc)) {
            double s = 0.0;
            for (int64_t i = 0; i < sp; ++i) s += gsl[i] * (src[i] - m) * inv;
            gg.grad_buf(scale_bc)[bc] += s;
          }
          if (gg.needs(x)) {
            // d/dx of instance standardization (biased variance)
            double sum_g = 0.0, sum_gx = 0.0;
            for (int64_t i = 0; i < sp; ++i) {
              sum_g += gsl[i];
              sum_gx += gsl[i] * (src[i] - m) * inv;
            }
            double mg = sum_g / static_cast<double>(sp);
            double mgx = sum_gx / static_cast<double>(sp);
            double* dx = gg.grad_buf(x) + bc * sp;
            for (int64_t i = 0; i < sp; ++i) {
              double xhat = (src[i] - m) * inv;
              dx[i] += sc * inv * (gsl[i] - mg - xhat * mgx);
            }
          }
        }
      });
}

// --------------------------------------------------------------------------
// geometry wrappers
// --------------------------------------------------------------------------

int rotate_volume_xy(Graph& g, int vol, int angles_b2) {
  const Tensor& vx = g.val(vol);
  const Tensor& va = g.val(angles_b2);
  POSEFIT_CHECK(vx.ndim() == 5 && vx.dim(2) == vx.dim(3) && vx.dim(3) == vx.dim(4),
                "rotate_volume_xy: need cubic (B,C,D,H,W)");
  POSEFIT_CHECK(va.ndim() == 2 && va.dim(0) == vx.dim(0) && va.dim(1) == 2,
                "rotate_volume_xy: angles must be (B,2)");
  const int bsz = vx.dim(0), c = vx.dim(1), side = vx.dim(2);
  const int64_t item = static_cast<int64_t>(c) * side * side * side;
  Tensor out(vx.shape);
  for (int i = 0; i < bsz; ++i) {
    Mat3 r = rot_x(va[i * 2]) * rot_y(va[i * 2 + 1]);
    rotate_volume_forward(vx.data() + i * item, c, side, r, out.data() + i * item);
  }
  return g.push(
      std::move(out), g.needs(vol) || g.needs(angles_b2),
      [vol, angles_b2, bsz, c, side, item](Graph& gg, int self) {
        const double* go = gg.grad_if_any(self);
        const Tensor& vx2 = gg.val(vol);
        const Tensor& va2 = gg.val(angles_b2);
        for (int i = 0; i < bsz; ++i) {
          double ax = va2[i * 2], ay = va2[i * 2 + 1];
          Mat3 rx = rot_x(ax), ry = rot_y(ay);
          Mat3 r = rx * ry;
          std::vector<Mat3> dR;
          double dparams[2] = {0.0, 0.0};
          if (gg.needs(angles_b2)) {
            Mat3 drx, dry;
            drx << 0, 0, 0, 0, -std::sin(ax), -std::cos(ax), 0, std::cos(ax),
                -std::sin(ax);
            dry << -std::sin(ay), 0, std::cos(ay), 0, 0, 0, -std::cos(ay), 0,
                -std::sin(ay);
            dR = {drx * ry, rx * dry};
          }
          rotate_volume_backward(
              vx2.data() + i * item, c, side, r, dR, go + i * item,
              gg.needs(vol) ? gg.grad_buf(vol) + i * item : nullptr,
              gg.needs(angles_b2) ? dparams : nullptr);
          if (gg.needs(angles_b2)) {
            gg.grad_buf(angles_b2)[i * 2] += dparams[0];
            gg.grad_buf(angles_b2)[i * 2 + 1] += dparams[1];
          }
        }
      });
}

int warp_image(Graph& g, int img, int params_b4, double focal) {
  const Tensor& vx = g.val(img);
  const Tensor& vp = g.val(params_b4);
  POSEFIT_CHECK(vx.ndim() == 4, "warp_image: need (B,C,H,W)");
  POSEFIT_CHECK(vp.ndim() == 2 && vp.dim(0) == vx.dim(0) && vp.dim(1) == 4,
                "warp_image: params must be (B,4)");
  const int bsz = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
  const int64_t item = static_cast<int64_t>(c) * h * w;
  Tensor out(vx.shape);
  for (int i = 0; i < bsz; ++i) {
    WarpParams p{vp[i * 4], vp[i * 4 + 1], vp[i * 4 + 2], vp[i * 4 + 3]};
    warp_forward(vx.data() + i * item, c, h, w, p, focal, out.data() + i * item);
  }
  return g.push(std::move(out), g.needs(img) || g.needs(params_b4),
                [img, params_b4, focal, bsz, c, h, w, item](Graph& gg, int self) {
                  const double* go = gg.grad_if_any(self);
                  const Tensor& vx2 = gg.val(img);
                  const Tensor& vp2 = gg.val(params_b4);
                  for (int i = 0; i < bsz; ++i) {
                    WarpParams p{vp2[i * 4], vp2[i * 4 + 1], vp2[i * 4 + 2],
                                 vp2[i * 4 + 3]};
                    double dparams[4] = {0, 0, 0, 0};
                    warp_backward(
                        vx2.data() + i * item, c, h, w, p, focal, go + i * item,
                        gg.needs(img) ? gg.grad_buf(img) + i * item : nullptr,
                        gg.needs(params_b4) ? dparams : nullptr);
                    if (gg.needs(params_b4))
                      for (int k = 0; k < 4; ++k)
                        gg.grad_buf(params_b4)[i * 4 + k] += dparams[k];
                  }
                });
}

int add_per_item(Graph& g, int x, int s_b) {
  const Tensor& vx = g.val(x);
  const Tensor& vs = g.val(s_b);
  POSEFIT_CHECK(vs.numel() == vx.dim(0), "add_per_item: s must be (B)");
  const int bsz = vx.dim(0);
  const int64_t item = item_size(vx);
  Tensor out = vx;
  for (int i = 0; i < bsz; ++i)
    for (int64_t j = 0; j < item; ++j) out[i * item + j] += vs[i];
  return g.push(std::move(out), g.needs(x) || g.needs(s_b),
                [x, s_b, bsz, item](Graph& gg, int self) {
                  const double* go = gg.grad_if_any(self);
                  if (gg.needs(x)) axpy(gg.grad_buf(x), go, bsz * item);
                  if (gg.needs(s_b)) {
                    double* ds = gg.grad_buf(s_b);
                    for (int i = 0; i < bsz; ++i) {
                      double s = 0.0;
                      for (int64_t j = 0; j < item; ++j) s += go[i * item + j];
                      ds[i] += s;
                    }
                  }
                });
}

// --------------------------------------------------------------------------
// Gaussian blur (SSIM building block)
// --------------------------------------------------------------------------

namespace {

struct GaussKernel11 {
  double k[11][11];
  GaussKernel11() {
    double sum = 0.0;
    for (int i = 0; i < 11; ++i)
      for (int j = 0; j < 11; ++j) {
        double dy = i - 5.0, dx = j - 5.0;
        k[i][j] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
        sum += k[i][j];
      }
    for (auto& row : k)
      for (double& v : row) v /= sum;
  }
};
const GaussKernel11 kGauss;

}  // namespace

int gauss_blur11(Graph& g, int x) {
  const Tensor& vx = g.val(x);
  POSEFIT_CHECK(vx.ndim() == 4 && vx.dim(2) >= 11 && vx.dim(3) >= 11,
                "gauss_blur11: need (B,C,H>=11,W>=11)");
  const int bsz = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
  const int oh = h - 10, ow = w - 10;
  Tensor out(std::vector<int>{bsz, c, oh, ow});
  for (int bc = 0; bc < bsz * c; ++bc) {
    const double* src = vx.data() + static_cast<int64_t>(bc) * h * w;
    double* dst = out.data() + static_cast<int64_t>(bc) * oh * ow;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        double s = 0.0;
        for (int a = 0; a < 11; ++a)
          for (int b = 0; b < 11; ++b) s += kGauss.k[a][b] * src[(i + a) * w + j + b];
        dst[i * ow + j] = s;
      }
  }
  return g.push(std::move(out), g.needs(x),
                [x, bsz, c, h, w, oh, ow](Graph& gg, int self) {
                  const double* go = gg.grad_if_any(self);
                  double* dx = gg.grad_buf(x);
                  for (int bc = 0; bc < bsz * c; ++bc) {
                    const double* gsl = go + static_cast<int64_t>(bc) * oh * ow;
                    double* dsl = dx + static_cast<int64_t>(bc) * h * w;
                    for (int i = 0; i < oh; ++i)
                      for (int j = 0; j < ow; ++j) {
                        double gv = gsl[i * ow + j];
                        if (gv == 0.0) continue;
                        for (int a = 0; a < 11; ++a)
                          for (int b = 0; b < 11; ++b)
                            dsl[(i + a) * w + j + b] += gv * kGauss.k[a][b];
                      }
                  }
                });
}

// --------------------------------------------------------------------------
// reductions
// --------------------------------------------------------------------------

int sum_pb(Graph& g, int x) {
  const Tensor& vx = g.val(x);
  const int bsz = vx.dim(0);
  const int64_t item = item_size(vx);
  Tensor out(std::vector<int>{bsz});
  for (int i = 0; i < bsz; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < item; ++j) s += vx[i * item + j];
    out[i] = s;
  }
  return g.push(std::move(out), g.needs(x), [x, bsz, item](Graph& gg, int self) {
    const double* go = gg.grad_if_any(self);
    double* dx = gg.grad_buf(x);
    for (int i = 0; i < bsz; ++i)
      for (int64_t j = 0; j < item; ++j) dx[i * item + j] += go[i];
  });
}

int mean_pb(Graph& g, int x) {
  const int64_t item = item_size(g.val(x));
  return scale(g, sum_pb(g, x), 1.0 / static_cast<double>(item));
}

int mean_abs_pb(Graph& g, int a, int b) {
  const Tensor& va = g.val(a);
  const Tensor& vb = g.val(b);
  POSEFIT_CHECK(va.same_shape(vb), "mean_abs_pb: shape mismatch");
  const int bsz = va.dim(0);
  const int64_t item = item_size(va);
  Tensor out(std::vector<int>{bsz});
  for (int i = 0; i < bsz; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < item; ++j) s += std::fabs(va[i * item + j] - vb[i * item + j]);
    out[i] = s / static_cast<double>(item);
  }
  return g.push(std::move(out), g.needs(a) || g.needs(b),
                [a, b, bsz, item](Graph& gg, int self) {
                  const double* go = gg.grad_if_any(self);
                  const Tensor& va2 = gg.val(a);
                  const Tensor& vb2 = gg.val(b);
                  double inv = 1.0 / static_cast<double>(item);
                  for (int i = 0; i < bsz; ++i) {
                    double gi = go[i] * inv;
                    for (int64_t j = 0; j < item; ++j) {
                      double d = va2[i * item + j] - vb2[i * item + j];
                      double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                      if (gg.needs(a)) gg.grad_buf(a)[i * item + j] += gi * s;
                      if (gg.needs(b)) gg.grad_buf(b)[i * item + j] -= gi * s;
                    }
                  }
                });
}

int mean_sq_pb(Graph& g, int a, int b) {
  const Tensor& va = g.val(a);
  const Tensor& vb = g.val(b);
  POSEFIT_CHECK(va.same_shape(vb), "mean_sq_pb: shape mismatch");
  const int bsz = va.dim(0);
  const int64_t item = item_size(va);
  Tensor out(std::vector<int>{bsz});
  for (int i = 0; i < bsz; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < item; ++j) {
      double d = va[i * item + j] - vb[i * item + j];
      s += d * d;
    }
    out[i] = s / static_cast<double>(item);
  }
  return g.push(std::move(out), g.needs(a) || g.needs(b),
                [a, b, bsz, item](Graph& gg, int self) {
                  const double* go = gg.grad_if_any(self);
                  const Tensor& va2 = gg.val(a);
                  const Tensor& vb2 = gg.val(b);
                  double inv = 2.0 / static_cast<double>(item);
                  for (int i = 0; i < bsz; ++i) {
                    double gi = go[i] * inv;
                    for (int64_t j = 0; j < item; ++j) {
                      double d = va2[i * item + j] - vb2[i * item + j];
                      if (gg.needs(a)) gg.grad_buf(a)[i * item + j] += gi * d;
                      if (gg.needs(b)) gg.grad_buf(b)[i * item + j] -= gi * d;
                    }
                  }
                });
}

int l2norm_pb(Graph& g, int x, double eps2) {
  const Tensor& vx = g.val(x);
  const int bsz = vx.dim(0);
  const int64_t item = item_size(vx);
  Tensor out(std::vector<int>{bsz});
  for (int i = 0; i < bsz; ++i) {
    double s = eps2;
    for (int64_t j = 0; j < item; ++j) s += vx[i * item + j] * vx[i * item + j];
    out[i] = std::sqrt(s);
  }
  return g.push(std::move(out), g.needs(x), [x, bsz, item](Graph& gg, int self) {
    const double* go = gg.grad_if_any(self);
    const Tensor& vx2 = gg.val(x);
    const Tensor& vo = gg.val(self);
    double* dx = gg.grad_buf(x);
    for (int i = 0; i < bsz; ++i) {
      double gi = go[i] / vo[i];
      for (int64_t j = 0; j < item; ++j) dx[i * item + j] += gi * vx2[i * item + j];
    }
  });
}

int total(Graph& g, int x) {
  const Tensor& vx = g.val(x);
  Tensor out(std::vector<int>{1});
  out[0] = vx.sum();
  return g.push(std::move(out), g.needs(x), [x](Graph& gg, int self) {
    const double* go = gg.grad_if_any(self);
    double* dx = gg.grad_buf(x);
    int64_t n = gg.val(x).numel();
    for (int64_t i = 0; i < n; ++i) dx[i] += go[0];
  });
}

}  // namespace posefit::ag
