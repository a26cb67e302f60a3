#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "evformer/kernels.hpp"
#include "evformer/tensor.hpp"

namespace evf::ops {

namespace detail {

template <typename T>
void accumulate(std::shared_ptr<TensorNode<T>>& node, const T* src, size_t n) {
  if (!wants_grad(node)) return;
  node->ensure_grad();
  kern::Dispatch<T>::add(node->grad.data(), src, node->grad.data(), n);
}

template <typename T>
void accumulate_scaled(std::shared_ptr<TensorNode<T>>& node, const T* src, size_t n, T s) {
  if (!wants_grad(node)) return;
  node->ensure_grad();
  kern::Dispatch<T>::axpy(s, src, node->grad.data(), n);
}

[[noreturn]] inline void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + shape_str(a) + " and " +
                              shape_str(b));
}

inline void split_axis(const Shape& s, int axis, int64_t& outer, int64_t& len,
                       int64_t& inner) {
  if (axis < 0 || axis >= int(s.size())) {
    throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for " +
                                shape_str(s));
  }
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[size_t(i)];
  len = s[size_t(axis)];
  for (int i = axis + 1; i < int(s.size()); ++i) inner *= s[size_t(i)];
}

template <typename T>
void transpose_2d(const T* src, int64_t rows, int64_t cols, T* dst) {
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

}  // namespace detail

// add(a, b): identical shapes, scalar b, or rank-1 b matching a's last axis
// (bias add over rows).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const size_t n = size_t(a.numel());
  std::vector<T> out(n);
  if (a.shape() == b.shape()) {
    kern::Dispatch<T>::add(a.data(), b.data(), out.data(), n);
    return make_op_result<T>(a.shape(), std::move(out), {a, b}, [n](TensorNode<T>& self) {
      detail::accumulate(self.parents[0], self.grad.data(), n);
      detail::accumulate(self.parents[1], self.grad.data(), n);
    });
  }
  if (b.numel() == 1) {
    const T bv = b.data()[0];
    for (size_t i = 0; i < n; ++i) out[i] = a.data()[i] + bv;
    return make_op_result<T>(a.shape(), std::move(out), {a, b}, [n](TensorNode<T>& self) {
      detail::accumulate(self.parents[0], self.grad.data(), n);
      if (wants_grad(self.parents[1])) {
        self.parents[1]->ensure_grad();
        self.parents[1]->grad[0] += kern::Dispatch<T>::sum(self.grad.data(), n);
      }
    });
  }
  if (b.rank() == 1 && a.rank() >= 1 && b.dim(0) == a.dim(a.rank() - 1)) {
    const int64_t d = b.dim(0);
    const int64_t rows = a.numel() / d;
    for (int64_t r = 0; r < rows; ++r) {
      kern::Dispatch<T>::add(a.data() + r * d, b.data(), out.data() + r * d, size_t(d));
    }
    return make_op_result<T>(a.shape(), std::move(out), {a, b},
                             [n, rows, d](TensorNode<T>& self) {
                               detail::accumulate(self.parents[0], self.grad.data(), n);
                               if (wants_grad(self.parents[1])) {
                                 self.parents[1]->ensure_grad();
                                 T* bg = self.parents[1]->grad.data();
                                 for (int64_t r = 0; r < rows; ++r) {
                                   kern::Dispatch<T>::add(bg, self.grad.data() + r * d, bg,
                                                          size_t(d));
                                 }
                               }
                             });
  }
  detail::shape_error("add", a.shape(), b.shape());
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const size_t n = size_t(a.numel());
  std::vector<T> out(n);
  if (a.shape() == b.shape()) {
    kern::Dispatch<T>::sub(a.data(), b.data(), out.data(), n);
    return make_op_result<T>(a.shape(), std::move(out), {a, b}, [n](TensorNode<T>& self) {
      detail::accumulate(self.parents[0], self.grad.data(), n);
      detail::accumulate_scaled(self.parents[1], self.grad.data(), n, T(-1));
    });
  }
  if (b.numel() == 1) {
    const T bv = b.data()[0];
    for (size_t i = 0; i < n; ++i) out[i] = a.data()[i] - bv;
    return make_op_result<T>(a.shape(), std::move(out), {a, b}, [n](TensorNode<T>& self) {
      detail::accumulate(self.parents[0], self.grad.data(), n);
      if (wants_grad(self.parents[1])) {
        self.parents[1]->ensure_grad();
        self.parents[1]->grad[0] -= kern::Dispatch<T>::sum(self.grad.data(), n);
      }
    });
  }
  detail::shape_error("sub", a.shape(), b.shape());
}

// mul(a, b): identical shapes or either side scalar.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.numel() == 1 && b.numel() != 1) return mul(b, a);
  const size_t n = size_t(a.numel());
  std::vector<T> out(n);
  if (a.shape() == b.shape()) {
    kern::Dispatch<T>::mul(a.data(), b.data(), out.data(), n);
    return make_op_result<T>(a.shape(), std::move(out), {a, b}, [n](TensorNode<T>& self) {
      std::vector<T> tmp(n);
      kern::Dispatch<T>::mul(self.grad.data(), self.parents[1]->values.data(), tmp.data(), n);
      detail::accumulate(self.parents[0], tmp.data(), n);
      kern::Dispatch<T>::mul(self.grad.data(), self.parents[0]->values.data(), tmp.data(), n);
      detail::accumulate(self.parents[1], tmp.data(), n);
    });
  }
  if (b.numel() == 1) {
    kern::Dispatch<T>::scale(a.data(), b.data()[0], out.data(), n);
    return make_op_result<T>(a.shape(), std::move(out), {a, b}, [n](TensorNode<T>& self) {
      detail::accumulate_scaled(self.parents[0], self.grad.data(), n,
                                self.parents[1]->values[0]);
      if (wants_grad(self.parents[1])) {
        self.parents[1]->ensure_grad();
        self.parents[1]->grad[0] +=
            kern::Dispatch<T>::dot(self.grad.data(), self.parents[0]->values.data(), n);
      }
    });
  }
  detail::shape_error("mul", a.shape(), b.shape());
}

// scale by a compile-time constant (no graph edge for the factor).
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  const size_t n = size_t(a.numel());
  std::vector<T> out(n);
  kern::Dispatch<T>::scale(a.data(), s, out.data(), n);
  return make_op_result<T>(a.shape(), std::move(out), {a}, [n, s](TensorNode<T>& self) {
    detail::accumulate_scaled(self.parents[0], self.grad.data(), n, s);
  });
}

// mul_last(a, g): y[..., j] = a[..., j] * g[j] with rank-1 g over a's last
// axis (the multiplicative twin of the bias add).
template <typename T>
Tensor<T> mul_last(const Tensor<T>& a, const Tensor<T>& g) {
  if (g.rank() != 1 || a.rank() < 1 || g.dim(0) != a.dim(a.rank() - 1)) {
    detail::shape_error("mul_last", a.shape(), g.shape());
  }
  const int64_t d = g.dim(0);
  const int64_t rows = a.numel() / d;
  std::vector<T> out(size_t(a.numel()));
  for (int64_t r = 0; r < rows; ++r) {
    kern::Dispatch<T>::mul(a.data() + r * d, g.data(), out.data() + r * d, size_t(d));
  }
  return make_op_result<T>(a.shape(), std::move(out), {a, g},
                           [rows, d](TensorNode<T>& self) {
                             const T* ga = self.grad.data();
                             const T* av = self.parents[0]->values.data();
                             const T* gv = self.parents[1]->values.data();
                             if (wants_grad(self.parents[0])) {
                               self.parents[0]->ensure_grad();
                               T* dst = self.parents[0]->grad.data();
                               for (int64_t r = 0; r < rows; ++r) {
                                 for (int64_t j = 0; j < d; ++j) {
                                   dst[r * d + j] += ga[r * d + j] * gv[j];
                                 }
                               }
                             }
                             if (wants_grad(self.parents[1])) {
                               self.parents[1]->ensure_grad();
                               T* dst = self.parents[1]->grad.data();
                               for (int64_t r = 0; r < rows; ++r) {
                                 for (int64_t j = 0; j < d; ++j) {
                                   dst[j] += ga[r * d + j] * av[r * d + j];
                                 }
                               }
                             }
                           });
}

// Per-row standardization over the last axis: y = (x - mean) / sqrt(var +
// eps) with biased variance. Constant rows map to zeros.
template <typename T>
Tensor<T> standardize_last(const Tensor<T>& a, T eps = T(1e-5)) {
  if (a.rank() < 1) throw std::invalid_argument("standardize_last: needs rank >= 1");
  if (!(eps > T(0))) throw std::invalid_argument("standardize_last: eps must be positive");
  const int64_t d = a.dim(a.rank() - 1);
  const int64_t rows = a.numel() / d;
  std::vector<T> out(size_t(a.numel()));
  for (int64_t r = 0; r < rows; ++r) {
    const T* x = a.data() + r * d;
    T mean = kern::Dispatch<T>::sum(x, size_t(d)) / T(d);
    T var = T(0);
    for (int64_t j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
    const T inv = T(1) / std::sqrt(var / T(d) + eps);
    T* y = out.data() + r * d;
    for (int64_t j = 0; j < d; ++j) y[j] = (x[j] - mean) * inv;
  }
  return make_op_result<T>(
      a.shape(), std::move(out), {a}, [rows, d, eps](TensorNode<T>& self) {
        if (!wants_grad(self.parents[0])) return;
        self.parents[0]->ensure_grad();
        const T* av = self.parents[0]->values.data();
        for (int64_t r = 0; r < rows; ++r) {
          const T* x = av + r * d;
          const T* gy = self.grad.data() + r * d;
          T mean = kern::Dispatch<T>::sum(x, size_t(d)) / T(d);
          T var = T(0);
          for (int64_t j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
          const T inv = T(1) / std::sqrt(var / T(d) + eps);
          T s1 = T(0), s2 = T(0);
          for (int64_t j = 0; j < d; ++j) {
            s1 += gy[j];
            s2 += gy[j] * (x[j] - mean) * inv;
          }
          s1 /= T(d);
          s2 /= T(d);
          T* dst = self.parents[0]->grad.data() + r * d;
          for (int64_t j = 0; j < d; ++j) {
            dst[j] += inv * (gy[j] - s1 - (x[j] - mean) * inv * s2);
          }
        }
      });
}

// matmul(a, b): a is [..., M, K]; b is either [K, N] (shared across the
// batch) or [..., K, N] with identical leading dims.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) detail::shape_error("matmul", a.shape(), b.shape());
  const int64_t m = a.dim(a.rank() - 2);
  const int64_t k = a.dim(a.rank() - 1);
  const int64_t kb = b.dim(b.rank() - 2);
  const int64_t nn = b.dim(b.rank() - 1);
  if (k != kb) detail::shape_error("matmul", a.shape(), b.shape());
  const bool shared_b = b.rank() == 2;
  int64_t batch = 1;
  for (int i = 0; i + 2 < a.rank(); ++i) batch *= a.dim(i);
  if (!shared_b) {
    if (b.rank() != a.rank()) detail::shape_error("matmul", a.shape(), b.shape());
    for (int i = 0; i + 2 < a.rank(); ++i) {
      if (a.dim(i) != b.dim(i)) detail::shape_error("matmul", a.shape(), b.shape());
    }
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(nn);
  std::vector<T> out(size_t(batch * m * nn), T(0));
  for (int64_t bi = 0; bi < batch; ++bi) {
    const T* bp = shared_b ? b.data() : b.data() + bi * k * nn;
    kern::Dispatch<T>::gemm(size_t(m), size_t(nn), size_t(k), a.data() + bi * m * k, bp,
                            out.data() + bi * m * nn);
  }
  return make_op_result<T>(
      std::move(out_shape), std::move(out), {a, b},
      [batch, m, k, nn, shared_b](TensorNode<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        const bool need_a = wants_grad(pa);
        const bool need_b = wants_grad(pb);
        if (need_a) pa->ensure_grad();
        if (need_b) pb->ensure_grad();
        std::vector<T> bt(need_a && shared_b ? size_t(k * nn) : 0);
        if (need_a && shared_b) detail::transpose_2d(pb->values.data(), k, nn, bt.data());
        std::vector<T> buf(size_t(std::max(k * nn, m * k)));
        for (int64_t bi = 0; bi < batch; ++bi) {
          const T* g = self.grad.data() + bi * m * nn;
          if (need_a) {
            const T* btp = bt.data();
            if (!shared_b) {
              detail::transpose_2d(pb->values.data() + bi * k * nn, k, nn, buf.data());
              btp = buf.data();
            }
            kern::Dispatch<T>::gemm(size_t(m), size_t(k), size_t(nn), g, btp,
                                    pa->grad.data() + bi * m * k);
          }
          if (need_b) {
            detail::transpose_2d(pa->values.data() + bi * m * k, m, k, buf.data());
            T* gb = shared_b ? pb->grad.data() : pb->grad.data() + bi * k * nn;
            kern::Dispatch<T>::gemm(size_t(k), size_t(nn), size_t(m), buf.data(), g, gb);
          }
        }
      });
}

// transpose of two axes; general rank.
template <typename T>
Tensor<T> transpose(const Tensor<T>& a, int d0, int d1) {
  const int r = a.rank();
  if (d0 < 0 || d1 < 0 || d0 >= r || d1 >= r) {
    throw std::invalid_argument("transpose: axes " + std::to_string(d0) + "," +
                                std::to_string(d1) + " out of range for " +
                                shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  std::swap(out_shape[size_t(d0)], out_shape[size_t(d1)]);
  std::vector<int64_t> in_strides(size_t(r), 1);
  for (int i = r - 2; i >= 0; --i) {
    in_strides[size_t(i)] = in_strides[size_t(i) + 1] * a.dim(i + 1);
  }
  std::vector<int64_t> src_stride_for_out = in_strides;
  std::swap(src_stride_for_out[size_t(d0)], src_stride_for_out[size_t(d1)]);
  const int64_t n = a.numel();
  auto permute = [r, out_shape, src_stride_for_out, n](const T* src, T* dst, bool accumulate) {
    std::vector<int64_t> idx(size_t(r), 0);
    for (int64_t o = 0; o < n; ++o) {
      int64_t src_off = 0;
      for (int i = 0; i < r; ++i) src_off += idx[size_t(i)] * src_stride_for_out[size_t(i)];
      if (accumulate) {
        dst[src_off] += src[o];
      } else {
        dst[o] = src[src_off];
      }
      for (int i = r - 1; i >= 0; --i) {
        if (++idx[size_t(i)] < out_shape[size_t(i)]) break;
        idx[size_t(i)] = 0;
      }
    }
  };
  std::vector<T> out(static_cast<size_t>(n));
  permute(a.data(), out.data(), false);
  return make_op_result<T>(std::move(out_shape), std::move(out), {a},
                           [permute](TensorNode<T>& self) {
                             auto& pa = self.parents[0];
                             if (!wants_grad(pa)) return;
                             pa->ensure_grad();
                             permute(self.grad.data(), pa->grad.data(), true);
                           });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    detail::shape_error("reshape", a.shape(), shape);
  }
  const size_t n = size_t(a.numel());
  std::vector<T> out(a.values());
  return make_op_result<T>(std::move(shape), std::move(out), {a}, [n](TensorNode<T>& self) {
    detail::accumulate(self.parents[0], self.grad.data(), n);
  });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  const size_t n = size_t(a.numel());
  const T total = kern::Dispatch<T>::sum(a.data(), n);
  return make_op_result<T>({}, {total}, {a}, [n](TensorNode<T>& self) {
    auto& pa = self.parents[0];
    if (!wants_grad(pa)) return;
    pa->ensure_grad();
    const T g = self.grad[0];
    for (size_t i = 0; i < n; ++i) pa->grad[i] += g;
  });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean_all: empty tensor");
  return scale(sum_all(a), T(1) / T(a.numel()));
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& a, int axis) {
  int64_t outer, len, inner;
  detail::split_axis(a.shape(), axis, outer, len, inner);
  Shape out_shape;
  for (int i = 0; i < a.rank(); ++i) {
    if (i != axis) out_shape.push_back(a.dim(i));
  }
  std::vector<T> out(size_t(outer * inner), T(0));
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t l = 0; l < len; ++l) {
      kern::Dispatch<T>::add(out.data() + o * inner, a.data() + (o * len + l) * inner,
                             out.data() + o * inner, size_t(inner));
    }
  }
  return make_op_result<T>(std::move(out_shape), std::move(out), {a},
                           [outer, len, inner](TensorNode<T>& self) {
                             auto& pa = self.parents[0];
                             if (!wants_grad(pa)) return;
                             pa->ensure_grad();
                             for (int64_t o = 0; o < outer; ++o) {
                               const T* g = self.grad.data() + o * inner;
                               for (int64_t l = 0; l < len; ++l) {
                                 T* dst = pa->grad.data() + (o * len + l) * inner;
                                 kern::Dispatch<T>::add(dst, g, dst, size_t(inner));
                               }
                             }
                           });
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& a, int axis) {
  const int64_t len = a.dim(axis);
  if (len == 0) throw std::invalid_argument("mean_axis: empty axis");
  return scale(sum_axis(a, axis), T(1) / T(len));
}

// softmax over the last axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
  if (a.rank() < 1) throw std::invalid_argument("softmax: needs rank >= 1");
  const int64_t d = a.dim(a.rank() - 1);
  const int64_t rows = a.numel() / d;
  std::vector<T> out(size_t(a.numel()));
  for (int64_t r = 0; r < rows; ++r) {
    const T* x = a.data() + r * d;
    T* y = out.data() + r * d;
    T mx = x[0];
    for (int64_t i = 1; i < d; ++i) mx = std::max(mx, x[i]);
    T z = T(0);
    for (int64_t i = 0; i < d; ++i) {
      y[i] = std::exp(x[i] - mx);
      z += y[i];
    }
    for (int64_t i = 0; i < d; ++i) y[i] /= z;
  }
  return make_op_result<T>(a.shape(), std::move(out), {a}, [rows, d](TensorNode<T>& self) {
    auto& pa = self.parents[0];
    if (!wants_grad(pa)) return;
    pa->ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const T* y = self.values.data() + r * d;
      const T* g = self.grad.data() + r * d;
      T dot = T(0);
      for (int64_t i = 0; i < d; ++i) dot += g[i] * y[i];
      T* dst = pa->grad.data() + r * d;
      for (int64_t i = 0; i < d; ++i) dst[i] += y[i] * (g[i] - dot);
    }
  });
}

// Mean cross-entropy from raw logits ([C] or [B, C]) against integer labels.
template <typename T>
Tensor<T> cross_entropy_with_logits(const Tensor<T>& logits, const std::vector<int64_t>& labels) {
  if (logits.rank() < 1 || logits.rank() > 2) {
    throw std::invalid_argument("cross_entropy: logits must be [C] or [B, C], got " +
                                shape_str(logits.shape()));
  }
  const int64_t c = logits.dim(logits.rank() - 1);
  const int64_t b = logits.rank() == 2 ? logits.dim(0) : 1;
  if (int64_t(labels.size()) != b) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(b) + " rows but " +
                                std::to_string(labels.size()) + " labels");
  }
  for (int64_t y : labels) {
    if (y < 0 || y >= c) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) +
                                  " out of range for " + std::to_string(c) + " classes");
    }
  }
  T loss = T(0);
  for (int64_t r = 0; r < b; ++r) {
    const T* z = logits.data() + r * c;
    T mx = z[0];
    for (int64_t i = 1; i < c; ++i) mx = std::max(mx, z[i]);
    T s = T(0);
    for (int64_t i = 0; i < c; ++i) s += std::exp(z[i] - mx);
    loss += mx + std::log(s) - z[labels[size_t(r)]];
  }
  loss /= T(b);
  return make_op_result<T>({}, {loss}, {logits}, [b, c, labels](TensorNode<T>& self) {
    auto& pl = self.parents[0];
    if (!wants_grad(pl)) return;
    pl->ensure_grad();
    const T g = self.grad[0] / T(b);
    for (int64_t r = 0; r < b; ++r) {
      const T* z = pl->values.data() + r * c;
      T* dst = pl->grad.data() + r * c;
      T mx = z[0];
      for (int64_t i = 1; i < c; ++i) mx = std::max(mx, z[i]);
      T s = T(0);
      for (int64_t i = 0; i < c; ++i) s += std::exp(z[i] - mx);
      for (int64_t i = 0; i < c; ++i) {
        T p = std::exp(z[i] - mx) / s;
        dst[i] += g * (p - (i == labels[size_t(r)] ? T(1) : T(0)));
      }
    }
  });
}

namespace detail {

// Patch matrix for one (batch, group) slice: row = c*kh*kw + ki*kw + kj,
// column = output position; out-of-bounds reads are zero.
template <typename T>
void im2col(const T* x, int64_t cin_g, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t ho, int64_t wo, T* cols) {
  for (int64_t c = 0; c < cin_g; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        T* row = cols + ((c * kh + ki) * kw + kj) * ho * wo;
        for (int64_t oh = 0; oh < ho; ++oh) {
          const int64_t ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= h) {
            std::fill(row + oh * wo, row + (oh + 1) * wo, T(0));
            continue;
          }
          const T* src = x + (c * h + ih) * w;
          for (int64_t ow = 0; ow < wo; ++ow) {
            const int64_t iw = ow * stride - pad + kj;
            row[oh * wo + ow] = (iw < 0 || iw >= w) ? T(0) : src[iw];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, int64_t cin_g, int64_t h, int64_t w, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t ho, int64_t wo, T* x) {
  for (int64_t c = 0; c < cin_g; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        const T* row = cols + ((c * kh + ki) * kw + kj) * ho * wo;
        for (int64_t oh = 0; oh < ho; ++oh) {
          const int64_t ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= h) continue;
          T* dst = x + (c * h + ih) * w;
          for (int64_t ow = 0; ow < wo; ++ow) {
            const int64_t iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < w) dst[iw] += row[oh * wo + ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

// conv2d: x [B, Cin, H, W], w [Cout, Cin/groups, kh, kw], optional rank-1
// bias [Cout]. Output spatial dims use floor division.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 int64_t stride, int64_t pad, int64_t groups) {
  if (x.rank() != 4 || w.rank() != 4) detail::shape_error("conv2d", x.shape(), w.shape());
  if (stride < 1 || pad < 0 || groups < 1) {
    throw std::invalid_argument("conv2d: bad stride/pad/groups " + std::to_string(stride) +
                                "/" + std::to_string(pad) + "/" + std::to_string(groups));
  }
  const int64_t bsz = x.dim(0), cin = x.dim(1), h = x.dim(2), ww = x.dim(3);
  const int64_t cout = w.dim(0), cin_g = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g) {
    detail::shape_error("conv2d", x.shape(), w.shape());
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    detail::shape_error("conv2d bias", w.shape(), bias.shape());
  }
  const int64_t ho = (h + 2 * pad - kh) / stride + 1;
  const int64_t wo = (ww + 2 * pad - kw) / stride + 1;
  if (ho < 1 || wo < 1) {
    throw std::invalid_argument("conv2d: kernel " + shape_str(w.shape()) +
                                " does not fit input " + shape_str(x.shape()));
  }
  const int64_t cout_g = cout / groups;
  const int64_t ckk = cin_g * kh * kw;
  const int64_t spatial = ho * wo;
  std::vector<T> out(size_t(bsz * cout * spatial), T(0));
  std::vector<T> cols(size_t(ckk * spatial));
  for (int64_t b = 0; b < bsz; ++b) {
    for (int64_t g = 0; g < groups; ++g) {
      detail::im2col(x.data() + (b * cin + g * cin_g) * h * ww, cin_g, h, ww, kh, kw,
                     stride, pad, ho, wo, cols.data());
      kern::Dispatch<T>::gemm(size_t(cout_g), size_t(spatial), size_t(ckk),
                              w.data() + g * cout_g * ckk, cols.data(),
                              out.data() + (b * cout + g * cout_g) * spatial);
    }
  }
  if (bias.defined()) {
    for (int64_t b = 0; b < bsz; ++b) {
      for (int64_t c = 0; c < cout; ++c) {
        T* dst = out.data() + (b * cout + c) * spatial;
        const T bv = bias.data()[c];
        for (int64_t i = 0; i < spatial; ++i) dst[i] += bv;
      }
    }
  }
  const bool has_bias = bias.defined();
  auto backward = [bsz, cin, h, ww, cout, cin_g, kh, kw, stride, pad, groups, cout_g, ckk,
                   spatial, ho, wo, has_bias](TensorNode<T>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    const bool need_x = wants_grad(px);
    const bool need_w = wants_grad(pw);
    const bool need_b = has_bias && wants_grad(self.parents[2]);
    if (need_x) px->ensure_grad();
    if (need_w) pw->ensure_grad();
    if (need_b) self.parents[2]->ensure_grad();
    std::vector<T> cols((need_x || need_w) ? size_t(ckk * spatial) : 0);
    std::vector<T> cols_t(need_w ? size_t(ckk * spatial) : 0);
    std::vector<T> w_t(need_x ? size_t(ckk * cout_g) : 0);
    std::vector<T> dcols(need_x ? size_t(ckk * spatial) : 0);
    for (int64_t b = 0; b < bsz; ++b) {
      for (int64_t g = 0; g < groups; ++g) {
        const T* gout = self.grad.data() + (b * cout + g * cout_g) * spatial;
        if (need_w) {
          detail::im2col(px->values.data() + (b * cin + g * cin_g) * h * ww, cin_g, h, ww,
                         kh, kw, stride, pad, ho, wo, cols.data());
          detail::transpose_2d(cols.data(), ckk, spatial, cols_t.data());
          kern::Dispatch<T>::gemm(size_t(cout_g), size_t(ckk), size_t(spatial), gout,
                                  cols_t.data(), pw->grad.data() + g * cout_g * ckk);
        }
        if (need_x) {
          detail::transpose_2d(pw->values.data() + g * cout_g * ckk, cout_g, ckk, w_t.data());
          std::fill(dcols.begin(), dcols.end(), T(0));
          kern::Dispatch<T>::gemm(size_t(ckk), size_t(spatial), size_t(cout_g), w_t.data(),
                                  gout, dcols.data());
          detail::col2im_add(dcols.data(), cin_g, h, ww, kh, kw, stride, pad, ho, wo,
                             px->grad.data() + (b * cin + g * cin_g) * h * ww);
        }
      }
      if (need_b) {
        T* bg = self.parents[2]->grad.data();
        for (int64_t c = 0; c < cout; ++c) {
          bg[c] += kern::Dispatch<T>::sum(self.grad.data() + (b * cout + c) * spatial,
                                          size_t(spatial));
        }
      }
    }
  };
  std::vector<Tensor<T>> parents = {x, w};
  if (has_bias) parents.push_back(bias);
  return make_op_result<T>({bsz, cout, ho, wo}, std::move(out), std::move(parents),
                           std::move(backward));
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int64_t stride, int64_t pad = 0,
                 int64_t groups = 1) {
  return conv2d(x, w, Tensor<T>(), stride, pad, groups);
}

}  // namespace evf::ops
