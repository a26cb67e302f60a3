#include "evformer/kernels.hpp"

#include <cmath>

// Reference kernels. These define the semantics the SIMD variants are tested
// against; keep them obvious.

namespace evf::kern {
namespace {

constexpr double kPi = 3.14159265358979323846;

template <typename T>
void add_t(const T* a, const T* b, T* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void sub_t(const T* a, const T* b, T* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename T>
void mul_t(const T* a, const T* b, T* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void scale_t(const T* a, T s, T* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

template <typename T>
void axpy_t(T a, const T* x, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
T dot_t(const T* a, const T* b, size_t n) {
  T acc = 0;
  for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
T sum_t(const T* a, size_t n) {
  T acc = 0;
  for (size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

template <typename T>
void gemm_t(size_t m, size_t n, size_t k, const T* a, const T* b, T* c) {
  for (size_t i = 0; i < m; ++i) {
    for (size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      T* crow = c + i * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void lif_step_t(const T* v, const T* x, T* v_out, T* s_out, T* h_out, size_t n,
                T decay, T input_scale, T charge_bias, T v_th, T v_reset) {
  for (size_t i = 0; i < n; ++i) {
    const T h = v[i] * decay + x[i] * input_scale + charge_bias;
    const T s = h >= v_th ? T(1) : T(0);
    if (h_out) h_out[i] = h;
    s_out[i] = s;
    v_out[i] = s != T(0) ? v_reset : h;
  }
}

template <typename T>
void surrogate_grad_t(const T* u, T* out, size_t n, T alpha) {
  const T half_pi_alpha = T(0.5) * T(kPi) * alpha;
  for (size_t i = 0; i < n; ++i) {
    const T z = half_pi_alpha * u[i];
    out[i] = alpha / (T(2) * (T(1) + z * z));
  }
}

template <typename T>
void readout_t(const uint32_t* counts, size_t h, size_t w, size_t k, const T* kw,
               T* out) {
  const size_t wk = w * k;
  for (size_t i = 0; i < h; ++i) {
    for (size_t j = 0; j < w; ++j) {
      T acc = 0;
      for (size_t a = 0; a < k; ++a) {
        const uint32_t* row = counts + (i * k + a) * wk + j * k;
        const T* wrow = kw + a * k;
        for (size_t b = 0; b < k; ++b) acc += wrow[b] * static_cast<T>(row[b]);
      }
      out[i * w + j] += acc;
    }
  }
}

}  // namespace

KernelTable scalar_table() {
  KernelTable t{};
  t.add_f32 = add_t<float>;
  t.sub_f32 = sub_t<float>;
  t.mul_f32 = mul_t<float>;
  t.scale_f32 = scale_t<float>;
  t.axpy_f32 = axpy_t<float>;
  t.dot_f32 = dot_t<float>;
  t.sum_f32 = sum_t<float>;
  t.gemm_f32 = gemm_t<float>;
  t.lif_step_f32 = lif_step_t<float>;
  t.surrogate_grad_f32 = surrogate_grad_t<float>;
  t.readout_f32 = readout_t<float>;

  t.add_f64 = add_t<double>;
  t.sub_f64 = sub_t<double>;
  t.mul_f64 = mul_t<double>;
  t.scale_f64 = scale_t<double>;
  t.axpy_f64 = axpy_t<double>;
  t.dot_f64 = dot_t<double>;
  t.sum_f64 = sum_t<double>;
  t.gemm_f64 = gemm_t<double>;
  t.lif_step_f64 = lif_step_t<double>;
  t.surrogate_grad_f64 = surrogate_grad_t<double>;
  t.readout_f64 = readout_t<double>;
  return t;
}

}  // namespace evf::kern
