#pragma once

// C headers only: this header must survive a freestanding cross-compile of
// the NEON TU.
#include <stddef.h>
#include <stdint.h>

namespace evf::kern {

// Hot inner loops, dispatched at runtime to the best ISA variant.
//
// Every entry has a scalar reference implementation; AVX2 (x86-64) and NEON
// (aarch64) variants override a subset of the table. `lif_step` and `readout`
// variants keep the scalar evaluation order and avoid FMA contraction, so
// they are bit-identical to the reference; `gemm`/`dot`/`axpy` may use FMA
// and differ in the last ulps.
struct KernelTable {
  // elementwise, all buffers length n, out may alias inputs
  void (*add_f32)(const float* a, const float* b, float* out, size_t n);
  void (*sub_f32)(const float* a, const float* b, float* out, size_t n);
  void (*mul_f32)(const float* a, const float* b, float* out, size_t n);
  void (*scale_f32)(const float* a, float s, float* out, size_t n);
  void (*axpy_f32)(float a, const float* x, float* y, size_t n);  // y += a*x
  float (*dot_f32)(const float* a, const float* b, size_t n);
  float (*sum_f32)(const float* a, size_t n);

  // row-major C(MxN) += A(MxK) * B(KxN), tight leading dimensions
  void (*gemm_f32)(size_t m, size_t n, size_t k, const float* a, const float* b,
                   float* c);

  // One LIF time step over n independent neurons (hard threshold):
  //   h = v*decay + x*input_scale + charge_bias
  //   s = h >= v_th ? 1 : 0
  //   v_out = s ? v_reset : h
  // s_out gets the binary spikes, v_out the post-reset membrane. h_out,
  // when non-null, gets the pre-reset membrane (saved for backward).
  void (*lif_step_f32)(const float* v, const float* x, float* v_out, float* s_out,
                       float* h_out, size_t n, float decay, float input_scale,
                       float charge_bias, float v_th, float v_reset);

  // out[i] = alpha / (2 * (1 + (pi*alpha*u[i]/2)^2))
  void (*surrogate_grad_f32)(const float* u, float* out, size_t n, float alpha);

  // Stride-K blocked dot over one count channel:
  //   out(i,j) += sum_{a,b} w[a*K+b] * counts[(i*K+a)*(W*K) + j*K + b]
  // counts is (H*K) x (W*K) row-major, out is H x W row-major.
  void (*readout_f32)(const uint32_t* counts, size_t h, size_t w, size_t k,
                      const float* kw, float* out);

  // f64 twins (used by the gradient-check build of the model)
  void (*add_f64)(const double* a, const double* b, double* out, size_t n);
  void (*sub_f64)(const double* a, const double* b, double* out, size_t n);
  void (*mul_f64)(const double* a, const double* b, double* out, size_t n);
  void (*scale_f64)(const double* a, double s, double* out, size_t n);
  void (*axpy_f64)(double a, const double* x, double* y, size_t n);
  double (*dot_f64)(const double* a, const double* b, size_t n);
  double (*sum_f64)(const double* a, size_t n);
  void (*gemm_f64)(size_t m, size_t n, size_t k, const double* a, const double* b,
                   double* c);
  void (*lif_step_f64)(const double* v, const double* x, double* v_out,
                       double* s_out, double* h_out, size_t n, double decay,
                       double input_scale, double charge_bias, double v_th,
                       double v_reset);
  void (*surrogate_grad_f64)(const double* u, double* out, size_t n, double alpha);
  void (*readout_f64)(const uint32_t* counts, size_t h, size_t w, size_t k,
                      const double* kw, double* out);
};

KernelTable scalar_table();
#if defined(EVFORMER_BUILD_AVX2)
KernelTable avx2_table();  // entries not implemented in AVX2 fall back to scalar
bool cpu_has_avx2();
#endif
#if defined(EVFORMER_BUILD_NEON)
KernelTable neon_table();
#endif

// Active table. Resolved once: EVFORMER_SIMD={auto,scalar,avx2,neon} overrides
// autodetection; unknown values or an ISA the CPU lacks raise std::runtime_error.
const KernelTable& table();
const char* active_isa();  // "scalar", "avx2" or "neon"

// Typed convenience wrappers so templated callers pick the right entry.
template <typename T>
struct Dispatch;

template <>
struct Dispatch<float> {
  static void add(const float* a, const float* b, float* o, size_t n) { table().add_f32(a, b, o, n); }
  static void sub(const float* a, const float* b, float* o, size_t n) { table().sub_f32(a, b, o, n); }
  static void mul(const float* a, const float* b, float* o, size_t n) { table().mul_f32(a, b, o, n); }
  static void scale(const float* a, float s, float* o, size_t n) { table().scale_f32(a, s, o, n); }
  static void axpy(float a, const float* x, float* y, size_t n) { table().axpy_f32(a, x, y, n); }
  static float dot(const float* a, const float* b, size_t n) { return table().dot_f32(a, b, n); }
  static float sum(const float* a, size_t n) { return table().sum_f32(a, n); }
  static void gemm(size_t m, size_t n, size_t k, const float* a, const float* b, float* c) { table().gemm_f32(m, n, k, a, b, c); }
  static void lif_step(const float* v, const float* x, float* vo, float* so, float* ho, size_t n,
                       float decay, float in_scale, float bias, float vth, float vreset) {
    table().lif_step_f32(v, x, vo, so, ho, n, decay, in_scale, bias, vth, vreset);
  }
  static void surrogate_grad(const float* u, float* o, size_t n, float alpha) { table().surrogate_grad_f32(u, o, n, alpha); }
  static void readout(const uint32_t* c, size_t h, size_t w, size_t k, const float* kw, float* o) { table().readout_f32(c, h, w, k, kw, o); }
};

template <>
struct Dispatch<double> {
  static void add(const double* a, const double* b, double* o, size_t n) { table().add_f64(a, b, o, n); }
  static void sub(const double* a, const double* b, double* o, size_t n) { table().sub_f64(a, b, o, n); }
  static void mul(const double* a, const double* b, double* o, size_t n) { table().mul_f64(a, b, o, n); }
  static void scale(const double* a, double s, double* o, size_t n) { table().scale_f64(a, s, o, n); }
  static void axpy(double a, const double* x, double* y, size_t n) { table().axpy_f64(a, x, y, n); }
  static double dot(const double* a, const double* b, size_t n) { return table().dot_f64(a, b, n); }
  static double sum(const double* a, size_t n) { return table().sum_f64(a, n); }
  static void gemm(size_t m, size_t n, size_t k, const double* a, const double* b, double* c) { table().gemm_f64(m, n, k, a, b, c); }
  static void lif_step(const double* v, const double* x, double* vo, double* so, double* ho, size_t n,
                       double decay, double in_scale, double bias, double vth, double vreset) {
    table().lif_step_f64(v, x, vo, so, ho, n, decay, in_scale, bias, vth, vreset);
  }
  static void surrogate_grad(const double* u, double* o, size_t n, double alpha) { table().surrogate_grad_f64(u, o, n, alpha); }
  static void readout(const uint32_t* c, size_t h, size_t w, size_t k, const double* kw, double* o) { table().readout_f64(c, h, w, k, kw, o); }
};

}  // namespace evf::kern
