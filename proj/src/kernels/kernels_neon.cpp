// NEON (aarch64) kernel variants. Only C headers here so the TU can be
// cross-checked freestanding.

#include "evformer/kernels.hpp"

#if defined(__aarch64__) || defined(_M_ARM64)

#include <arm_neon.h>
#include <stddef.h>
#include <stdint.h>

namespace evf::kern {
namespace {

void add_f32(const float* a, const float* b, float* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vaddq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_f32(const float* a, const float* b, float* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vsubq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_f32(const float* a, const float* b, float* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vmulq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_f32(const float* a, float s, float* out, size_t n) {
  const float32x4_t vs = vdupq_n_f32(s);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vmulq_f32(vld1q_f32(a + i), vs));
  for (; i < n; ++i) out[i] = a[i] * s;
}

void axpy_f32(float a, const float* x, float* y, size_t n) {
  const float32x4_t va = vdupq_n_f32(a);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    vst1q_f32(y + i, vfmaq_f32(vld1q_f32(y + i), va, vld1q_f32(x + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

float dot_f32(const float* a, const float* b, size_t n) {
  float32x4_t acc = vdupq_n_f32(0.0f);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = vfmaq_f32(acc, vld1q_f32(a + i), vld1q_f32(b + i));
  float r = vaddvq_f32(acc);
  for (; i < n; ++i) r += a[i] * b[i];
  return r;
}

float sum_f32(const float* a, size_t n) {
  float32x4_t acc = vdupq_n_f32(0.0f);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = vaddq_f32(acc, vld1q_f32(a + i));
  float r = vaddvq_f32(acc);
  for (; i < n; ++i) r += a[i];
  return r;
}

void gemm_f32(size_t m, size_t n, size_t k, const float* a, const float* b, float* c) {
  for (size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    const float* arow = a + i * k;
    size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      float32x4_t acc0 = vld1q_f32(crow + j);
      float32x4_t acc1 = vld1q_f32(crow + j + 4);
      for (size_t p = 0; p < k; ++p) {
        const float32x4_t av = vdupq_n_f32(arow[p]);
        const float* brow = b + p * n + j;
        acc0 = vfmaq_f32(acc0, av, vld1q_f32(brow));
        acc1 = vfmaq_f32(acc1, av, vld1q_f32(brow + 4));
      }
      vst1q_f32(crow + j, acc0);
      vst1q_f32(crow + j + 4, acc1);
    }
    for (; j + 4 <= n; j += 4) {
      float32x4_t acc = vld1q_f32(crow + j);
      for (size_t p = 0; p < k; ++p)
        acc = vfmaq_f32(acc, vdupq_n_f32(arow[p]), vld1q_f32(b + p * n + j));
      vst1q_f32(crow + j, acc);
    }
    if (j < n) {
      for (size_t p = 0; p < k; ++p) {
        const float av = arow[p];
        const float* brow = b + p * n;
        for (size_t jj = j; jj < n; ++jj) crow[jj] += av * brow[jj];
      }
    }
  }
}

// Bit-identical to the scalar reference: explicit mul+add, no FMA.
void lif_step_f32(const float* v, const float* x, float* v_out, float* s_out,
                  float* h_out, size_t n, float decay, float input_scale,
                  float charge_bias, float v_th, float v_reset) {
  const float32x4_t vdecay = vdupq_n_f32(decay);
  const float32x4_t vscale = vdupq_n_f32(input_scale);
  const float32x4_t vbias = vdupq_n_f32(charge_bias);
  const float32x4_t vth = vdupq_n_f32(v_th);
  const float32x4_t vreset = vdupq_n_f32(v_reset);
  const float32x4_t ones = vdupq_n_f32(1.0f);
  const float32x4_t zeros = vdupq_n_f32(0.0f);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float32x4_t h = vaddq_f32(
        vaddq_f32(vmulq_f32(vld1q_f32(v + i), vdecay), vmulq_f32(vld1q_f32(x + i), vscale)),
        vbias);
    const uint32x4_t mask = vcgeq_f32(h, vth);
    if (h_out) vst1q_f32(h_out + i, h);
    vst1q_f32(s_out + i, vbslq_f32(mask, ones, zeros));
    vst1q_f32(v_out + i, vbslq_f32(mask, vreset, h));
  }
  for (; i < n; ++i) {
    const float h = v[i] * decay + x[i] * input_scale + charge_bias;
    const float s = h >= v_th ? 1.0f : 0.0f;
    if (h_out) h_out[i] = h;
    s_out[i] = s;
    v_out[i] = s != 0.0f ? v_reset : h;
  }
}

void surrogate_grad_f32(const float* u, float* out, size_t n, float alpha) {
  const float half_pi_alpha = 0.5f * 3.14159265358979323846f * alpha;
  const float32x4_t vh = vdupq_n_f32(half_pi_alpha);
  const float32x4_t vnum = vdupq_n_f32(alpha);
  const float32x4_t vone = vdupq_n_f32(1.0f);
  const float32x4_t vtwo = vdupq_n_f32(2.0f);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float32x4_t z = vmulq_f32(vh, vld1q_f32(u + i));
    const float32x4_t den = vmulq_f32(vtwo, vaddq_f32(vone, vmulq_f32(z, z)));
    vst1q_f32(out + i, vdivq_f32(vnum, den));
  }
  for (; i < n; ++i) {
    const float z = half_pi_alpha * u[i];
    out[i] = alpha / (2.0f * (1.0f + z * z));
  }
}

}  // namespace

KernelTable neon_table() {
  KernelTable t = scalar_table();
  t.add_f32 = add_f32;
  t.sub_f32 = sub_f32;
  t.mul_f32 = mul_f32;
  t.scale_f32 = scale_f32;
  t.axpy_f32 = axpy_f32;
  t.dot_f32 = dot_f32;
  t.sum_f32 = sum_f32;
  t.gemm_f32 = gemm_f32;
  t.lif_step_f32 = lif_step_f32;
  t.surrogate_grad_f32 = surrogate_grad_f32;
  return t;
}

}  // namespace evf::kern

#endif  // aarch64
