// AVX2 kernel variants. This TU is compiled with -mavx2 -mfma and must only be
// reached through the dispatch table after a runtime CPU check.

#include "evformer/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

namespace evf::kern {
namespace {

inline float hsum256(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  __m128 s = _mm_add_ps(lo, hi);
  s = _mm_add_ps(s, _mm_movehl_ps(s, s));
  s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 1));
  return _mm_cvtss_f32(s);
}

inline double hsum256d(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  __m128d s = _mm_add_pd(lo, hi);
  s = _mm_add_sd(s, _mm_unpackhi_pd(s, s));
  return _mm_cvtsd_f64(s);
}

void add_f32(const float* a, const float* b, float* out, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_f32(const float* a, const float* b, float* out, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_f32(const float* a, const float* b, float* out, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_f32(const float* a, float s, float* out, size_t n) {
  const __m256 vs = _mm256_set1_ps(s);
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), vs));
  for (; i < n; ++i) out[i] = a[i] * s;
}

void axpy_f32(float a, const float* x, float* y, size_t n) {
  const __m256 va = _mm256_set1_ps(a);
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

float dot_f32(const float* a, const float* b, size_t n) {
  __m256 acc = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
  float r = hsum256(acc);
  for (; i < n; ++i) r += a[i] * b[i];
  return r;
}

float sum_f32(const float* a, size_t n) {
  __m256 acc = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(a + i));
  float r = hsum256(acc);
  for (; i < n; ++i) r += a[i];
  return r;
}

void gemm_f32(size_t m, size_t n, size_t k, const float* a, const float* b, float* c) {
  for (size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    const float* arow = a + i * k;
    size_t j = 0;
    for (; j + 16 <= n; j += 16) {
      __m256 acc0 = _mm256_loadu_ps(crow + j);
      __m256 acc1 = _mm256_loadu_ps(crow + j + 8);
      for (size_t p = 0; p < k; ++p) {
        const __m256 av = _mm256_set1_ps(arow[p]);
        const float* brow = b + p * n + j;
        acc0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(brow), acc0);
        acc1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(brow + 8), acc1);
      }
      _mm256_storeu_ps(crow + j, acc0);
      _mm256_storeu_ps(crow + j + 8, acc1);
    }
    for (; j + 8 <= n; j += 8) {
      __m256 acc = _mm256_loadu_ps(crow + j);
      for (size_t p = 0; p < k; ++p)
        acc = _mm256_fmadd_ps(_mm256_set1_ps(arow[p]), _mm256_loadu_ps(b + p * n + j), acc);
      _mm256_storeu_ps(crow + j, acc);
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

// Bit-identical to the scalar reference: explicit mul+add, same order, no FMA.
void lif_step_f32(const float* v, const float* x, float* v_out, float* s_out,
                  float* h_out, size_t n, float decay, float input_scale,
                  float charge_bias, float v_th, float v_reset) {
  const __m256 vdecay = _mm256_set1_ps(decay);
  const __m256 vscale = _mm256_set1_ps(input_scale);
  const __m256 vbias = _mm256_set1_ps(charge_bias);
  const __m256 vth = _mm256_set1_ps(v_th);
  const __m256 vreset = _mm256_set1_ps(v_reset);
  const __m256 ones = _mm256_set1_ps(1.0f);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 h = _mm256_add_ps(
        _mm256_add_ps(_mm256_mul_ps(_mm256_loadu_ps(v + i), vdecay),
                      _mm256_mul_ps(_mm256_loadu_ps(x + i), vscale)),
        vbias);
    const __m256 mask = _mm256_cmp_ps(h, vth, _CMP_GE_OQ);
    if (h_out) _mm256_storeu_ps(h_out + i, h);
    _mm256_storeu_ps(s_out + i, _mm256_and_ps(mask, ones));
    _mm256_storeu_ps(v_out + i, _mm256_blendv_ps(h, vreset, mask));
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
  const __m256 vh = _mm256_set1_ps(half_pi_alpha);
  const __m256 vnum = _mm256_set1_ps(alpha);
  const __m256 vone = _mm256_set1_ps(1.0f);
  const __m256 vtwo = _mm256_set1_ps(2.0f);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 z = _mm256_mul_ps(vh, _mm256_loadu_ps(u + i));
    const __m256 den = _mm256_mul_ps(vtwo, _mm256_add_ps(vone, _mm256_mul_ps(z, z)));
    _mm256_storeu_ps(out + i, _mm256_div_ps(vnum, den));
  }
  for (; i < n; ++i) {
    const float z = half_pi_alpha * u[i];
    out[i] = alpha / (2.0f * (1.0f + z * z));
  }
}

// Gathers counts for 8 consecutive output columns at a time. Counts must be
// below 2^31 (cvtepi32 is signed); bit-identical to the scalar reference.
void readout_f32(const uint32_t* counts, size_t h, size_t w, size_t k,
                 const float* kw, float* out) {
  const size_t wk = w * k;
  const int ik = static_cast<int>(k);
  const __m256i idx = _mm256_setr_epi32(0, ik, 2 * ik, 3 * ik, 4 * ik, 5 * ik, 6 * ik, 7 * ik);
  for (size_t i = 0; i < h; ++i) {
    float* orow = out + i * w;
    size_t j = 0;
    for (; j + 8 <= w; j += 8) {
      __m256 acc = _mm256_setzero_ps();
      for (size_t a = 0; a < k; ++a) {
        const uint32_t* base = counts + (i * k + a) * wk + j * k;
        const float* wrow = kw + a * k;
        for (size_t b = 0; b < k; ++b) {
          const __m256i cnt = _mm256_i32gather_epi32(
              reinterpret_cast<const int*>(base + b), idx, 4);
          acc = _mm256_add_ps(acc, _mm256_mul_ps(_mm256_set1_ps(wrow[b]),
                                                 _mm256_cvtepi32_ps(cnt)));
        }
      }
      _mm256_storeu_ps(orow + j, _mm256_add_ps(_mm256_loadu_ps(orow + j), acc));
    }
    for (; j < w; ++j) {
      float acc = 0.0f;
      for (size_t a = 0; a < k; ++a) {
        const uint32_t* row = counts + (i * k + a) * wk + j * k;
        const float* wrow = kw + a * k;
        for (size_t b = 0; b < k; ++b) acc += wrow[b] * static_cast<float>(row[b]);
      }
      orow[j] += acc;
    }
  }
}

void add_f64(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_f64(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_f64(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_f64(const double* a, double s, double* out, size_t n) {
  const __m256d vs = _mm256_set1_pd(s);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vs));
  for (; i < n; ++i) out[i] = a[i] * s;
}

void axpy_f64(double a, const double* x, double* y, size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

double dot_f64(const double* a, const double* b, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  double r = hsum256d(acc);
  for (; i < n; ++i) r += a[i] * b[i];
  return r;
}

double sum_f64(const double* a, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
  double r = hsum256d(acc);
  for (; i < n; ++i) r += a[i];
  return r;
}

void gemm_f64(size_t m, size_t n, size_t k, const double* a, const double* b, double* c) {
  for (size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d acc0 = _mm256_loadu_pd(crow + j);
      __m256d acc1 = _mm256_loadu_pd(crow + j + 4);
      for (size_t p = 0; p < k; ++p) {
        const __m256d av = _mm256_set1_pd(arow[p]);
        const double* brow = b + p * n + j;
        acc0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow), acc0);
        acc1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + 4), acc1);
      }
      _mm256_storeu_pd(crow + j, acc0);
      _mm256_storeu_pd(crow + j + 4, acc1);
    }
    for (; j + 4 <= n; j += 4) {
      __m256d acc = _mm256_loadu_pd(crow + j);
      for (size_t p = 0; p < k; ++p)
        acc = _mm256_fmadd_pd(_mm256_set1_pd(arow[p]), _mm256_loadu_pd(b + p * n + j), acc);
      _mm256_storeu_pd(crow + j, acc);
    }
    if (j < n) {
      for (size_t p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = b + p * n;
        for (size_t jj = j; jj < n; ++jj) crow[jj] += av * brow[jj];
      }
    }
  }
}

}  // namespace

bool cpu_has_avx2() {
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

KernelTable avx2_table() {
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
  t.readout_f32 = readout_f32;
  t.add_f64 = add_f64;
  t.sub_f64 = sub_f64;
  t.mul_f64 = mul_f64;
  t.scale_f64 = scale_f64;
  t.axpy_f64 = axpy_f64;
  t.dot_f64 = dot_f64;
  t.sum_f64 = sum_f64;
  t.gemm_f64 = gemm_f64;
  return t;
}

}  // namespace evf::kern

#endif  // x86-64
