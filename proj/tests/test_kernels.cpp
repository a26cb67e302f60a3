#include <array>
#include <cmath>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "evformer/kernels.hpp"

using namespace evf;

namespace {

std::vector<float> random_vec(std::mt19937& rng, size_t n, float lo = -2.0f,
                              float hi = 2.0f) {
  std::uniform_real_distribution<float> dist(lo, hi);
  std::vector<float> v(n);
  for (float& x : v) x = dist(rng);
  return v;
}

bool bit_equal(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) return false;
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

// All tables compiled into this binary, reference first.
std::vector<std::pair<std::string, kern::KernelTable>> all_tables() {
  std::vector<std::pair<std::string, kern::KernelTable>> tables;
  tables.emplace_back("scalar", kern::scalar_table());
#if defined(EVFORMER_BUILD_AVX2)
  if (kern::cpu_has_avx2()) tables.emplace_back("avx2", kern::avx2_table());
#endif
#if defined(EVFORMER_BUILD_NEON)
  tables.emplace_back("neon", kern::neon_table());
#endif
  return tables;
}

}  // namespace

TEST_CASE("dispatch resolves to a known isa") {
  const std::string isa = kern::active_isa();
  CHECK((isa == "scalar" || isa == "avx2" || isa == "neon"));
}

TEST_CASE("elementwise kernels are bit-identical across variants") {
  auto tables = all_tables();
  const auto ref = tables.front().second;
  std::mt19937 rng(7);
  for (size_t n : {size_t(1), size_t(3), size_t(8), size_t(17), size_t(64), size_t(1001)}) {
    const auto a = random_vec(rng, n);
    const auto b = random_vec(rng, n);
    std::vector<float> want(n), got(n);
    for (auto& [name, t] : tables) {
      CAPTURE(name);
      CAPTURE(n);
      ref.add_f32(a.data(), b.data(), want.data(), n);
      t.add_f32(a.data(), b.data(), got.data(), n);
      CHECK(bit_equal(want, got));
      ref.sub_f32(a.data(), b.data(), want.data(), n);
      t.sub_f32(a.data(), b.data(), got.data(), n);
      CHECK(bit_equal(want, got));
      ref.mul_f32(a.data(), b.data(), want.data(), n);
      t.mul_f32(a.data(), b.data(), got.data(), n);
      CHECK(bit_equal(want, got));
      ref.scale_f32(a.data(), 1.7f, want.data(), n);
      t.scale_f32(a.data(), 1.7f, got.data(), n);
      CHECK(bit_equal(want, got));
    }
  }
}

TEST_CASE("reduction kernels agree within tolerance") {
  auto tables = all_tables();
  const auto ref = tables.front().second;
  std::mt19937 rng(11);
  for (size_t n : {size_t(1), size_t(9), size_t(100), size_t(2049)}) {
    const auto a = random_vec(rng, n);
    const auto b = random_vec(rng, n);
    for (auto& [name, t] : tables) {
      CAPTURE(name);
      CAPTURE(n);
      CHECK(t.dot_f32(a.data(), b.data(), n) ==
            doctest::Approx(ref.dot_f32(a.data(), b.data(), n)).epsilon(1e-4));
      CHECK(t.sum_f32(a.data(), n) ==
            doctest::Approx(ref.sum_f32(a.data(), n)).epsilon(1e-4));
      auto y_ref = random_vec(rng, n);
      auto y = y_ref;
      ref.axpy_f32(0.3f, a.data(), y_ref.data(), n);
      t.axpy_f32(0.3f, a.data(), y.data(), n);
      for (size_t i = 0; i < n; ++i) {
        CHECK(y[i] == doctest::Approx(y_ref[i]).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("gemm variants match the scalar reference") {
  auto tables = all_tables();
  const auto ref = tables.front().second;
  std::mt19937 rng(13);
  const std::vector<std::array<size_t, 3>> shapes = {
      {1, 1, 1}, {2, 3, 4}, {5, 8, 3}, {16, 16, 16}, {7, 33, 19}, {32, 64, 48}};
  for (auto [m, n, k] : shapes) {
    const auto a = random_vec(rng, m * k);
    const auto b = random_vec(rng, k * n);
    std::vector<float> want(m * n, 0.5f), got;
    ref.gemm_f32(m, n, k, a.data(), b.data(), want.data());
    for (auto& [name, t] : tables) {
      CAPTURE(name);
      got.assign(m * n, 0.5f);
      t.gemm_f32(m, n, k, a.data(), b.data(), got.data());
      for (size_t i = 0; i < want.size(); ++i) {
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-4));
      }
    }
  }
}

TEST_CASE("lif_step is bit-identical across variants") {
  auto tables = all_tables();
  const auto ref = tables.front().second;
  std::mt19937 rng(17);
  for (size_t n : {size_t(1), size_t(7), size_t(8), size_t(40), size_t(129)}) {
    const auto v = random_vec(rng, n, -0.5f, 1.5f);
    const auto x = random_vec(rng, n, -1.0f, 3.0f);
    std::vector<float> v_ref(n), s_ref(n), h_ref(n), v_got(n), s_got(n), h_got(n);
    ref.lif_step_f32(v.data(), x.data(), v_ref.data(), s_ref.data(), h_ref.data(), n, 0.5f,
                     0.5f, 0.0f, 1.0f, 0.0f);
    for (auto& [name, t] : tables) {
      CAPTURE(name);
      CAPTURE(n);
      t.lif_step_f32(v.data(), x.data(), v_got.data(), s_got.data(), h_got.data(), n, 0.5f,
                     0.5f, 0.0f, 1.0f, 0.0f);
      CHECK(bit_equal(v_ref, v_got));
      CHECK(bit_equal(s_ref, s_got));
      CHECK(bit_equal(h_ref, h_got));
    }
  }
}

TEST_CASE("surrogate kernel matches the closed form") {
  auto tables = all_tables();
  std::mt19937 rng(19);
  const size_t n = 100;
  const auto u = random_vec(rng, n, -4.0f, 4.0f);
  const float alpha = 2.0f;
  for (auto& [name, t] : tables) {
    CAPTURE(name);
    std::vector<float> got(n);
    t.surrogate_grad_f32(u.data(), got.data(), n, alpha);
    for (size_t i = 0; i < n; ++i) {
      const double z = M_PI * 0.5 * alpha * u[i];
      const double want = alpha / (2.0 * (1.0 + z * z));
      CHECK(double(got[i]) == doctest::Approx(want).epsilon(1e-5));
    }
  }
}

TEST_CASE("readout is bit-identical across variants") {
  auto tables = all_tables();
  const auto ref = tables.front().second;
  std::mt19937 rng(23);
  std::uniform_int_distribution<uint32_t> cdist(0, 9);
  for (auto [h, w, k] : std::vector<std::array<size_t, 3>>{
           {1, 1, 3}, {2, 5, 3}, {4, 4, 5}, {9, 7, 3}, {6, 11, 5}}) {
    std::vector<uint32_t> counts(h * k * w * k);
    for (auto& c : counts) c = cdist(rng);
    const auto kw = random_vec(rng, k * k);
    std::vector<float> want(h * w, 0.25f), got;
    ref.readout_f32(counts.data(), h, w, k, kw.data(), want.data());
    for (auto& [name, t] : tables) {
      CAPTURE(name);
      CAPTURE(h);
      CAPTURE(w);
      got.assign(h * w, 0.25f);
      t.readout_f32(counts.data(), h, w, k, kw.data(), got.data());
      CHECK(bit_equal(want, got));
    }
  }
}

TEST_CASE("readout accumulates the blocked dot product") {
  // 1x1 response, K=3: out += sum_n w[n] * counts[n] laid out as a 3x3 block.
  std::vector<uint32_t> counts = {1, 0, 2, 0, 3, 0, 4, 0, 5};
  std::vector<float> w = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  float out = 10.0f;
  kern::scalar_table().readout_f32(counts.data(), 1, 1, 3, w.data(), &out);
  // 1*1 + 3*2 + 5*3 + 7*4 + 9*5 = 95, plus the 10 already there
  CHECK(out == doctest::Approx(105.0f));
}
