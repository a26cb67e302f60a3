#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "evformer/event_stream.hpp"
#include "evformer/model.hpp"
#include "evformer/ops.hpp"
#include "evformer/spikeformer.hpp"

using namespace evf;

namespace {

using TensorF = Tensor<float>;

bool all_binary(const TensorF& t) {
  for (int64_t i = 0; i < t.numel(); ++i) {
    if (t.data()[i] != 0.0f && t.data()[i] != 1.0f) return false;
  }
  return true;
}

bool all_nonneg_integers(const TensorF& t, float upper) {
  for (int64_t i = 0; i < t.numel(); ++i) {
    const float v = t.data()[i];
    if (v < 0.0f || v > upper || v != std::floor(v)) return false;
  }
  return true;
}

TensorF random_binary(Shape shape, double p, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(p);
  TensorF t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = coin(rng) ? 1.0f : 0.0f;
  return t;
}

LifParams<float> default_lif() { return LifParams<float>{}; }

EventStream sample_stream(int width, int height, uint64_t seed) {
  SyntheticSpec spec;
  spec.class_id = int(seed % kSyntheticClassCount);
  spec.seed = seed;
  spec.width = width;
  spec.height = height;
  spec.duration_us = 200'000;
  spec.event_rate = 20'000.0;
  return gen_synthetic(spec);
}

}  // namespace

TEST_CASE("patch embedding maps [T,C,H,W] to binary [T,N,D] tokens") {
  std::mt19937_64 rng(3);
  const LifParams<float> lp = default_lif();
  PatchEmbed<float> patch(2, 8, 3, true, lp, rng);
  TensorF x = random_binary({4, 2, 12, 12}, 0.3, 11);
  patch.reset();
  TensorF y = patch.forward(x);
  CHECK(y.shape() == Shape{4, 16, 8});
  CHECK(all_binary(y));
}

TEST_CASE("conditional position embedding adds binary spikes to binary tokens") {
  std::mt19937_64 rng(5);
  const LifParams<float> lp = default_lif();
  CondPosEmbed<float> pos(8, 4, true, lp, rng);
  TensorF x = random_binary({3, 16, 8}, 0.4, 21);
  pos.reset();
  TensorF y = pos.forward(x);
  CHECK(y.shape() == Shape{3, 16, 8});
  // binary input plus a binary embedding: entries in {0, 1, 2}
  CHECK(all_nonneg_integers(y, 2.0f));
}

TEST_CASE("position embedding is translation equivariant away from the border") {
  std::mt19937_64 rng(7);
  const LifParams<float> lp = default_lif();
  const int64_t d = 4, grid = 4;
  CondPosEmbed<float> pos(d, grid, true, lp, rng);

  auto one_token = [&](int64_t r, int64_t c) {
    TensorF x({1, grid * grid, d});
    for (int64_t j = 0; j < d; ++j) x.data()[(r * grid + c) * d + j] = 1.0f;
    return x;
  };
  pos.reset();
  TensorF y1 = pos.forward(one_token(1, 1));
  pos.reset();
  TensorF y2 = pos.forward(one_token(2, 2));
  // every response to the shifted impulse is the shifted response
  for (int64_t r = 0; r < grid - 1; ++r) {
    for (int64_t c = 0; c < grid - 1; ++c) {
      for (int64_t j = 0; j < d; ++j) {
        CHECK(y2.data()[((r + 1) * grid + (c + 1)) * d + j] ==
              y1.data()[(r * grid + c) * d + j]);
      }
    }
  }
}

TEST_CASE("attention spike products are nonnegative integers") {
  std::mt19937_64 rng(9);
  const LifParams<float> lp = default_lif();
  const int64_t steps = 3, n = 16, d = 8, heads = 2, dh = d / heads;
  SpikingSelfAttention<float> ssa(d, heads, 0.25f, true, lp, rng);
  TensorF x = random_binary({steps, n, d}, 0.4, 31);

  // run the layer's own projection path to observe the intermediate spikes
  ssa.reset();
  TensorF q = ssa.lif_q.forward(pre_lif(ops::matmul(x, ssa.wq), ssa.norm, ssa.gq));
  TensorF k = ssa.lif_k.forward(pre_lif(ops::matmul(x, ssa.wk), ssa.norm, ssa.gk));
  TensorF v = ssa.lif_v.forward(pre_lif(ops::matmul(x, ssa.wv), ssa.norm, ssa.gv));
  CHECK(all_binary(q));
  CHECK(all_binary(k));
  CHECK(all_binary(v));

  auto split = [&](const TensorF& t) {
    return ops::transpose(ops::reshape(t, {steps, n, heads, dh}), 1, 2);
  };
  TensorF scores = ops::matmul(split(q), ops::transpose(split(k), 2, 3));
  CHECK(all_nonneg_integers(scores, float(dh)));
  TensorF mixed = ops::matmul(scores, split(v));
  CHECK(all_nonneg_integers(mixed, float(n * dh)));

  ssa.reset();
  TensorF out = ssa.forward(x);
  CHECK(out.shape() == Shape{steps, n, d});
  CHECK(all_binary(out));
}

TEST_CASE("identity spike trains pass through the bare attention product") {
  const int64_t n = 5;
  TensorF eye({1, 1, n, n});
  for (int64_t i = 0; i < n; ++i) eye.data()[i * n + i] = 1.0f;
  TensorF scores = ops::matmul(eye, ops::transpose(eye, 2, 3));
  TensorF mixed = ops::scale(ops::matmul(scores, eye), 1.0f);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      CHECK(mixed.data()[i * n + j] == (i == j ? 1.0f : 0.0f));
    }
  }
}

TEST_CASE("encoder block keeps residual sums small and integral") {
  std::mt19937_64 rng(13);
  const LifParams<float> lp = default_lif();
  EncoderBlock<float> block(8, 2, 4, 0.125f, true, lp, rng);
  TensorF x = random_binary({4, 16, 8}, 0.35, 41);
  block.reset();
  TensorF y = block.forward(x);
  // binary input + binary attention + binary mlp: at most 3 per entry
  CHECK(all_nonneg_integers(y, 3.0f));
}

TEST_CASE("classify head emits binary per-step votes") {
  std::mt19937_64 rng(17);
  const LifParams<float> lp = default_lif();
  ClassifyHead<float> head(8, 4, true, lp, rng);
  TensorF x = random_binary({6, 16, 8}, 0.4, 51);
  head.reset();
  TensorF y = head.forward(x);
  CHECK(y.shape() == Shape{6, 4});
  CHECK(all_binary(y));
}

TEST_CASE("zero input stays silent through the whole stack") {
  std::mt19937_64 rng(19);
  const LifParams<float> lp = default_lif();
  PatchEmbed<float> patch(2, 8, 3, true, lp, rng);
  CondPosEmbed<float> pos(8, 4, true, lp, rng);
  EncoderBlock<float> block(8, 2, 4, 0.125f, true, lp, rng);
  ClassifyHead<float> head(8, 4, true, lp, rng);
  patch.reset();
  pos.reset();
  block.reset();
  head.reset();
  TensorF x({2, 2, 12, 12});
  TensorF y = head.forward(block.forward(pos.forward(patch.forward(x))));
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0f);
}

TEST_CASE("firing rates are per-class spike fractions and ties pick the lowest class") {
  TensorF s = TensorF::from({4, 3}, {1, 0, 0,
                                     1, 1, 0,
                                     0, 1, 0,
                                     0, 0, 0});
  TensorF r = firing_rates(s);
  CHECK(r.data()[0] == doctest::Approx(0.5));
  CHECK(r.data()[1] == doctest::Approx(0.5));
  CHECK(r.data()[2] == doctest::Approx(0.0));
  CHECK(argmax_class(r) == 0);
}

TEST_CASE("model rates are valid firing rates for any block depth") {
  for (int blocks : {1, 2, 4}) {
    ModelConfig cfg;
    cfg.width = 16;
    cfg.height = 16;
    cfg.time_steps = 4;
    cfg.out_channels = 4;
    cfg.patch_size = 4;
    cfg.embed_dim = 8;
    cfg.heads = 2;
    cfg.blocks = blocks;
    cfg.mlp_ratio = 2;
    cfg.classes = 4;
    ModelF model(cfg, 99);
    model.reset_state();
    TensorF rates = model.forward(ModelF::make_input(cfg, sample_stream(16, 16, 77)));
    CHECK(rates.shape() == Shape{4});
    for (int64_t c = 0; c < 4; ++c) {
      const float r = rates.data()[c];
      CHECK(r >= 0.0f);
      CHECK(r <= 1.0f);
      // a rate over T steps is a multiple of 1/T
      CHECK(r * cfg.time_steps == doctest::Approx(std::round(r * cfg.time_steps)));
    }
  }
}

TEST_CASE("spikes stay binary when the input is scaled tenfold") {
  ModelConfig cfg;
  cfg.width = 16;
  cfg.height = 16;
  cfg.time_steps = 4;
  cfg.out_channels = 4;
  cfg.patch_size = 4;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.classes = 4;
  ModelF model(cfg, 123);
  TensorF input = ModelF::make_input(cfg, sample_stream(16, 16, 5));
  for (int64_t i = 0; i < input.numel(); ++i) input.data()[i] *= 10.0f;
  model.reset_state();
  TensorF rates = model.forward(input);
  for (int64_t c = 0; c < 4; ++c) {
    CHECK(rates.data()[c] * cfg.time_steps ==
          doctest::Approx(std::round(rates.data()[c] * cfg.time_steps)));
  }
}

TEST_CASE("parameter table matches the closed-form count") {
  ModelConfig cfg;  // defaults: 32x32, K=3, C=8, patch=8, D=32, heads=2, blocks=1
  ModelF model(cfg, 1);
  auto params = model.named_parameters();

  std::set<std::string> names;
  int64_t total = 0;
  for (auto& [name, t] : params) {
    CHECK(names.insert(name).second);  // names must be unique
    total += t.numel();
  }

  const int64_t p = kPolarityChannels;
  const int64_t d = cfg.embed_dim, k = cfg.kernel_size, c = cfg.out_channels;
  const int64_t readout = c * p * k * k;
  const int64_t patch = d * c * cfg.patch_size * cfg.patch_size + 2 * d;
  const int64_t pos = d * 9 + 2 * d;
  const int64_t attn = 4 * d * d + d + 4 * d;
  const int64_t mlp = d * (d * cfg.mlp_ratio) * 2 + 2 * (d * cfg.mlp_ratio) + 2 * d;
  const int64_t head = d * cfg.classes + 2 * cfg.classes;
  CHECK(total == readout + patch + pos + cfg.blocks * (attn + mlp) + head + 1);

  // disabling layer standardization removes exactly the gain vectors
  ModelConfig bare = cfg;
  bare.normalize_layers = false;
  ModelF plain(bare, 1);
  int64_t bare_total = 0;
  for (auto& [name, t] : plain.named_parameters()) bare_total += t.numel();
  const int64_t gains = d + d + 4 * d + (d * cfg.mlp_ratio + d) + cfg.classes;
  CHECK(total - bare_total == gains);
}

TEST_CASE("every parameter receives gradient after one step") {
  ModelConfig cfg;
  cfg.width = 16;
  cfg.height = 16;
  cfg.time_steps = 4;
  cfg.out_channels = 4;
  cfg.patch_size = 4;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.blocks = 2;
  cfg.mlp_ratio = 2;
  cfg.classes = 4;
  cfg.attn_scale = 0.5;  // enough drive for attention spikes at init
  ModelF model(cfg, 2024);
  for (uint64_t s = 0; s < 4; ++s) {
    model.reset_state();
    TensorF rates = model.forward(ModelF::make_input(cfg, sample_stream(16, 16, 13 + s)));
    TensorF loss =
        ops::cross_entropy_with_logits(ops::reshape(model.logits(rates), {1, 4}), {int(s % 4)});
    loss.backward();
  }
  for (auto& [name, t] : model.named_parameters()) {
    double sum = 0;
    for (int64_t i = 0; i < t.numel(); ++i) sum += std::abs(double(t.grad()[i]));
    INFO("parameter ", name);
    CHECK(sum > 0.0);
  }
}
