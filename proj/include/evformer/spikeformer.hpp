#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "evformer/lif.hpp"
#include "evformer/ops.hpp"
#include "evformer/tensor.hpp"

namespace evf {

template <typename T>
using ParamList = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
Tensor<T> init_uniform(Shape shape, int64_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(3.0 / double(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = T(dist(rng));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> init_zeros(Shape shape) {
  Tensor<T> t(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> init_const(Shape shape, T value) {
  Tensor<T> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = value;
  t.set_requires_grad(true);
  return t;
}

// Pre-LIF conditioning: standardization over the feature axis with a
// trainable gain when enabled, otherwise identity; the layer bias is applied
// after either way. Keeps membrane drives near threshold scale regardless of
// upstream spike sparsity. Gains start at tau, cancelling the 1/tau input
// mixing of the first charge step.
template <typename T>
Tensor<T> pre_lif(const Tensor<T>& x, bool norm, const Tensor<T>& gain) {
  return norm ? ops::mul_last(ops::standardize_last(x), gain) : x;
}

// Patch embedding: non-overlapping conv with stride = patch size, then LIF.
// [T, C, H, W] -> [T, N, D] with N = (H/p) * (W/p).
template <typename T>
struct PatchEmbed {
  int64_t patch = 0;
  bool norm = false;
  Tensor<T> weight;  // [D, C, p, p]
  Tensor<T> bias;    // [D]
  Tensor<T> gain;    // [D], present when norm
  LifLayer<T> lif;

  PatchEmbed() = default;
  PatchEmbed(int64_t in_ch, int64_t dim, int64_t patch_size, bool use_norm,
             const LifParams<T>& lp, std::mt19937_64& rng)
      : patch(patch_size),
        norm(use_norm),
        weight(init_uniform<T>({dim, in_ch, patch_size, patch_size},
                               in_ch * patch_size * patch_size, rng)),
        bias(init_zeros<T>({dim})),
        gain(use_norm ? init_const<T>({dim}, lp.tau) : Tensor<T>()),
        lif(lp) {}

  Tensor<T> forward(const Tensor<T>& x) {
    const int64_t steps = x.dim(0);
    Tensor<T> y = ops::conv2d(x, weight, patch, 0, 1);
    const int64_t d = y.dim(1);
    const int64_t n = y.dim(2) * y.dim(3);
    y = ops::reshape(y, {steps, d, n});
    y = ops::transpose(y, 1, 2);
    return lif.forward(ops::add(pre_lif(y, norm, gain), bias));
  }

  void reset() { lif.reset(); }
  void set_mode(LifMode m) { lif.set_mode(m); }
  void collect(const std::string& prefix, ParamList<T>& out) {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
    if (norm) out.emplace_back(prefix + ".gain", gain);
  }
};

// Conditional position embedding: tokens fold back to their patch grid, a
// depthwise 3x3 conv runs over it, LIF spikes become the embedding, and the
// result adds to the input (values may then exceed 1).
template <typename T>
struct CondPosEmbed {
  int64_t grid = 0;  // patch grid side, N = grid*grid
  bool norm = false;
  Tensor<T> weight;  // [D, 1, 3, 3]
  Tensor<T> bias;    // [D]
  Tensor<T> gain;    // [D], present when norm
  LifLayer<T> lif;

  CondPosEmbed() = default;
  CondPosEmbed(int64_t dim, int64_t grid_side, bool use_norm, const LifParams<T>& lp,
               std::mt19937_64& rng)
      : grid(grid_side),
        norm(use_norm),
        weight(init_uniform<T>({dim, 1, 3, 3}, 9, rng)),
        bias(init_zeros<T>({dim})),
        gain(use_norm ? init_const<T>({dim}, lp.tau) : Tensor<T>()),
        lif(lp) {}

  Tensor<T> forward(const Tensor<T>& x) {
    const int64_t steps = x.dim(0);
    const int64_t n = x.dim(1);
    const int64_t d = x.dim(2);
    Tensor<T> g = ops::transpose(x, 1, 2);           // [T, D, N]
    g = ops::reshape(g, {steps, d, grid, grid});
    g = ops::conv2d(g, weight, 1, 1, d);             // depthwise 3x3
    g = ops::reshape(g, {steps, d, n});
    g = ops::transpose(g, 1, 2);                     // [T, N, D]
    g = ops::add(pre_lif(g, norm, gain), bias);
    return ops::add(x, lif.forward(g));
  }

  void reset() { lif.reset(); }
  void set_mode(LifMode m) { lif.set_mode(m); }
  void collect(const std::string& prefix, ParamList<T>& out) {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
    if (norm) out.emplace_back(prefix + ".gain", gain);
  }
};

// Spiking self-attention: Q, K, V are spike trains, the head product
// Q K^T V is computed per time step without softmax, scaled, re-spiked, and
// projected.
template <typename T>
struct SpikingSelfAttention {
  int64_t heads = 1;
  bool norm = false;
  T scale = T(0.125);
  Tensor<T> wq, wk, wv;      // [D, D]
  Tensor<T> wo;              // [D, D]
  Tensor<T> bo;              // [D]
  Tensor<T> gq, gk, gv, go;  // [D], present when norm
  LifLayer<T> lif_q, lif_k, lif_v, lif_attn, lif_out;

  SpikingSelfAttention() = default;
  SpikingSelfAttention(int64_t dim, int64_t n_heads, T attn_scale, bool use_norm,
                       const LifParams<T>& lp, std::mt19937_64& rng)
      : heads(n_heads),
        norm(use_norm),
        scale(attn_scale),
        wq(init_uniform<T>({dim, dim}, dim, rng)),
        wk(init_uniform<T>({dim, dim}, dim, rng)),
        wv(init_uniform<T>({dim, dim}, dim, rng)),
        wo(init_uniform<T>({dim, dim}, dim, rng)),
        bo(init_zeros<T>({dim})),
        gq(use_norm ? init_const<T>({dim}, lp.tau) : Tensor<T>()),
        gk(use_norm ? init_const<T>({dim}, lp.tau) : Tensor<T>()),
        gv(use_norm ? init_const<T>({dim}, lp.tau) : Tensor<T>()),
        go(use_norm ? init_const<T>({dim}, lp.tau) : Tensor<T>()),
        lif_q(lp),
        lif_k(lp),
        lif_v(lp),
        lif_attn(lp),
        lif_out(lp) {}

  Tensor<T> forward(const Tensor<T>& x) {
    const int64_t steps = x.dim(0);
    const int64_t n = x.dim(1);
    const int64_t d = x.dim(2);
    const int64_t dh = d / heads;
    auto split = [&](const Tensor<T>& t) {
      // [T, N, D] -> [T, h, N, dh]
      return ops::transpose(ops::reshape(t, {steps, n, heads, dh}), 1, 2);
    };
    Tensor<T> q = split(lif_q.forward(pre_lif(ops::matmul(x, wq), norm, gq)));
    Tensor<T> k = split(lif_k.forward(pre_lif(ops::matmul(x, wk), norm, gk)));
    Tensor<T> v = split(lif_v.forward(pre_lif(ops::matmul(x, wv), norm, gv)));
    // The spike product runs bare: the single scale factor is the only
    // attention normalization.
    Tensor<T> scores = ops::matmul(q, ops::transpose(k, 2, 3));  // [T, h, N, N]
    Tensor<T> mixed = ops::matmul(scores, v);                    // [T, h, N, dh]
    mixed = ops::reshape(ops::transpose(mixed, 1, 2), {steps, n, d});
    Tensor<T> spikes = lif_attn.forward(ops::scale(mixed, scale));
    return lif_out.forward(ops::add(pre_lif(ops::matmul(spikes, wo), norm, go), bo));
  }

  void reset() {
    lif_q.reset();
    lif_k.reset();
    lif_v.reset();
    lif_attn.reset();
    lif_out.reset();
  }
  void set_mode(LifMode m) {
    lif_q.set_mode(m);
    lif_k.set_mode(m);
    lif_v.set_mode(m);
    lif_attn.set_mode(m);
    lif_out.set_mode(m);
  }
  void collect(const std::string& prefix, ParamList<T>& out) {
    out.emplace_back(prefix + ".wq", wq);
    out.emplace_back(prefix + ".wk", wk);
    out.emplace_back(prefix + ".wv", wv);
    out.emplace_back(prefix + ".wo", wo);
    out.emplace_back(prefix + ".bo", bo);
    if (norm) {
      out.emplace_back(prefix + ".gq", gq);
      out.emplace_back(prefix + ".gk", gk);
      out.emplace_back(prefix + ".gv", gv);
      out.emplace_back(prefix + ".go", go);
    }
  }
};

template <typename T>
struct Mlp {
  bool norm = false;
  Tensor<T> w1, b1, w2, b2;
  Tensor<T> g1, g2;  // present when norm
  LifLayer<T> lif1, lif2;

  Mlp() = default;
  Mlp(int64_t dim, int64_t hidden, bool use_norm, const LifParams<T>& lp,
      std::mt19937_64& rng)
      : norm(use_norm),
        w1(init_uniform<T>({dim, hidden}, dim, rng)),
        b1(init_zeros<T>({hidden})),
        w2(init_uniform<T>({hidden, dim}, hidden, rng)),
        b2(init_zeros<T>({dim})),
        g1(use_norm ? init_const<T>({hidden}, lp.tau) : Tensor<T>()),
        g2(use_norm ? init_const<T>({dim}, lp.tau) : Tensor<T>()),
        lif1(lp),
        lif2(lp) {}

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> h = lif1.forward(ops::add(pre_lif(ops::matmul(x, w1), norm, g1), b1));
    return lif2.forward(ops::add(pre_lif(ops::matmul(h, w2), norm, g2), b2));
  }

  void reset() {
    lif1.reset();
    lif2.reset();
  }
  void set_mode(LifMode m) {
    lif1.set_mode(m);
    lif2.set_mode(m);
  }
  void collect(const std::string& prefix, ParamList<T>& out) {
    out.emplace_back(prefix + ".w1", w1);
    out.emplace_back(prefix + ".b1", b1);
    out.emplace_back(prefix + ".w2", w2);
    out.emplace_back(prefix + ".b2", b2);
    if (norm) {
      out.emplace_back(prefix + ".g1", g1);
      out.emplace_back(prefix + ".g2", g2);
    }
  }
};

// Pre-activation residual pair: x + SSA(x), then + MLP.
template <typename T>
struct EncoderBlock {
  SpikingSelfAttention<T> attn;
  Mlp<T> mlp;

  EncoderBlock() = default;
  EncoderBlock(int64_t dim, int64_t heads, int64_t mlp_ratio, T attn_scale, bool use_norm,
               const LifParams<T>& lp, std::mt19937_64& rng)
      : attn(dim, heads, attn_scale, use_norm, lp, rng),
        mlp(dim, dim * mlp_ratio, use_norm, lp, rng) {}

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> x1 = ops::add(x, attn.forward(x));
    return ops::add(x1, mlp.forward(x1));
  }

  void reset() {
    attn.reset();
    mlp.reset();
  }
  void set_mode(LifMode m) {
    attn.set_mode(m);
    mlp.set_mode(m);
  }
  void collect(const std::string& prefix, ParamList<T>& out) {
    attn.collect(prefix + ".attn", out);
    mlp.collect(prefix + ".mlp", out);
  }
};

// Token mean -> linear -> LIF; the spike train over time is the vote. Also
// accepts [T, D] inputs (already pooled or non-token features).
template <typename T>
struct ClassifyHead {
  bool norm = false;
  Tensor<T> weight;  // [D, C]
  Tensor<T> bias;    // [C]
  Tensor<T> gain;    // [C], present when norm
  LifLayer<T> lif;

  ClassifyHead() = default;
  ClassifyHead(int64_t dim, int64_t classes, bool use_norm, const LifParams<T>& lp,
               std::mt19937_64& rng)
      : norm(use_norm),
        weight(init_uniform<T>({dim, classes}, dim, rng)),
        bias(init_zeros<T>({classes})),
        gain(use_norm ? init_const<T>({classes}, lp.tau) : Tensor<T>()),
        lif(lp) {}

  // returns per-step class spikes [T, C]
  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> pooled = x.rank() == 3 ? ops::mean_axis(x, 1) : x;
    return lif.forward(ops::add(pre_lif(ops::matmul(pooled, weight), norm, gain), bias));
  }

  void reset() { lif.reset(); }
  void set_mode(LifMode m) { lif.set_mode(m); }
  void collect(const std::string& prefix, ParamList<T>& out) {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
    if (norm) out.emplace_back(prefix + ".gain", gain);
  }
};

// Firing rates over the time axis of a [T, C] spike train.
template <typename T>
Tensor<T> firing_rates(const Tensor<T>& spikes) {
  return ops::mean_axis(spikes, 0);
}

// Lowest index wins ties.
template <typename T>
int argmax_class(const Tensor<T>& rates) {
  int best = 0;
  for (int64_t i = 1; i < rates.numel(); ++i) {
    if (rates.data()[i] > rates.data()[best]) best = int(i);
  }
  return best;
}

}  // namespace evf
