#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "evformer/evconv.hpp"
#include "evformer/event_stream.hpp"
#include "evformer/spikeformer.hpp"

namespace evf {

enum class FrontVariant { kTrainableEvconv, kFixedGabor, kNoEvconv };
enum class ClassifierKind { kSpikeformer, kFc };

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

FrontVariant parse_variant(const std::string& name);
ClassifierKind parse_classifier(const std::string& name);
const char* variant_name(FrontVariant v);
const char* classifier_name(ClassifierKind c);

struct ModelConfig {
  int width = 32;
  int height = 32;
  int time_steps = 4;
  int kernel_size = 3;  // readout stride equals this
  int out_channels = 8;
  int patch_size = 8;
  int embed_dim = 32;
  int heads = 2;
  int blocks = 1;
  int mlp_ratio = 4;
  int classes = 4;
  double attn_scale = 0.125;
  double lif_tau = 2.0;
  double lif_v_threshold = 1.0;
  double lif_v_reset = 0.0;
  double lif_alpha = 2.0;
  double temperature_init = 4.0;
  int fc_hidden = 0;  // fc classifier width; 0 picks height*width
  bool normalize_input = true;
  bool normalize_layers = true;  // pre-LIF standardization with trainable gains
  FrontVariant variant = FrontVariant::kTrainableEvconv;
  ClassifierKind classifier = ClassifierKind::kSpikeformer;

  int grid_h() const { return height / patch_size; }
  int grid_w() const { return width / patch_size; }
  int tokens() const { return grid_h() * grid_w(); }
  int input_channels() const {
    return variant == FrontVariant::kNoEvconv ? kPolarityChannels : out_channels;
  }
  int fc_width() const { return fc_hidden > 0 ? fc_hidden : height * width; }

  // Throws ConfigError listing every violated constraint at once.
  void validate() const;
};

template <typename T>
LifParams<T> lif_params_of(const ModelConfig& cfg) {
  LifParams<T> p;
  p.tau = T(cfg.lif_tau);
  p.v_threshold = T(cfg.lif_v_threshold);
  p.v_reset = T(cfg.lif_v_reset);
  p.surrogate_alpha = T(cfg.lif_alpha);
  return p;
}

// Gabor bank for the fixed front end: out_channels = 4 orientations x 2
// polarities, each output channel reading one polarity channel.
std::vector<Kernel> gabor_bank(int kernel_size);

// Copies share parameter tensors but own their LIF state, so one trained
// model fans out across evaluation threads.
template <typename T>
class Model {
 public:
  Model() = default;
  Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const LifParams<T> lp = lif_params_of<T>(cfg_);
    const int64_t p = kPolarityChannels;
    const int64_t k = cfg_.kernel_size;
    if (cfg_.variant == FrontVariant::kTrainableEvconv) {
      readout_w_ = init_uniform<T>({cfg_.out_channels, p, k, k}, p * k * k, rng);
    } else if (cfg_.variant == FrontVariant::kFixedGabor) {
      readout_w_ = Tensor<T>({cfg_.out_channels, p, k, k});
      const std::vector<Kernel> bank = gabor_bank(cfg_.kernel_size);
      for (int o = 0; o < cfg_.out_channels; ++o) {
        const int pol = o % 2;
        const Kernel& kn = bank[size_t(o / 2)];
        T* dst = readout_w_.data() + (size_t(o) * p + pol) * k * k;
        for (int64_t i = 0; i < k * k; ++i) dst[i] = T(kn.values[size_t(i)]);
      }
    }
    const int64_t in_ch = cfg_.input_channels();
    const bool norm = cfg_.normalize_layers;
    if (cfg_.classifier == ClassifierKind::kSpikeformer) {
      patch_ = PatchEmbed<T>(in_ch, cfg_.embed_dim, cfg_.patch_size, norm, lp, rng);
      pos_ = CondPosEmbed<T>(cfg_.embed_dim, int64_t(std::lround(std::sqrt(double(cfg_.tokens())))),
                             norm, lp, rng);
      for (int b = 0; b < cfg_.blocks; ++b) {
        blocks_.emplace_back(cfg_.embed_dim, cfg_.heads, cfg_.mlp_ratio, T(cfg_.attn_scale),
                             norm, lp, rng);
      }
      head_ = ClassifyHead<T>(cfg_.embed_dim, cfg_.classes, norm, lp, rng);
    } else {
      const int64_t flat = in_ch * cfg_.height * cfg_.width;
      fc_w_ = init_uniform<T>({flat, cfg_.fc_width()}, flat, rng);
      fc_b_ = init_zeros<T>({cfg_.fc_width()});
      fc_g_ = norm ? init_const<T>({cfg_.fc_width()}, lp.tau) : Tensor<T>();
      fc_lif_ = LifLayer<T>(lp);
      head_ = ClassifyHead<T>(cfg_.fc_width(), cfg_.classes, norm, lp, rng);
    }
    temperature_ = Tensor<T>::scalar(T(cfg_.temperature_init));
    temperature_.set_requires_grad(true);
  }

  const ModelConfig& config() const { return cfg_; }

  void reset_state() {
    if (cfg_.classifier == ClassifierKind::kSpikeformer) {
      patch_.reset();
      pos_.reset();
      for (auto& b : blocks_) b.reset();
    } else {
      fc_lif_.reset();
    }
    head_.reset();
  }

  void set_mode(LifMode m) {
    if (cfg_.classifier == ClassifierKind::kSpikeformer) {
      patch_.set_mode(m);
      pos_.set_mode(m);
      for (auto& b : blocks_) b.set_mode(m);
    } else {
      fc_lif_.set_mode(m);
    }
    head_.set_mode(m);
  }

  // input layout: trainable/gabor variants [T, P, H*K, W*K] count maps;
  // no_evconv [T, P, H, W] binned frames. Returns firing rates [C].
  Tensor<T> forward(const Tensor<T>& input) {
    Tensor<T> feat = input;
    if (cfg_.variant != FrontVariant::kNoEvconv) {
      feat = ops::conv2d(feat, readout_w_, cfg_.kernel_size, 0, 1);
    }
    Tensor<T> spikes;
    if (cfg_.classifier == ClassifierKind::kSpikeformer) {
      Tensor<T> tok = patch_.forward(feat);
      tok = pos_.forward(tok);
      for (auto& b : blocks_) tok = b.forward(tok);
      spikes = head_.forward(tok);
    } else {
      Tensor<T> flat = ops::reshape(feat, {cfg_.time_steps, feat.numel() / cfg_.time_steps});
      Tensor<T> pre = pre_lif(ops::matmul(flat, fc_w_), cfg_.normalize_layers, fc_g_);
      Tensor<T> hidden = fc_lif_.forward(ops::add(pre, fc_b_));
      spikes = head_.forward(hidden);
    }
    return firing_rates(spikes);
  }

  Tensor<T> logits(const Tensor<T>& rates) { return ops::mul(rates, temperature_); }

  ParamList<T> named_parameters() {
    ParamList<T> out;
    if (cfg_.variant != FrontVariant::kNoEvconv) out.emplace_back("readout.weight", readout_w_);
    if (cfg_.classifier == ClassifierKind::kSpikeformer) {
      patch_.collect("patch", out);
      pos_.collect("pos", out);
      for (size_t b = 0; b < blocks_.size(); ++b) {
        blocks_[b].collect("block" + std::to_string(b), out);
      }
    } else {
      out.emplace_back("fc.w", fc_w_);
      out.emplace_back("fc.b", fc_b_);
      if (cfg_.normalize_layers) out.emplace_back("fc.g", fc_g_);
    }
    head_.collect("head", out);
    out.emplace_back("temperature", temperature_);
    return out;
  }

  std::vector<Tensor<T>> trainable_parameters() {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named_parameters()) {
      if (t.requires_grad()) out.push_back(t);
    }
    return out;
  }

  // Builds the per-sample input tensor; counts are kernel-independent, so
  // this is reusable across any readout weights.
  static Tensor<T> make_input(const ModelConfig& cfg, const EventStream& stream) {
    if (stream.width != cfg.width || stream.height != cfg.height) {
      throw std::invalid_argument("stream is " + std::to_string(stream.width) + "x" +
                                  std::to_string(stream.height) + ", model wants " +
                                  std::to_string(cfg.width) + "x" +
                                  std::to_string(cfg.height));
    }
    const std::vector<EventStream> bins = bin_events(stream, cfg.time_steps);
    Tensor<T> input;
    if (cfg.variant == FrontVariant::kNoEvconv) {
      input = Tensor<T>({cfg.time_steps, kPolarityChannels, cfg.height, cfg.width});
      for (int t = 0; t < cfg.time_steps; ++t) {
        T* frame = input.data() + size_t(t) * kPolarityChannels * cfg.height * cfg.width;
        for (const Event& e : bins[size_t(t)].events) {
          frame[(size_t(e.polarity) * cfg.height + e.y) * cfg.width + e.x] += T(1);
        }
      }
    } else {
      const int64_t hk = int64_t(cfg.height) * cfg.kernel_size;
      const int64_t wk = int64_t(cfg.width) * cfg.kernel_size;
      input = Tensor<T>({cfg.time_steps, kPolarityChannels, hk, wk});
      for (int t = 0; t < cfg.time_steps; ++t) {
        const CountMap cmap = build_count_map(bins[size_t(t)], cfg.kernel_size);
        T* dst = input.data() + size_t(t) * kPolarityChannels * hk * wk;
        for (size_t i = 0; i < cmap.counts.size(); ++i) dst[i] = T(cmap.counts[i]);
      }
    }
    if (cfg.normalize_input) {
      double ss = 0;
      for (int64_t i = 0; i < input.numel(); ++i) {
        ss += double(input.data()[i]) * double(input.data()[i]);
      }
      const double rms = std::sqrt(ss / double(input.numel()));
      if (rms > 0) {
        const T s = T(1.0 / rms);
        for (int64_t i = 0; i < input.numel(); ++i) input.data()[i] *= s;
      }
    }
    return input;
  }

  Tensor<T>& readout_weight() { return readout_w_; }
  Tensor<T>& temperature() { return temperature_; }

 private:
  ModelConfig cfg_;
  Tensor<T> readout_w_;
  PatchEmbed<T> patch_;
  CondPosEmbed<T> pos_;
  std::vector<EncoderBlock<T>> blocks_;
  ClassifyHead<T> head_;
  Tensor<T> fc_w_, fc_b_, fc_g_;
  LifLayer<T> fc_lif_;
  Tensor<T> temperature_;
};

using ModelF = Model<float>;
using ModelD = Model<double>;

}  // namespace evf
