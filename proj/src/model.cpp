#include "evformer/model.hpp"

#include <cmath>

namespace evf {

FrontVariant parse_variant(const std::string& name) {
  if (name == "trainable_evconv") return FrontVariant::kTrainableEvconv;
  if (name == "fixed_gabor") return FrontVariant::kFixedGabor;
  if (name == "no_evconv") return FrontVariant::kNoEvconv;
  throw ConfigError("unknown variant '" + name +
                    "' (expected trainable_evconv, fixed_gabor or no_evconv)");
}

ClassifierKind parse_classifier(const std::string& name) {
  if (name == "spikeformer") return ClassifierKind::kSpikeformer;
  if (name == "fc") return ClassifierKind::kFc;
  throw ConfigError("unknown classifier '" + name + "' (expected spikeformer or fc)");
}

const char* variant_name(FrontVariant v) {
  switch (v) {
    case FrontVariant::kTrainableEvconv: return "trainable_evconv";
    case FrontVariant::kFixedGabor: return "fixed_gabor";
    case FrontVariant::kNoEvconv: return "no_evconv";
  }
  return "?";
}

const char* classifier_name(ClassifierKind c) {
  return c == ClassifierKind::kSpikeformer ? "spikeformer" : "fc";
}

void ModelConfig::validate() const {
  std::string bad;
  auto fail = [&bad](const std::string& msg) {
    if (!bad.empty()) bad += "; ";
    bad += msg;
  };
  if (width < 1 || height < 1) fail("sensor dims must be positive");
  if (time_steps < 1) fail("time_steps must be >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0) fail("kernel_size must be odd and positive");
  if (out_channels < 1) fail("out_channels must be >= 1");
  if (variant == FrontVariant::kFixedGabor && out_channels != 8) {
    fail("fixed_gabor needs out_channels = 8 (4 orientations x 2 polarities)");
  }
  if (classes < 2) fail("classes must be >= 2");
  if (!(lif_tau > 1.0)) fail("lif_tau must be > 1");
  if (!(lif_alpha > 0.0)) fail("lif_alpha must be positive");
  if (!(attn_scale > 0.0)) fail("attn_scale must be positive");
  if (temperature_init <= 0.0) fail("temperature_init must be positive");
  if (classifier == ClassifierKind::kSpikeformer) {
    if (patch_size < 1) {
      fail("patch_size must be >= 1");
    } else if (width % patch_size != 0 || height % patch_size != 0) {
      fail("patch_size must divide width and height");
    } else {
      const int n = tokens();
      const int g = int(std::lround(std::sqrt(double(n))));
      if (g * g != n) fail("token count " + std::to_string(n) + " must be a perfect square");
    }
    if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0) {
      fail("embed_dim must be a positive multiple of heads");
    }
    if (blocks < 1) fail("blocks must be >= 1");
    if (mlp_ratio < 1) fail("mlp_ratio must be >= 1");
  } else {
    if (fc_hidden < 0) fail("fc_hidden must be >= 0");
  }
  if (!bad.empty()) throw ConfigError("invalid model config: " + bad);
}

std::vector<Kernel> gabor_bank(int kernel_size) {
  GaborParams gp;
  gp.size = kernel_size;
  std::vector<Kernel> bank;
  for (double theta : gp.thetas_deg) bank.push_back(gabor_kernel(gp, theta));
  return bank;
}

}  // namespace evf
