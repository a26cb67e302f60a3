#pragma once

#include <string>

#include "evformer/model.hpp"
#include "evformer/pipeline.hpp"

namespace evf {

struct DataOptions {
  std::string source = "synthetic";  // or "dir"
  std::string dir;
  int per_class = 50;
  uint64_t seed = 7;
  double train_split = 0.9;
  uint32_t duration_us = 1'000'000;
  double event_rate = 20'000.0;
  double noise_rate = 0.0;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataOptions data;
};

// INI layout with [model], [train] and [data] sections; '#' and ';' start
// comments. Unknown sections or keys are rejected with their line number.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);

}  // namespace evf
