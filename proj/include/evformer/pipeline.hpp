#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "evformer/model.hpp"

namespace evf {

struct Sample {
  EventStream stream;
  int label = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  int classes = kSyntheticClassCount;
};

// per_class streams for every class; sample (c, i) is seeded from
// (seed, c, i) so datasets are reproducible and disjoint across seeds.
Dataset make_synthetic_dataset(const SyntheticSpec& proto, int per_class, uint64_t seed);

// Deterministic shuffled split; the first part holds round(frac * n).
std::pair<Dataset, Dataset> split_dataset(const Dataset& full, double frac, uint64_t seed);

// Directory tree: one subdirectory per class (sorted name order = label
// order), each holding .evs1 files.
Dataset load_dataset_tree(const std::string& dir);

// duration is clamped to time_length_us and later events drop; rejects zero.
EventStream truncate_stream(const EventStream& stream, uint32_t time_length_us);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  double test_loss = 0;
  double test_accuracy = 0;
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 10;  // samples per optimizer step
  double lr = 1e-3;
  std::string optimizer = "adam";  // or "sgd"
  uint64_t seed = 1;
  int threads = 0;  // 0 = all available
  double stop_at_train_accuracy = 0.0;  // early stop when reached; 0 = off
  std::string checkpoint_path;  // best test-accuracy weights, empty = skip
  std::string metrics_path;     // epoch records as JSON lines, empty = skip
  std::string confusion_path;   // final test confusion matrix CSV, empty = skip
  std::function<void(const EpochRecord&)> on_epoch;  // progress hook
};

struct TrainResult {
  std::vector<EpochRecord> history;
  double best_test_accuracy = 0;
  int best_epoch = -1;
  double final_test_accuracy = 0;
  double wall_seconds = 0;
};

struct EvalOptions {
  std::optional<uint32_t> time_length_us;  // truncate every stream first
  int threads = 0;
};

struct EvalResult {
  double accuracy = 0;
  double mean_loss = 0;
  std::vector<std::vector<int64_t>> confusion;  // [true][predicted]
};

TrainResult train_model(ModelF& model, const Dataset& train, const Dataset& test,
                        const TrainConfig& cfg);

EvalResult evaluate_model(const ModelF& model, const Dataset& data,
                          const EvalOptions& opts = {});

// Single-stream decision (hard mode, no grad).
int classify_stream(const ModelF& model, const EventStream& stream);

void write_confusion_csv(const std::string& path,
                         const std::vector<std::vector<int64_t>>& confusion);

}  // namespace evf
