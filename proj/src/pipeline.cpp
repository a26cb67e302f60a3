#include "evformer/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>

#include "evformer/checkpoint.hpp"
#include "evformer/optim.hpp"
#include "evformer/threading.hpp"
#include "json.hpp"

namespace evf {

namespace {

uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct CachedEval {
  double accuracy = 0;
  double mean_loss = 0;
  std::vector<std::vector<int64_t>> confusion;
};

CachedEval eval_cached(const ModelF& model, const std::vector<TensorF>& inputs,
                       const std::vector<int>& labels, int classes, int threads) {
  CachedEval out;
  out.confusion.assign(size_t(classes), std::vector<int64_t>(size_t(classes), 0));
  const int64_t n = int64_t(inputs.size());
  if (n == 0) return out;
  std::vector<int> preds(size_t(n), 0);
  std::vector<double> losses(size_t(n), 0.0);
  parallel_for(n, threads, [&](int64_t i) {
    ModelF worker = model;
    worker.set_mode(LifMode::kHard);
    NoGradGuard no_grad;
    worker.reset_state();
    TensorF rates = worker.forward(inputs[size_t(i)]);
    preds[size_t(i)] = argmax_class(rates);
    TensorF loss = ops::cross_entropy_with_logits(worker.logits(rates),
                                                  {int64_t(labels[size_t(i)])});
    losses[size_t(i)] = double(loss.item());
  });
  int64_t correct = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (preds[size_t(i)] == labels[size_t(i)]) ++correct;
    out.confusion[size_t(labels[size_t(i)])][size_t(preds[size_t(i)])] += 1;
    out.mean_loss += losses[size_t(i)];
  }
  out.accuracy = double(correct) / double(n);
  out.mean_loss /= double(n);
  return out;
}

std::vector<TensorF> cache_inputs(const ModelConfig& cfg, const Dataset& data, int threads,
                                  std::optional<uint32_t> time_length_us = std::nullopt) {
  std::vector<TensorF> inputs(data.samples.size());
  parallel_for(int64_t(data.samples.size()), threads, [&](int64_t i) {
    const EventStream& s = data.samples[size_t(i)].stream;
    inputs[size_t(i)] = time_length_us
                            ? ModelF::make_input(cfg, truncate_stream(s, *time_length_us))
                            : ModelF::make_input(cfg, s);
  });
  return inputs;
}

std::vector<int> labels_of(const Dataset& data) {
  std::vector<int> labels;
  labels.reserve(data.samples.size());
  for (const Sample& s : data.samples) labels.push_back(s.label);
  return labels;
}

}  // namespace

Dataset make_synthetic_dataset(const SyntheticSpec& proto, int per_class, uint64_t seed) {
  if (per_class < 1) throw std::invalid_argument("per_class must be >= 1");
  Dataset out;
  out.classes = kSyntheticClassCount;
  for (int c = 0; c < kSyntheticClassCount; ++c) {
    for (int i = 0; i < per_class; ++i) {
      SyntheticSpec spec = proto;
      spec.class_id = c;
      spec.seed = mix_seed(seed, uint64_t(c) * uint64_t(per_class) + uint64_t(i));
      out.samples.push_back({gen_synthetic(spec), c});
    }
  }
  return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& full, double frac, uint64_t seed) {
  if (!(frac >= 0.0 && frac <= 1.0)) throw std::invalid_argument("split must be in [0, 1]");
  std::vector<size_t> idx(full.samples.size());
  std::iota(idx.begin(), idx.end(), size_t(0));
  std::mt19937_64 rng(mix_seed(seed, 0x5eed));
  std::shuffle(idx.begin(), idx.end(), rng);
  const size_t head = size_t(std::lround(frac * double(idx.size())));
  Dataset a, b;
  a.classes = b.classes = full.classes;
  for (size_t i = 0; i < idx.size(); ++i) {
    (i < head ? a : b).samples.push_back(full.samples[idx[i]]);
  }
  return {std::move(a), std::move(b)};
}

Dataset load_dataset_tree(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::invalid_argument(dir + " is not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw std::invalid_argument(dir + " has no class subdirectories");
  Dataset out;
  out.classes = int(class_dirs.size());
  for (size_t c = 0; c < class_dirs.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[c])) {
      if (entry.path().extension() == ".evs1") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      out.samples.push_back({load_stream(f.string(), StreamFormat::kEvs1), int(c)});
    }
  }
  if (out.samples.empty()) throw std::invalid_argument(dir + " holds no .evs1 files");
  return out;
}

EventStream truncate_stream(const EventStream& stream, uint32_t time_length_us) {
  if (time_length_us == 0) throw std::invalid_argument("time length must be positive");
  EventStream out;
  out.width = stream.width;
  out.height = stream.height;
  out.duration_us = std::min(stream.duration_us, time_length_us);
  for (const Event& e : stream.events) {
    if (e.t_us < out.duration_us) out.events.push_back(e);
  }
  return out;
}

TrainResult train_model(ModelF& model, const Dataset& train, const Dataset& test,
                        const TrainConfig& cfg) {
  const ModelConfig& mc = model.config();
  if (train.classes != mc.classes || test.classes != mc.classes) {
    throw std::invalid_argument("dataset has " + std::to_string(train.classes) +
                                " classes, model has " + std::to_string(mc.classes));
  }
  if (train.samples.empty()) throw std::invalid_argument("empty training set");
  if (cfg.epochs < 1 || cfg.batch_size < 1) {
    throw std::invalid_argument("epochs and batch_size must be >= 1");
  }

  std::vector<TensorF> params = model.trainable_parameters();
  std::unique_ptr<Optimizer<float>> opt;
  if (cfg.optimizer == "adam") {
    opt = std::make_unique<Adam<float>>(params, float(cfg.lr));
  } else if (cfg.optimizer == "sgd") {
    opt = std::make_unique<Sgd<float>>(params, float(cfg.lr));
  } else {
    throw std::invalid_argument("unknown optimizer '" + cfg.optimizer + "'");
  }

  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<TensorF> train_inputs = cache_inputs(mc, train, cfg.threads);
  const std::vector<TensorF> test_inputs = cache_inputs(mc, test, cfg.threads);
  const std::vector<int> train_labels = labels_of(train);
  const std::vector<int> test_labels = labels_of(test);

  std::ofstream metrics;
  if (!cfg.metrics_path.empty()) {
    metrics.open(cfg.metrics_path);
    if (!metrics) throw std::runtime_error("cannot open " + cfg.metrics_path);
  }

  TrainResult result;
  std::vector<size_t> order(train.samples.size());
  std::iota(order.begin(), order.end(), size_t(0));
  std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0x7ea1));
  CachedEval last_eval;

  model.set_mode(LifMode::kHard);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0;
    int64_t correct = 0;
    for (size_t start = 0; start < order.size(); start += size_t(cfg.batch_size)) {
      const size_t stop = std::min(order.size(), start + size_t(cfg.batch_size));
      for (size_t s = start; s < stop; ++s) {
        const size_t i = order[s];
        model.reset_state();
        TensorF rates = model.forward(train_inputs[i]);
        TensorF loss = ops::cross_entropy_with_logits(model.logits(rates),
                                                      {int64_t(train_labels[i])});
        loss.backward();
        loss_sum += double(loss.item());
        if (argmax_class(rates) == train_labels[i]) ++correct;
      }
      const float inv = 1.0f / float(stop - start);
      for (TensorF& p : params) {
        kern::Dispatch<float>::scale(p.grad().data(), inv, p.grad().data(),
                                     p.grad().size());
      }
      opt->step();
      opt->zero_grad();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / double(train.samples.size());
    rec.train_accuracy = double(correct) / double(train.samples.size());
    last_eval = test_inputs.empty()
                    ? CachedEval{}
                    : eval_cached(model, test_inputs, test_labels, mc.classes, cfg.threads);
    rec.test_loss = last_eval.mean_loss;
    rec.test_accuracy = last_eval.accuracy;
    result.history.push_back(rec);
    if (cfg.on_epoch) cfg.on_epoch(rec);

    if (metrics.is_open()) {
      metrics << nlohmann::json{{"epoch", epoch},
                                {"split", "train"},
                                {"loss", rec.train_loss},
                                {"accuracy", rec.train_accuracy}}
                     .dump()
              << "\n";
      metrics << nlohmann::json{{"epoch", epoch},
                                {"split", "test"},
                                {"loss", rec.test_loss},
                                {"accuracy", rec.test_accuracy}}
                     .dump()
              << "\n";
      metrics.flush();
    }

    if (rec.test_accuracy > result.best_test_accuracy || result.best_epoch < 0) {
      result.best_test_accuracy = rec.test_accuracy;
      result.best_epoch = epoch;
      if (!cfg.checkpoint_path.empty()) {
        ParamList<float> named = model.named_parameters();
        save_checkpoint(cfg.checkpoint_path, named);
      }
    }
    if (cfg.stop_at_train_accuracy > 0.0 &&
        rec.train_accuracy >= cfg.stop_at_train_accuracy) {
      break;
    }
  }

  result.final_test_accuracy = last_eval.accuracy;
  if (!cfg.confusion_path.empty()) write_confusion_csv(cfg.confusion_path, last_eval.confusion);
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (metrics.is_open()) {
    metrics << nlohmann::json{{"split", "summary"},
                              {"epochs_run", int(result.history.size())},
                              {"best_epoch", result.best_epoch},
                              {"best_test_accuracy", result.best_test_accuracy},
                              {"final_test_accuracy", result.final_test_accuracy},
                              {"wall_seconds", result.wall_seconds}}
                   .dump()
            << "\n";
  }
  return result;
}

EvalResult evaluate_model(const ModelF& model, const Dataset& data, const EvalOptions& opts) {
  if (data.classes != model.config().classes) {
    throw std::invalid_argument("dataset has " + std::to_string(data.classes) +
                                " classes, model has " +
                                std::to_string(model.config().classes));
  }
  const std::vector<TensorF> inputs =
      cache_inputs(model.config(), data, opts.threads, opts.time_length_us);
  const CachedEval ev =
      eval_cached(model, inputs, labels_of(data), data.classes, opts.threads);
  return {ev.accuracy, ev.mean_loss, ev.confusion};
}

int classify_stream(const ModelF& model, const EventStream& stream) {
  ModelF worker = model;
  worker.set_mode(LifMode::kHard);
  NoGradGuard no_grad;
  worker.reset_state();
  TensorF rates = worker.forward(ModelF::make_input(worker.config(), stream));
  return argmax_class(rates);
}

void write_confusion_csv(const std::string& path,
                         const std::vector<std::vector<int64_t>>& confusion) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "true\\predicted";
  for (size_t c = 0; c < confusion.size(); ++c) out << "," << c;
  out << "\n";
  for (size_t r = 0; r < confusion.size(); ++r) {
    out << r;
    for (size_t c = 0; c < confusion[r].size(); ++c) out << "," << confusion[r][c];
    out << "\n";
  }
}

}  // namespace evf
