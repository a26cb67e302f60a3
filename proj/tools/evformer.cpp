#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>

#include "CLI11.hpp"
#include "evformer/checkpoint.hpp"
#include "evformer/config_file.hpp"
#include "evformer/evconv.hpp"
#include "evformer/event_stream.hpp"
#include "evformer/model.hpp"
#include "evformer/pipeline.hpp"
#include "evformer/verify.hpp"

namespace {

using namespace evf;

StreamFormat format_of(const std::string& path, const std::string& forced) {
  if (forced == "csv") return StreamFormat::kCsv;
  if (forced == "evs1") return StreamFormat::kEvs1;
  const std::string ext = std::filesystem::path(path).extension().string();
  if (ext == ".csv") return StreamFormat::kCsv;
  if (ext == ".evs1") return StreamFormat::kEvs1;
  throw std::invalid_argument("cannot tell the format of '" + path +
                              "'; pass --from/--to csv|evs1");
}

int cmd_convert(const std::string& in, const std::string& out, const std::string& from,
                const std::string& to, int width, int height, int64_t duration_us) {
  const StreamFormat fin = format_of(in, from);
  std::optional<StreamGeometry> geo;
  if (fin == StreamFormat::kCsv) {
    if (width <= 0 || height <= 0 || duration_us <= 0) {
      throw std::invalid_argument(
          "csv input needs --width, --height and --duration-us");
    }
    geo = StreamGeometry{uint16_t(width), uint16_t(height), uint32_t(duration_us)};
  }
  const EventStream s = load_stream(in, fin, geo);
  save_stream(s, out, format_of(out, to));
  std::printf("%s -> %s: %zu events, %ux%u, %u us\n", in.c_str(), out.c_str(),
              s.events.size(), unsigned(s.width), unsigned(s.height), s.duration_us);
  return 0;
}

int cmd_gen(const std::string& out_dir, int classes, int per_class, uint64_t seed,
            int width, int height, int64_t duration_us, double event_rate,
            double noise_rate) {
  if (classes < 1 || classes > kSyntheticClassCount) {
    throw std::invalid_argument("classes must be in [1, " +
                                std::to_string(kSyntheticClassCount) + "]");
  }
  SyntheticSpec proto;
  proto.width = uint16_t(width);
  proto.height = uint16_t(height);
  proto.duration_us = uint32_t(duration_us);
  proto.event_rate = event_rate;
  proto.noise_rate = noise_rate;
  const Dataset data = make_synthetic_dataset(proto, per_class, seed);
  namespace fs = std::filesystem;
  for (int c = 0; c < classes; ++c) {
    // Index prefix keeps sorted-name label order equal to generator class ids.
    fs::create_directories(fs::path(out_dir) /
                           (std::to_string(c) + "_" + kSyntheticClassNames[c]));
  }
  std::vector<int> next_idx(size_t(classes), 0);
  size_t written = 0;
  for (const Sample& s : data.samples) {
    if (s.label >= classes) continue;
    char name[32];
    std::snprintf(name, sizeof(name), "%04d.evs1", next_idx[size_t(s.label)]++);
    const fs::path p = fs::path(out_dir) /
                       (std::to_string(s.label) + "_" + kSyntheticClassNames[s.label]) /
                       name;
    save_stream(s.stream, p.string(), StreamFormat::kEvs1);
    ++written;
  }
  std::printf("wrote %zu streams under %s\n", written, out_dir.c_str());
  return 0;
}

int cmd_verify(int trials, uint64_t seed, bool skip_gradients, int threads) {
  VerifyOptions opts;
  opts.trials = trials;
  opts.seed = seed;
  opts.check_gradients = !skip_gradients;
  opts.threads = threads;
  const VerifyReport report = run_verification(opts);
  print_report(report, std::cout);
  std::printf("max deviation: integer %g (tolerance 0), real %g (tolerance 1e-3)\n",
              report.max_integer_deviation, report.max_real_deviation);
  std::printf("%s\n", report.all_pass() ? "verification passed" : "verification FAILED");
  return report.all_pass() ? 0 : 1;
}

Dataset dataset_of(const RunConfig& run) {
  if (run.data.source == "dir") {
    if (run.data.dir.empty()) throw std::invalid_argument("[data] dir is empty");
    return load_dataset_tree(run.data.dir);
  }
  SyntheticSpec proto;
  proto.width = uint16_t(run.model.width);
  proto.height = uint16_t(run.model.height);
  proto.duration_us = run.data.duration_us;
  proto.event_rate = run.data.event_rate;
  proto.noise_rate = run.data.noise_rate;
  return make_synthetic_dataset(proto, run.data.per_class, run.data.seed);
}

int cmd_train(const RunConfig& run) {
  auto [train, test] = split_dataset(dataset_of(run), run.data.train_split, run.data.seed);
  std::printf("train %zu / test %zu samples, %d classes, variant %s, classifier %s\n",
              train.samples.size(), test.samples.size(), train.classes,
              variant_name(run.model.variant), classifier_name(run.model.classifier));
  ModelF model(run.model, run.train.seed);
  TrainConfig tc = run.train;
  tc.on_epoch = [](const EpochRecord& r) {
    std::printf("epoch %3d  train loss %.4f acc %.3f  test loss %.4f acc %.3f\n", r.epoch,
                r.train_loss, r.train_accuracy, r.test_loss, r.test_accuracy);
    std::fflush(stdout);
  };
  const TrainResult result = train_model(model, train, test, tc);
  std::printf("best test accuracy %.3f at epoch %d; final %.3f; %.1f s\n",
              result.best_test_accuracy, result.best_epoch, result.final_test_accuracy,
              result.wall_seconds);
  return 0;
}

int cmd_eval(const RunConfig& run, const std::string& checkpoint, int64_t time_length_us,
             int threads) {
  auto [train, test] = split_dataset(dataset_of(run), run.data.train_split, run.data.seed);
  (void)train;
  ModelF model(run.model, run.train.seed);
  if (!checkpoint.empty()) {
    ParamList<float> params = model.named_parameters();
    load_checkpoint(checkpoint, params);
  }
  EvalOptions opts;
  opts.threads = threads;
  const EvalResult full = evaluate_model(model, test, opts);
  std::printf("full length:     accuracy %.3f  loss %.4f  (n=%zu)\n", full.accuracy,
              full.mean_loss, test.samples.size());
  if (time_length_us > 0) {
    opts.time_length_us = uint32_t(time_length_us);
    const EvalResult cut = evaluate_model(model, test, opts);
    std::printf("first %lld us: accuracy %.3f  loss %.4f  (n=%zu)\n",
                static_cast<long long>(time_length_us), cut.accuracy, cut.mean_loss,
                test.samples.size());
  }
  return 0;
}

int cmd_bench(const std::string& out_csv, uint64_t seed, int width, int height,
              int kernel_size, int repeats) {
  std::ofstream csv(out_csv);
  if (!csv) throw std::runtime_error("cannot open " + out_csv);
  csv << "events_per_second,events,path,seconds_per_pass,events_per_second_processed,isa\n";
  std::printf("%14s %9s %-18s %14s %16s %s\n", "rate", "events", "path", "s/pass",
              "events/s", "isa");

  for (const double rate : {1e3, 1e5, 1e6}) {
    const int n = int(rate);  // one simulated second of events
    std::mt19937_64 rng(seed ^ uint64_t(n));
    EventStream s;
    s.width = uint16_t(width);
    s.height = uint16_t(height);
    s.duration_us = 1'000'000;
    s.events.resize(size_t(n));
    uint32_t t = 0;
    for (Event& e : s.events) {
      t += uint32_t(rng() % (2'000'000 / uint64_t(n) + 1));
      e.t_us = std::min(t, s.duration_us - 1);
      e.x = uint16_t(rng() % uint64_t(width));
      e.y = uint16_t(rng() % uint64_t(height));
      e.polarity = uint8_t(rng() & 1);
    }

    Kernel k = Kernel::zeros(kernel_size);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (double& v : k.values) v = dist(rng);

    float guard = 0;
    auto timed = [&](auto&& fn) {
      const auto t0 = std::chrono::steady_clock::now();
      for (int rep = 0; rep < repeats; ++rep) fn();
      return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() /
             double(repeats);
    };

    const double t_event = timed([&] {
      const ResponseMap r = event_conv_reference(s, k);
      guard += r.values[0];
    });
    const double t_total = timed([&] {
      const CountMap c = build_count_map(s, kernel_size);
      const ResponseMap r = strided_readout_per_polarity(c, k);
      guard += r.values[0];
    });
    const CountMap cmap = build_count_map(s, kernel_size);
    const double t_readout = timed([&] {
      const ResponseMap r = strided_readout_per_polarity(cmap, k);
      guard += r.values[0];
    });
    volatile float sink = guard;
    (void)sink;

    const struct {
      const char* name;
      double secs;
    } rows[3] = {{"event_by_event", t_event},
                 {"count_map_total", t_total},
                 {"count_map_readout", t_readout}};
    for (const auto& row : rows) {
      const double throughput = row.secs > 0 ? double(n) / row.secs : 0.0;
      csv << int64_t(rate) << "," << n << "," << row.name << "," << row.secs << ","
          << throughput << "," << kern::active_isa() << "\n";
      std::printf("%14.0f %9d %-18s %14.6g %16.6g %s\n", rate, n, row.name, row.secs,
                  throughput, kern::active_isa());
    }
  }
  std::printf("wrote %s\n", out_csv.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"event-stream convolution + spiking transformer toolkit"};
  app.require_subcommand(1);
  int exit_code = 0;

  auto* convert = app.add_subcommand("convert", "convert a stream between csv and evs1");
  std::string cv_in, cv_out, cv_from, cv_to;
  int cv_w = 0, cv_h = 0;
  int64_t cv_dur = 0;
  convert->add_option("--in", cv_in, "input stream")->required();
  convert->add_option("--out", cv_out, "output stream")->required();
  convert->add_option("--from", cv_from, "input format (csv|evs1), default by extension");
  convert->add_option("--to", cv_to, "output format (csv|evs1), default by extension");
  convert->add_option("--width", cv_w, "sensor width for csv input");
  convert->add_option("--height", cv_h, "sensor height for csv input");
  convert->add_option("--duration-us", cv_dur, "stream duration for csv input");
  convert->callback(
      [&] { exit_code = cmd_convert(cv_in, cv_out, cv_from, cv_to, cv_w, cv_h, cv_dur); });

  auto* gen = app.add_subcommand("gen", "write a synthetic dataset directory");
  std::string gn_out;
  int gn_classes = kSyntheticClassCount, gn_per_class = 50, gn_w = 32, gn_h = 32;
  uint64_t gn_seed = 1;
  int64_t gn_dur = 1'000'000;
  double gn_rate = 20'000.0, gn_noise = 0.0;
  gen->add_option("--out", gn_out, "output directory")->required();
  gen->add_option("--classes", gn_classes, "class count");
  gen->add_option("--per-class", gn_per_class, "streams per class");
  gen->add_option("--seed", gn_seed, "generator seed");
  gen->add_option("--width", gn_w, "sensor width");
  gen->add_option("--height", gn_h, "sensor height");
  gen->add_option("--duration-us", gn_dur, "stream duration");
  gen->add_option("--event-rate", gn_rate, "glyph events per second");
  gen->add_option("--noise-rate", gn_noise, "background events per second");
  gen->callback([&] {
    exit_code =
        cmd_gen(gn_out, gn_classes, gn_per_class, gn_seed, gn_w, gn_h, gn_dur, gn_rate, gn_noise);
  });

  auto* verify = app.add_subcommand("verify", "run the equivalence and gradient suites");
  int vf_trials = 100, vf_threads = 0;
  uint64_t vf_seed = 7;
  bool vf_skip_grad = false;
  verify->add_option("--trials", vf_trials, "randomized equivalence trials");
  verify->add_option("--seed", vf_seed, "trial seed");
  verify->add_flag("--skip-gradients", vf_skip_grad, "skip the finite-difference suite");
  verify->add_option("--threads", vf_threads, "worker threads (0 = all)");
  verify->callback(
      [&] { exit_code = cmd_verify(vf_trials, vf_seed, vf_skip_grad, vf_threads); });

  auto* train = app.add_subcommand("train", "train a model from a config file");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  std::string tr_config, ev_config, ev_checkpoint;
  int tr_epochs = -1;
  int64_t tr_seed = -1;
  std::string tr_variant, tr_classifier, tr_checkpoint, tr_metrics, tr_confusion;
  int64_t ev_time_length = 0;
  int ev_threads = 0;
  train->add_option("--config", tr_config, "run config file")->required();
  train->add_option("--epochs", tr_epochs, "override [train] epochs");
  train->add_option("--seed", tr_seed, "override [train] seed");
  train->add_option("--variant", tr_variant,
                    "override [model] variant (trainable_evconv|fixed_gabor|no_evconv)");
  train->add_option("--classifier", tr_classifier,
                    "override [model] classifier (spikeformer|fc)");
  train->add_option("--checkpoint", tr_checkpoint, "override [train] checkpoint_path");
  train->add_option("--metrics", tr_metrics, "override [train] metrics_path");
  train->add_option("--confusion", tr_confusion, "override [train] confusion_path");
  train->callback([&] {
    RunConfig run = parse_config_file(tr_config);
    if (tr_epochs > 0) run.train.epochs = tr_epochs;
    if (tr_seed >= 0) run.train.seed = uint64_t(tr_seed);
    if (!tr_variant.empty()) run.model.variant = parse_variant(tr_variant);
    if (!tr_classifier.empty()) run.model.classifier = parse_classifier(tr_classifier);
    if (!tr_checkpoint.empty()) run.train.checkpoint_path = tr_checkpoint;
    if (!tr_metrics.empty()) run.train.metrics_path = tr_metrics;
    if (!tr_confusion.empty()) run.train.confusion_path = tr_confusion;
    exit_code = cmd_train(run);
  });

  eval->add_option("--config", ev_config, "run config file")->required();
  eval->add_option("--checkpoint", ev_checkpoint, "weights to load (default: fresh init)");
  eval->add_option("--time-length-us", ev_time_length,
                   "also evaluate on stream prefixes of this length");
  eval->add_option("--threads", ev_threads, "worker threads (0 = all)");
  eval->callback([&] {
    exit_code =
        cmd_eval(parse_config_file(ev_config), ev_checkpoint, ev_time_length, ev_threads);
  });

  auto* bench = app.add_subcommand("bench", "compare both convolution paths");
  std::string bn_out = "bench.csv";
  uint64_t bn_seed = 1;
  int bn_w = 64, bn_h = 64, bn_k = 3, bn_repeats = 5;
  bench->add_option("--out", bn_out, "output csv");
  bench->add_option("--seed", bn_seed, "stream seed");
  bench->add_option("--width", bn_w, "sensor width");
  bench->add_option("--height", bn_h, "sensor height");
  bench->add_option("--kernel-size", bn_k, "kernel size");
  bench->add_option("--repeats", bn_repeats, "passes per measurement");
  bench->callback([&] {
    exit_code = cmd_bench(bn_out, bn_seed, bn_w, bn_h, bn_k, bn_repeats);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return exit_code;
}
