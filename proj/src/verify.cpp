#include "evformer/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>
#include <sstream>

#include "evformer/evconv.hpp"
#include "evformer/gradcheck.hpp"
#include "evformer/model.hpp"
#include "evformer/threading.hpp"

namespace evf {

namespace {

using clock_type = std::chrono::steady_clock;

uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

struct TrialResult {
  double int_dev = 0;
  double real_dev = 0;
  bool conserved = false;
  uint64_t stream_seed = 0;
  int kernel_size = 0;
};

TrialResult run_trial(uint64_t trial_seed) {
  std::mt19937_64 rng(trial_seed);
  const int k = (rng() & 1) ? 3 : 5;
  const int w = int(std::uniform_int_distribution<>(4, 64)(rng));
  const int h = int(std::uniform_int_distribution<>(4, 64)(rng));
  const int n = int(std::uniform_int_distribution<>(1, 5000)(rng));

  EventStream s;
  s.width = uint16_t(w);
  s.height = uint16_t(h);
  s.duration_us = 1000;
  s.events.resize(size_t(n));
  for (Event& e : s.events) {
    e.t_us = uint32_t(std::uniform_int_distribution<>(0, 999)(rng));
    e.x = uint16_t(std::uniform_int_distribution<>(0, w - 1)(rng));
    e.y = uint16_t(std::uniform_int_distribution<>(0, h - 1)(rng));
    e.polarity = uint8_t(rng() & 1);
  }
  std::stable_sort(s.events.begin(), s.events.end(),
                   [](const Event& a, const Event& b) { return a.t_us < b.t_us; });

  Kernel ki = Kernel::zeros(k);
  Kernel kr = Kernel::zeros(k);
  for (double& v : ki.values) v = double(std::uniform_int_distribution<>(-8, 8)(rng));
  for (double& v : kr.values) {
    v = double(float(std::uniform_real_distribution<>(-1.0, 1.0)(rng)));
  }

  const CountMap cmap = build_count_map(s, k);

  TrialResult out;
  out.stream_seed = trial_seed;
  out.kernel_size = k;
  out.conserved = cmap.total() == footprint_total(s, k);
  for (int pass = 0; pass < 2; ++pass) {
    const Kernel& kn = pass == 0 ? ki : kr;
    const ResponseMap ref = event_conv_reference(s, kn);
    const ResponseMap got = strided_readout_per_polarity(cmap, kn);
    double dev = 0;
    for (size_t i = 0; i < ref.values.size(); ++i) {
      dev = std::max(dev, double(std::abs(ref.values[i] - got.values[i])));
    }
    (pass == 0 ? out.int_dev : out.real_dev) = dev;
  }
  return out;
}

void push(VerifyReport& r, const std::string& name, bool pass, const std::string& detail,
          clock_type::time_point t0) {
  VerifyCheck c;
  c.name = name;
  c.pass = pass;
  c.detail = detail;
  c.seconds = std::chrono::duration<double>(clock_type::now() - t0).count();
  r.checks.push_back(std::move(c));
}

void verify_equivalence(VerifyReport& r, const VerifyOptions& opts) {
  const auto t0 = clock_type::now();
  std::vector<TrialResult> trials(size_t(std::max(0, opts.trials)));
  parallel_for(int64_t(trials.size()), opts.threads, [&](int64_t i) {
    trials[size_t(i)] = run_trial(mix_seed(opts.seed, uint64_t(i)));
  });

  const TrialResult* bad_int = nullptr;
  const TrialResult* bad_real = nullptr;
  const TrialResult* bad_count = nullptr;
  for (const TrialResult& t : trials) {
    r.max_integer_deviation = std::max(r.max_integer_deviation, t.int_dev);
    r.max_real_deviation = std::max(r.max_real_deviation, t.real_dev);
    if (t.int_dev != 0.0 && !bad_int) bad_int = &t;
    if (t.real_dev > 1e-3 && !bad_real) bad_real = &t;
    if (!t.conserved && !bad_count) bad_count = &t;
  }

  auto case_of = [](const TrialResult& t, double dev) {
    return "first failure: stream seed " + std::to_string(t.stream_seed) + ", kernel " +
           std::to_string(t.kernel_size) + "x" + std::to_string(t.kernel_size) +
           ", max deviation " + fmt(dev);
  };
  const std::string n = std::to_string(trials.size()) + " trials";
  push(r, "equivalence.integer_exact", bad_int == nullptr,
       bad_int ? case_of(*bad_int, bad_int->int_dev)
               : n + ", max deviation " + fmt(r.max_integer_deviation),
       t0);
  push(r, "equivalence.real_1e-3", bad_real == nullptr,
       bad_real ? case_of(*bad_real, bad_real->real_dev)
                : n + ", max deviation " + fmt(r.max_real_deviation),
       t0);
  push(r, "counts.conserved", bad_count == nullptr,
       bad_count ? "first failure: stream seed " + std::to_string(bad_count->stream_seed)
                 : n + ", totals equal footprint sums exactly",
       t0);
}

void verify_gabor(VerifyReport& r) {
  const auto t0 = clock_type::now();
  const GaborParams gp;
  double worst_mean = 0, worst_norm = 0, worst_transpose = 0;
  for (int k : {3, 5, 7}) {
    GaborParams p = gp;
    p.size = k;
    for (double theta : p.thetas_deg) {
      const Kernel g = gabor_kernel(p, theta);
      double mean = 0, ss = 0;
      for (double v : g.values) mean += v;
      mean /= double(g.values.size());
      for (double v : g.values) ss += v * v;
      worst_mean = std::max(worst_mean, std::abs(mean));
      worst_norm = std::max(worst_norm, std::abs(std::sqrt(ss) - 1.0));
    }
    const Kernel a = gabor_kernel(p, 0.0);
    const Kernel b = gabor_kernel(p, 90.0);
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        worst_transpose = std::max(worst_transpose, std::abs(a.at(i, j) - b.at(j, i)));
      }
    }
  }
  push(r, "gabor.zero_mean", worst_mean <= 1e-12, "worst |mean| " + fmt(worst_mean), t0);
  push(r, "gabor.unit_norm", worst_norm <= 1e-12, "worst |L2 - 1| " + fmt(worst_norm), t0);
  push(r, "gabor.transpose_90deg", worst_transpose <= 1e-12,
       "worst |g0[i,j] - g90[j,i]| " + fmt(worst_transpose), t0);
}

void verify_lif(VerifyReport& r) {
  const auto t0 = clock_type::now();
  const LifParams<double> p;  // tau 2, v_th 1, v_reset 0, alpha 2
  const int steps = 8;

  auto sweep = [&](double drive, std::vector<double>* v_final) {
    Tensor<double> x({steps, 1});
    for (int t = 0; t < steps; ++t) x.data()[t] = drive;
    std::vector<double> v0(1, p.v_reset);
    return lif_sweep(x, p, LifMode::kHard, v0, v_final);
  };

  std::vector<double> v_end;
  Tensor<double> zero = sweep(0.0, &v_end);
  bool ok = v_end[0] == p.v_reset;
  for (int t = 0; t < steps; ++t) ok = ok && zero.data()[t] == 0.0;
  push(r, "lif.zero_input_silent", ok, "X=0: no spikes, V stays at reset", t0);

  Tensor<double> high = sweep(2.0, &v_end);
  ok = v_end[0] == 0.0;
  for (int t = 0; t < steps; ++t) ok = ok && high.data()[t] == 1.0;
  push(r, "lif.constant_2_all_spike", ok, "X=2, tau=2: spike and reset every step", t0);

  Tensor<double> low = sweep(1.0, &v_end);
  ok = v_end[0] == 1.0 - std::pow(2.0, -double(steps));
  for (int t = 0; t < steps; ++t) ok = ok && low.data()[t] == 0.0;
  push(r, "lif.constant_1_never_spikes", ok, "X=1, tau=2: V = 1 - 2^-t, below threshold",
       t0);

  const double peak = lif_detail::surrogate_grad(0.0, 2.0);
  const double far = lif_detail::surrogate_grad(1e6, 2.0);
  push(r, "lif.surrogate_shape", peak == 1.0 && far < 1e-9,
       "peak alpha/2 = " + fmt(peak) + ", tail " + fmt(far), t0);
}

GradCheckReport check_primitive(int which, uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto randn = [&](Shape shape) {
    Tensor<double> t(shape);
    std::normal_distribution<double> d(0.0, 1.0);
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = d(rng);
    return t;
  };
  const double h = 1e-5, atol = 1e-7, rtol = 1e-4;
  switch (which) {
    case 0: {
      Tensor<double> a = randn({3, 4}), b = randn({3, 4});
      return gradcheck<double>(
          [&] { return ops::sum_all(ops::mul(ops::add(a, b), ops::sub(a, b))); }, {a, b}, h,
          atol, rtol);
    }
    case 1: {
      Tensor<double> a = randn({2, 3}), b = randn({3, 4});
      return gradcheck<double>(
          [&] { return ops::mean_all(ops::matmul(a, b)); }, {a, b}, h, atol, rtol);
    }
    case 2: {
      Tensor<double> a = randn({2, 5});
      return gradcheck<double>(
          [&] { return ops::cross_entropy_with_logits(a, {1, 3}); }, {a}, h, atol, rtol);
    }
    case 3: {
      Tensor<double> a = randn({2, 4});
      return gradcheck<double>(
          [&] { return ops::sum_all(ops::mul(ops::softmax(a), a)); }, {a}, h, atol, rtol);
    }
    default: {
      Tensor<double> x = randn({1, 2, 6, 6}), w = randn({3, 2, 3, 3}), b = randn({3});
      return gradcheck<double>(
          [&] { return ops::mean_all(ops::conv2d(x, w, b, 3, 0, 1)); }, {x, w, b}, h, atol,
          rtol);
    }
  }
}

GradCheckReport check_random_graph(uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor<double> a({3, 3}), b({3, 3});
  for (int64_t i = 0; i < 9; ++i) a.data()[i] = d(rng);
  for (int64_t i = 0; i < 9; ++i) b.data()[i] = d(rng);
  std::vector<int> program;
  for (int step = 0; step < 5; ++step) program.push_back(int(rng() % 5));
  auto build = [&] {
    Tensor<double> x = a;
    for (int op : program) {
      switch (op) {
        case 0: x = ops::add(x, b); break;
        case 1: x = ops::mul(x, b); break;
        case 2: x = ops::scale(x, 0.7); break;
        case 3: x = ops::softmax(x); break;
        default: x = ops::matmul(x, ops::transpose(b, 0, 1)); break;
      }
    }
    return ops::mean_all(x);
  };
  return gradcheck<double>(build, {a, b}, 1e-5, 1e-7, 1e-4);
}

GradCheckReport check_model_end_to_end(uint64_t seed) {
  ModelConfig cfg;
  cfg.width = 16;
  cfg.height = 16;
  cfg.time_steps = 2;
  cfg.kernel_size = 3;
  cfg.out_channels = 4;
  cfg.patch_size = 8;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.blocks = 1;
  cfg.mlp_ratio = 2;
  cfg.classes = 4;
  ModelD model(cfg, seed);
  model.set_mode(LifMode::kRelaxed);

  SyntheticSpec spec;
  spec.class_id = 2;
  spec.seed = mix_seed(seed, 11);
  spec.width = 16;
  spec.height = 16;
  spec.duration_us = 50'000;
  spec.event_rate = 20'000.0;
  const Tensor<double> input = ModelD::make_input(cfg, gen_synthetic(spec));

  auto build = [&] {
    model.reset_state();
    Tensor<double> rates = model.forward(input);
    return ops::cross_entropy_with_logits(model.logits(rates), {2});
  };
  return gradcheck<double>(build, {model.readout_weight(), model.temperature()}, 1e-5,
                           1e-7, 1e-3);
}

void verify_gradients(VerifyReport& r, const VerifyOptions& opts) {
  static const char* kNames[5] = {"grad.add_mul", "grad.matmul", "grad.cross_entropy",
                                  "grad.softmax", "grad.conv2d"};
  for (int which = 0; which < 5; ++which) {
    const auto t0 = clock_type::now();
    const GradCheckReport g = check_primitive(which, mix_seed(opts.seed, 100 + uint64_t(which)));
    push(r, kNames[which], g.pass,
         "max |analytic - numeric| " + fmt(g.max_abs_diff) +
             (g.pass ? "" : " at " + g.where),
         t0);
  }
  {
    const auto t0 = clock_type::now();
    bool pass = true;
    double worst = 0;
    std::string where;
    for (uint64_t i = 0; i < 6; ++i) {
      const GradCheckReport g = check_random_graph(mix_seed(opts.seed, 200 + i));
      if (g.max_abs_diff > worst) worst = g.max_abs_diff;
      if (!g.pass && pass) {
        pass = false;
        where = "graph " + std::to_string(i) + " " + g.where;
      }
    }
    push(r, "grad.random_graphs", pass,
         "6 graphs, max |analytic - numeric| " + fmt(worst) + (pass ? "" : " at " + where),
         t0);
  }
  {
    const auto t0 = clock_type::now();
    const GradCheckReport g = check_model_end_to_end(mix_seed(opts.seed, 300));
    push(r, "grad.model_end_to_end", g.pass,
         "relaxed 64-bit model, max |analytic - numeric| " + fmt(g.max_abs_diff) +
             (g.pass ? "" : " at " + g.where),
         t0);
  }
}

}  // namespace

bool VerifyReport::all_pass() const {
  for (const VerifyCheck& c : checks) {
    if (!c.pass) return false;
  }
  return !checks.empty();
}

VerifyReport run_verification(const VerifyOptions& opts) {
  VerifyReport report;
  if (opts.trials > 0) verify_equivalence(report, opts);
  verify_gabor(report);
  verify_lif(report);
  if (opts.check_gradients) verify_gradients(report, opts);
  return report;
}

void print_report(const VerifyReport& report, std::ostream& out) {
  for (const VerifyCheck& c : report.checks) {
    std::ostringstream line;
    line << (c.pass ? "PASS" : "FAIL") << " " << c.name << " (" << c.detail << ") ["
         << fmt(c.seconds) << " s]";
    out << line.str() << "\n";
  }
}

}  // namespace evf
