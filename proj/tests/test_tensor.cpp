#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "doctest.h"
#include "evformer/gradcheck.hpp"
#include "evformer/ops.hpp"
#include "evformer/optim.hpp"
#include "evformer/tensor.hpp"

using namespace evf;

namespace {

TensorD random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0,
                      double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  TensorD t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = dist(rng);
  return t;
}

constexpr double kH = 1e-5;
constexpr double kAtol = 1e-7;
constexpr double kRtol = 1e-4;

void expect_gradcheck(const std::function<TensorD()>& loss, std::vector<TensorD> leaves) {
  const GradCheckReport r = gradcheck<double>(loss, std::move(leaves), kH, kAtol, kRtol);
  CAPTURE(r.where);
  CAPTURE(r.worst_analytic);
  CAPTURE(r.worst_numeric);
  CHECK(r.pass);
}

}  // namespace

TEST_CASE("matmul against identity reproduces the input") {
  TensorD a = TensorD::from({2, 3}, {1, 2, 3, 4, 5, 6});
  TensorD eye = TensorD::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  TensorD out = ops::matmul(a, eye);
  for (int64_t i = 0; i < 6; ++i) CHECK(out.data()[i] == doctest::Approx(a.data()[i]));
}

TEST_CASE("matmul hand example") {
  // [[1,2],[3,4]] x [[5,6],[7,8]] = [[19,22],[43,50]]
  TensorD a = TensorD::from({2, 2}, {1, 2, 3, 4});
  TensorD b = TensorD::from({2, 2}, {5, 6, 7, 8});
  TensorD out = ops::matmul(a, b);
  CHECK(out.data()[0] == doctest::Approx(19));
  CHECK(out.data()[1] == doctest::Approx(22));
  CHECK(out.data()[2] == doctest::Approx(43));
  CHECK(out.data()[3] == doctest::Approx(50));
}

TEST_CASE("batched matmul shares a rank-2 rhs") {
  std::mt19937_64 rng(1);
  TensorD a = random_tensor(rng, {4, 2, 3});
  TensorD b = random_tensor(rng, {3, 5});
  TensorD out = ops::matmul(a, b);
  CHECK(out.shape() == Shape{4, 2, 5});
  // batch 2 equals the standalone product
  TensorD a2 = TensorD::from({2, 3}, std::vector<double>(a.data() + 2 * 6, a.data() + 3 * 6));
  TensorD o2 = ops::matmul(a2, b);
  for (int64_t i = 0; i < 10; ++i) {
    CHECK(out.data()[2 * 10 + i] == doctest::Approx(o2.data()[i]));
  }
}

TEST_CASE("conv2d of all-ones 3x3 kernel over ones sums the window") {
  TensorD x({1, 1, 5, 5}, 1.0);
  TensorD w({1, 1, 3, 3}, 1.0);
  TensorD out = ops::conv2d(x, w, 1, 0, 1);
  CHECK(out.shape() == Shape{1, 1, 3, 3});
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == doctest::Approx(9.0));
}

TEST_CASE("conv2d stride and padding geometry") {
  TensorD x({2, 3, 8, 8}, 0.5);
  TensorD w({4, 3, 3, 3}, 0.1);
  CHECK(ops::conv2d(x, w, 1, 1, 1).shape() == Shape{2, 4, 8, 8});
  CHECK(ops::conv2d(x, w, 2, 1, 1).shape() == Shape{2, 4, 4, 4});
  TensorD wk({4, 3, 4, 4}, 0.1);
  CHECK(ops::conv2d(x, wk, 4, 0, 1).shape() == Shape{2, 4, 2, 2});
}

TEST_CASE("depthwise conv keeps channels separate") {
  // two channels, identity kernel on channel 0, doubling kernel on channel 1
  TensorD x = TensorD::from({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
  TensorD w({2, 1, 1, 1});
  w.data()[0] = 1.0;
  w.data()[1] = 2.0;
  TensorD out = ops::conv2d(x, w, 1, 0, 2);
  CHECK(out.shape() == Shape{1, 2, 2, 2});
  CHECK(out.data()[0] == doctest::Approx(1));
  CHECK(out.data()[3] == doctest::Approx(4));
  CHECK(out.data()[4] == doctest::Approx(20));
  CHECK(out.data()[7] == doctest::Approx(80));
}

TEST_CASE("softmax of a constant row is uniform") {
  TensorD x({2, 3}, 0.7);
  TensorD y = ops::softmax(x);
  for (int64_t i = 0; i < 6; ++i) CHECK(y.data()[i] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("softmax is shift invariant") {
  TensorD a = TensorD::from({3}, {0.1, -0.4, 2.0});
  TensorD b = TensorD::from({3}, {100.1, 99.6, 102.0});
  TensorD ya = ops::softmax(a);
  TensorD yb = ops::softmax(b);
  for (int64_t i = 0; i < 3; ++i) CHECK(ya.data()[i] == doctest::Approx(yb.data()[i]));
}

TEST_CASE("cross entropy of uniform logits is log C") {
  TensorD z({1, 4}, 0.0);
  TensorD loss = ops::cross_entropy_with_logits(z, {2});
  CHECK(loss.item() == doctest::Approx(std::log(4.0)));
}

TEST_CASE("transpose swaps axes and round-trips") {
  std::mt19937_64 rng(2);
  TensorD a = random_tensor(rng, {2, 3, 4});
  TensorD t = ops::transpose(a, 1, 2);
  CHECK(t.shape() == Shape{2, 4, 3});
  CHECK(t.data()[0 * 12 + 2 * 3 + 1] == a.data()[0 * 12 + 1 * 4 + 2]);
  TensorD back = ops::transpose(t, 1, 2);
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(back.data()[i] == a.data()[i]);
}

TEST_CASE("reductions") {
  TensorD a = TensorD::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(ops::sum_all(a).item() == doctest::Approx(21));
  CHECK(ops::mean_all(a).item() == doctest::Approx(3.5));
  TensorD s0 = ops::sum_axis(a, 0);
  CHECK(s0.shape() == Shape{3});
  CHECK(s0.data()[1] == doctest::Approx(7));
  TensorD m1 = ops::mean_axis(a, 1);
  CHECK(m1.shape() == Shape{2});
  CHECK(m1.data()[0] == doctest::Approx(2));
  CHECK(m1.data()[1] == doctest::Approx(5));
}

TEST_CASE("standardize_last whitens each row of the last axis") {
  TensorD a = TensorD::from({2, 4}, {1, 2, 3, 4, -2, 0, 2, 8});
  TensorD y = ops::standardize_last(a);
  for (int64_t r = 0; r < 2; ++r) {
    double mean = 0.0, var = 0.0;
    for (int64_t j = 0; j < 4; ++j) mean += y.data()[r * 4 + j];
    mean /= 4.0;
    for (int64_t j = 0; j < 4; ++j) {
      const double d = y.data()[r * 4 + j] - mean;
      var += d * d;
    }
    var /= 4.0;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps in the denominator
  }
  // a constant row has zero variance and must map to zeros, not NaN
  TensorD c = TensorD::from({1, 3}, {5, 5, 5});
  TensorD yc = ops::standardize_last(c);
  for (int64_t j = 0; j < 3; ++j) CHECK(yc.data()[j] == doctest::Approx(0.0));
}

TEST_CASE("mul_last scales each feature column") {
  TensorD a = TensorD::from({2, 3}, {1, 2, 3, 4, 5, 6});
  TensorD g = TensorD::from({3}, {2, 0, -1});
  TensorD y = ops::mul_last(a, g);
  const std::vector<double> want = {2, 0, -3, 8, 0, -6};
  for (int64_t i = 0; i < 6; ++i) CHECK(y.data()[i] == doctest::Approx(want[i]));
}

TEST_CASE("shape violations are reported with both shapes") {
  TensorD a({2, 3});
  TensorD b({2, 2});
  CHECK_THROWS_WITH_AS(ops::add(a, b), doctest::Contains("[2, 3]"),
                       std::invalid_argument);
  CHECK_THROWS_AS(ops::matmul(a, a), std::invalid_argument);
  CHECK_THROWS_AS(ops::reshape(a, {7}), std::invalid_argument);
  CHECK_THROWS_AS(ops::cross_entropy_with_logits(a, {1}), std::invalid_argument);
  CHECK_THROWS_AS(ops::cross_entropy_with_logits(a, {0, 3}), std::invalid_argument);
}

TEST_CASE("gradients accumulate across backward calls and reused tensors") {
  TensorD a = TensorD::from({2}, {3.0, -1.0});
  a.set_requires_grad(true);
  // y = a * a: dy/da = 2a
  TensorD loss = ops::sum_all(ops::mul(a, a));
  loss.backward();
  CHECK(a.grad()[0] == doctest::Approx(6.0));
  CHECK(a.grad()[1] == doctest::Approx(-2.0));
  loss.backward();
  CHECK(a.grad()[0] == doctest::Approx(12.0));
}

TEST_CASE("no_grad builds no graph") {
  TensorD a = TensorD::from({2}, {1.0, 2.0});
  a.set_requires_grad(true);
  NoGradGuard guard;
  TensorD y = ops::mul(a, a);
  CHECK(y.node()->backward_fn == nullptr);
  CHECK(y.node()->parents.empty());
}

TEST_CASE("primitive gradients match central differences") {
  std::mt19937_64 rng(42);
  SUBCASE("add sub mul scale") {
    TensorD a = random_tensor(rng, {3, 4});
    TensorD b = random_tensor(rng, {3, 4});
    TensorD c = random_tensor(rng, {});
    expect_gradcheck(
        [&] {
          TensorD t = ops::add(a, b);
          t = ops::mul(t, b);
          t = ops::sub(t, a);
          t = ops::scale(t, 1.3);
          t = ops::add(t, c);
          return ops::sum_all(ops::mul(t, t));
        },
        {a, b, c});
  }
  SUBCASE("bias add broadcasts over rows") {
    TensorD a = random_tensor(rng, {4, 3});
    TensorD bias = random_tensor(rng, {3});
    expect_gradcheck([&] { return ops::sum_all(ops::mul(ops::add(a, bias), ops::add(a, bias))); },
                     {a, bias});
  }
  SUBCASE("matmul") {
    TensorD a = random_tensor(rng, {3, 4});
    TensorD b = random_tensor(rng, {4, 2});
    expect_gradcheck(
        [&] {
          TensorD y = ops::matmul(a, b);
          return ops::sum_all(ops::mul(y, y));
        },
        {a, b});
  }
  SUBCASE("batched matmul") {
    TensorD a = random_tensor(rng, {2, 3, 4});
    TensorD b = random_tensor(rng, {2, 4, 2});
    expect_gradcheck(
        [&] {
          TensorD y = ops::matmul(a, b);
          return ops::sum_all(ops::mul(y, y));
        },
        {a, b});
  }
  SUBCASE("softmax") {
    TensorD a = random_tensor(rng, {2, 5});
    TensorD w = random_tensor(rng, {2, 5});
    expect_gradcheck([&] { return ops::sum_all(ops::mul(ops::softmax(a), w)); }, {a});
  }
  SUBCASE("cross entropy") {
    TensorD z = random_tensor(rng, {3, 4});
    expect_gradcheck([&] { return ops::cross_entropy_with_logits(z, {1, 0, 3}); }, {z});
  }
  SUBCASE("reductions and reshapes") {
    TensorD a = random_tensor(rng, {2, 3, 4});
    expect_gradcheck(
        [&] {
          TensorD t = ops::transpose(a, 0, 2);
          t = ops::reshape(t, {6, 4});
          t = ops::mean_axis(t, 0);
          return ops::sum_all(ops::mul(t, t));
        },
        {a});
  }
  SUBCASE("standardize_last and mul_last") {
    TensorD a = random_tensor(rng, {3, 5});
    TensorD g = random_tensor(rng, {5});
    TensorD w = random_tensor(rng, {3, 5});
    expect_gradcheck(
        [&] {
          TensorD y = ops::mul_last(ops::standardize_last(a), g);
          return ops::sum_all(ops::mul(y, w));
        },
        {a, g});
  }
  SUBCASE("standardize_last on a rank-3 batch") {
    TensorD a = random_tensor(rng, {2, 3, 4});
    expect_gradcheck(
        [&] {
          TensorD y = ops::standardize_last(a);
          return ops::sum_all(ops::mul(y, ops::add(y, a)));
        },
        {a});
  }
  SUBCASE("conv2d with stride padding groups and bias") {
    TensorD x = random_tensor(rng, {2, 4, 5, 5});
    TensorD w = random_tensor(rng, {6, 2, 3, 3});
    TensorD b = random_tensor(rng, {6});
    expect_gradcheck(
        [&] {
          TensorD y = ops::conv2d(x, w, b, 2, 1, 2);
          return ops::sum_all(ops::mul(y, y));
        },
        {x, w, b});
  }
  SUBCASE("depthwise conv2d") {
    TensorD x = random_tensor(rng, {1, 3, 4, 4});
    TensorD w = random_tensor(rng, {3, 1, 3, 3});
    expect_gradcheck(
        [&] {
          TensorD y = ops::conv2d(x, w, 1, 1, 3);
          return ops::sum_all(ops::mul(y, y));
        },
        {x, w});
  }
}

TEST_CASE("random op chains pass gradcheck") {
  std::mt19937_64 rng(1234);
  for (int graph = 0; graph < 6; ++graph) {
    CAPTURE(graph);
    std::vector<TensorD> leaves;
    auto fresh = [&](Shape s) {
      leaves.push_back(random_tensor(rng, s, -0.8, 0.8));
      return leaves.back();
    };
    // rebuildable chain: ops recorded as a program over the leaves
    std::vector<int> program;
    for (int step = 0; step < 5; ++step) program.push_back(int(rng() % 5));
    TensorD x0 = fresh({3, 4});
    TensorD m = fresh({3, 4});
    TensorD r = fresh({4, 3});
    auto build = [&]() -> TensorD {
      TensorD t = x0;
      for (int op : program) {
        switch (op) {
          case 0: t = ops::add(t, m); break;
          case 1: t = ops::mul(t, m); break;
          case 2: t = ops::scale(t, -0.7); break;
          case 3: t = ops::softmax(t); break;
          case 4: t = ops::reshape(ops::matmul(t, r), {3, 3, 1});
                  t = ops::matmul(ops::reshape(t, {3, 3}), ops::transpose(r, 0, 1));
                  break;
        }
      }
      return ops::mean_all(ops::mul(t, t));
    };
    expect_gradcheck(build, leaves);
  }
}

TEST_CASE("sgd applies the gradient and leaves it intact") {
  TensorD w = TensorD::from({2}, {1.0, 2.0});
  w.set_requires_grad(true);
  TensorD loss = ops::sum_all(ops::mul(w, w));
  loss.backward();
  Sgd<double> opt({w}, 0.1);
  opt.step();
  CHECK(w.data()[0] == doctest::Approx(1.0 - 0.1 * 2.0));
  CHECK(w.data()[1] == doctest::Approx(2.0 - 0.1 * 4.0));
  CHECK(w.grad()[0] == doctest::Approx(2.0));  // step must not consume it
  opt.zero_grad();
  CHECK(w.grad()[0] == 0.0);
}

TEST_CASE("adam first step moves weights by about lr") {
  TensorD w = TensorD::from({2}, {0.5, -0.5});
  w.set_requires_grad(true);
  TensorD loss = ops::sum_all(ops::mul(w, w));
  loss.backward();
  Adam<double> opt({w}, 0.01);
  opt.step();
  // bias-corrected first step is lr * g/|g| (up to eps)
  CHECK(w.data()[0] == doctest::Approx(0.5 - 0.01).epsilon(1e-4));
  CHECK(w.data()[1] == doctest::Approx(-0.5 + 0.01).epsilon(1e-4));
}

TEST_CASE("optimizer without gradients raises a state error") {
  TensorD w = TensorD::from({2}, {1.0, 2.0});
  w.set_requires_grad(true);
  Sgd<double> opt({w}, 0.1);
  CHECK_THROWS_AS(opt.step(), StateError);
}

TEST_CASE("adam converges on a quadratic") {
  TensorD w = TensorD::from({3}, {2.0, -3.0, 1.5});
  w.set_requires_grad(true);
  Adam<double> opt({w}, 0.05);
  for (int i = 0; i < 400; ++i) {
    opt.zero_grad();
    TensorD loss = ops::sum_all(ops::mul(w, w));
    loss.backward();
    opt.step();
  }
  for (int64_t i = 0; i < 3; ++i) CHECK(std::abs(w.data()[i]) < 1e-2);
}
