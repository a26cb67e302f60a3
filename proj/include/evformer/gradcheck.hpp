#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "evformer/tensor.hpp"

namespace evf {

struct GradCheckReport {
  bool pass = true;
  double max_abs_diff = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::string where;
};

// Central-difference check: `build_loss` must rebuild the graph from the
// current leaf values and return a scalar. Passes when every coordinate
// satisfies |analytic - numeric| <= atol + rtol * |numeric|.
template <typename T>
GradCheckReport gradcheck(const std::function<Tensor<T>()>& build_loss,
                          std::vector<Tensor<T>> leaves, T h, T atol, T rtol) {
  for (Tensor<T>& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  Tensor<T> loss = build_loss();
  loss.backward();
  std::vector<std::vector<T>> analytic;
  analytic.reserve(leaves.size());
  for (Tensor<T>& leaf : leaves) analytic.push_back(leaf.grad());

  GradCheckReport report;
  NoGradGuard no_grad;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor<T>& leaf = leaves[li];
    for (int64_t i = 0; i < leaf.numel(); ++i) {
      const T saved = leaf.data()[i];
      leaf.data()[i] = saved + h;
      const T up = build_loss().item();
      leaf.data()[i] = saved - h;
      const T down = build_loss().item();
      leaf.data()[i] = saved;
      const T numeric = (up - down) / (T(2) * h);
      const T a = analytic[li][size_t(i)];
      const double diff = std::abs(double(a - numeric));
      if (diff > report.max_abs_diff) {
        report.max_abs_diff = diff;
        report.worst_analytic = double(a);
        report.worst_numeric = double(numeric);
        report.where = "leaf " + std::to_string(li) + " [" + std::to_string(i) + "]";
      }
      if (diff > double(atol) + double(rtol) * std::abs(double(numeric))) {
        report.pass = false;
      }
    }
  }
  return report;
}

}  // namespace evf
