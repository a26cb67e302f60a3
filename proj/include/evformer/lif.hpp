#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "evformer/kernels.hpp"
#include "evformer/tensor.hpp"

namespace evf {

struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

template <typename T>
struct LifParams {
  T tau = T(2);
  T v_threshold = T(1);
  T v_reset = T(0);
  T surrogate_alpha = T(2);

  void validate() const {
    if (!(tau > T(1))) throw std::invalid_argument("lif: tau must be > 1");
    if (!(surrogate_alpha > T(0))) throw std::invalid_argument("lif: alpha must be > 0");
  }
};

// kHard is the production neuron: binary spikes, hard reset, arctan
// surrogate on the backward pass only. kRelaxed replaces the step with the
// surrogate's smooth primitive and makes the reset differentiable, so the
// whole layer is C^1 and finite differences are meaningful.
enum class LifMode { kHard, kRelaxed };

namespace lif_detail {

// d/du of the smooth step: alpha / (2 * (1 + (pi*alpha*u/2)^2)).
template <typename T>
T surrogate_grad(T u, T alpha) {
  const T z = T(M_PI_2) * alpha * u;
  return alpha / (T(2) * (T(1) + z * z));
}

template <typename T>
T smooth_step(T u, T alpha) {
  return T(0.5) + std::atan(T(M_PI_2) * alpha * u) / T(M_PI);
}

}  // namespace lif_detail

// One LIF sweep over the leading (time) axis of x. The membrane potential
// starts from `v0` (length = numel/time), and `v_final` receives the
// detached end state. Charging: H[t] = V[t-1]*(1 - 1/tau) + X[t]/tau
// + v_reset/tau; spike when H >= v_threshold; reset to v_reset.
template <typename T>
Tensor<T> lif_sweep(const Tensor<T>& x, const LifParams<T>& params, LifMode mode,
                    const std::vector<T>& v0, std::vector<T>* v_final) {
  params.validate();
  if (x.rank() < 1) throw std::invalid_argument("lif: input needs a time axis");
  const int64_t steps = x.dim(0);
  const int64_t width = steps ? x.numel() / steps : 0;
  if (int64_t(v0.size()) != width) {
    throw StateError("lif: state has " + std::to_string(v0.size()) + " cells, input row has " +
                     std::to_string(width));
  }
  const T decay = T(1) - T(1) / params.tau;
  const T input_scale = T(1) / params.tau;
  const T charge_bias = params.v_reset * input_scale;

  std::vector<T> s(size_t(x.numel()));
  auto h = std::make_shared<std::vector<T>>(size_t(x.numel()));
  std::vector<T> v = v0;
  if (mode == LifMode::kHard) {
    std::vector<T> v_next(static_cast<size_t>(width));
    for (int64_t t = 0; t < steps; ++t) {
      kern::Dispatch<T>::lif_step(v.data(), x.data() + t * width, v_next.data(),
                                  s.data() + t * width, h->data() + t * width, size_t(width),
                                  decay, input_scale, charge_bias, params.v_threshold,
                                  params.v_reset);
      std::swap(v, v_next);
    }
  } else {
    for (int64_t t = 0; t < steps; ++t) {
      const T* xt = x.data() + t * width;
      T* st = s.data() + t * width;
      T* ht = h->data() + t * width;
      for (int64_t i = 0; i < width; ++i) {
        const T hv = v[size_t(i)] * decay + xt[i] * input_scale + charge_bias;
        const T sv = lif_detail::smooth_step(hv - params.v_threshold, params.surrogate_alpha);
        ht[i] = hv;
        st[i] = sv;
        v[size_t(i)] = hv * (T(1) - sv) + params.v_reset * sv;
      }
    }
  }
  if (v_final) *v_final = std::move(v);

  const T v_th = params.v_threshold;
  const T v_reset = params.v_reset;
  const T alpha = params.surrogate_alpha;
  const bool relaxed = mode == LifMode::kRelaxed;
  // Reverse recurrence over time. gv carries dL/dV[t]; the reset path is
  // detached in hard mode and differentiated in relaxed mode.
  auto backward = [steps, width, h, decay, input_scale, v_th, v_reset, alpha,
                   relaxed](TensorNode<T>& self) {
    auto& px = self.parents[0];
    if (!wants_grad(px)) return;
    px->ensure_grad();
    std::vector<T> gv(size_t(width), T(0));
    for (int64_t t = steps - 1; t >= 0; --t) {
      const T* ht = h->data() + t * width;
      const T* st = self.values.data() + t * width;
      const T* gout = self.grad.data() + t * width;
      T* gx = px->grad.data() + t * width;
      for (int64_t i = 0; i < width; ++i) {
        const T u = ht[i] - v_th;
        T gs = gout[i];
        if (relaxed) gs += gv[size_t(i)] * (v_reset - ht[i]);
        T gh = gv[size_t(i)] * (T(1) - st[i]);
        gh += gs * lif_detail::surrogate_grad(u, alpha);
        gx[i] += gh * input_scale;
        gv[size_t(i)] = gh * decay;
      }
    }
  };
  return make_op_result<T>(x.shape(), std::move(s), {x}, std::move(backward));
}

// Stateful wrapper holding the membrane potential between calls. reset()
// must run before the first forward of every sample.
template <typename T>
class LifLayer {
 public:
  LifLayer() = default;
  explicit LifLayer(LifParams<T> params) : params_(params) { params_.validate(); }

  void set_mode(LifMode mode) { mode_ = mode; }
  LifMode mode() const { return mode_; }
  const LifParams<T>& params() const { return params_; }

  void reset() {
    state_.clear();
    initialized_ = true;
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (!initialized_) {
      throw StateError("lif: forward before reset()");
    }
    const int64_t width = x.dim(0) ? x.numel() / x.dim(0) : 0;
    if (state_.empty()) state_.assign(size_t(width), params_.v_reset);
    return lif_sweep(x, params_, mode_, state_, &state_);
  }

  const std::vector<T>& state() const {
    if (!initialized_) throw StateError("lif: state read before reset()");
    return state_;
  }

 private:
  LifParams<T> params_{};
  LifMode mode_ = LifMode::kHard;
  std::vector<T> state_;
  bool initialized_ = false;
};

}  // namespace evf
