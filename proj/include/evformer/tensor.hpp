#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace evf {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // sized lazily, same length as values
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  std::function<void(TensorNode<T>&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T(0));
  }
  // A node participates in backprop if it is a tracked leaf or an op result.
  bool tracked() const { return requires_grad || backward_fn != nullptr; }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : n_(std::make_shared<TensorNode<T>>()) {
    const int64_t count = shape_numel(shape);
    if (count < 0) throw std::invalid_argument("negative dimension in " + shape_str(shape));
    n_->shape = std::move(shape);
    n_->values.assign(size_t(count), fill);
  }

  static Tensor from(Shape shape, std::vector<T> values) {
    Tensor t;
    t.n_ = std::make_shared<TensorNode<T>>();
    if (int64_t(values.size()) != shape_numel(shape)) {
      throw std::invalid_argument("value count " + std::to_string(values.size()) +
                                  " does not fill shape " + shape_str(shape));
    }
    t.n_->shape = std::move(shape);
    t.n_->values = std::move(values);
    return t;
  }

  static Tensor scalar(T v) { return from({}, {v}); }

  bool defined() const { return bool(n_); }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return int(n_->shape.size()); }
  int64_t dim(int i) const { return n_->shape[size_t(i)]; }
  int64_t numel() const { return int64_t(n_->values.size()); }

  std::vector<T>& values() { return n_->values; }
  const std::vector<T>& values() const { return n_->values; }
  T* data() { return n_->values.data(); }
  const T* data() const { return n_->values.data(); }
  T item() const {
    if (numel() != 1) throw std::invalid_argument("item() needs a one-element tensor");
    return n_->values[0];
  }

  bool requires_grad() const { return n_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    n_->requires_grad = v;
    return *this;
  }

  std::vector<T>& grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  const std::vector<T>& grad() const {
    n_->ensure_grad();
    return n_->grad;
  }
  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
  }

  // Reverse-mode sweep from a scalar. Grads accumulate into every tracked
  // leaf reachable from this node; repeated calls keep accumulating.
  void backward() {
    if (!n_ || numel() != 1) {
      throw std::invalid_argument("backward() needs a scalar, got " +
                                  (n_ ? shape_str(n_->shape) : std::string("undefined")));
    }
    std::vector<TensorNode<T>*> order;
    topo_sort(order);
    // op results get fresh grads every sweep; only leaves accumulate across
    // backward calls
    for (TensorNode<T>* node : order) {
      if (node->backward_fn) node->grad.assign(node->values.size(), T(0));
    }
    n_->ensure_grad();
    n_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorNode<T>* node = *it;
      if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
  }

  Tensor detach() const {
    Tensor t;
    t.n_ = std::make_shared<TensorNode<T>>();
    t.n_->shape = n_->shape;
    t.n_->values = n_->values;
    return t;
  }

  std::shared_ptr<TensorNode<T>>& node() { return n_; }
  const std::shared_ptr<TensorNode<T>>& node() const { return n_; }

 private:
  std::shared_ptr<TensorNode<T>> n_;

  void topo_sort(std::vector<TensorNode<T>*>& order) const {
    std::unordered_set<TensorNode<T>*> seen;
    struct Frame {
      TensorNode<T>* node;
      size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({n_.get(), 0});
    seen.insert(n_.get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.node->parents.size()) {
        TensorNode<T>* p = f.node->parents[f.next_parent++].get();
        if (p && seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Builds an op result. The backward closure reads out.grad and accumulates
// into the parents it finds in out.parents; it is dropped entirely when grad
// recording is off or no input is tracked, so inference builds no graph.
template <typename T>
Tensor<T> make_op_result(Shape shape, std::vector<T> values,
                         std::vector<Tensor<T>> parents,
                         std::function<void(TensorNode<T>&)> backward) {
  Tensor<T> out = Tensor<T>::from(std::move(shape), std::move(values));
  bool track = grad_mode_flag();
  if (track) {
    track = false;
    for (const Tensor<T>& p : parents) {
      if (p.defined() && p.node()->tracked()) {
        track = true;
        break;
      }
    }
  }
  if (track) {
    for (Tensor<T>& p : parents) {
      if (p.defined()) out.node()->parents.push_back(p.node());
    }
    out.node()->backward_fn = std::move(backward);
  }
  return out;
}

template <typename T>
bool wants_grad(const std::shared_ptr<TensorNode<T>>& node) {
  return node && node->tracked();
}

}  // namespace evf
