#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <utility>

#include "dfyp/common.hpp"

namespace dfyp {

// Reverse-mode tape over an eagerly executed op graph. Tensors are cheap
// handles onto shared storage; copies alias. Float for training, double for
// the verification suites.
template <class T>
class Tensor {
 public:
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated iff requires_grad
    bool requires_grad = false;
  };

  Tensor() = default;

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.st_ = std::make_shared<Storage>();
    t.st_->shape = std::move(shape);
    t.st_->data.assign(numel(t.st_->shape), T(0));
    return t;
  }

  static Tensor full(Shape shape, T v) {
    Tensor t = zeros(std::move(shape));
    for (auto& x : t.st_->data) x = v;
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values) {
    if (numel(shape) != values.size())
      throw ShapeError("from: " + shape_str(shape) + " holds " +
                       std::to_string(numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    Tensor t;
    t.st_ = std::make_shared<Storage>();
    t.st_->shape = std::move(shape);
    t.st_->data = std::move(values);
    return t;
  }

  static Tensor scalar(T v) { return from({1}, {v}); }

  bool valid() const { return static_cast<bool>(st_); }
  const Shape& shape() const { return st_->shape; }
  std::size_t size() const { return st_->data.size(); }
  int extent(int axis) const { return st_->shape[axis]; }
  int rank() const { return static_cast<int>(st_->shape.size()); }

  T* data() { return st_->data.data(); }
  const T* data() const { return st_->data.data(); }
  std::vector<T>& vec() { return st_->data; }
  const std::vector<T>& vec() const { return st_->data; }

  bool requires_grad() const { return st_ && st_->requires_grad; }
  void set_requires_grad(bool rg) {
    st_->requires_grad = rg;
    if (rg && st_->grad.size() != st_->data.size())
      st_->grad.assign(st_->data.size(), T(0));
  }
  std::vector<T>& grad() { return st_->grad; }
  const std::vector<T>& grad() const { return st_->grad; }
  void zero_grad() {
    for (auto& g : st_->grad) g = T(0);
  }

  T item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
    return st_->data[0];
  }

  // Row-major element access, used mostly by tests and oracles.
  T& at(int i) { return st_->data[static_cast<std::size_t>(i)]; }
  T at(int i) const { return st_->data[static_cast<std::size_t>(i)]; }
  T& at(int i, int j) { return st_->data[idx2(i, j)]; }
  T at(int i, int j) const { return st_->data[idx2(i, j)]; }
  T& at(int i, int j, int k) { return st_->data[idx3(i, j, k)]; }
  T at(int i, int j, int k) const { return st_->data[idx3(i, j, k)]; }
  T& at(int i, int j, int k, int l) { return st_->data[idx4(i, j, k, l)]; }
  T at(int i, int j, int k, int l) const { return st_->data[idx4(i, j, k, l)]; }

  std::shared_ptr<Storage> storage() const { return st_; }

  Tensor clone() const {
    Tensor t = from(st_->shape, st_->data);
    return t;
  }

 private:
  std::size_t idx2(int i, int j) const {
    return static_cast<std::size_t>(i) * st_->shape[1] + j;
  }
  std::size_t idx3(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * st_->shape[1] + j) * st_->shape[2] + k;
  }
  std::size_t idx4(int i, int j, int k, int l) const {
    return ((static_cast<std::size_t>(i) * st_->shape[1] + j) * st_->shape[2] + k) *
               st_->shape[3] +
           l;
  }

  std::shared_ptr<Storage> st_;
};

template <class T>
class Tape {
 public:
  struct Node {
    std::shared_ptr<typename Tensor<T>::Storage> out;
    std::function<void()> backward;
  };

  void record(const Tensor<T>& out, std::function<void()> backward) {
    nodes_.push_back(Node{out.storage(), std::move(backward)});
  }

  std::size_t node_count() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Seeds d(loss)/d(loss)=1 and replays the tape in reverse. Grads of
  // intermediate (tape-produced) tensors are reset each call; leaf grads
  // accumulate across calls.
  void backward(Tensor<T>& loss) {
    if (loss.size() != 1) throw Error("contract error: backward needs a scalar loss");
    if (!loss.requires_grad())
      throw Error("contract error: loss does not participate in the tape");
    for (auto& n : nodes_)
      for (auto& g : n.out->grad) g = T(0);
    loss.grad()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
  }

 private:
  std::vector<Node> nodes_;
};

template <class T>
inline Tape<T>*& active_tape() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}

// RAII scope binding a tape; ops record onto the innermost active tape.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(active_tape<T>()) { active_tape<T>() = &tape; }
  ~TapeScope() { active_tape<T>() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

}  // namespace dfyp
