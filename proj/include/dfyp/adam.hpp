#pragma once

#include <cmath>
#include <map>

#include "dfyp/tensor.hpp"

namespace dfyp {

// Adam with bias correction. Moment buffers are keyed per parameter storage,
// so the same state object serves the whole parameter group.
template <class T>
class AdamState {
 public:
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(double learning_rate = 1e-4) : lr(learning_rate) {}

  long step_count() const { return step_; }

  void step(std::vector<Tensor<T>>& params) {
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
    for (auto& p : params) {
      auto& slot = slots_[p.storage().get()];
      if (slot.m.size() != p.size()) {
        slot.m.assign(p.size(), 0.0);
        slot.v.assign(p.size(), 0.0);
      }
      const auto& g = p.grad();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * gi;
        slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * gi * gi;
        const double mhat = slot.m[i] / bc1;
        const double vhat = slot.v[i] / bc2;
        p.data()[i] = static_cast<T>(p.data()[i] - lr * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }

 private:
  struct Slot {
    std::vector<double> m, v;
  };
  std::map<const void*, Slot> slots_;
  long step_ = 0;
};

}  // namespace dfyp
