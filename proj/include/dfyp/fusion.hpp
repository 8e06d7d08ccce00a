#pragma once

#include <optional>

#include "dfyp/ops.hpp"

namespace dfyp {
namespace fusion {

// alpha = sigmoid(a_raw), beta = sigmoid(b_raw); independent, no normalization
// tying them. Pinning is a test/benchmark hook bypassing the sigmoid.
template <class T>
struct FusionParams {
  Tensor<T> a_raw, b_raw;
  std::optional<double> pinned_alpha, pinned_beta;

  FusionParams() : a_raw(Tensor<T>::scalar(0)), b_raw(Tensor<T>::scalar(0)) {
    a_raw.set_requires_grad(true);
    b_raw.set_requires_grad(true);
  }

  Tensor<T> alpha() const {
    if (pinned_alpha) return Tensor<T>::scalar(static_cast<T>(*pinned_alpha));
    return ops::sigmoid(a_raw);
  }
  Tensor<T> beta() const {
    if (pinned_beta) return Tensor<T>::scalar(static_cast<T>(*pinned_beta));
    return ops::sigmoid(b_raw);
  }

  std::vector<Tensor<T>> parameters() { return {a_raw, b_raw}; }
};

// y = alpha*y1 + beta*y2; y1, y2 may be scalars or same-shaped vectors.
template <class T>
Tensor<T> fuse(Tensor<T> y1, Tensor<T> y2, const FusionParams<T>& p) {
  if (!same_shape(y1.shape(), y2.shape()))
    throw ShapeError("fuse: " + shape_str(y1.shape()) + " vs " + shape_str(y2.shape()));
  return ops::add(ops::mul_scalar(y1, p.alpha()), ops::mul_scalar(y2, p.beta()));
}

// L = (1/N) sum (pred - target)^2.
template <class T>
Tensor<T> mse_loss(Tensor<T> preds, Tensor<T> targets) {
  if (!same_shape(preds.shape(), targets.shape()))
    throw ShapeError("mse_loss: " + shape_str(preds.shape()) + " vs " +
                     shape_str(targets.shape()));
  if (preds.size() == 0) throw ParamError("mse_loss: empty prediction vector");
  auto r = ops::sub(preds, targets);
  return ops::mean_all(ops::mul(r, r));
}

struct MetricsReport {
  double rmse = 0;
  double mae = 0;
  double r2 = 0;          // meaningless when !r2_defined
  bool r2_defined = true; // false when target variance is zero
  int n = 0;
};

// rmse = sqrt(mean squared residual), mae = mean |residual|,
// r2 = 1 - SS_res/SS_tot about the target mean. Plain double accumulation.
inline MetricsReport metrics(const std::vector<double>& preds,
                             const std::vector<double>& targets) {
  if (preds.size() != targets.size())
    throw ParamError("metrics: prediction/target length mismatch");
  const int n = static_cast<int>(preds.size());
  if (n < 2) throw ParamError("metrics: need at least 2 samples for R^2");
  double ss_res = 0, abs_sum = 0, t_mean = 0;
  for (int i = 0; i < n; ++i) t_mean += targets[i];
  t_mean /= n;
  double ss_tot = 0;
  for (int i = 0; i < n; ++i) {
    const double r = preds[i] - targets[i];
    ss_res += r * r;
    abs_sum += std::abs(r);
    ss_tot += (targets[i] - t_mean) * (targets[i] - t_mean);
  }
  MetricsReport m;
  m.n = n;
  m.rmse = std::sqrt(ss_res / n);
  m.mae = abs_sum / n;
  if (ss_tot == 0.0) {
    m.r2_defined = false;
    m.r2 = std::numeric_limits<double>::quiet_NaN();
  } else {
    m.r2 = 1.0 - ss_res / ss_tot;
  }
  return m;
}

}  // namespace fusion
}  // namespace dfyp
