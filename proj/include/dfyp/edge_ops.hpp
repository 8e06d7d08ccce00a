#pragma once

#include <map>
#include <optional>
#include <string>

#include "dfyp/ops.hpp"

namespace dfyp {
namespace edge {

constexpr double kEdgeEps = 1e-12;  // keeps sqrt differentiable at zero gradient

// A pair of 2-D stencils (x-direction, y-direction) defining one operator.
// Roberts is stored zero-padded to the 3x3 canonical extent.
struct KernelPair {
  std::string id;
  int k = 3;
  std::vector<double> kx, ky;  // row-major k*k
  bool trainable = false;
};

// Gaussian smooth -> Sobel -> non-maximum suppression -> hysteresis.
// Thresholds are fractions of the maximum gradient magnitude.
struct PipelineOperator {
  double sigma = 1.0;
  double low = 0.1;
  double high = 0.3;
};

struct ClassicalOperator {
  enum class Kind { Pair, DirectionalMax, Canny };
  std::string id;
  Kind kind = Kind::Pair;
  KernelPair pair;
  std::vector<std::vector<double>> directions;  // Kirsch: 8 stencils, 3x3 each
  PipelineOperator canny;
};

inline KernelPair sobel_pair() {
  return {"sobel", 3,
          {-1, 0, 1, -2, 0, 2, -1, 0, 1},
          {-1, -2, -1, 0, 0, 0, 1, 2, 1},
          false};
}

inline KernelPair scharr_pair() {
  return {"scharr", 3,
          {-3, 0, 3, -10, 0, 10, -3, 0, 3},
          {-3, -10, -3, 0, 0, 0, 3, 10, 3},
          false};
}

inline KernelPair prewitt_pair() {
  return {"prewitt", 3,
          {-1, 0, 1, -1, 0, 1, -1, 0, 1},
          {-1, -1, -1, 0, 0, 0, 1, 1, 1},
          false};
}

inline KernelPair roberts_pair() {
  return {"roberts", 3,
          {1, 0, 0, 0, -1, 0, 0, 0, 0},
          {0, 1, 0, -1, 0, 0, 0, 0, 0},
          false};
}

inline KernelPair laplacian_pair() {
  // Symmetric stencil; the y direction mirrors x.
  std::vector<double> k{0, 1, 0, 1, -4, 1, 0, 1, 0};
  return {"laplacian", 3, k, k, false};
}

inline KernelPair log_pair() {
  // 5x5 Laplacian-of-Gaussian, sigma ~= 1.
  std::vector<double> k{0, 0,  -1, 0,  0,  //
                        0, -1, -2, -1, 0,  //
                        -1, -2, 16, -2, -1,  //
                        0, -1, -2, -1, 0,  //
                        0, 0,  -1, 0,  0};
  return {"log", 5, k, k, false};
}

inline std::vector<std::vector<double>> kirsch_directions() {
  return {
      {5, 5, 5, -3, 0, -3, -3, -3, -3},   // N
      {5, 5, -3, 5, 0, -3, -3, -3, -3},   // NW
      {5, -3, -3, 5, 0, -3, 5, -3, -3},   // W
      {-3, -3, -3, 5, 0, -3, 5, 5, -3},   // SW
      {-3, -3, -3, -3, 0, -3, 5, 5, 5},   // S
      {-3, -3, -3, -3, 0, 5, -3, 5, 5},   // SE
      {-3, -3, 5, -3, 0, 5, -3, -3, 5},   // E
      {-3, 5, 5, -3, 0, 5, -3, -3, -3},   // NE
  };
}

// The eight classical operators of the fixed-operator benchmark.
inline std::map<std::string, ClassicalOperator> classical_kernels() {
  std::map<std::string, ClassicalOperator> out;
  for (const auto& kp : {sobel_pair(), scharr_pair(), prewitt_pair(), roberts_pair(),
                         laplacian_pair(), log_pair()}) {
    ClassicalOperator op;
    op.id = kp.id;
    op.kind = ClassicalOperator::Kind::Pair;
    op.pair = kp;
    out[kp.id] = op;
  }
  {
    ClassicalOperator kirsch;
    kirsch.id = "kirsch";
    kirsch.kind = ClassicalOperator::Kind::DirectionalMax;
    kirsch.directions = kirsch_directions();
    out["kirsch"] = kirsch;
  }
  {
    ClassicalOperator canny;
    canny.id = "canny";
    canny.kind = ClassicalOperator::Kind::Canny;
    out["canny"] = canny;
  }
  return out;
}

template <class T>
Tensor<T> stencil_tensor(const std::vector<double>& v, int k) {
  auto t = Tensor<T>::zeros({k, k});
  for (int i = 0; i < k * k; ++i) t.data()[i] = static_cast<T>(v[i]);
  return t;
}

// lambda = sigmoid(raw_lambda), strictly inside (0,1). Endpoints are reached
// only by pinning (test/benchmark hook), which short-circuits the blend.
template <class T>
struct LearnableKernel {
  Tensor<T> raw_lambda;
  std::optional<double> pinned;

  LearnableKernel() : raw_lambda(Tensor<T>::scalar(0)) { raw_lambda.set_requires_grad(true); }

  double lambda_value() const {
    if (pinned) return *pinned;
    return 1.0 / (1.0 + std::exp(-static_cast<double>(raw_lambda.item())));
  }

  // K(lambda) = lambda*K_Sobel + (1-lambda)*K_Scharr, per direction.
  std::pair<Tensor<T>, Tensor<T>> kernels() const {
    const auto sob = sobel_pair();
    const auto sch = scharr_pair();
    if (pinned && (*pinned == 0.0 || *pinned == 1.0)) {
      const auto& kp = *pinned == 1.0 ? sob : sch;
      return {stencil_tensor<T>(kp.kx, 3), stencil_tensor<T>(kp.ky, 3)};
    }
    Tensor<T> lam = pinned ? Tensor<T>::scalar(static_cast<T>(*pinned))
                           : ops::sigmoid(raw_lambda);
    Tensor<T> one_minus = ops::add_const(ops::scale(lam, T(-1)), T(1));
    auto blend = [&](const std::vector<double>& a, const std::vector<double>& b) {
      return ops::add(ops::mul_scalar(stencil_tensor<T>(a, 3), lam),
                      ops::mul_scalar(stencil_tensor<T>(b, 3), one_minus));
    };
    return {blend(sob.kx, sch.kx), blend(sob.ky, sch.ky)};
  }
};

// Depthwise (per-channel) stencil pair with reflect padding; gradient
// magnitude sqrt(Gx^2 + Gy^2 + eps). Differentiable in x and the kernels.
template <class T>
Tensor<T> apply_pair(Tensor<T> x, Tensor<T> kx, Tensor<T> ky) {
  using namespace ops;
  const bool batched = x.rank() == 4;
  Tensor<T> x4 = batched ? x : reshape(x, {1, x.extent(0), x.extent(1), x.extent(2)});
  const int pad = kx.extent(0) / 2;
  auto xp = pad_reflect2d(x4, pad);
  auto gx = depthwise_shared_conv(xp, kx);
  auto gy = depthwise_shared_conv(xp, ky);
  auto g = sqrt_eps(add(mul(gx, gx), mul(gy, gy)), static_cast<T>(kEdgeEps));
  return batched ? g : reshape(g, x.shape());
}

template <class T>
Tensor<T> apply_kirsch(Tensor<T> x) {
  using namespace ops;
  const bool batched = x.rank() == 4;
  Tensor<T> x4 = batched ? x : reshape(x, {1, x.extent(0), x.extent(1), x.extent(2)});
  auto xp = pad_reflect2d(x4, 1);
  Tensor<T> best;
  for (const auto& d : kirsch_directions()) {
    auto r = depthwise_shared_conv(xp, stencil_tensor<T>(d, 3));
    best = best.valid() ? max_elemwise(best, r) : r;
  }
  return batched ? best : reshape(best, x.shape());
}

// Non-differentiable single-channel Canny; returns a binary {0,1} map.
template <class T>
Tensor<T> canny(const Tensor<T>& x, const PipelineOperator& p) {
  if (x.rank() != 2) throw ShapeError("canny: input must be a single-channel [H,W] image");
  const int h = x.extent(0), w = x.extent(1);
  if (h < 5 || w < 5) throw ShapeError("canny: image must be at least 5x5");
  if (p.low >= p.high) throw ParamError("canny: low threshold must be below high");
  for (const T& v : x.vec())
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("canny: non-finite input");

  auto mirror = [](int i, int lim) {
    if (i < 0) return -i;
    if (i >= lim) return 2 * lim - 2 - i;
    return i;
  };

  // Gaussian smoothing (separable).
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * p.sigma)));
  std::vector<double> gk(2 * r + 1);
  double norm = 0;
  for (int i = -r; i <= r; ++i) {
    gk[i + r] = std::exp(-0.5 * i * i / (p.sigma * p.sigma));
    norm += gk[i + r];
  }
  for (auto& v : gk) v /= norm;
  std::vector<double> tmp(static_cast<std::size_t>(h) * w), sm(tmp.size());
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double s = 0;
      for (int d = -r; d <= r; ++d) s += gk[d + r] * x.at(i, mirror(j + d, w));
      tmp[static_cast<std::size_t>(i) * w + j] = s;
    }
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double s = 0;
      for (int d = -r; d <= r; ++d) s += gk[d + r] * tmp[static_cast<std::size_t>(mirror(i + d, h)) * w + j];
      sm[static_cast<std::size_t>(i) * w + j] = s;
    }

  // Sobel gradients with reflect borders.
  const auto sob = sobel_pair();
  std::vector<double> mag(sm.size()), ang(sm.size());
  double max_mag = 0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double gx = 0, gy = 0;
      for (int u = 0; u < 3; ++u)
        for (int v = 0; v < 3; ++v) {
          const double pix = sm[static_cast<std::size_t>(mirror(i + u - 1, h)) * w +
                                mirror(j + v - 1, w)];
          gx += sob.kx[u * 3 + v] * pix;
          gy += sob.ky[u * 3 + v] * pix;
        }
      const std::size_t k = static_cast<std::size_t>(i) * w + j;
      mag[k] = std::hypot(gx, gy);
      ang[k] = std::atan2(gy, gx);
      max_mag = std::max(max_mag, mag[k]);
    }
  // Rounding residue on flat images leaves max_mag at ~1e-16; treat gradient
  // peaks far below the image scale as no edge at all.
  double peak = 0;
  for (double v : sm) peak = std::max(peak, std::abs(v));
  if (max_mag <= 1e-10 * std::max(peak, 1e-30)) return Tensor<T>::zeros({h, w});

  // Non-maximum suppression over 4 quantized directions.
  std::vector<double> nms(sm.size(), 0.0);
  for (int i = 1; i < h - 1; ++i)
    for (int j = 1; j < w - 1; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * w + j;
      double a = ang[k] * 180.0 / M_PI;
      if (a < 0) a += 180.0;
      double n1, n2;
      if (a < 22.5 || a >= 157.5) {
        n1 = mag[k - 1];
        n2 = mag[k + 1];
      } else if (a < 67.5) {
        n1 = mag[k - w + 1];
        n2 = mag[k + w - 1];
      } else if (a < 112.5) {
        n1 = mag[k - w];
        n2 = mag[k + w];
      } else {
        n1 = mag[k - w - 1];
        n2 = mag[k + w + 1];
      }
      if (mag[k] >= n1 && mag[k] >= n2) nms[k] = mag[k];
    }

  // Double threshold + hysteresis (thresholds relative to the peak).
  const double lo = p.low * max_mag, hi = p.high * max_mag;
  auto out = Tensor<T>::zeros({h, w});
  std::vector<std::size_t> stack;
  std::vector<char> weak(sm.size(), 0);
  for (std::size_t k = 0; k < nms.size(); ++k) {
    if (nms[k] >= hi) {
      out.data()[k] = T(1);
      stack.push_back(k);
    } else if (nms[k] >= lo) {
      weak[k] = 1;
    }
  }
  while (!stack.empty()) {
    const std::size_t k = stack.back();
    stack.pop_back();
    const int i = static_cast<int>(k) / w, j = static_cast<int>(k) % w;
    for (int di = -1; di <= 1; ++di)
      for (int dj = -1; dj <= 1; ++dj) {
        const int y = i + di, xx = j + dj;
        if (y < 0 || y >= h || xx < 0 || xx >= w) continue;
        const std::size_t nk = static_cast<std::size_t>(y) * w + xx;
        if (weak[nk] && out.data()[nk] == T(0)) {
          out.data()[nk] = T(1);
          stack.push_back(nk);
        }
      }
  }
  return out;
}

// Applies a fixed classical operator. Canny output is a constant (detached)
// binary map; everything else is differentiable in x.
template <class T>
Tensor<T> apply_classical(Tensor<T> x, const ClassicalOperator& op) {
  for (const T& v : x.vec())
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError("apply_operator: non-finite input");
  switch (op.kind) {
    case ClassicalOperator::Kind::Pair:
      return apply_pair(x, stencil_tensor<T>(op.pair.kx, op.pair.k),
                        stencil_tensor<T>(op.pair.ky, op.pair.k));
    case ClassicalOperator::Kind::DirectionalMax:
      return apply_kirsch(x);
    case ClassicalOperator::Kind::Canny: {
      const bool batched = x.rank() == 4;
      const int n = batched ? x.extent(0) : 1;
      const int c = batched ? x.extent(1) : x.extent(0);
      const int h = batched ? x.extent(2) : x.extent(1);
      const int w = batched ? x.extent(3) : x.extent(2);
      auto out = Tensor<T>::zeros(x.shape());
      for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
          auto plane = Tensor<T>::zeros({h, w});
          const std::size_t base = (static_cast<std::size_t>(b) * c + ch) *
                                   static_cast<std::size_t>(h) * w;
          std::copy(x.data() + base, x.data() + base + static_cast<std::size_t>(h) * w,
                    plane.data());
          auto e = canny(plane, op.canny);
          std::copy(e.data(), e.data() + e.size(), out.data() + base);
        }
      return out;
    }
  }
  throw ParamError("apply_operator: unknown operator kind");
}

// ---------------------------------------------------------------------------
// Operator selection gate
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& aol_pool() {
  static const std::vector<std::string> pool{"sobel", "scharr", "learnable"};
  return pool;
}

// Per-operator validation-score history and hard selection. One time step =
// one training epoch; scores are -validation RMSE (higher is better).
class OperatorGateState {
 public:
  OperatorGateState() {
    for (const auto& id : aol_pool()) history_[id] = {};
  }

  void update(const std::string& op_id, double epoch_score) {
    auto it = history_.find(op_id);
    if (it == history_.end()) throw ParamError("gate: unknown operator '" + op_id + "'");
    it->second.push_back(epoch_score);
  }

  double mean_score(const std::string& op_id) const {
    const auto& h = history_.at(op_id);
    if (h.empty()) return 0.0;
    double s = 0;
    for (double v : h) s += v;
    return s / static_cast<double>(h.size());
  }

  bool has_history(const std::string& op_id) const { return !history_.at(op_id).empty(); }

  // Warm-up epochs 0,1,2 take Sobel, Scharr, Learnable in that order; then
  // argmax of the running means with tie priority Learnable > Sobel > Scharr.
  std::string select(int epoch) {
    std::string chosen;
    if (epoch < 3) {
      chosen = aol_pool()[epoch];
    } else {
      static const std::vector<std::string> priority{"learnable", "sobel", "scharr"};
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& id : priority) {
        const double s = mean_score(id);
        if (s > best) {
          best = s;
          chosen = id;
        }
      }
    }
    selection_log_.emplace_back(epoch, chosen);
    return chosen;
  }

  const std::vector<std::pair<int, std::string>>& selection_log() const {
    return selection_log_;
  }
  const std::vector<double>& scores(const std::string& op_id) const {
    return history_.at(op_id);
  }

 private:
  std::map<std::string, std::vector<double>> history_;
  std::vector<std::pair<int, std::string>> selection_log_;
};

}  // namespace edge
}  // namespace dfyp
