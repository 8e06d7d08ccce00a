#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "dfyp/tensor.hpp"

namespace dfyp {
namespace ops {

template <class T>
inline void check_finite(const Tensor<T>& t, const char* op) {
  for (const T& v : t.vec())
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError(std::string(op) + " produced a non-finite value");
}

template <class T>
inline bool needs_grad(std::initializer_list<const Tensor<T>*> ins) {
  if (!active_tape<T>()) return false;
  for (auto* p : ins)
    if (p->requires_grad()) return true;
  return false;
}

template <class T>
inline void record(Tensor<T>& out, std::function<void()> fn) {
  out.set_requires_grad(true);
  active_tape<T>()->record(out, std::move(fn));
}

template <class T>
inline void accum(Tensor<T> t, const std::vector<T>& delta) {
  if (!t.requires_grad()) return;
  auto& g = t.grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
  if (!same_shape(a.shape(), b.shape()))
    throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  check_finite(out, "add");
  if (needs_grad<T>({&a, &b})) {
    record(out, [a, b, out]() mutable {
      const auto& go = out.grad();
      if (a.requires_grad())
        for (std::size_t i = 0; i < go.size(); ++i) a.grad()[i] += go[i];
      if (b.requires_grad())
        for (std::size_t i = 0; i < go.size(); ++i) b.grad()[i] += go[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> sub(Tensor<T> a, Tensor<T> b) {
  if (!same_shape(a.shape(), b.shape()))
    throw ShapeError("sub: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  check_finite(out, "sub");
  if (needs_grad<T>({&a, &b})) {
    record(out, [a, b, out]() mutable {
      const auto& go = out.grad();
      if (a.requires_grad())
        for (std::size_t i = 0; i < go.size(); ++i) a.grad()[i] += go[i];
      if (b.requires_grad())
        for (std::size_t i = 0; i < go.size(); ++i) b.grad()[i] -= go[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
  if (!same_shape(a.shape(), b.shape()))
    throw ShapeError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  check_finite(out, "mul");
  if (needs_grad<T>({&a, &b})) {
    record(out, [a, b, out]() mutable {
      const auto& go = out.grad();
      if (a.requires_grad())
        for (std::size_t i = 0; i < go.size(); ++i) a.grad()[i] += go[i] * b.data()[i];
      if (b.requires_grad())
        for (std::size_t i = 0; i < go.size(); ++i) b.grad()[i] += go[i] * a.data()[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> scale(Tensor<T> a, T c) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * c;
  check_finite(out, "scale");
  if (needs_grad<T>({&a})) {
    record(out, [a, out, c]() mutable {
      const auto& go = out.grad();
      for (std::size_t i = 0; i < go.size(); ++i) a.grad()[i] += go[i] * c;
    });
  }
  return out;
}

template <class T>
Tensor<T> add_const(Tensor<T> a, T c) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + c;
  check_finite(out, "add_const");
  if (needs_grad<T>({&a})) {
    record(out, [a, out]() mutable {
      const auto& go = out.grad();
      for (std::size_t i = 0; i < go.size(); ++i) a.grad()[i] += go[i];
    });
  }
  return out;
}

// out = x * s where s is a 1-element tensor (learnable scalar broadcast).
template <class T>
Tensor<T> mul_scalar(Tensor<T> x, Tensor<T> s) {
  if (s.size() != 1) throw ShapeError("mul_scalar: s must be a scalar tensor");
  const T sv = s.data()[0];
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = x.data()[i] * sv;
  check_finite(out, "mul_scalar");
  if (needs_grad<T>({&x, &s})) {
    record(out, [x, s, out, sv]() mutable {
      const auto& go = out.grad();
      if (x.requires_grad())
        for (std::size_t i = 0; i < go.size(); ++i) x.grad()[i] += go[i] * sv;
      if (s.requires_grad()) {
        T acc = T(0);
        for (std::size_t i = 0; i < go.size(); ++i) acc += go[i] * x.data()[i];
        s.grad()[0] += acc;
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> relu(Tensor<T> a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
  if (needs_grad<T>({&a})) {
    record(out, [a, out]() mutable {
      const auto& go = out.grad();
      for (std::size_t i = 0; i < go.size(); ++i)
        if (a.data()[i] > T(0)) a.grad()[i] += go[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> sigmoid(Tensor<T> a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = T(1) / (T(1) + std::exp(-a.data()[i]));
  check_finite(out, "sigmoid");
  if (needs_grad<T>({&a})) {
    record(out, [a, out]() mutable {
      const auto& go = out.grad();
      for (std::size_t i = 0; i < go.size(); ++i) {
        const T o = out.data()[i];
        a.grad()[i] += go[i] * o * (T(1) - o);
      }
    });
  }
  return out;
}

// Exact GELU: x * Phi(x) with the Gaussian CDF.
template <class T>
Tensor<T> gelu(Tensor<T> a) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = static_cast<double>(a.data()[i]);
    out.data()[i] = static_cast<T>(x * 0.5 * (1.0 + std::erf(x * kInvSqrt2)));
  }
  check_finite(out, "gelu");
  if (needs_grad<T>({&a})) {
    record(out, [a, out]() mutable {
      constexpr double kInvSqrt2Pi = 0.3989422804014326779;
      const auto& go = out.grad();
      for (std::size_t i = 0; i < go.size(); ++i) {
        const double x = static_cast<double>(a.data()[i]);
        const double phi = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        a.grad()[i] += go[i] * static_cast<T>(phi + x * pdf);
      }
    });
  }
  return out;
}

// sqrt(x + eps); keeps the root differentiable at x = 0.
template <class T>
Tensor<T> sqrt_eps(Tensor<T> a, T eps) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::sqrt(a.data()[i] + eps);
  check_finite(out, "sqrt_eps");
  if (needs_grad<T>({&a})) {
    record(out, [a, out]() mutable {
      const auto& go = out.grad();
      for (std::size_t i = 0; i < go.size(); ++i)
        a.grad()[i] += go[i] * T(0.5) / out.data()[i];
    });
  }
  return out;
}

// Elementwise max; ties route the gradient to the first operand.
template <class T>
Tensor<T> max_elemwise(Tensor<T> a, Tensor<T> b) {
  if (!same_shape(a.shape(), b.shape()))
    throw ShapeError("max_elemwise: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = a.data()[i] >= b.data()[i] ? a.data()[i] : b.data()[i];
  if (needs_grad<T>({&a, &b})) {
    record(out, [a, b, out]() mutable {
      const auto& go = out.grad();
      for (std::size_t i = 0; i < go.size(); ++i) {
        if (a.data()[i] >= b.data()[i]) {
          if (a.requires_grad()) a.grad()[i] += go[i];
        } else if (b.requires_grad()) {
          b.grad()[i] += go[i];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(Tensor<T> a, Tensor<T> b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul needs rank-2 operands");
  const int m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
  if (k != k2)
    throw ShapeError("matmul inner extents " + std::to_string(k) + " vs " + std::to_string(k2));
  Tensor<T> out = Tensor<T>::zeros({m, n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      const T* pbrow = pb + static_cast<std::size_t>(p) * n;
      T* porow = po + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) porow[j] += av * pbrow[j];
    }
  check_finite(out, "matmul");
  if (needs_grad<T>({&a, &b})) {
    record(out, [a, b, out, m, k, n]() mutable {
      const T* go = out.grad().data();
      if (a.requires_grad()) {
        T* ga = a.grad().data();
        const T* pb = b.data();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const T g = go[i * n + j];
            for (int p = 0; p < k; ++p) ga[i * k + p] += g * pb[p * n + j];
          }
      }
      if (b.requires_grad()) {
        T* gb = b.grad().data();
        const T* pa = a.data();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            const T av = pa[i * k + p];
            const T* gorow = go + static_cast<std::size_t>(i) * n;
            T* gbrow = gb + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) gbrow[j] += av * gorow[j];
          }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> transpose(Tensor<T> a) {
  if (a.rank() != 2) throw ShapeError("transpose needs rank-2 input");
  const int m = a.extent(0), n = a.extent(1);
  Tensor<T> out = Tensor<T>::zeros({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  if (needs_grad<T>({&a})) {
    record(out, [a, out, m, n]() mutable {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) a.grad()[i * n + j] += out.grad()[j * m + i];
    });
  }
  return out;
}

// x[..., D] + b[D], broadcast over leading rows.
template <class T>
Tensor<T> add_rowvec(Tensor<T> x, Tensor<T> b) {
  if (b.rank() != 1) throw ShapeError("add_rowvec: bias must be rank-1");
  const int d = b.extent(0);
  if (x.extent(x.rank() - 1) != d)
    throw ShapeError("add_rowvec: trailing extent mismatch");
  const std::size_t rows = x.size() / d;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (int j = 0; j < d; ++j) out.data()[r * d + j] = x.data()[r * d + j] + b.data()[j];
  check_finite(out, "add_rowvec");
  if (needs_grad<T>({&x, &b})) {
    record(out, [x, b, out, rows, d]() mutable {
      const auto& go = out.grad();
      if (x.requires_grad())
        for (std::size_t i = 0; i < go.size(); ++i) x.grad()[i] += go[i];
      if (b.requires_grad())
        for (std::size_t r = 0; r < rows; ++r)
          for (int j = 0; j < d; ++j) b.grad()[j] += go[r * d + j];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape plumbing
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(Tensor<T> a, Shape shape) {
  if (numel(shape) != a.size())
    throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Tensor<T> out = Tensor<T>::from(std::move(shape), a.vec());
  if (needs_grad<T>({&a})) {
    record(out, [a, out]() mutable {
      const auto& go = out.grad();
      for (std::size_t i = 0; i < go.size(); ++i) a.grad()[i] += go[i];
    });
  }
  return out;
}

// out[i] = x[idx[i]]; backward scatter-adds.
template <class T>
Tensor<T> gather(Tensor<T> x, const std::vector<std::size_t>& idx, Shape out_shape) {
  if (numel(out_shape) != idx.size()) throw ShapeError("gather: index/shape mismatch");
  Tensor<T> out = Tensor<T>::zeros(std::move(out_shape));
  for (std::size_t i = 0; i < idx.size(); ++i) out.data()[i] = x.data()[idx[i]];
  if (needs_grad<T>({&x})) {
    record(out, [x, out, idx]() mutable {
      const auto& go = out.grad();
      for (std::size_t i = 0; i < idx.size(); ++i) x.grad()[idx[i]] += go[i];
    });
  }
  return out;
}

// Contiguous slice along axis 0: x[i, ...].
template <class T>
Tensor<T> slice0(Tensor<T> x, int i) {
  if (x.rank() < 2) throw ShapeError("slice0 needs rank >= 2");
  Shape s(x.shape().begin() + 1, x.shape().end());
  const std::size_t len = numel(s);
  const std::size_t off = static_cast<std::size_t>(i) * len;
  Tensor<T> out = Tensor<T>::zeros(s);
  std::copy(x.data() + off, x.data() + off + len, out.data());
  if (needs_grad<T>({&x})) {
    record(out, [x, out, off, len]() mutable {
      const auto& go = out.grad();
      for (std::size_t j = 0; j < len; ++j) x.grad()[off + j] += go[j];
    });
  }
  return out;
}

// Concatenate rank-2 tensors along columns.
template <class T>
Tensor<T> concat_cols(std::vector<Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const int m = parts[0].extent(0);
  int ntot = 0;
  for (auto& p : parts) {
    if (p.rank() != 2 || p.extent(0) != m) throw ShapeError("concat_cols: row mismatch");
    ntot += p.extent(1);
  }
  Tensor<T> out = Tensor<T>::zeros({m, ntot});
  int col = 0;
  for (auto& p : parts) {
    const int n = p.extent(1);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out.at(i, col + j) = p.at(i, j);
    col += n;
  }
  bool rg = false;
  for (auto& p : parts) rg = rg || p.requires_grad();
  if (active_tape<T>() && rg) {
    record(out, [parts, out, m, ntot]() mutable {
      int col = 0;
      for (auto& p : parts) {
        const int n = p.extent(1);
        if (p.requires_grad())
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) p.grad()[i * n + j] += out.grad()[i * ntot + col + j];
        col += n;
      }
    });
  }
  return out;
}

// Concatenate flattened tensors into one vector.
template <class T>
Tensor<T> concat_flat(std::vector<Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_flat: no parts");
  std::size_t total = 0;
  for (auto& p : parts) total += p.size();
  Tensor<T> out = Tensor<T>::zeros({static_cast<int>(total)});
  std::size_t off = 0;
  for (auto& p : parts) {
    std::copy(p.data(), p.data() + p.size(), out.data() + off);
    off += p.size();
  }
  bool rg = false;
  for (auto& p : parts) rg = rg || p.requires_grad();
  if (active_tape<T>() && rg) {
    record(out, [parts, out]() mutable {
      std::size_t off = 0;
      for (auto& p : parts) {
        if (p.requires_grad())
          for (std::size_t j = 0; j < p.size(); ++j) p.grad()[j] += out.grad()[off + j];
        off += p.size();
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and normalization
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum_all(Tensor<T> a) {
  T acc = T(0);
  for (const T& v : a.vec()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  check_finite(out, "sum_all");
  if (needs_grad<T>({&a})) {
    record(out, [a, out]() mutable {
      const T g = out.grad()[0];
      for (auto& gv : a.grad()) gv += g;
    });
  }
  return out;
}

template <class T>
Tensor<T> mean_all(Tensor<T> a) {
  return scale(sum_all(a), T(1) / static_cast<T>(a.size()));
}

// Numerically stable softmax along `axis`.
template <class T>
Tensor<T> softmax(Tensor<T> a, int axis = -1) {
  if (axis < 0) axis += a.rank();
  if (axis < 0 || axis >= a.rank()) throw ShapeError("softmax: bad axis");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.extent(i);
  const int len = a.extent(axis);
  for (int i = axis + 1; i < a.rank(); ++i) inner *= a.extent(i);
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = a.data()[base];
      for (int l = 1; l < len; ++l) mx = std::max(mx, a.data()[base + l * inner]);
      T z = T(0);
      for (int l = 0; l < len; ++l) {
        const T e = std::exp(a.data()[base + l * inner] - mx);
        out.data()[base + l * inner] = e;
        z += e;
      }
      for (int l = 0; l < len; ++l) out.data()[base + l * inner] /= z;
    }
  check_finite(out, "softmax");
  if (needs_grad<T>({&a})) {
    record(out, [a, out, outer, len, inner]() mutable {
      const auto& go = out.grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          T dot = T(0);
          for (int l = 0; l < len; ++l)
            dot += go[base + l * inner] * out.data()[base + l * inner];
          for (int l = 0; l < len; ++l) {
            const std::size_t k = base + l * inner;
            a.grad()[k] += out.data()[k] * (go[k] - dot);
          }
        }
    });
  }
  return out;
}

// Layer normalization over the trailing axis, then affine gain/bias.
template <class T>
Tensor<T> layernorm(Tensor<T> x, Tensor<T> gain, Tensor<T> bias, T eps = T(1e-5)) {
  const int d = x.extent(x.rank() - 1);
  if (gain.size() != static_cast<std::size_t>(d) || bias.size() != static_cast<std::size_t>(d))
    throw ShapeError("layernorm: gain/bias extent mismatch");
  const std::size_t rows = x.size() / d;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  std::vector<T> xhat(x.size()), inv_sigma(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* px = x.data() + r * d;
    T mu = T(0);
    for (int j = 0; j < d; ++j) mu += px[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (int j = 0; j < d; ++j) var += (px[j] - mu) * (px[j] - mu);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_sigma[r] = is;
    for (int j = 0; j < d; ++j) {
      xhat[r * d + j] = (px[j] - mu) * is;
      out.data()[r * d + j] = gain.data()[j] * xhat[r * d + j] + bias.data()[j];
    }
  }
  check_finite(out, "layernorm");
  if (needs_grad<T>({&x, &gain, &bias})) {
    record(out, [x, gain, bias, out, rows, d, xhat, inv_sigma]() mutable {
      const auto& go = out.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * d;
        if (gain.requires_grad())
          for (int j = 0; j < d; ++j) gain.grad()[j] += go[base + j] * xhat[base + j];
        if (bias.requires_grad())
          for (int j = 0; j < d; ++j) bias.grad()[j] += go[base + j];
        if (x.requires_grad()) {
          T m1 = T(0), m2 = T(0);
          for (int j = 0; j < d; ++j) {
            const T gg = go[base + j] * gain.data()[j];
            m1 += gg;
            m2 += gg * xhat[base + j];
          }
          m1 /= static_cast<T>(d);
          m2 /= static_cast<T>(d);
          for (int j = 0; j < d; ++j) {
            const T gg = go[base + j] * gain.data()[j];
            x.grad()[base + j] += inv_sigma[r] * (gg - m1 - xhat[base + j] * m2);
          }
        }
      }
    });
  }
  return out;
}

// Running statistics for batch normalization (plain buffers, no autograd).
template <class T>
struct BatchNormStats {
  std::vector<T> mean, var;
  explicit BatchNormStats(int channels)
      : mean(channels, T(0)), var(channels, T(1)) {}
};

// Input [N,C,H,W] or [N,C]; normalizes per channel over the remaining axes.
template <class T>
Tensor<T> batchnorm(Tensor<T> x, Tensor<T> gamma, Tensor<T> beta, BatchNormStats<T>& stats,
                    bool training, T momentum = T(0.1), T eps = T(1e-5)) {
  if (x.rank() != 2 && x.rank() != 4) throw ShapeError("batchnorm: rank must be 2 or 4");
  const int n = x.extent(0), c = x.extent(1);
  const int hw = x.rank() == 4 ? x.extent(2) * x.extent(3) : 1;
  const std::size_t m = static_cast<std::size_t>(n) * hw;
  if (m < 1) throw ShapeError("batchnorm: empty batch");
  std::vector<T> mu(c), var(c);
  if (training) {
    for (int ch = 0; ch < c; ++ch) {
      T s = T(0);
      for (int b = 0; b < n; ++b) {
        const T* p = x.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
        for (int k = 0; k < hw; ++k) s += p[k];
      }
      mu[ch] = s / static_cast<T>(m);
      T v = T(0);
      for (int b = 0; b < n; ++b) {
        const T* p = x.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
        for (int k = 0; k < hw; ++k) v += (p[k] - mu[ch]) * (p[k] - mu[ch]);
      }
      var[ch] = v / static_cast<T>(m);
      const T unbiased = m > 1 ? v / static_cast<T>(m - 1) : var[ch];
      stats.mean[ch] = (T(1) - momentum) * stats.mean[ch] + momentum * mu[ch];
      stats.var[ch] = (T(1) - momentum) * stats.var[ch] + momentum * unbiased;
    }
  } else {
    mu = stats.mean;
    var = stats.var;
  }
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  std::vector<T> inv_sigma(c);
  for (int ch = 0; ch < c; ++ch) inv_sigma[ch] = T(1) / std::sqrt(var[ch] + eps);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
      for (int k = 0; k < hw; ++k)
        out.data()[base + k] =
            gamma.data()[ch] * (x.data()[base + k] - mu[ch]) * inv_sigma[ch] + beta.data()[ch];
    }
  check_finite(out, "batchnorm");
  if (needs_grad<T>({&x, &gamma, &beta})) {
    record(out, [x, gamma, beta, out, n, c, hw, m, mu, inv_sigma, training]() mutable {
      const auto& go = out.grad();
      for (int ch = 0; ch < c; ++ch) {
        T sum_g = T(0), sum_gx = T(0);
        for (int b = 0; b < n; ++b) {
          const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
          for (int k = 0; k < hw; ++k) {
            const T xh = (x.data()[base + k] - mu[ch]) * inv_sigma[ch];
            sum_g += go[base + k];
            sum_gx += go[base + k] * xh;
          }
        }
        if (gamma.requires_grad()) gamma.grad()[ch] += sum_gx;
        if (beta.requires_grad()) beta.grad()[ch] += sum_g;
        if (x.requires_grad()) {
          const T g = gamma.data()[ch];
          for (int b = 0; b < n; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
            for (int k = 0; k < hw; ++k) {
              const T xh = (x.data()[base + k] - mu[ch]) * inv_sigma[ch];
              if (training) {
                x.grad()[base + k] +=
                    g * inv_sigma[ch] *
                    (go[base + k] - sum_g / static_cast<T>(m) - xh * sum_gx / static_cast<T>(m));
              } else {
                x.grad()[base + k] += g * inv_sigma[ch] * go[base + k];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// Inverted dropout; eval mode returns the input unchanged.
template <class T>
Tensor<T> dropout(Tensor<T> x, double rate, bool training, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ParamError("dropout rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<T> mask(x.size());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& mv : mask) mv = u(rng) < rate ? T(0) : keep_scale;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = x.data()[i] * mask[i];
  if (needs_grad<T>({&x})) {
    record(out, [x, out, mask]() mutable {
      const auto& go = out.grad();
      for (std::size_t i = 0; i < go.size(); ++i) x.grad()[i] += go[i] * mask[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spatial ops
// ---------------------------------------------------------------------------

enum class PoolMode { Max, Avg };

// Global spatial pooling: [C,H,W] -> [C] or [N,C,H,W] -> [N,C].
template <class T>
Tensor<T> pool_global(Tensor<T> x, PoolMode mode) {
  if (x.rank() != 3 && x.rank() != 4) throw ShapeError("pool_global: rank must be 3 or 4");
  const bool batched = x.rank() == 4;
  const int n = batched ? x.extent(0) : 1;
  const int c = batched ? x.extent(1) : x.extent(0);
  const int hw = batched ? x.extent(2) * x.extent(3) : x.extent(1) * x.extent(2);
  if (hw < 1) throw ShapeError("pool_global: empty spatial extent");
  Tensor<T> out = batched ? Tensor<T>::zeros({n, c}) : Tensor<T>::zeros({c});
  std::vector<std::size_t> argmax(mode == PoolMode::Max ? static_cast<std::size_t>(n) * c : 0);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
      if (mode == PoolMode::Max) {
        std::size_t best = base;
        for (int k = 1; k < hw; ++k)
          if (x.data()[base + k] > x.data()[best]) best = base + k;
        argmax[static_cast<std::size_t>(b) * c + ch] = best;
        out.data()[static_cast<std::size_t>(b) * c + ch] = x.data()[best];
      } else {
        T s = T(0);
        for (int k = 0; k < hw; ++k) s += x.data()[base + k];
        out.data()[static_cast<std::size_t>(b) * c + ch] = s / static_cast<T>(hw);
      }
    }
  check_finite(out, "pool_global");
  if (needs_grad<T>({&x})) {
    record(out, [x, out, n, c, hw, mode, argmax]() mutable {
      const auto& go = out.grad();
      for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t oi = static_cast<std::size_t>(b) * c + ch;
          if (mode == PoolMode::Max) {
            x.grad()[argmax[oi]] += go[oi];
          } else {
            const std::size_t base = oi * hw;
            const T g = go[oi] / static_cast<T>(hw);
            for (int k = 0; k < hw; ++k) x.grad()[base + k] += g;
          }
        }
    });
  }
  return out;
}

// Non-overlapping window pooling on [C,H,W]; window clamps to the extent.
// Max backward routes to the first argmax in row-major order.
template <class T>
Tensor<T> pool2d(Tensor<T> x, PoolMode mode, int window) {
  if (x.rank() != 3) throw ShapeError("pool2d: rank must be 3");
  const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
  if (h < 1 || w < 1) throw ShapeError("pool2d: empty spatial extent");
  const int wh = std::min(window, h), ww = std::min(window, w);
  if (wh < 1) throw ParamError("pool2d: window must be positive");
  const int oh = h / wh, ow = w / ww;
  Tensor<T> out = Tensor<T>::zeros({c, oh, ow});
  std::vector<std::size_t> argmax(mode == PoolMode::Max ? out.size() : 0);
  std::size_t oi = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j, ++oi) {
        if (mode == PoolMode::Max) {
          std::size_t best = 0;
          T bv = T(0);
          bool first = true;
          for (int u = 0; u < wh; ++u)
            for (int v = 0; v < ww; ++v) {
              const std::size_t k =
                  (static_cast<std::size_t>(ch) * h + i * wh + u) * w + j * ww + v;
              if (first || x.data()[k] > bv) {
                bv = x.data()[k];
                best = k;
                first = false;
              }
            }
          out.data()[oi] = bv;
          argmax[oi] = best;
        } else {
          T s = T(0);
          for (int u = 0; u < wh; ++u)
            for (int v = 0; v < ww; ++v)
              s += x.data()[(static_cast<std::size_t>(ch) * h + i * wh + u) * w + j * ww + v];
          out.data()[oi] = s / static_cast<T>(wh * ww);
        }
      }
  check_finite(out, "pool2d");
  if (needs_grad<T>({&x})) {
    record(out, [x, out, mode, argmax, c, h, w, oh, ow, wh, ww]() mutable {
      const auto& go = out.grad();
      std::size_t oi = 0;
      for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < oh; ++i)
          for (int j = 0; j < ow; ++j, ++oi) {
            if (mode == PoolMode::Max) {
              x.grad()[argmax[oi]] += go[oi];
            } else {
              const T g = go[oi] / static_cast<T>(wh * ww);
              for (int u = 0; u < wh; ++u)
                for (int v = 0; v < ww; ++v)
                  x.grad()[(static_cast<std::size_t>(ch) * h + i * wh + u) * w + j * ww + v] += g;
            }
          }
    });
  }
  return out;
}

// Cross-correlation (deep-learning convention, no kernel flip) with zero
// padding. x: [C,H,W] or [N,C,H,W]; w: [Cout,Cin,k,k]; b: [Cout].
template <class T>
Tensor<T> conv2d(Tensor<T> x, Tensor<T> w, Tensor<T> b, int stride = 1, int padding = 0) {
  const bool batched = x.rank() == 4;
  if (!batched && x.rank() != 3) throw ShapeError("conv2d: input rank must be 3 or 4");
  if (w.rank() != 4) throw ShapeError("conv2d: weight rank must be 4");
  if (stride < 1) throw ParamError("conv2d: stride must be positive");
  const int n = batched ? x.extent(0) : 1;
  const int cin = batched ? x.extent(1) : x.extent(0);
  const int h = batched ? x.extent(2) : x.extent(1);
  const int wd = batched ? x.extent(3) : x.extent(2);
  const int cout = w.extent(0), kin = w.extent(1), kh = w.extent(2), kw = w.extent(3);
  if (kin != cin) throw ShapeError("conv2d: channel mismatch");
  if (b.size() != static_cast<std::size_t>(cout)) throw ShapeError("conv2d: bias extent");
  if (kh > h + 2 * padding || kw > wd + 2 * padding)
    throw ShapeError("conv2d: kernel larger than padded input");
  const int oh = (h + 2 * padding - kh) / stride + 1;
  const int ow = (wd + 2 * padding - kw) / stride + 1;
  Tensor<T> out = batched ? Tensor<T>::zeros({n, cout, oh, ow})
                          : Tensor<T>::zeros({cout, oh, ow});
  const T* px = x.data();
  const T* pw = w.data();
  T* po = out.data();
  for (int bi = 0; bi < n; ++bi) {
    for (int co = 0; co < cout; ++co) {
      T* pob = po + (static_cast<std::size_t>(bi) * cout + co) * oh * ow;
      for (int k = 0; k < oh * ow; ++k) pob[k] = b.data()[co];
      for (int ci = 0; ci < cin; ++ci) {
        const T* pxc = px + (static_cast<std::size_t>(bi) * cin + ci) * h * wd;
        for (int u = 0; u < kh; ++u)
          for (int v = 0; v < kw; ++v) {
            const T wv = pw[((static_cast<std::size_t>(co) * cin + ci) * kh + u) * kw + v];
            if (wv == T(0)) continue;
            for (int i = 0; i < oh; ++i) {
              const int y = i * stride + u - padding;
              if (y < 0 || y >= h) continue;
              T* porow = pob + static_cast<std::size_t>(i) * ow;
              const T* pxrow = pxc + static_cast<std::size_t>(y) * wd;
              for (int j = 0; j < ow; ++j) {
                const int xcol = j * stride + v - padding;
                if (xcol < 0 || xcol >= wd) continue;
                porow[j] += wv * pxrow[xcol];
              }
            }
          }
      }
    }
  }
  check_finite(out, "conv2d");
  if (needs_grad<T>({&x, &w, &b})) {
    record(out, [x, w, b, out, n, cin, h, wd, cout, kh, kw, oh, ow, stride, padding]() mutable {
      const auto& go = out.grad();
      for (int bi = 0; bi < n; ++bi)
        for (int co = 0; co < cout; ++co) {
          const std::size_t obase = (static_cast<std::size_t>(bi) * cout + co) * oh * ow;
          if (b.requires_grad()) {
            T s = T(0);
            for (int k = 0; k < oh * ow; ++k) s += go[obase + k];
            b.grad()[co] += s;
          }
          for (int ci = 0; ci < cin; ++ci) {
            const std::size_t xbase = (static_cast<std::size_t>(bi) * cin + ci) * h * wd;
            for (int u = 0; u < kh; ++u)
              for (int v = 0; v < kw; ++v) {
                const std::size_t wi =
                    ((static_cast<std::size_t>(co) * cin + ci) * kh + u) * kw + v;
                const T wv = w.data()[wi];
                T dw = T(0);
                for (int i = 0; i < oh; ++i) {
                  const int y = i * stride + u - padding;
                  if (y < 0 || y >= h) continue;
                  for (int j = 0; j < ow; ++j) {
                    const int xcol = j * stride + v - padding;
                    if (xcol < 0 || xcol >= wd) continue;
                    const T g = go[obase + static_cast<std::size_t>(i) * ow + j];
                    dw += g * x.data()[xbase + static_cast<std::size_t>(y) * wd + xcol];
                    if (x.requires_grad())
                      x.grad()[xbase + static_cast<std::size_t>(y) * wd + xcol] += g * wv;
                  }
                }
                if (w.requires_grad()) w.grad()[wi] += dw;
              }
          }
        }
    });
  }
  return out;
}

// One shared 2-D stencil applied to every channel of [N,C,H,W] (no padding).
template <class T>
Tensor<T> depthwise_shared_conv(Tensor<T> x, Tensor<T> k) {
  if (x.rank() != 4) throw ShapeError("depthwise_shared_conv: input rank must be 4");
  if (k.rank() != 2) throw ShapeError("depthwise_shared_conv: kernel rank must be 2");
  const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  const int kh = k.extent(0), kw = k.extent(1);
  if (kh > h || kw > w) throw ShapeError("depthwise_shared_conv: kernel larger than input");
  const int oh = h - kh + 1, ow = w - kw + 1;
  Tensor<T> out = Tensor<T>::zeros({n, c, oh, ow});
  const std::size_t planes = static_cast<std::size_t>(n) * c;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* px = x.data() + p * h * w;
    T* po = out.data() + p * oh * ow;
    for (int u = 0; u < kh; ++u)
      for (int v = 0; v < kw; ++v) {
        const T kv = k.data()[u * kw + v];
        if (kv == T(0)) continue;
        for (int i = 0; i < oh; ++i) {
          const T* pxrow = px + static_cast<std::size_t>(i + u) * w + v;
          T* porow = po + static_cast<std::size_t>(i) * ow;
          for (int j = 0; j < ow; ++j) porow[j] += kv * pxrow[j];
        }
      }
  }
  check_finite(out, "depthwise_shared_conv");
  if (needs_grad<T>({&x, &k})) {
    record(out, [x, k, out, planes, h, w, kh, kw, oh, ow]() mutable {
      const auto& go = out.grad();
      for (std::size_t p = 0; p < planes; ++p) {
        const std::size_t xb = p * h * w, ob = p * oh * ow;
        for (int u = 0; u < kh; ++u)
          for (int v = 0; v < kw; ++v) {
            const T kv = k.data()[u * kw + v];
            T dk = T(0);
            for (int i = 0; i < oh; ++i)
              for (int j = 0; j < ow; ++j) {
                const T g = go[ob + static_cast<std::size_t>(i) * ow + j];
                dk += g * x.data()[xb + static_cast<std::size_t>(i + u) * w + j + v];
                if (x.requires_grad())
                  x.grad()[xb + static_cast<std::size_t>(i + u) * w + j + v] += g * kv;
              }
            if (k.requires_grad()) k.grad()[u * kw + v] += dk;
          }
      }
    });
  }
  return out;
}

// Reflect padding (edge row/col not duplicated) on the spatial axes of
// [N,C,H,W]; implemented as an index-mapped gather.
template <class T>
Tensor<T> pad_reflect2d(Tensor<T> x, int p) {
  if (x.rank() != 4) throw ShapeError("pad_reflect2d: input rank must be 4");
  const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  if (p >= h || p >= w) throw ShapeError("pad_reflect2d: padding too large for extent");
  const int oh = h + 2 * p, ow = w + 2 * p;
  auto mirror = [](int i, int lim) {
    if (i < 0) return -i;
    if (i >= lim) return 2 * lim - 2 - i;
    return i;
  };
  std::vector<std::size_t> idx(static_cast<std::size_t>(n) * c * oh * ow);
  std::size_t q = 0;
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * h * w;
      for (int i = 0; i < oh; ++i) {
        const int y = mirror(i - p, h);
        for (int j = 0; j < ow; ++j)
          idx[q++] = base + static_cast<std::size_t>(y) * w + mirror(j - p, w);
      }
    }
  return gather(x, idx, {n, c, oh, ow});
}

// x[N,C,H,W] scaled per (sample, channel) by s[N,C].
template <class T>
Tensor<T> mul_channelwise(Tensor<T> x, Tensor<T> s) {
  if (x.rank() != 4 || s.rank() != 2 || x.extent(0) != s.extent(0) ||
      x.extent(1) != s.extent(1))
    throw ShapeError("mul_channelwise: " + shape_str(x.shape()) + " vs " + shape_str(s.shape()));
  const int n = x.extent(0), c = x.extent(1), hw = x.extent(2) * x.extent(3);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const T sv = s.at(b, ch);
      const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
      for (int k = 0; k < hw; ++k) out.data()[base + k] = x.data()[base + k] * sv;
    }
  check_finite(out, "mul_channelwise");
  if (needs_grad<T>({&x, &s})) {
    record(out, [x, s, out, n, c, hw]() mutable {
      const auto& go = out.grad();
      for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
          const T sv = s.at(b, ch);
          T ds = T(0);
          for (int k = 0; k < hw; ++k) {
            if (x.requires_grad()) x.grad()[base + k] += go[base + k] * sv;
            ds += go[base + k] * x.data()[base + k];
          }
          if (s.requires_grad()) s.grad()[static_cast<std::size_t>(b) * c + ch] += ds;
        }
    });
  }
  return out;
}

}  // namespace ops
}  // namespace dfyp
