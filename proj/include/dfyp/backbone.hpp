#pragma once

#include <optional>
#include <string>

#include "dfyp/ops.hpp"
#include "dfyp/rng.hpp"

namespace dfyp {
namespace cnn {

// channels[0] is the input depth; strides has one entry per conv block.
struct BackboneConfig {
  std::vector<int> channels;
  std::vector<int> strides;
  int kernel = 3;
  double dropout = 0.1;

  int blocks() const { return static_cast<int>(strides.size()); }
  int feature_dim() const { return channels.back(); }

  void validate() const {
    if (channels.size() < 2 || strides.size() != channels.size() - 1)
      throw ConfigError("backbone: need len(strides) = len(channels) - 1 with >= 1 block");
    for (int c : channels)
      if (c < 1) throw ConfigError("backbone: channel widths must be >= 1");
    for (int s : strides)
      if (s < 1) throw ConfigError("backbone: strides must be >= 1");
    if (kernel != 3) throw ConfigError("backbone: kernel size is fixed at 3");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("backbone: dropout must be in [0,1)");
  }

  // Spatial extent after every block (padding 1, kernel 3); throws at build
  // time if any block collapses below 1x1.
  std::pair<int, int> spatial_out(int h, int w) const {
    validate();
    for (int s : strides) {
      if (h < 1 || w < 1)
        throw ConfigError("backbone: spatial extent collapses below 1x1 at " +
                          std::to_string(h) + "x" + std::to_string(w));
      h = (h - 1) / s + 1;
      w = (w - 1) / s + 1;
    }
    if (h < 1 || w < 1) throw ConfigError("backbone: spatial extent collapses below 1x1");
    return {h, w};
  }
};

// X' = gamma*X + (1-gamma)*G. Pinned endpoints return the operand itself.
template <class T>
Tensor<T> edge_modulate(Tensor<T> x, Tensor<T> g, Tensor<T> gamma,
                        std::optional<double> pinned = std::nullopt) {
  if (!same_shape(x.shape(), g.shape()))
    throw ShapeError("edge_modulate: " + shape_str(x.shape()) + " vs " + shape_str(g.shape()));
  if (pinned) {
    if (*pinned == 1.0) return x;
    if (*pinned == 0.0) return g;
    gamma = Tensor<T>::scalar(static_cast<T>(*pinned));
  }
  auto one_minus = ops::add_const(ops::scale(gamma, T(-1)), T(1));
  return ops::add(ops::mul_scalar(x, gamma), ops::mul_scalar(g, one_minus));
}

template <class T>
struct ConvBlock {
  Tensor<T> w, b, bn_gamma, bn_beta;
  ops::BatchNormStats<T> stats;
  int stride = 1;
  explicit ConvBlock(int cout) : stats(cout) {}
};

// Conv(3x3, pad 1) -> batchnorm -> ReLU -> dropout stack, global average
// pooling, then an affine head to one scalar per sample.
template <class T>
class Backbone {
 public:
  BackboneConfig cfg;
  std::vector<ConvBlock<T>> blocks;
  Tensor<T> head_w, head_b;  // [F,1], [1]
  Tensor<T> gamma_raw;       // gamma = sigmoid(gamma_raw), init 0.5
  std::optional<double> pinned_gamma;

  static Backbone make(const BackboneConfig& cfg, Rng& rng) {
    cfg.validate();
    Backbone m;
    m.cfg = cfg;
    for (int i = 0; i < cfg.blocks(); ++i) {
      const int cin = cfg.channels[i], cout = cfg.channels[i + 1];
      ConvBlock<T> blk(cout);
      blk.stride = cfg.strides[i];
      blk.w = Tensor<T>::zeros({cout, cin, cfg.kernel, cfg.kernel});
      init::kaiming_uniform(blk.w, cin * cfg.kernel * cfg.kernel, rng);
      blk.b = Tensor<T>::zeros({cout});
      blk.bn_gamma = Tensor<T>::full({cout}, T(1));
      blk.bn_beta = Tensor<T>::zeros({cout});
      m.blocks.push_back(std::move(blk));
    }
    m.head_w = Tensor<T>::zeros({cfg.feature_dim(), 1});
    init::xavier_uniform(m.head_w, cfg.feature_dim(), 1, rng);
    m.head_b = Tensor<T>::zeros({1});
    m.gamma_raw = Tensor<T>::scalar(0);
    for (auto& t : m.parameters()) t.set_requires_grad(true);
    return m;
  }

  Tensor<T> gamma() const {
    if (pinned_gamma) return Tensor<T>::scalar(static_cast<T>(*pinned_gamma));
    return ops::sigmoid(gamma_raw);
  }

  // x [N,C,H,W] -> features [N,F].
  Tensor<T> features(Tensor<T> x, bool training, std::mt19937_64& drop_rng) {
    for (auto& blk : blocks) {
      x = ops::conv2d(x, blk.w, blk.b, blk.stride, 1);
      x = ops::batchnorm(x, blk.bn_gamma, blk.bn_beta, blk.stats, training);
      x = ops::relu(x);
      x = ops::dropout(x, cfg.dropout, training, drop_rng);
    }
    return ops::pool_global(x, ops::PoolMode::Avg);
  }

  // features [N,F] -> predictions [N].
  Tensor<T> head(Tensor<T> f) {
    auto y = ops::add_rowvec(ops::matmul(f, head_w), head_b);
    return ops::reshape(y, {f.extent(0)});
  }

  Tensor<T> forward(Tensor<T> x, bool training, std::mt19937_64& drop_rng) {
    return head(features(x, training, drop_rng));
  }

  std::vector<Tensor<T>> parameters() {
    std::vector<Tensor<T>> out;
    for (auto& blk : blocks) {
      out.push_back(blk.w);
      out.push_back(blk.b);
      out.push_back(blk.bn_gamma);
      out.push_back(blk.bn_beta);
    }
    out.push_back(head_w);
    out.push_back(head_b);
    out.push_back(gamma_raw);
    return out;
  }
};

}  // namespace cnn
}  // namespace dfyp
