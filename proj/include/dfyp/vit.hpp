#pragma once

#include <string>

#include "dfyp/ops.hpp"
#include "dfyp/rng.hpp"

namespace dfyp {
namespace vit {

struct ViTConfig {
  int image = 32;
  int patch = 4;
  int depth = 4;
  int heads = 8;
  int dim = 256;
  int mlp_dim = 512;
  int channels = 9;

  int patches_per_side() const { return image / patch; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }
  int patch_len() const { return channels * patch * patch; }
  // d_k = dim/heads, rounded down when heads do not divide dim (the published
  // Sentinel-2 setting is 6 heads at dim 128); the output projection maps the
  // heads*d_k concatenation back to dim.
  int head_dim() const { return std::max(1, dim / heads); }

  void validate() const {
    if (image < 1 || patch < 1 || depth < 1 || heads < 1 || dim < 1 || mlp_dim < 1 ||
        channels < 1)
      throw ConfigError("vit: all config fields must be >= 1");
    if (image % patch != 0)
      throw ConfigError("vit: patch size " + std::to_string(patch) +
                        " does not divide image size " + std::to_string(image));
    if (heads > dim)
      throw ConfigError("vit: more heads than embed dimensions");
  }
};

template <class T>
struct ViTLayer {
  Tensor<T> ln1_g, ln1_b, ln2_g, ln2_b;
  std::vector<Tensor<T>> wq, wk, wv;  // per head, [dim, dk]
  Tensor<T> wo, bo;                   // [dim, dim], [dim]
  Tensor<T> f1, fb1, f2, fb2;         // FFN dim -> mlp -> dim
};

// Pre-norm encoder stack over non-overlapping patch tokens, mean pooling and
// a GELU MLP head. Operates on one image at a time; batching is a loop.
template <class T>
class ViT {
 public:
  ViTConfig cfg;
  Tensor<T> w_emb, b_emb, pos;  // [C*p*p, dim], [dim], [P, dim]
  std::vector<ViTLayer<T>> layers;
  Tensor<T> head_ln_g, head_ln_b;
  Tensor<T> head_w1, head_b1, head_w2, head_b2;  // dim -> mlp_dim -> 1

  static ViT make(const ViTConfig& cfg, Rng& rng) {
    cfg.validate();
    ViT m;
    m.cfg = cfg;
    const int d = cfg.dim, dk = cfg.head_dim(), pl = cfg.patch_len();
    auto xavier = [&](Shape s, int fin, int fout) {
      auto t = Tensor<T>::zeros(std::move(s));
      init::xavier_uniform(t, fin, fout, rng);
      return t;
    };
    m.w_emb = xavier({pl, d}, pl, d);
    m.b_emb = Tensor<T>::zeros({d});
    m.pos = Tensor<T>::zeros({cfg.num_patches(), d});
    init::normal(m.pos, 0.0, 0.02, rng);
    for (int l = 0; l < cfg.depth; ++l) {
      ViTLayer<T> layer;
      layer.ln1_g = Tensor<T>::full({d}, T(1));
      layer.ln1_b = Tensor<T>::zeros({d});
      layer.ln2_g = Tensor<T>::full({d}, T(1));
      layer.ln2_b = Tensor<T>::zeros({d});
      for (int h = 0; h < cfg.heads; ++h) {
        layer.wq.push_back(xavier({d, dk}, d, dk));
        layer.wk.push_back(xavier({d, dk}, d, dk));
        layer.wv.push_back(xavier({d, dk}, d, dk));
      }
      layer.wo = xavier({cfg.heads * dk, d}, cfg.heads * dk, d);
      layer.bo = Tensor<T>::zeros({d});
      layer.f1 = xavier({d, cfg.mlp_dim}, d, cfg.mlp_dim);
      layer.fb1 = Tensor<T>::zeros({cfg.mlp_dim});
      layer.f2 = xavier({cfg.mlp_dim, d}, cfg.mlp_dim, d);
      layer.fb2 = Tensor<T>::zeros({d});
      m.layers.push_back(std::move(layer));
    }
    m.head_ln_g = Tensor<T>::full({d}, T(1));
    m.head_ln_b = Tensor<T>::zeros({d});
    m.head_w1 = xavier({d, cfg.mlp_dim}, d, cfg.mlp_dim);
    m.head_b1 = Tensor<T>::zeros({cfg.mlp_dim});
    m.head_w2 = xavier({cfg.mlp_dim, 1}, cfg.mlp_dim, 1);
    m.head_b2 = Tensor<T>::zeros({1});
    for (auto& t : m.parameters()) t.set_requires_grad(true);
    return m;
  }

  // x [C,H,W] -> tokens [P, dim]; positional table added exactly once here.
  Tensor<T> patch_embed(Tensor<T> x) const {
    if (x.rank() != 3 || x.extent(1) != cfg.image || x.extent(2) != cfg.image ||
        x.extent(0) != cfg.channels)
      throw ShapeError("vit: expected [" + std::to_string(cfg.channels) + "," +
                       std::to_string(cfg.image) + "," + std::to_string(cfg.image) +
                       "], got " + shape_str(x.shape()));
    const int ps = cfg.patches_per_side(), p = cfg.patch, c = cfg.channels, hw = cfg.image;
    std::vector<std::size_t> idx;
    idx.reserve(static_cast<std::size_t>(cfg.num_patches()) * cfg.patch_len());
    for (int pi = 0; pi < ps; ++pi)
      for (int pj = 0; pj < ps; ++pj)
        for (int ch = 0; ch < c; ++ch)
          for (int u = 0; u < p; ++u)
            for (int v = 0; v < p; ++v)
              idx.push_back((static_cast<std::size_t>(ch) * hw + pi * p + u) * hw +
                            pj * p + v);
    auto patches = ops::gather(x, idx, {cfg.num_patches(), cfg.patch_len()});
    auto tok = ops::add_rowvec(ops::matmul(patches, w_emb), b_emb);
    return ops::add(tok, pos);
  }

  // Per-head scaled dot-product attention with output projection. If `attn`
  // is given, each head's row-stochastic weight matrix is appended to it.
  Tensor<T> mha(Tensor<T> x, const ViTLayer<T>& layer,
                std::vector<Tensor<T>>* attn = nullptr) const {
    using namespace ops;
    std::vector<Tensor<T>> heads;
    const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.head_dim())));
    for (int h = 0; h < cfg.heads; ++h) {
      auto q = matmul(x, layer.wq[h]);
      auto k = matmul(x, layer.wk[h]);
      auto v = matmul(x, layer.wv[h]);
      auto a = softmax(scale(matmul(q, transpose(k)), inv_sqrt_dk), 1);
      if (attn) attn->push_back(a);
      heads.push_back(matmul(a, v));
    }
    return add_rowvec(matmul(concat_cols(heads), layer.wo), layer.bo);
  }

  Tensor<T> ffn(Tensor<T> x, const ViTLayer<T>& layer) const {
    using namespace ops;
    return add_rowvec(matmul(gelu(add_rowvec(matmul(x, layer.f1), layer.fb1)), layer.f2),
                      layer.fb2);
  }

  // x1 = x + MHA(LN(x)); x2 = x1 + FFN(LN(x1)).
  Tensor<T> encoder_block(Tensor<T> x, const ViTLayer<T>& layer,
                          std::vector<Tensor<T>>* attn = nullptr) const {
    using namespace ops;
    auto x1 = add(x, mha(layernorm(x, layer.ln1_g, layer.ln1_b), layer, attn));
    return add(x1, ffn(layernorm(x1, layer.ln2_g, layer.ln2_b), layer));
  }

  Tensor<T> encode(Tensor<T> tokens, std::vector<Tensor<T>>* attn = nullptr) const {
    for (const auto& layer : layers) tokens = encoder_block(tokens, layer, attn);
    return tokens;
  }

  // Mean-pool tokens -> layernorm -> MLP(dim -> mlp_dim -> 1); returns [1].
  Tensor<T> head(Tensor<T> tokens) const {
    using namespace ops;
    const int p = tokens.extent(0);
    auto pool_row = Tensor<T>::full({1, p}, static_cast<T>(1.0 / p));
    auto pooled = layernorm(matmul(pool_row, tokens), head_ln_g, head_ln_b);
    auto hgelu = gelu(add_rowvec(matmul(pooled, head_w1), head_b1));
    auto y = add_rowvec(matmul(hgelu, head_w2), head_b2);
    return reshape(y, {1});
  }

  Tensor<T> forward_one(Tensor<T> x, std::vector<Tensor<T>>* attn = nullptr) const {
    return head(encode(patch_embed(x), attn));
  }

  // [N,C,H,W] -> [N].
  Tensor<T> forward(Tensor<T> x4) const {
    std::vector<Tensor<T>> preds;
    for (int i = 0; i < x4.extent(0); ++i) preds.push_back(forward_one(ops::slice0(x4, i)));
    return ops::concat_flat(preds);
  }

  std::vector<Tensor<T>> parameters() {
    std::vector<Tensor<T>> out{w_emb, b_emb, pos};
    for (auto& l : layers) {
      for (auto* t : {&l.ln1_g, &l.ln1_b, &l.ln2_g, &l.ln2_b}) out.push_back(*t);
      for (auto& v : {l.wq, l.wk, l.wv}) out.insert(out.end(), v.begin(), v.end());
      for (auto* t : {&l.wo, &l.bo, &l.f1, &l.fb1, &l.f2, &l.fb2}) out.push_back(*t);
    }
    for (auto* t : {&head_ln_g, &head_ln_b, &head_w1, &head_b1, &head_w2, &head_b2})
      out.push_back(*t);
    return out;
  }
};

}  // namespace vit
}  // namespace dfyp
