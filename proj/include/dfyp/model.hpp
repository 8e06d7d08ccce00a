#pragma once

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dfyp/backbone.hpp"
#include "dfyp/dten.hpp"
#include "dfyp/edge_ops.hpp"
#include "dfyp/fusion.hpp"
#include "dfyp/rca.hpp"
#include "dfyp/vit.hpp"

namespace dfyp {
namespace model {

namespace fs = std::filesystem;
using nlohmann::json;

inline const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> v{"cnn",        "vit",        "fusion",
                                          "fusion+rca", "fusion+aol", "full"};
  return v;
}

inline void check_variant(const std::string& v) {
  for (const auto& n : variant_names())
    if (n == v) return;
  throw ConfigError("unknown variant '" + v + "'");
}

struct ModelConfig {
  std::string variant = "full";
  int channels = 9;
  int image = 32;
  double gsd = 500.0;  // meters/pixel, drives the RCA pooling mode
  int rca_ratio = 4;
  std::vector<int> cnn_channels{128, 256, 256, 512, 512, 512};  // without "in"
  std::vector<int> cnn_strides{1, 2, 1, 2, 1, 2};
  double dropout = 0.1;
  int vit_depth = 4, vit_heads = 8, vit_dim = 256, vit_mlp = 512, vit_patch = 4;

  bool has_cnn() const { return variant != "vit"; }
  bool has_vit() const { return variant != "cnn"; }
  bool has_fusion() const { return has_cnn() && has_vit(); }
  bool has_rca() const { return variant == "fusion+rca" || variant == "full"; }
  bool has_aol() const { return variant == "fusion+aol" || variant == "full"; }

  cnn::BackboneConfig backbone_config() const {
    cnn::BackboneConfig c;
    c.channels = cnn_channels;
    c.channels.insert(c.channels.begin(), channels);
    c.strides = cnn_strides;
    c.dropout = dropout;
    return c;
  }
  vit::ViTConfig vit_config() const {
    vit::ViTConfig c;
    c.image = image;
    c.patch = vit_patch;
    c.depth = vit_depth;
    c.heads = vit_heads;
    c.dim = vit_dim;
    c.mlp_dim = vit_mlp;
    c.channels = channels;
    return c;
  }

  json to_json() const {
    json j;
    j["variant"] = variant;
    j["channels"] = channels;
    j["image"] = image;
    j["gsd"] = gsd;
    j["rca_ratio"] = rca_ratio;
    j["cnn_channels"] = cnn_channels;
    j["cnn_strides"] = cnn_strides;
    j["dropout"] = dropout;
    j["vit_depth"] = vit_depth;
    j["vit_heads"] = vit_heads;
    j["vit_dim"] = vit_dim;
    j["vit_mlp"] = vit_mlp;
    j["vit_patch"] = vit_patch;
    return j;
  }
  static ModelConfig from_json(const json& j) {
    ModelConfig c;
    c.variant = j.at("variant").get<std::string>();
    c.channels = j.at("channels").get<int>();
    c.image = j.at("image").get<int>();
    c.gsd = j.at("gsd").get<double>();
    c.rca_ratio = j.at("rca_ratio").get<int>();
    c.cnn_channels = j.at("cnn_channels").get<std::vector<int>>();
    c.cnn_strides = j.at("cnn_strides").get<std::vector<int>>();
    c.dropout = j.at("dropout").get<double>();
    c.vit_depth = j.at("vit_depth").get<int>();
    c.vit_heads = j.at("vit_heads").get<int>();
    c.vit_dim = j.at("vit_dim").get<int>();
    c.vit_mlp = j.at("vit_mlp").get<int>();
    c.vit_patch = j.at("vit_patch").get<int>();
    return c;
  }
};

// Per-channel input statistics and target statistics fitted on the training
// split; recorded in the checkpoint so evaluation reproduces training space.
struct Standardizer {
  std::vector<double> in_mean, in_std;  // per channel
  double t_mean = 0.0, t_std = 1.0;
};

template <class T>
class DfypModel {
 public:
  ModelConfig cfg;
  std::optional<rca::RcaParams<T>> rca_p;
  std::optional<cnn::Backbone<T>> cnn_b;
  std::optional<vit::ViT<T>> vit_b;
  std::optional<fusion::FusionParams<T>> fuse_p;
  edge::LearnableKernel<T> lk;
  std::string active_operator = "sobel";
  std::optional<std::string> pinned_operator;  // fixed-operator benchmark hook
  Standardizer std_;

  static DfypModel make(const ModelConfig& cfg, std::uint64_t seed) {
    check_variant(cfg.variant);
    DfypModel m;
    m.cfg = cfg;
    Rng rng(seed);
    if (cfg.has_rca()) m.rca_p = rca::RcaParams<T>::make(cfg.channels, rng, cfg.rca_ratio);
    if (cfg.has_cnn()) {
      auto bc = cfg.backbone_config();
      bc.spatial_out(cfg.image, cfg.image);  // build-time collapse check
      m.cnn_b = cnn::Backbone<T>::make(bc, rng);
    }
    if (cfg.has_vit()) m.vit_b = vit::ViT<T>::make(cfg.vit_config(), rng);
    if (cfg.has_fusion()) m.fuse_p = fusion::FusionParams<T>();
    m.std_.in_mean.assign(cfg.channels, 0.0);
    m.std_.in_std.assign(cfg.channels, 1.0);
    return m;
  }

  std::string operator_for_epoch() const {
    return pinned_operator ? *pinned_operator : active_operator;
  }

  // G_t for the current operator; differentiable through raw_lambda when the
  // learnable kernel is active.
  Tensor<T> edge_map(Tensor<T> x) const {
    const std::string op = operator_for_epoch();
    if (op == "learnable") {
      auto [kx, ky] = lk.kernels();
      return edge::apply_pair(x, kx, ky);
    }
    static const auto kernels = edge::classical_kernels();
    auto it = kernels.find(op);
    if (it == kernels.end()) throw ConfigError("unknown operator '" + op + "'");
    return edge::apply_classical(x, it->second);
  }

  // x [N,C,H,W] in standardized input space -> prediction [N] in
  // standardized target space.
  Tensor<T> forward(Tensor<T> x, bool training, std::mt19937_64& drop_rng) {
    if (cfg.has_rca())
      x = rca::rca_forward(x, rca::classify_resolution(cfg.gsd), *rca_p);
    Tensor<T> y1, y2;
    if (cfg.has_cnn()) {
      Tensor<T> xp = x;
      if (cfg.has_aol())
        xp = cnn::edge_modulate(x, edge_map(x), cnn_b->gamma(), cnn_b->pinned_gamma);
      y1 = cnn_b->forward(xp, training, drop_rng);
    }
    if (cfg.has_vit()) y2 = vit_b->forward(x);
    if (cfg.has_fusion()) return fusion::fuse(y1, y2, *fuse_p);
    return cfg.has_cnn() ? y1 : y2;
  }

  // Standardizes a raw data batch into model input space (plain data op).
  Tensor<T> standardize_batch(const Tensor<T>& x) const {
    auto out = x.clone();
    const int n = x.extent(0), c = x.extent(1);
    const std::size_t hw = static_cast<std::size_t>(x.extent(2)) * x.extent(3);
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch) {
        T* p = out.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
        const T mu = static_cast<T>(std_.in_mean[ch]);
        const T inv = static_cast<T>(1.0 / std_.in_std[ch]);
        for (std::size_t k = 0; k < hw; ++k) p[k] = (p[k] - mu) * inv;
      }
    return out;
  }
  double standardize_target(double y) const { return (y - std_.t_mean) / std_.t_std; }
  double unstandardize(double y) const { return y * std_.t_std + std_.t_mean; }

  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    auto addall = [&](const std::string& prefix, std::vector<Tensor<T>> ps) {
      for (std::size_t i = 0; i < ps.size(); ++i)
        out.emplace_back(prefix + std::to_string(i), ps[i]);
    };
    if (rca_p) {
      out.emplace_back("rca.w1", rca_p->w1);
      out.emplace_back("rca.b1", rca_p->b1);
      out.emplace_back("rca.w2", rca_p->w2);
      out.emplace_back("rca.b2", rca_p->b2);
    }
    if (cnn_b) {
      for (std::size_t i = 0; i < cnn_b->blocks.size(); ++i) {
        auto& blk = cnn_b->blocks[i];
        const std::string p = "cnn.block" + std::to_string(i) + ".";
        out.emplace_back(p + "w", blk.w);
        out.emplace_back(p + "b", blk.b);
        out.emplace_back(p + "bn_gamma", blk.bn_gamma);
        out.emplace_back(p + "bn_beta", blk.bn_beta);
      }
      out.emplace_back("cnn.head_w", cnn_b->head_w);
      out.emplace_back("cnn.head_b", cnn_b->head_b);
      out.emplace_back("cnn.gamma_raw", cnn_b->gamma_raw);
    }
    if (cfg.has_aol()) out.emplace_back("aol.raw_lambda", lk.raw_lambda);
    if (vit_b) addall("vit.p", vit_b->parameters());
    if (fuse_p) {
      out.emplace_back("fusion.a_raw", fuse_p->a_raw);
      out.emplace_back("fusion.b_raw", fuse_p->b_raw);
    }
    return out;
  }

  std::vector<Tensor<T>> parameters() {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  double alpha_value() const { return fuse_p ? fuse_p->alpha().item() : 0.0; }
  double beta_value() const { return fuse_p ? fuse_p->beta().item() : 0.0; }
  double gamma_value() const { return cnn_b ? cnn_b->gamma().item() : 0.0; }
  double lambda_value() const { return lk.lambda_value(); }
};

// Full parameter + batchnorm-state snapshot for best-epoch restore.
template <class T>
struct ModelSnapshot {
  std::vector<std::vector<T>> params;
  std::vector<ops::BatchNormStats<T>> stats;
  std::string active_operator;

  static ModelSnapshot capture(DfypModel<T>& m) {
    ModelSnapshot s;
    for (auto& p : m.parameters()) s.params.emplace_back(p.vec());
    if (m.cnn_b)
      for (auto& blk : m.cnn_b->blocks) s.stats.push_back(blk.stats);
    s.active_operator = m.active_operator;
    return s;
  }
  void restore(DfypModel<T>& m) const {
    auto ps = m.parameters();
    for (std::size_t i = 0; i < ps.size(); ++i)
      std::copy(params[i].begin(), params[i].end(), ps[i].data());
    if (m.cnn_b)
      for (std::size_t i = 0; i < m.cnn_b->blocks.size(); ++i)
        m.cnn_b->blocks[i].stats = stats[i];
    m.active_operator = active_operator;
  }
};

// Checkpoint layout: <dir>/params/<name>.dten + <dir>/checkpoint.json holding
// the config snapshot, parameter manifest, batchnorm state and standardizer.
template <class T>
void save_checkpoint(DfypModel<T>& m, const fs::path& dir) {
  fs::create_directories(dir / "params");
  json manifest;
  manifest["config"] = m.cfg.to_json();
  manifest["active_operator"] = m.active_operator;
  manifest["standardizer"] = {{"in_mean", m.std_.in_mean},
                              {"in_std", m.std_.in_std},
                              {"t_mean", m.std_.t_mean},
                              {"t_std", m.std_.t_std}};
  manifest["params"] = json::array();
  for (auto& [name, t] : m.named_parameters()) {
    std::string file = name;
    for (auto& ch : file)
      if (ch == '/' || ch == '.') ch = '_';
    const fs::path rel = fs::path("params") / (file + ".dten");
    dten::save(dir / rel, t);
    json e;
    e["name"] = name;
    e["file"] = rel.generic_string();
    e["shape"] = t.shape();
    e["checksum"] = dten::file_checksum(dir / rel);
    manifest["params"].push_back(std::move(e));
  }
  if (m.cnn_b) {
    manifest["batchnorm"] = json::array();
    for (auto& blk : m.cnn_b->blocks) {
      std::vector<double> mean(blk.stats.mean.begin(), blk.stats.mean.end());
      std::vector<double> var(blk.stats.var.begin(), blk.stats.var.end());
      manifest["batchnorm"].push_back({{"mean", mean}, {"var", var}});
    }
  }
  std::ofstream f(dir / "checkpoint.json");
  if (!f) throw IoError("cannot write " + (dir / "checkpoint.json").string());
  f << manifest.dump(2) << "\n";
}

template <class T>
DfypModel<T> load_checkpoint(const fs::path& dir) {
  std::ifstream f(dir / "checkpoint.json");
  if (!f) throw IoError("checkpoint not found: " + (dir / "checkpoint.json").string());
  json manifest;
  f >> manifest;
  auto m = DfypModel<T>::make(ModelConfig::from_json(manifest.at("config")), 0);
  m.active_operator = manifest.value("active_operator", std::string("sobel"));
  const auto& st = manifest.at("standardizer");
  m.std_.in_mean = st.at("in_mean").get<std::vector<double>>();
  m.std_.in_std = st.at("in_std").get<std::vector<double>>();
  m.std_.t_mean = st.at("t_mean").get<double>();
  m.std_.t_std = st.at("t_std").get<double>();

  std::map<std::string, json> entries;
  for (const auto& e : manifest.at("params")) entries[e.at("name")] = e;
  for (auto& [name, t] : m.named_parameters()) {
    auto it = entries.find(name);
    if (it == entries.end()) throw IoError("checkpoint missing parameter '" + name + "'");
    const fs::path rel = it->second.at("file").template get<std::string>();
    auto loaded = dten::load<T>(dir / rel);
    if (!same_shape(loaded.shape(), t.shape()))
      throw IoError("checkpoint shape mismatch for '" + name + "': file " +
                    shape_str(loaded.shape()) + " vs model " + shape_str(t.shape()));
    std::copy(loaded.data(), loaded.data() + loaded.size(), t.data());
  }
  if (m.cnn_b && manifest.contains("batchnorm")) {
    const auto& bn = manifest["batchnorm"];
    for (std::size_t i = 0; i < m.cnn_b->blocks.size(); ++i) {
      auto mean = bn.at(i).at("mean").get<std::vector<double>>();
      auto var = bn.at(i).at("var").get<std::vector<double>>();
      auto& stats = m.cnn_b->blocks[i].stats;
      for (std::size_t k = 0; k < mean.size(); ++k) {
        stats.mean[k] = static_cast<T>(mean[k]);
        stats.var[k] = static_cast<T>(var[k]);
      }
    }
  }
  return m;
}

}  // namespace model
}  // namespace dfyp
