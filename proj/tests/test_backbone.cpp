#include <doctest.h>

#include <cmath>
#include <cstring>

#include "dfyp/backbone.hpp"
#include "dfyp/edge_ops.hpp"
#include "test_util.hpp"

using namespace dfyp;
using namespace dfyp::cnn;
using dfyp_test::random_tensor;
using dfyp_test::rel_err;

namespace {

BackboneConfig modis_cfg() {
  return {{9, 128, 256, 256, 512, 512, 512}, {1, 2, 1, 2, 1, 2}};
}

BackboneConfig sentinel_cfg() { return {{3, 32, 64, 128, 128}, {2, 2, 2, 1}}; }

}  // namespace

TEST_CASE("edge_modulate endpoints and arithmetic") {
  Rng rng(1);
  auto x = random_tensor<float>({1, 2, 4, 4}, rng);
  auto g = random_tensor<float>({1, 2, 4, 4}, rng);
  auto gam = Tensor<float>::scalar(0.7f);

  auto y1 = edge_modulate(x, g, gam, 1.0);
  CHECK(std::memcmp(y1.data(), x.data(), x.size() * sizeof(float)) == 0);
  auto y0 = edge_modulate(x, g, gam, 0.0);
  CHECK(std::memcmp(y0.data(), g.data(), g.size() * sizeof(float)) == 0);

  auto xs = Tensor<float>::full({1, 1, 2, 2}, 4.0f);
  auto gs = Tensor<float>::zeros({1, 1, 2, 2});
  auto y = edge_modulate(xs, gs, gam, 0.25);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.at(static_cast<int>(i)) == 1.0f);

  CHECK_THROWS_AS(edge_modulate(x, Tensor<float>::zeros({1, 2, 3, 3}), gam), ShapeError);
}

TEST_CASE("config validation catches bad shapes at build time") {
  Rng rng(2);
  CHECK_THROWS_AS(Backbone<float>::make({{9, 16}, {1, 2}}, rng), ConfigError);
  CHECK_THROWS_AS(Backbone<float>::make({{9, 0}, {1}}, rng), ConfigError);
  BackboneConfig bad = {{9, 16}, {2}};
  bad.dropout = 1.0;
  CHECK_THROWS_AS(Backbone<float>::make(bad, rng), ConfigError);
  CHECK_THROWS_AS(modis_cfg().spatial_out(0, 32), ConfigError);
}

TEST_CASE("table presets produce the documented feature widths") {
  Rng rng(3);
  {
    auto cfg = modis_cfg();
    CHECK(cfg.spatial_out(32, 32) == std::pair<int, int>(4, 4));
    auto m = Backbone<float>::make(cfg, rng);
    std::mt19937_64 drop(0);
    auto f = m.features(random_tensor<float>({1, 9, 32, 32}, rng), false, drop);
    CHECK(f.shape() == Shape{1, 512});
    auto y = m.head(f);
    CHECK(y.shape() == Shape{1});
    CHECK(std::isfinite(static_cast<double>(y.at(0))));
  }
  {
    auto cfg = sentinel_cfg();
    CHECK(cfg.spatial_out(256, 256) == std::pair<int, int>(32, 32));
    auto m = Backbone<float>::make(cfg, rng);
    std::mt19937_64 drop(0);
    auto f = m.features(random_tensor<float>({1, 3, 256, 256}, rng), false, drop);
    CHECK(f.shape() == Shape{1, 128});
  }
}

TEST_CASE("single delta-kernel block reduces to the global mean of the input") {
  Rng rng(4);
  auto m = Backbone<float>::make({{1, 1}, {1}}, rng);
  for (auto& v : m.blocks[0].w.vec()) v = 0;
  m.blocks[0].w.at(0, 0, 1, 1) = 1.0f;  // identity stencil
  for (auto& v : m.blocks[0].b.vec()) v = 0;
  std::mt19937_64 drop(0);
  // Eval-mode batchnorm with running stats (0,1) scales by 1/sqrt(1+eps).
  auto x = random_tensor<float>({1, 1, 6, 6}, rng, 0.1, 1.0);
  auto f = m.features(x, false, drop);
  long double mean = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mean += x.at(static_cast<int>(i));
  mean /= static_cast<long double>(x.size());
  const double want = static_cast<double>(mean) / std::sqrt(1.0 + 1e-5);
  CHECK(rel_err(f.at(0, 0), want, 1e-6) < 1e-5);
}

TEST_CASE("head is an affine map with a dot-product oracle") {
  Rng rng(5);
  auto m = Backbone<float>::make({{2, 4}, {1}}, rng);
  auto f = random_tensor<float>({3, 4}, rng);

  for (auto& v : m.head_w.vec()) v = 0;
  m.head_b.at(0) = 2.5f;
  auto y = m.head(f);
  for (int i = 0; i < 3; ++i) CHECK(y.at(i) == 2.5f);

  m.head_b.at(0) = 0;
  m.head_w.at(0, 0) = 1.0f;
  y = m.head(f);
  for (int i = 0; i < 3; ++i) CHECK(y.at(i) == f.at(i, 0));

  for (auto& v : m.head_w.vec()) v = static_cast<float>(rng.uniform(-1, 1));
  m.head_b.at(0) = 0.3f;
  y = m.head(f);
  for (int i = 0; i < 3; ++i) {
    long double want = m.head_b.at(0);
    for (int j = 0; j < 4; ++j) want += static_cast<long double>(f.at(i, j)) * m.head_w.at(j, 0);
    CHECK(rel_err(y.at(i), static_cast<double>(want), 1e-6) < 1e-6);
  }
}

TEST_CASE("gamma pinned to 1 makes the prediction operator-invariant") {
  Rng rng(6);
  auto m = Backbone<float>::make({{3, 8, 8}, {2, 2}}, rng);
  m.pinned_gamma = 1.0;
  auto x = random_tensor<float>({2, 3, 8, 8}, rng);
  std::mt19937_64 drop(0);
  const auto ops_map = edge::classical_kernels();
  Tensor<float> ref;
  for (const auto& id : {"sobel", "scharr", "prewitt", "kirsch"}) {
    auto g = edge::apply_classical(x, ops_map.at(id));
    auto y = m.forward(edge_modulate(x, g, m.gamma(), m.pinned_gamma), false, drop);
    if (!ref.valid()) {
      ref = y;
    } else {
      for (int i = 0; i < 2; ++i) CHECK(y.at(i) == ref.at(i));
    }
  }
}

TEST_CASE("end-to-end gradients match finite differences at toy size") {
  Rng rng(7);
  auto cfg = BackboneConfig{{9, 6, 8}, {2, 2}};
  cfg.dropout = 0.0;  // dropout off so the FD oracle sees a deterministic map
  auto m = Backbone<double>::make(cfg, rng);
  edge::LearnableKernel<double> lk;
  lk.raw_lambda.data()[0] = 0.2;
  auto x = random_tensor<double>({2, 9, 8, 8}, rng);

  auto run = [&]() {
    // batchnorm running stats restored after each call
    std::vector<ops::BatchNormStats<double>> stats;
    for (auto& b : m.blocks) stats.push_back(b.stats);
    std::mt19937_64 drop(0);
    auto [kx, ky] = lk.kernels();
    auto g = edge::apply_pair(x, kx, ky);
    auto xp = edge_modulate(x, g, m.gamma());
    auto loss = ops::sum_all(m.forward(xp, true, drop));
    for (std::size_t i = 0; i < m.blocks.size(); ++i) m.blocks[i].stats = stats[i];
    return loss;
  };
  auto params = m.parameters();
  params.push_back(lk.raw_lambda);
  auto forward = [&]() { return run().item(); };
  auto backward = [&]() {
    for (auto& p : params) p.zero_grad();
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto loss = run();
    tape.backward(loss);
  };
  CHECK(dfyp_test::fd_max_rel_err<double>(forward, backward, params, 6, rng, 1e-5, 1e-3) <=
        1e-6);
}

TEST_CASE("training-mode dropout is deterministic under a fixed engine seed") {
  Rng rng(8);
  auto m = Backbone<float>::make({{3, 4, 4}, {2, 2}}, rng);
  auto x = random_tensor<float>({2, 3, 8, 8}, rng);
  auto stats = m.blocks;
  std::mt19937_64 d1(42);
  auto y1 = m.forward(x, true, d1);
  for (std::size_t i = 0; i < m.blocks.size(); ++i) m.blocks[i].stats = stats[i].stats;
  std::mt19937_64 d2(42);
  auto y2 = m.forward(x, true, d2);
  CHECK(std::memcmp(y1.data(), y2.data(), y1.size() * sizeof(float)) == 0);
}
