#include <doctest.h>

#include <cmath>
#include <cstring>

#include "dfyp/rca.hpp"
#include "test_util.hpp"

using namespace dfyp;
using namespace dfyp::rca;
using dfyp_test::random_tensor;
using dfyp_test::rel_err;

TEST_CASE("resolution classification is a pure threshold on GSD") {
  CHECK(classify_resolution(500.0) == ResolutionClass::Low);   // MODIS
  CHECK(classify_resolution(10.0) == ResolutionClass::High);   // Sentinel-2
  CHECK(classify_resolution(100.0) == ResolutionClass::Low);
  CHECK(classify_resolution(99.9) == ResolutionClass::High);
  CHECK(classify_resolution(10.0, 5.0) == ResolutionClass::Low);
  CHECK_THROWS_AS(classify_resolution(0.0), ParamError);
}

TEST_CASE("squeeze on constant and hand-set channels") {
  auto x = Tensor<float>::full({3, 4, 4}, 5.0f);
  for (auto res : {ResolutionClass::Low, ResolutionClass::High}) {
    auto z = squeeze(x, res);
    REQUIRE(z.shape() == Shape{3});
    for (int c = 0; c < 3; ++c) CHECK(z.at(c) == 5.0f);
  }
  auto y = Tensor<float>::from({1, 2, 2}, {0, 0, 0, 9});
  CHECK(squeeze(y, ResolutionClass::Low).at(0) == 9.0f);
  CHECK(squeeze(y, ResolutionClass::High).at(0) == 2.25f);
}

TEST_CASE("average squeeze matches a mean-loop oracle") {
  Rng rng(5);
  auto x = random_tensor<double>({9, 32, 32}, rng);
  auto z = squeeze(x, ResolutionClass::High);
  for (int c = 0; c < 9; ++c) {
    long double s = 0;
    for (int i = 0; i < 32; ++i)
      for (int j = 0; j < 32; ++j) s += x.at(c, i, j);
    CHECK(rel_err(z.at(c), static_cast<double>(s / 1024.0L), 1e-6) < 1e-6);
  }
}

TEST_CASE("excite with zero weights gives 0.5 per channel") {
  Rng rng(1);
  auto p = RcaParams<float>::make(9, rng);
  for (auto& v : p.w1.vec()) v = 0;
  for (auto& v : p.w2.vec()) v = 0;
  auto s = excite(random_tensor<float>({9}, rng), p);
  for (int c = 0; c < 9; ++c) CHECK(s.at(c) == 0.5f);
}

TEST_CASE("excite matches a two-matmul oracle and stays inside (0,1)") {
  Rng rng(2);
  auto p = RcaParams<double>::make(6, rng);
  auto z = random_tensor<double>({6}, rng, -2.0, 2.0);
  auto s = excite(z, p);
  const int cr = reduced_channels(6, 4);
  std::vector<double> h(cr);
  for (int i = 0; i < cr; ++i) {
    double a = p.b1.at(i);
    for (int j = 0; j < 6; ++j) a += p.w1.at(i, j) * z.at(j);
    h[i] = std::max(0.0, a);
  }
  for (int c = 0; c < 6; ++c) {
    double a = p.b2.at(c);
    for (int i = 0; i < cr; ++i) a += p.w2.at(c, i) * h[i];
    const double want = 1.0 / (1.0 + std::exp(-a));
    CHECK(rel_err(s.at(c), want, 1e-6) < 1e-6);
    CHECK(s.at(c) > 0.0);
    CHECK(s.at(c) < 1.0);
  }
}

TEST_CASE("excite rejects a mismatched descriptor") {
  Rng rng(3);
  auto p = RcaParams<float>::make(9, rng);
  CHECK_THROWS_AS(excite(Tensor<float>::zeros({5}), p), ShapeError);
}

TEST_CASE("reweight identity, one-hot and loop oracle") {
  Rng rng(4);
  auto x = random_tensor<float>({3, 4, 5}, rng);
  auto ones = Tensor<float>::full({3}, 1.0f);
  auto y = reweight(x, ones);
  CHECK(std::memcmp(y.data(), x.data(), x.size() * sizeof(float)) == 0);

  auto ek = Tensor<float>::from({3}, {0, 1, 0});
  auto z = reweight(x, ek);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 5; ++j)
        CHECK(z.at(c, i, j) == (c == 1 ? x.at(c, i, j) : 0.0f));

  auto s = random_tensor<float>({3}, rng, 0.1, 0.9);
  auto w = reweight(x, s);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 5; ++j) CHECK(w.at(c, i, j) == s.at(c) * x.at(c, i, j));
}

TEST_CASE("rca_forward equals the three-stage composition bit-exactly") {
  Rng rng(6);
  auto p = RcaParams<float>::make(4, rng);
  auto x = random_tensor<float>({4, 6, 6}, rng);
  for (auto res : {ResolutionClass::Low, ResolutionClass::High}) {
    auto got = rca_forward(x, res, p);
    auto want = reweight(x, excite(squeeze(x, res), p));
    REQUIRE(got.shape() == x.shape());
    CHECK(std::memcmp(got.data(), want.data(), got.size() * sizeof(float)) == 0);
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK(std::abs(got.at(static_cast<int>(i))) <= std::abs(x.at(static_cast<int>(i))));
  }
  auto zeros = Tensor<float>::zeros({4, 6, 6});
  auto out = rca_forward(zeros, ResolutionClass::Low, p);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.at(static_cast<int>(i)) == 0.0f);
}

TEST_CASE("constant-per-channel inputs make Low and High paths identical") {
  Rng rng(7);
  auto p = RcaParams<float>::make(5, rng);
  auto x = Tensor<float>::zeros({5, 3, 3});
  for (int c = 0; c < 5; ++c) {
    const float v = static_cast<float>(rng.uniform(-2.0, 2.0));
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) x.at(c, i, j) = v;
  }
  auto lo = rca_forward(x, ResolutionClass::Low, p);
  auto hi = rca_forward(x, ResolutionClass::High, p);
  for (std::size_t i = 0; i < lo.size(); ++i)
    CHECK(lo.at(static_cast<int>(i)) == doctest::Approx(hi.at(static_cast<int>(i))).epsilon(1e-6));
}

TEST_CASE("scaling a channel of a non-negative input never lowers its squeeze value") {
  Rng rng(8);
  for (auto res : {ResolutionClass::Low, ResolutionClass::High}) {
    auto x = random_tensor<float>({3, 4, 4}, rng, 0.0, 1.0);
    auto z0 = squeeze(x, res);
    auto y = x.clone();
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) y.at(1, i, j) *= 3.0f;
    auto z1 = squeeze(y, res);
    CHECK(z1.at(1) >= z0.at(1));
  }
}

TEST_CASE("gradient w.r.t. W1 matches finite differences") {
  Rng rng(9);
  auto p = RcaParams<double>::make(4, rng);
  auto x = random_tensor<double>({4, 5, 5}, rng);
  auto forward = [&]() {
    return ops::sum_all(rca_forward(x, ResolutionClass::High, p)).item();
  };
  auto backward = [&]() {
    for (auto t : p.parameters()) t.zero_grad();
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto loss = ops::sum_all(rca_forward(x, ResolutionClass::High, p));
    tape.backward(loss);
  };
  CHECK(dfyp_test::fd_max_rel_err<double>(forward, backward, {p.w1, p.w2, p.b1, p.b2}, 8,
                                          rng, 1e-5, 1e-3) <= 1e-6);
}

TEST_CASE("batched rca matches per-sample evaluation") {
  Rng rng(10);
  auto p = RcaParams<float>::make(3, rng);
  auto xb = random_tensor<float>({2, 3, 4, 4}, rng);
  auto yb = rca_forward(xb, ResolutionClass::Low, p);
  REQUIRE(yb.shape() == xb.shape());
  for (int n = 0; n < 2; ++n) {
    auto x = Tensor<float>::zeros({3, 4, 4});
    std::copy(xb.data() + n * 48, xb.data() + (n + 1) * 48, x.data());
    auto y = rca_forward(x, ResolutionClass::Low, p);
    for (int i = 0; i < 48; ++i)
      CHECK(yb.data()[n * 48 + i] == doctest::Approx(y.data()[i]).epsilon(1e-6));
  }
}
