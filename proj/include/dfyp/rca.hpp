#pragma once

#include "dfyp/ops.hpp"
#include "dfyp/rng.hpp"

namespace dfyp {
namespace rca {

enum class ResolutionClass { Low, High };

// Low resolution means coarse pixels (large ground-sample distance).
constexpr double kGsdThresholdMeters = 100.0;

inline ResolutionClass classify_resolution(double gsd_meters_per_pixel,
                                           double threshold = kGsdThresholdMeters) {
  if (!(gsd_meters_per_pixel > 0))
    throw ParamError("classify_resolution: GSD must be positive");
  return gsd_meters_per_pixel >= threshold ? ResolutionClass::Low : ResolutionClass::High;
}

inline int reduced_channels(int c, int r) {
  if (c < 1 || r < 1) throw ParamError("rca: channels and reduction ratio must be >= 1");
  return std::max(1, (c + r - 1) / r);
}

template <class T>
struct RcaParams {
  int channels = 0;
  int ratio = 4;
  Tensor<T> w1, b1;  // [C/r, C], [C/r]
  Tensor<T> w2, b2;  // [C, C/r], [C]

  static RcaParams make(int c, Rng& rng, int r = 4) {
    RcaParams p;
    p.channels = c;
    p.ratio = r;
    const int cr = reduced_channels(c, r);
    p.w1 = Tensor<T>::zeros({cr, c});
    p.b1 = Tensor<T>::zeros({cr});
    p.w2 = Tensor<T>::zeros({c, cr});
    p.b2 = Tensor<T>::zeros({c});
    init::kaiming_uniform(p.w1, c, rng);
    init::kaiming_uniform(p.w2, cr, rng);
    for (auto* t : {&p.w1, &p.b1, &p.w2, &p.b2}) t->set_requires_grad(true);
    return p;
  }

  std::vector<Tensor<T>> parameters() { return {w1, b1, w2, b2}; }
};

namespace detail {
template <class T>
Tensor<T> as_batched(const Tensor<T>& x) {
  if (x.rank() == 4) return x;
  if (x.rank() == 3) return ops::reshape(x, {1, x.extent(0), x.extent(1), x.extent(2)});
  throw ShapeError("rca: input must be [C,H,W] or [N,C,H,W], got " + shape_str(x.shape()));
}
}  // namespace detail

// Channel descriptor: global max pooling for Low resolution, global average
// pooling for High. Returns [C] for 3-D input, [N,C] for 4-D.
template <class T>
Tensor<T> squeeze(Tensor<T> x, ResolutionClass res) {
  const bool batched = x.rank() == 4;
  auto z = ops::pool_global(detail::as_batched(x),
                            res == ResolutionClass::Low ? ops::PoolMode::Max
                                                        : ops::PoolMode::Avg);
  return batched ? z : ops::reshape(z, {z.extent(1)});
}

// s = sigmoid(W2 relu(W1 z + b1) + b2), strictly inside (0,1)^C.
template <class T>
Tensor<T> excite(Tensor<T> z, const RcaParams<T>& p) {
  using namespace ops;
  const bool batched = z.rank() == 2;
  if ((batched ? z.extent(1) : z.extent(0)) != p.channels)
    throw ShapeError("excite: descriptor length does not match parameter channels");
  Tensor<T> zr = batched ? z : reshape(z, {1, p.channels});
  auto h = relu(add_rowvec(matmul(zr, transpose(p.w1)), p.b1));
  auto s = sigmoid(add_rowvec(matmul(h, transpose(p.w2)), p.b2));
  return batched ? s : reshape(s, {p.channels});
}

// X~_c = s_c * X_c.
template <class T>
Tensor<T> reweight(Tensor<T> x, Tensor<T> s) {
  const bool batched = x.rank() == 4;
  auto x4 = detail::as_batched(x);
  if (s.rank() == 1) s = ops::reshape(s, {1, s.extent(0)});
  if (s.extent(0) != x4.extent(0) || s.extent(1) != x4.extent(1))
    throw ShapeError("reweight: scale shape " + shape_str(s.shape()) +
                     " does not match input " + shape_str(x.shape()));
  auto y = ops::mul_channelwise(x4, s);
  return batched ? y : ops::reshape(y, x.shape());
}

template <class T>
Tensor<T> rca_forward(Tensor<T> x, ResolutionClass res, const RcaParams<T>& p) {
  return reweight(x, excite(squeeze(x, res), p));
}

}  // namespace rca
}  // namespace dfyp
