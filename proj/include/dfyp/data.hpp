#pragma once

#include <cstdint>
#include <set>
#include <string>

#include "dfyp/edge_ops.hpp"
#include "dfyp/rng.hpp"
#include "dfyp/tensor.hpp"

namespace dfyp {
namespace data {

constexpr float kMaskedSentinel = std::numeric_limits<float>::quiet_NaN();
constexpr int kHistBins = 32;
constexpr int kHistSteps = 32;
constexpr int kModisRawSteps = 45;  // 8-day composites kept within one season

inline bool is_masked(float v) { return std::isnan(v); }

// bands_1year = N * floor(365/M).
inline int bands_per_year(int n_channels, int interval_days) {
  if (n_channels < 1 || interval_days < 1)
    throw ParamError("bands_per_year: channels and interval must be positive");
  return n_channels * (365 / interval_days);
}

// 1 where the land-cover code is a crop class, else 0.
inline Tensor<float> build_mask(const Tensor<float>& landcover,
                                const std::set<int>& crop_classes) {
  if (landcover.rank() != 2) throw ShapeError("build_mask: landcover must be [H,W]");
  auto mask = Tensor<float>::zeros(landcover.shape());
  for (std::size_t i = 0; i < landcover.size(); ++i)
    mask.data()[i] =
        crop_classes.count(static_cast<int>(landcover.data()[i])) ? 1.0f : 0.0f;
  return mask;
}

inline int mask_valid_count(const Tensor<float>& mask) {
  int n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) n += mask.data()[i] == 1.0f;
  return n;
}

// Masked-out pixels become the NaN sentinel on every band/time step; valid
// pixels pass through. Idempotent by construction.
inline Tensor<float> apply_mask(const Tensor<float>& stack, const Tensor<float>& mask) {
  if (mask.rank() != 2) throw ShapeError("apply_mask: mask must be [H,W]");
  if (stack.rank() != 3 && stack.rank() != 4)
    throw ShapeError("apply_mask: stack must be [B,H,W] or [T,C,H,W]");
  const int h = stack.extent(stack.rank() - 2), w = stack.extent(stack.rank() - 1);
  if (h != mask.extent(0) || w != mask.extent(1))
    throw ShapeError("apply_mask: spatial shapes differ, " + shape_str(stack.shape()) +
                     " vs " + shape_str(mask.shape()));
  auto out = stack.clone();
  const std::size_t planes = stack.size() / (static_cast<std::size_t>(h) * w);
  for (std::size_t p = 0; p < planes; ++p) {
    float* plane = out.data() + p * h * w;
    for (int k = 0; k < h * w; ++k)
      if (mask.data()[k] != 1.0f) plane[k] = kMaskedSentinel;
  }
  return out;
}

// Reflectance bands first, temperature bands last; fixed documented order.
inline Tensor<float> combine_channels(const Tensor<float>& reflectance,
                                      const Tensor<float>& temperature) {
  if (reflectance.rank() != temperature.rank() ||
      (reflectance.rank() != 3 && reflectance.rank() != 4))
    throw ShapeError("combine_channels: expected matching [C,H,W] or [T,C,H,W] inputs");
  const bool timed = reflectance.rank() == 4;
  const int t = timed ? reflectance.extent(0) : 1;
  if (timed && temperature.extent(0) != t)
    throw ShapeError("combine_channels: time-step counts differ");
  const int cr = reflectance.extent(timed ? 1 : 0), ct = temperature.extent(timed ? 1 : 0);
  const int h = reflectance.extent(timed ? 2 : 1), w = reflectance.extent(timed ? 3 : 2);
  if (h != temperature.extent(timed ? 2 : 1) || w != temperature.extent(timed ? 3 : 2))
    throw ShapeError("combine_channels: spatial shapes differ");
  Shape out_shape = timed ? Shape{t, cr + ct, h, w} : Shape{cr + ct, h, w};
  auto out = Tensor<float>::zeros(out_shape);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ts = 0; ts < t; ++ts) {
    float* dst = out.data() + static_cast<std::size_t>(ts) * (cr + ct) * hw;
    const float* sr = reflectance.data() + static_cast<std::size_t>(ts) * cr * hw;
    const float* st = temperature.data() + static_cast<std::size_t>(ts) * ct * hw;
    std::copy(sr, sr + cr * hw, dst);
    std::copy(st, st + ct * hw, dst + cr * hw);
  }
  return out;
}

using ChannelRanges = std::vector<std::pair<double, double>>;

// Uniform selection of kHistSteps indices from the raw time axis.
inline int resampled_step(int i, int t_raw) { return (i * t_raw) / kHistSteps; }

// Per (channel, resampled time step): counts of valid pixels in equal-width
// bins over the channel's fixed range; out-of-range values clamp to the first
// or last bin. Output [C, bins, steps]; bin sums preserve valid-pixel counts.
inline Tensor<float> histogram_transform(const Tensor<float>& stack,
                                         const ChannelRanges& ranges,
                                         int bins = kHistBins) {
  if (stack.rank() != 4) throw ShapeError("histogram_transform: stack must be [T,C,H,W]");
  const int t_raw = stack.extent(0), c = stack.extent(1);
  const int h = stack.extent(2), w = stack.extent(3);
  if (static_cast<int>(ranges.size()) != c)
    throw ParamError("histogram_transform: need one range per channel");
  for (const auto& [lo, hi] : ranges)
    if (!(std::isfinite(lo) && std::isfinite(hi) && lo < hi))
      throw ParamError("histogram_transform: ranges must be finite with min < max");
  auto out = Tensor<float>::zeros({c, bins, kHistSteps});
  long total_valid = 0;
  for (int ts = 0; ts < kHistSteps; ++ts) {
    const int src = resampled_step(ts, t_raw);
    for (int ch = 0; ch < c; ++ch) {
      const float* plane =
          stack.data() + (static_cast<std::size_t>(src) * c + ch) * h * w;
      const double lo = ranges[ch].first, inv = bins / (ranges[ch].second - ranges[ch].first);
      for (int k = 0; k < h * w; ++k) {
        if (is_masked(plane[k])) continue;
        int b = static_cast<int>((plane[k] - lo) * inv);
        b = std::max(0, std::min(bins - 1, b));
        out.at(ch, b, ts) += 1.0f;
        ++total_valid;
      }
    }
  }
  if (total_valid == 0)
    throw ParamError("histogram_transform: unusable tile, no valid pixels at any time step");
  return out;
}

// Training-split value ranges with a 1% trim per tail, via a fixed-width
// sketch between the observed extremes.
class RangeSketch {
 public:
  explicit RangeSketch(int channels) : lo_(channels, 1e300), hi_(channels, -1e300),
                                       counts_(channels) {}

  void observe_extremes(const Tensor<float>& stack) {
    for_each_valid(stack, [&](int ch, float v) {
      lo_[ch] = std::min(lo_[ch], static_cast<double>(v));
      hi_[ch] = std::max(hi_[ch], static_cast<double>(v));
    });
  }
  void finalize_extremes() {
    for (auto& c : counts_) c.assign(kSketchBins, 0);
  }
  void observe_values(const Tensor<float>& stack) {
    for_each_valid(stack, [&](int ch, float v) {
      if (hi_[ch] <= lo_[ch]) return;
      int b = static_cast<int>((v - lo_[ch]) / (hi_[ch] - lo_[ch]) * kSketchBins);
      b = std::max(0, std::min(kSketchBins - 1, b));
      ++counts_[ch][b];
    });
  }

  ChannelRanges ranges(double trim = 0.01) const {
    ChannelRanges out;
    for (std::size_t ch = 0; ch < lo_.size(); ++ch) {
      double lo = lo_[ch], hi = hi_[ch];
      if (!(lo < hi)) {  // constant channel: widen so bins are well defined
        lo = lo_[ch] - 0.5;
        hi = hi_[ch] + 0.5;
        out.emplace_back(lo, hi);
        continue;
      }
      long total = 0;
      for (long v : counts_[ch]) total += v;
      const double width = (hi - lo) / kSketchBins;
      long acc = 0;
      double qlo = lo, qhi = hi;
      for (int b = 0; b < kSketchBins; ++b) {
        acc += counts_[ch][b];
        if (acc >= static_cast<long>(trim * total)) {
          qlo = lo + b * width;
          break;
        }
      }
      acc = 0;
      for (int b = kSketchBins - 1; b >= 0; --b) {
        acc += counts_[ch][b];
        if (acc >= static_cast<long>(trim * total)) {
          qhi = lo + (b + 1) * width;
          break;
        }
      }
      if (!(qlo < qhi)) {
        qlo = lo;
        qhi = hi;
      }
      out.emplace_back(qlo, qhi);
    }
    return out;
  }

 private:
  static constexpr int kSketchBins = 4096;
  std::vector<double> lo_, hi_;
  std::vector<std::vector<long>> counts_;

  template <class F>
  static void for_each_valid_impl(const Tensor<float>& stack, F&& f) {
    const int c = stack.extent(1), hw = stack.extent(2) * stack.extent(3);
    for (int t = 0; t < stack.extent(0); ++t)
      for (int ch = 0; ch < c; ++ch) {
        const float* plane = stack.data() + (static_cast<std::size_t>(t) * c + ch) * hw;
        for (int k = 0; k < hw; ++k)
          if (!is_masked(plane[k])) f(ch, plane[k]);
      }
  }
  template <class F>
  void for_each_valid(const Tensor<float>& stack, F&& f) {
    if (stack.rank() != 4) throw ShapeError("range sketch: stack must be [T,C,H,W]");
    for_each_valid_impl(stack, std::forward<F>(f));
  }
};

// ---------------------------------------------------------------------------
// Synthetic benchmark generator
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  std::string preset = "modis-like";  // modis-like | sentinel-like | drift
  int min_fields = 2, max_fields = 5;
  std::vector<double> w;   // band-mean weights; preset default when empty
  double v = 0.0;          // edge-density weight
  double sigma = -1.0;     // < 0: derived from target_r2
  double target_r2 = 0.9;
  std::uint64_t seed = 7;

  int channels() const { return preset == "modis-like" ? 9 : 3; }
  int raw_size() const {
    if (preset == "modis-like") return 16;
    if (preset == "sentinel-like") return 256;
    return 32;  // drift
  }
  std::vector<double> weights() const {
    if (!w.empty()) return w;
    std::vector<double> def(channels());
    for (int i = 0; i < channels(); ++i) def[i] = 40.0 / (i + 1);
    return def;
  }
  double edge_weight() const {
    if (v != 0.0) return v;
    return preset == "drift" ? 25.0 : 0.0;
  }
};

struct Sample {
  std::string id;
  Tensor<float> x;               // model input
  double label = 0;
  std::vector<double> features;  // generator features: band means + edge density
  int year = 0;
  int region = 0;
  std::string split;             // train | val | test
};

struct Dataset {
  std::string preset;
  std::vector<Sample> samples;
  ChannelRanges ranges;  // modis-like only
  double sigma_used = 0;

  std::vector<int> split_indices(const std::string& split) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(samples.size()); ++i)
      if (samples[i].split == split) out.push_back(i);
    return out;
  }
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t idx, std::uint64_t salt) {
  std::uint64_t x = seed * 0x9e3779b97f4a7c15ULL + idx * 0xbf58476d1ce4e5b9ULL + salt;
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

// Mean gradient magnitude of a [C,H,W] tile under one kernel pair.
inline double edge_density(const Tensor<float>& tile, const edge::KernelPair& kp) {
  const int c = tile.extent(0), h = tile.extent(1), w = tile.extent(2);
  auto mirror = [](int i, int lim) {
    if (i < 0) return -i;
    if (i >= lim) return 2 * lim - 2 - i;
    return i;
  };
  long double acc = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double gx = 0, gy = 0;
        for (int u = 0; u < 3; ++u)
          for (int v = 0; v < 3; ++v) {
            const double pix = tile.at(ch, mirror(i + u - 1, h), mirror(j + v - 1, w));
            gx += kp.kx[u * 3 + v] * pix;
            gy += kp.ky[u * 3 + v] * pix;
          }
        acc += std::sqrt(gx * gx + gy * gy);
      }
  return static_cast<double>(acc / (static_cast<long double>(c) * h * w));
}

struct RawSample {
  Tensor<float> raw;       // [T,C,H,W] (T=1 outside modis-like), masked
  Tensor<float> mask;      // [H,W]
  std::vector<double> features;
  double signal = 0;       // noiseless label
};

// Deterministic per-(spec, index) tile: smooth per-channel background plus
// seeded rectangular "fields" that create edges, then a seeded cover mask.
inline RawSample generate_raw(const SyntheticSpec& spec, int idx) {
  Rng rng(mix_seed(spec.seed, idx, 0xA11CE));
  const int c = spec.channels(), hw = spec.raw_size();
  const int t = spec.preset == "modis-like" ? kModisRawSteps : 1;
  auto raw = Tensor<float>::zeros({t, c, hw, hw});

  std::vector<double> base(c);
  for (int ch = 0; ch < c; ++ch) base[ch] = rng.uniform(0.2, 0.8);
  const int n_fields = spec.min_fields + rng.integer(spec.max_fields - spec.min_fields + 1);
  struct Field {
    int i0, j0, i1, j1;
    std::vector<double> delta;
  };
  std::vector<Field> fields;
  for (int f = 0; f < n_fields; ++f) {
    Field fl;
    fl.i0 = rng.integer(hw - 2);
    fl.j0 = rng.integer(hw - 2);
    fl.i1 = fl.i0 + 2 + rng.integer(std::max(1, hw / 2));
    fl.j1 = fl.j0 + 2 + rng.integer(std::max(1, hw / 2));
    fl.i1 = std::min(fl.i1, hw);
    fl.j1 = std::min(fl.j1, hw);
    fl.delta.resize(c);
    for (int ch = 0; ch < c; ++ch) fl.delta[ch] = rng.uniform(-0.35, 0.35);
    fields.push_back(fl);
  }
  // fields are time-invariant; bake their per-channel offsets into one plane
  std::vector<double> delta(static_cast<std::size_t>(c) * hw * hw, 0.0);
  for (const auto& fl : fields)
    for (int ch = 0; ch < c; ++ch)
      for (int i = fl.i0; i < fl.i1; ++i)
        for (int j = fl.j0; j < fl.j1; ++j)
          delta[(static_cast<std::size_t>(ch) * hw + i) * hw + j] += fl.delta[ch];
  for (int ts = 0; ts < t; ++ts) {
    // seasonal ramp keeps the temporal axis informative for modis-like tiles
    const double season = t > 1 ? 0.1 * std::sin(2.0 * M_PI * ts / t) : 0.0;
    for (int ch = 0; ch < c; ++ch) {
      const double* dp = delta.data() + static_cast<std::size_t>(ch) * hw * hw;
      float* out = raw.data() + (static_cast<std::size_t>(ts) * c + ch) * hw * hw;
      for (int k = 0; k < hw * hw; ++k)
        out[k] = static_cast<float>(base[ch] + season + dp[k] +
                                    0.07 * (rng.uniform() - 0.5));
    }
  }

  // ~12% of pixels masked out; tiles are guaranteed non-empty
  auto mask = Tensor<float>::full({hw, hw}, 1.0f);
  for (int k = 0; k < hw * hw; ++k)
    if (rng.uniform() < 0.12) mask.data()[k] = 0.0f;
  if (mask_valid_count(mask) == 0) mask.data()[0] = 1.0f;

  RawSample out;
  out.mask = mask;

  // band means over valid pixels and all time steps
  std::vector<double> means(c, 0.0);
  const int valid = mask_valid_count(mask);
  for (int ch = 0; ch < c; ++ch) {
    long double s = 0;
    for (int ts = 0; ts < t; ++ts)
      for (int k = 0; k < hw * hw; ++k)
        if (mask.data()[k] == 1.0f)
          s += raw.data()[(static_cast<std::size_t>(ts) * c + ch) * hw * hw + k];
    means[ch] = static_cast<double>(s / (static_cast<long double>(valid) * t));
  }

  // edge density on the unmasked first time step; drift tiles alternate the
  // generating operator in blocks of two so both regimes land in every split
  auto first = Tensor<float>::zeros({c, hw, hw});
  std::copy(raw.data(), raw.data() + first.size(), first.data());
  const edge::KernelPair kp = (spec.preset == "drift" && (idx / 2) % 2 == 1)
                                  ? edge::scharr_pair()
                                  : edge::sobel_pair();
  const double ed = edge_density(first, kp);

  out.features = means;
  out.features.push_back(ed);
  const auto wts = spec.weights();
  double sig = 0;
  for (int ch = 0; ch < c; ++ch) sig += wts[ch] * means[ch];
  sig += spec.edge_weight() * ed;
  out.signal = sig;
  out.raw = apply_mask(raw, mask);
  return out;
}

inline std::string split_of(int idx) {
  const int m = idx % 10;
  if (m < 8) return "train";
  return m == 8 ? "val" : "test";
}

}  // namespace detail

// Builds the full synthetic dataset: two deterministic generation passes
// (ranges and noise scale come from the training split only).
inline Dataset synth_generate(const SyntheticSpec& spec, int n_samples) {
  if (n_samples < 1) throw ParamError("synth_generate: need at least one sample");
  if (spec.preset != "modis-like" && spec.preset != "sentinel-like" &&
      spec.preset != "drift")
    throw ParamError("synth_generate: unknown preset '" + spec.preset + "'");

  Dataset ds;
  ds.preset = spec.preset;
  const bool hist = spec.preset == "modis-like";

  // pass 1: training-split statistics (value ranges, signal variance)
  RangeSketch sketch(spec.channels());
  double sig_sum = 0, sig_sq = 0;
  int n_train = 0;
  for (int i = 0; i < n_samples; ++i) {
    if (detail::split_of(i) != "train") continue;
    auto rs = detail::generate_raw(spec, i);
    if (hist) sketch.observe_extremes(rs.raw);
    sig_sum += rs.signal;
    sig_sq += rs.signal * rs.signal;
    ++n_train;
  }
  if (n_train == 0) throw ParamError("synth_generate: no training samples for n_samples");
  if (hist) {
    sketch.finalize_extremes();
    for (int i = 0; i < n_samples; ++i) {
      if (detail::split_of(i) != "train") continue;
      sketch.observe_values(detail::generate_raw(spec, i).raw);
    }
    ds.ranges = sketch.ranges();
  }
  const double sig_mean = sig_sum / n_train;
  const double sig_var = std::max(0.0, sig_sq / n_train - sig_mean * sig_mean);
  double sigma = spec.sigma;
  if (sigma < 0) {
    // var(noise) = var(signal) * (1 - r2) / r2 puts the OLS ceiling at r2
    sigma = std::sqrt(sig_var * (1.0 - spec.target_r2) / spec.target_r2);
  }
  ds.sigma_used = sigma;

  // pass 2: materialize samples
  for (int i = 0; i < n_samples; ++i) {
    auto rs = detail::generate_raw(spec, i);
    Sample s;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "s%05d", i);
    s.id = buf;
    s.features = rs.features;
    Rng noise(detail::mix_seed(spec.seed, i, 0xBEEF));
    s.label = rs.signal + sigma * noise.normal();
    s.year = 2000 + i % 20;
    s.region = i % 97;
    s.split = detail::split_of(i);
    if (hist) {
      s.x = histogram_transform(rs.raw, ds.ranges);
    } else {
      s.x = Tensor<float>::zeros({spec.channels(), spec.raw_size(), spec.raw_size()});
      for (std::size_t k = 0; k < s.x.size(); ++k) {
        const float v = rs.raw.data()[k];
        s.x.data()[k] = is_masked(v) ? 0.0f : v;  // raw presets feed pixels directly
      }
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace data
}  // namespace dfyp
