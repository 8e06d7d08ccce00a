#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "dfyp/tensor.hpp"

namespace dfyp {

// Seeded draws on top of mt19937_64. Uniform/normal are generated explicitly
// (not via std distributions) so sequences are identical across standard
// library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::mt19937_64& engine() { return eng_; }

  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t integer(std::uint64_t n) { return eng_() % n; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return mean + stddev * r * std::cos(2.0 * M_PI * u2);
  }

  template <class It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) std::swap(first[i - 1], first[integer(i)]);
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

namespace init {

template <class T>
void kaiming_uniform(Tensor<T>& w, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  for (auto& v : w.vec()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <class T>
void xavier_uniform(Tensor<T>& w, int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : w.vec()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <class T>
void normal(Tensor<T>& w, double mean, double stddev, Rng& rng) {
  for (auto& v : w.vec()) v = static_cast<T>(rng.normal(mean, stddev));
}

}  // namespace init
}  // namespace dfyp
