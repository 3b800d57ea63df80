#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace mmdgm {

// Every consumer of randomness draws from its own stream, derived from the
// run seed and a fixed stream id, so adding draws in one component never
// shifts another component's sequence.
enum : std::uint64_t {
  STREAM_INIT = 1,
  STREAM_NOISE = 2,
  STREAM_BATCH = 3,
  STREAM_SPLIT = 4,
  STREAM_PEGASOS = 5,
  STREAM_GENERATE = 6,
  STREAM_IMPUTE = 7,
  STREAM_SYNTH = 8,
  STREAM_BINARIZE = 9,
  STREAM_EVAL = 10,
};

// mt19937_64 plus hand-rolled transforms. std::normal_distribution and
// std::shuffle are implementation-defined; run manifests promise bit-for-bit
// reproduction, so the transforms are pinned here.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq sq{static_cast<std::uint32_t>(seed),
                     static_cast<std::uint32_t>(seed >> 32),
                     static_cast<std::uint32_t>(stream),
                     static_cast<std::uint32_t>(stream >> 32)};
    eng_.seed(sq);
  }

  // Uniform on [0,1), 53 random bits.
  double uniform() { return double(eng_() >> 11) * 0x1.0p-53; }

  // Box-Muller; caches the second variate.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  // Uniform integer in [0, n), unbiased.
  std::uint64_t integer(std::uint64_t n) {
    std::uint64_t lim = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = eng_();
    } while (v >= lim);
    return v % n;
  }

  // Fisher-Yates.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(integer(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t bits() { return eng_(); }

 private:
  std::mt19937_64 eng_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace mmdgm
