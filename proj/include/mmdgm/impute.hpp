#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mmdgm/margin.hpp"
#include "mmdgm/modelset.hpp"
#include "mmdgm/nets.hpp"
#include "mmdgm/random.hpp"

namespace mmdgm {

enum class MaskKind { rand_drop = 0, rect = 1 };

struct MissingMask {
  std::vector<std::uint8_t> mask;  // 1 = missing
  MaskKind kind = MaskKind::rand_drop;

  int dim() const { return static_cast<int>(mask.size()); }
  bool missing(int d) const { return mask[static_cast<std::size_t>(d)] != 0; }
  int missing_count() const {
    int n = 0;
    for (auto b : mask) n += b != 0;
    return n;
  }
};

inline MissingMask rand_drop_mask(int D, double p, std::uint64_t seed) {
  if (D < 1) throw ContractError("rand_drop_mask: D must be positive");
  if (p < 0.0 || p > 1.0) throw ContractError("rand_drop_mask: p must lie in [0, 1]");
  MissingMask m;
  m.kind = MaskKind::rand_drop;
  m.mask.assign(static_cast<std::size_t>(D), 0);
  Rng r(seed, STREAM_IMPUTE);
  for (int d = 0; d < D; ++d) m.mask[static_cast<std::size_t>(d)] = r.uniform() < p ? 1 : 0;
  return m;
}

// Centered r x r square of missing pixels on an s-sided image.
inline MissingMask rect_mask(int side, int r) {
  if (side < 1) throw ContractError("rect_mask: side must be positive");
  if (r < 0 || r > side) throw ContractError("rect_mask: rectangle does not fit the image");
  MissingMask m;
  m.kind = MaskKind::rect;
  m.mask.assign(static_cast<std::size_t>(side) * static_cast<std::size_t>(side), 0);
  int o = (side - r) / 2;
  for (int i = o; i < o + r; ++i)
    for (int j = o; j < o + r; ++j) m.mask[static_cast<std::size_t>(i * side + j)] = 1;
  return m;
}

enum class ImputeInit { uniform01 = 0, gaussian = 1 };

template <class S>
struct ImputeResult {
  Tensor<S> completed;
  std::vector<Tensor<S>> trajectory;  // iters + 1 entries, the initial fill first
};

// Fill the missing pixels, then repeatedly re-encode the current image and
// replace the missing pixels with the decoder's expectations. Observed
// pixels are never touched.
template <class S>
ImputeResult<S> impute_iterate(ParamStore<S>& st, const RecognitionNet<S>& enc,
                               const DecoderNet<S>& dec, const Tensor<S>& x_observed,
                               const MissingMask& mask, int iters, ImputeInit init,
                               std::uint64_t seed, int y = -1, int L = 1) {
  if (x_observed.rank() != 1 || x_observed.shape[0] != enc.x_dim)
    throw DimensionError("impute: sample " + x_observed.shape_str() + " vs x_dim " +
                         std::to_string(enc.x_dim));
  if (mask.dim() != enc.x_dim) throw DimensionError("impute: mask does not cover the image");
  if (iters < 1) throw ContractError("impute: iters must be >= 1");
  if (L < 1) throw ContractError("impute: L must be >= 1");
  if ((enc.conditions_on_label || dec.conditions_on_label) && y < 0)
    throw ContractError("impute: class-conditional model needs a label");

  Rng rng(seed, STREAM_IMPUTE);
  Tensor<S> x = x_observed;
  for (int d = 0; d < mask.dim(); ++d)
    if (mask.missing(d))
      x.at(d) = init == ImputeInit::uniform01 ? static_cast<S>(rng.uniform())
                                              : static_cast<S>(rng.normal());

  ImputeResult<S> out;
  out.trajectory.reserve(static_cast<std::size_t>(iters) + 1);
  out.trajectory.push_back(x);
  std::vector<int> ys;
  if (y >= 0) ys.assign(static_cast<std::size_t>(L), y);
  for (int it = 0; it < iters; ++it) {
    auto q = recognize(st, enc, x, enc.conditions_on_label ? y : -1);
    Tensor<S> Z = Tensor<S>::zeros({L, enc.latent_dim});
    for (int l = 0; l < L; ++l)
      for (int k = 0; k < enc.latent_dim; ++k)
        Z.at(l, k) =
            q.mu.at(k) + std::exp(S(0.5) * q.log_var.at(k)) * static_cast<S>(rng.normal());
    Tensor<S> E = decode_expectations(st, dec, Z, dec.conditions_on_label ? &ys : nullptr);
    for (int d = 0; d < mask.dim(); ++d) {
      if (!mask.missing(d)) continue;
      S acc = S(0);
      for (int l = 0; l < L; ++l) acc += E.at(l, d);
      x.at(d) = acc / static_cast<S>(L);
    }
    out.trajectory.push_back(x);
  }
  out.completed = x;
  return out;
}

// Mean squared error over the missing positions (the whole image with
// missing_only = false).
template <class S>
S mse_missing(const Tensor<S>& x_true, const Tensor<S>& x_completed, const MissingMask& mask,
              bool missing_only = true) {
  if (x_true.rank() != 1 || x_completed.rank() != 1 || x_true.shape[0] != x_completed.shape[0])
    throw DimensionError("mse: images " + x_true.shape_str() + " vs " +
                         x_completed.shape_str());
  if (mask.dim() != x_true.shape[0]) throw DimensionError("mse: mask does not cover the image");
  long n = 0;
  S acc = S(0);
  for (int d = 0; d < mask.dim(); ++d) {
    if (missing_only && !mask.missing(d)) continue;
    S e = x_true.at(d) - x_completed.at(d);
    acc += e * e;
    ++n;
  }
  if (n == 0) throw ContractError("mse over an empty mask");
  return acc / static_cast<S>(n);
}

// Refine the missing pixels first, then classify the completed image. A
// class-conditional model is conditioned on the class guessed from the raw
// masked image (the feature net itself never needs a label).
template <class S>
int classify_after_impute(ParamStore<S>& st, const ModelSet<S>& m, const Tensor<S>& x_observed,
                          const MissingMask& mask, int iters, ImputeInit init,
                          std::uint64_t seed, int L = 1) {
  ClassifierWeights<S> clf{st.at("clf/lambda").value, m.sigma_sq};
  int y0 = -1;
  if (m.enc.conditions_on_label || m.dec.conditions_on_label)
    y0 = predict(clf, features(st, m.feature_net(), x_observed, -1, m.fs));
  auto r = impute_iterate(st, m.enc, m.dec, x_observed, mask, iters, init, seed, y0, L);
  return predict(clf, features(st, m.feature_net(), r.completed, -1, m.fs));
}

}  // namespace mmdgm
