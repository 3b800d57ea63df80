#pragma once

#include <cmath>
#include <cstdint>

#include "mmdgm/errors.hpp"
#include "mmdgm/random.hpp"
#include "mmdgm/tape.hpp"
#include "mmdgm/tensor.hpp"

namespace mmdgm {

inline constexpr double kLn2Pi = 1.8378770664093454836;

// Diagonal-Gaussian variational posterior, sigma stored as log-variance.
template <class S>
struct LatentGaussian {
  Tensor<S> mu;
  Tensor<S> log_var;
};

template <class S>
void validate(const LatentGaussian<S>& q) {
  if (!same_shape(q.mu, q.log_var))
    throw DimensionError("latent gaussian: mu " + q.mu.shape_str() + " vs log_var " +
                         q.log_var.shape_str());
  if (!q.mu.all_finite() || !q.log_var.all_finite())
    throw NumericError("latent gaussian with non-finite parameters");
}

// Standard-normal draws, L rows of K, plus the seed they came from.
template <class S>
struct NoiseDraw {
  Tensor<S> eps;
  std::uint64_t seed = 0;
};

template <class S>
NoiseDraw<S> noise_draw(int L, int K, std::uint64_t seed) {
  if (L < 1 || K < 1) throw ContractError("noise_draw: L and K must be positive");
  Rng r(seed, STREAM_NOISE);
  Tensor<S> e = Tensor<S>::zeros({L, K});
  for (Eigen::Index i = 0; i < e.size(); ++i) e.data[i] = static_cast<S>(r.normal());
  return NoiseDraw<S>{std::move(e), seed};
}

// ---- tape builders (batched, rank-2 rows) --------------------------------

// z = mu + exp(0.5 log_var) (.) eps, all [B x K].
template <class S>
Var<S> reparameterize_rows(Var<S> mu, Var<S> log_var, Var<S> eps) {
  return add(mu, mul(exp(mul_scalar(log_var, S(0.5))), eps));
}

// Per-row KL(q || N(0, I)): 0.5 sum_k (mu^2 + sigma^2 - 1 - log sigma^2).
template <class S>
Var<S> kl_rows(Var<S> mu, Var<S> log_var) {
  auto term = sub(add(mul(mu, mu), exp(log_var)), add_scalar(log_var, S(1)));
  return mul_scalar(reduce_sum_rows(term), S(0.5));
}

// Per-row Bernoulli cross-entropy log-likelihood; p clamped into
// [1e-6, 1-1e-6]. Valid for fractional targets.
template <class S>
Var<S> bernoulli_ll_rows(Var<S> x, Var<S> p) {
  auto pc = clamp(p, S(1e-6), S(1) - S(1e-6));
  auto pos = mul(x, log(pc));
  auto negpart = mul(add_scalar(neg(x), S(1)), log(add_scalar(neg(pc), S(1))));
  return reduce_sum_rows(add(pos, negpart));
}

// Per-row diagonal-Gaussian log-density of x under (mean, log_var). Serves
// both the Gaussian decoder likelihood and log q(z) in the score estimator.
template <class S>
Var<S> gaussian_logpdf_rows(Var<S> x, Var<S> mean, Var<S> log_var) {
  auto d = sub(x, mean);
  auto quad = mul(mul(d, d), exp(neg(log_var)));
  auto per = add(add_scalar(log_var, S(kLn2Pi)), quad);
  return mul_scalar(reduce_sum_rows(per), S(-0.5));
}

// ---- value-level operations ----------------------------------------------

template <class S>
Tensor<S> reparameterize(const LatentGaussian<S>& q, const NoiseDraw<S>& noise) {
  validate(q);
  if (noise.eps.rank() != 2 || q.mu.rank() != 1 || noise.eps.shape[1] != q.mu.shape[0])
    throw DimensionError("reparameterize: eps " + noise.eps.shape_str() + " vs mu " +
                         q.mu.shape_str());
  int L = noise.eps.shape[0], K = noise.eps.shape[1];
  Tensor<S> z = Tensor<S>::zeros({L, K});
  for (int l = 0; l < L; ++l)
    for (int k = 0; k < K; ++k)
      z.at(l, k) = q.mu.data[k] +
                   std::exp(S(0.5) * q.log_var.data[k]) * noise.eps.at(l, k);
  return z;
}

namespace detail {

// Runs a rank-1 pair through a row builder on a scratch tape, B = 1.
template <class S>
Tensor<S> as_row(const Tensor<S>& v) {
  if (v.rank() != 1) throw DimensionError("expected rank 1, got " + v.shape_str());
  Tensor<S> r = Tensor<S>::zeros({1, v.shape[0]});
  r.data = v.data;
  return r;
}

}  // namespace detail

template <class S>
S kl_to_std_normal(const LatentGaussian<S>& q) {
  validate(q);
  Tape<S> t;
  auto v = kl_rows(t.constant(detail::as_row(q.mu)), t.constant(detail::as_row(q.log_var)));
  return t.val(v).data[0];
}

template <class S>
S gaussian_log_density(const Tensor<S>& z, const LatentGaussian<S>& q) {
  validate(q);
  if (!same_shape(z, q.mu))
    throw DimensionError("gaussian_log_density: z " + z.shape_str() + " vs mu " +
                         q.mu.shape_str());
  Tape<S> t;
  auto v = gaussian_logpdf_rows(t.constant(detail::as_row(z)),
                                t.constant(detail::as_row(q.mu)),
                                t.constant(detail::as_row(q.log_var)));
  return t.val(v).data[0];
}

template <class S>
S bernoulli_log_lik(const Tensor<S>& x, const Tensor<S>& p) {
  if (!same_shape(x, p))
    throw DimensionError("bernoulli_log_lik: x " + x.shape_str() + " vs p " + p.shape_str());
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (!(x.data[i] >= S(0) && x.data[i] <= S(1)))
      throw DomainError("bernoulli_log_lik: x outside [0,1]");
  Tape<S> t;
  auto v = bernoulli_ll_rows(t.constant(detail::as_row(x)), t.constant(detail::as_row(p)));
  return t.val(v).data[0];
}

template <class S>
S gaussian_log_lik(const Tensor<S>& x, const Tensor<S>& mean, const Tensor<S>& log_var) {
  if (!same_shape(x, mean) || !same_shape(x, log_var))
    throw DimensionError("gaussian_log_lik: mismatched shapes");
  Tape<S> t;
  auto v = gaussian_logpdf_rows(t.constant(detail::as_row(x)), t.constant(detail::as_row(mean)),
                                t.constant(detail::as_row(log_var)));
  return t.val(v).data[0];
}

}  // namespace mmdgm
