#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mmdgm/distributions.hpp"
#include "mmdgm/margin.hpp"
#include "mmdgm/modelset.hpp"
#include "mmdgm/nets.hpp"

namespace mmdgm {

enum class Estimator { path = 0, score = 1 };

template <class S>
struct TrainConfig {
  S C = S(0);
  S sigma_sq = S(1);
  int L = 1;
  S alpha = S(0.1);
  S alpha_u = S(3);
  S alpha_b = S(0.001);
  int batch_labeled = 100;
  int batch_unlabeled = 100;
  S lr = S(3e-4);
  S lr_decay_factor = S(0.1);
  int lr_decay_epoch = -1;  // -1: two thirds of the way through
  int epochs = 10;
  std::uint64_t seed = 0;
  Estimator estimator = Estimator::path;
  FeatureSource feature_source = FeatureSource::latent_mean;
};

template <class S>
void validate(const TrainConfig<S>& c) {
  if (c.C < S(0)) throw ContractError("C must be >= 0");
  if (!(c.sigma_sq > S(0))) throw ContractError("sigma_sq must be positive");
  if (c.L < 1) throw ContractError("L must be >= 1");
  if (c.alpha < S(0) || c.alpha_u < S(0) || c.alpha_b < S(0))
    throw ContractError("alpha weights must be >= 0");
  if (c.batch_labeled < 1 || c.batch_unlabeled < 1)
    throw ContractError("batch sizes must be positive");
  if (!(c.lr > S(0))) throw ContractError("lr must be positive");
  if (!(c.lr_decay_factor > S(0)) || c.lr_decay_factor > S(1))
    throw ContractError("lr_decay_factor must be in (0, 1]");
  if (c.epochs < 0) throw ContractError("epochs must be >= 0");
}

// Per-step accounting. Terms are logged unweighted (but batch-scaled); the
// objective applies the configured weights, so it can be recomputed from the
// parts.
template <class S>
struct StepReport {
  S objective_estimate = S(0);
  S elbo_term = S(0);     // scaled sum of negative bounds
  S hinge_term = S(0);    // scaled labeled hinge sum, before C or alpha
  S hat_term = S(0);      // scaled unlabeled hat sum, before alpha*alpha_u
  S balance_term = S(0);  // balance penalty, before alpha*alpha_b
  S reg_term = S(0);      // ||lambda||^2 / (2 sigma^2); zero in SSL
  S grad_norm_theta = S(0);
  S grad_norm_phi = S(0);
  S grad_norm_lambda = S(0);
};

template <class S>
struct Batch {
  Tensor<S> X;         // [m x D]
  std::vector<int> y;  // full labels
  long N = 0;          // size of the dataset the batch came from
};

template <class S>
struct SslBatch {
  Tensor<S> XL;  // [mL x D], never empty
  std::vector<int> yL;
  Tensor<S> XU;  // [mU x D]; zero rows allowed
  long NL = 0;
  long NU = 0;
};

template <class S>
ClassifierWeights<S> classifier_view(const ModelSet<S>& m, const ParamStore<S>& st) {
  return ClassifierWeights<S>{st.at("clf/lambda").value, m.sigma_sq};
}

namespace detail {

template <class S>
Tensor<S> repeat_rows(const Tensor<S>& X, int L) {
  if (X.rank() != 2) throw DimensionError("repeat_rows needs rank 2");
  if (L == 1) return X;
  Tensor<S> r = Tensor<S>::zeros({X.shape[0] * L, X.shape[1]});
  for (int i = 0; i < X.shape[0]; ++i)
    for (int l = 0; l < L; ++l) r.mat().row(i * L + l) = X.mat().row(i);
  return r;
}

inline std::vector<int> repeat_labels(const std::vector<int>& y, int L) {
  std::vector<int> r;
  r.reserve(y.size() * static_cast<std::size_t>(L));
  for (int v : y)
    for (int l = 0; l < L; ++l) r.push_back(v);
  return r;
}

template <class S>
Tensor<S> slice_rows(const Tensor<S>& X, int r0, int r1) {
  Tensor<S> r = Tensor<S>::zeros({r1 - r0, X.shape[1]});
  r.mat() = X.mat().middleRows(r0, r1 - r0);
  return r;
}

// One generative bound pass over replicated rows. In score mode the latents
// are detached (constants), the KL is built from detached posterior moments,
// and logq carries the live phi path for the score term; the recognition vars
// stay live either way so deterministic feature paths keep their gradient.
template <class S>
struct BoundRows {
  RecogVars<S> rv;
  Var<S> z;
  Var<S> ll;    // [rows]
  Var<S> kl;    // [rows]
  Var<S> logq;  // [rows], score mode only
  bool score = false;
  Tensor<S> log_pz;  // [rows] values, score mode only
};

template <class S>
BoundRows<S> bound_rows(Tape<S>& t, ParamStore<S>& st, const RecognitionNet<S>& enc,
                        const DecoderNet<S>& dec, const Tensor<S>& Xrep,
                        const std::vector<int>* yrep, const Tensor<S>& eps, Estimator est) {
  if (eps.rank() != 2 || eps.shape[0] != Xrep.shape[0] || eps.shape[1] != enc.latent_dim)
    throw DimensionError("noise " + eps.shape_str() + " does not cover " + Xrep.shape_str() +
                         " with K " + std::to_string(enc.latent_dim));
  BoundRows<S> b;
  b.rv = recognize_rows(t, st, enc, Xrep, yrep);
  if (est == Estimator::path) {
    b.z = reparameterize_rows(b.rv.mu, b.rv.log_var, t.constant(eps));
    b.kl = kl_rows(b.rv.mu, b.rv.log_var);
  } else {
    b.score = true;
    auto mu_c = t.constant(t.val(b.rv.mu));
    auto lv_c = t.constant(t.val(b.rv.log_var));
    b.z = reparameterize_rows(mu_c, lv_c, t.constant(eps));
    b.kl = kl_rows(mu_c, lv_c);
    b.logq = gaussian_logpdf_rows(b.z, b.rv.mu, b.rv.log_var);
    const Tensor<S>& Z = t.val(b.z);
    b.log_pz = Tensor<S>::zeros({Z.shape[0]});
    for (int i = 0; i < Z.shape[0]; ++i) {
      S s = S(0);
      for (int k = 0; k < Z.shape[1]; ++k)
        s += static_cast<S>(kLn2Pi) + Z.at(i, k) * Z.at(i, k);
      b.log_pz.at(i) = S(-0.5) * s;
    }
  }
  auto dv = decode_rows(t, st, dec, b.z, yrep);
  b.ll = likelihood_ll_rows(t, dec, Xrep, dv);
  return b;
}

// Sum of per-example bounds: (1/L)(sum ll - sum kl) + count * log p(y).
template <class S>
Var<S> sum_elbo_var(Tape<S>& t, const BoundRows<S>& b, int L, bool conditional, int M,
                    int examples) {
  auto s = mul_scalar(sub(reduce_sum(b.ll), reduce_sum(b.kl)), S(1) / static_cast<S>(L));
  if (conditional)
    s = add_scalar(s, -static_cast<S>(examples) * std::log(static_cast<S>(M)));
  return s;
}

// Features the supervised hinge sees, drawn from the bound pass itself:
// sampled latents when latent_mean with L > 1, deterministic heads otherwise.
template <class S>
Var<S> bound_feature_rows(const BoundRows<S>& b, FeatureSource fs, int L) {
  if (fs == FeatureSource::latent_mean) return L > 1 ? b.z : b.rv.mu;
  return feature_rows(b.rv, fs);
}

template <class S>
bool sampled_features(FeatureSource fs, int L) {
  return fs == FeatureSource::latent_mean && L > 1;
}

template <class S>
S group_grad_norm(const ParamStore<S>& st, const std::vector<std::string>& prefixes) {
  S ss = S(0);
  for (int i = 0; i < st.size(); ++i) {
    for (const auto& p : prefixes) {
      if (st.at(i).name.rfind(p, 0) == 0) {
        ss += static_cast<S>(st.at(i).grad.data.squaredNorm());
        break;
      }
    }
  }
  return std::sqrt(ss);
}

template <class S>
void fill_grad_norms(const ParamStore<S>& st, StepReport<S>& rep) {
  rep.grad_norm_theta = group_grad_norm(st, {"dec/"});
  rep.grad_norm_phi = group_grad_norm(st, {"enc/", "feat/"});
  rep.grad_norm_lambda = group_grad_norm(st, {"clf/"});
}

}  // namespace detail

// ---- value-level bounds ------------------------------------------------------

// Evidence lower bound for one example; L is taken from the noise draw.
// Conditional models add the uniform label prior log p(y) = -log M.
template <class S>
S elbo(ParamStore<S>& st, const RecognitionNet<S>& enc, const DecoderNet<S>& dec,
       const Tensor<S>& x, int y, const NoiseDraw<S>& noise) {
  if (x.rank() != 1 || x.shape[0] != enc.x_dim)
    throw DimensionError("elbo: sample " + x.shape_str() + " vs x_dim " +
                         std::to_string(enc.x_dim));
  int L = noise.eps.shape[0];
  Tensor<S> xr = Tensor<S>::zeros({1, x.shape[0]});
  xr.data = x.data;
  Tensor<S> Xrep = detail::repeat_rows(xr, L);
  std::vector<int> yrep;
  if (y >= 0) yrep.assign(static_cast<std::size_t>(L), y);
  Tape<S> t;
  auto b = detail::bound_rows(t, st, enc, dec, Xrep, y >= 0 ? &yrep : nullptr, noise.eps,
                              Estimator::path);
  auto s = detail::sum_elbo_var(t, b, L, dec.conditions_on_label, dec.num_classes, 1);
  return t.val(s).at(0);
}

// Log-sum-exp over classes of per-class conditional bounds, all sharing one
// noise draw. Enumeration oracle; refuses to enumerate large label sets.
template <class S>
S marginal_elbo_enumerate(ParamStore<S>& st, const RecognitionNet<S>& enc,
                          const DecoderNet<S>& dec, const Tensor<S>& x,
                          const NoiseDraw<S>& noise) {
  if (!enc.conditions_on_label || !dec.conditions_on_label)
    throw ContractError("marginal bound needs a class-conditional model");
  int M = dec.num_classes;
  if (M > 64) throw ContractError("marginal enumeration refused for M > 64");
  std::vector<S> bounds;
  bounds.reserve(static_cast<std::size_t>(M));
  for (int y = 0; y < M; ++y) bounds.push_back(elbo(st, enc, dec, x, y, noise));
  S hi = bounds[0];
  for (S b : bounds) hi = std::max(hi, b);
  S acc = S(0);
  for (S b : bounds) acc += std::exp(b - hi);
  return hi + std::log(acc);
}

template <class S>
struct PointBound {
  S value = S(0);
  int y_hat = 0;
};

// Classifier-picked label plugged into the conditional bound; no gradient
// flows into the classifier through the argmax.
template <class S>
PointBound<S> point_estimate_bound(ParamStore<S>& st, const ModelSet<S>& m, const Tensor<S>& x,
                                   const NoiseDraw<S>& noise) {
  if (!m.dec.conditions_on_label)
    throw ContractError("point-estimate bound needs a class-conditional model");
  Tensor<S> f = features(st, m.feature_net(), x, -1, m.fs);
  int y_hat = predict(classifier_view(m, st), f);
  return PointBound<S>{elbo(st, m.enc, m.dec, x, y_hat, noise), y_hat};
}

// ---- supervised objective ------------------------------------------------------

// (N/m) sum(-elbo) + ||lambda||^2/(2 sigma^2) + C (N/m) sum hinge. Score mode
// adds a score-function term to the backward pass only; reported values are
// identical across estimators for the same draw.
template <class S>
StepReport<S> supervised_objective(ParamStore<S>& st, const ModelSet<S>& m, const Batch<S>& batch,
                                   const TrainConfig<S>& cfg, const NoiseDraw<S>& noise,
                                   bool with_grad = false) {
  validate(cfg);
  if (batch.X.rank() != 2 || batch.X.shape[0] < 1)
    throw ContractError("supervised batch must be non-empty");
  int mb = batch.X.shape[0];
  if (static_cast<int>(batch.y.size()) != mb)
    throw DimensionError("batch labels do not match rows");
  for (int yi : batch.y)
    if (yi < 0) throw ContractError("supervised batch contains an unlabeled example");
  if (batch.N < mb) throw ContractError("dataset size smaller than the batch");
  int L = cfg.L;
  bool cond = m.enc.conditions_on_label;

  Tensor<S> Xrep = detail::repeat_rows(batch.X, L);
  std::vector<int> yrep = detail::repeat_labels(batch.y, L);

  Tape<S> t;
  auto b = detail::bound_rows(t, st, m.enc, m.dec, Xrep, cond ? &yrep : nullptr, noise.eps,
                              cfg.estimator);
  auto sum_elbo = detail::sum_elbo_var(t, b, L, m.dec.conditions_on_label, m.num_classes, mb);
  S scale = static_cast<S>(batch.N) / static_cast<S>(mb);
  auto gen_term = mul_scalar(neg(sum_elbo), scale);

  Var<S> feat_rows_var = b.z;  // placeholder, reassigned below
  Var<S> fbar = b.z;
  if (m.kind == ModelKind::supervised) {
    feat_rows_var = detail::bound_feature_rows(b, cfg.feature_source, L);
    fbar = block_mean_rows(feat_rows_var, L);
  } else {
    // class-conditional model: the separate feature net supplies the
    // classifier inputs, deterministically
    auto rvf = recognize_rows(t, st, m.feat, batch.X, nullptr);
    fbar = feature_rows(rvf, m.fs);
    feat_rows_var = fbar;
  }
  auto lam = t.param(st, "clf/lambda");
  auto loss = LossMatrix<S>::zero_one(m.num_classes);
  auto hr = hinge_rows(t, lam, fbar, batch.y, loss);
  auto hinge_sum = mul_scalar(reduce_sum(hr.value), scale);
  auto reg = mul_scalar(reduce_sum(mul(lam, lam)), S(1) / (S(2) * cfg.sigma_sq));
  auto obj = add(add(gen_term, reg), mul_scalar(hinge_sum, cfg.C));

  StepReport<S> rep;
  rep.elbo_term = t.val(gen_term).at(0);
  rep.hinge_term = t.val(hinge_sum).at(0);
  rep.reg_term = t.val(reg).at(0);
  rep.objective_estimate = t.val(obj).at(0);

  if (with_grad) {
    auto total = obj;
    if (b.score) {
      // bound part: per-draw weights w = -(ll + log p(z) - log q), averaged
      // over draws (independent draws make the cross terms vanish)
      const Tensor<S>& llv = t.val(b.ll);
      const Tensor<S>& lqv = t.val(b.logq);
      Tensor<S> w = Tensor<S>::zeros({mb * L});
      for (int r = 0; r < mb * L; ++r)
        w.at(r) = -(llv.at(r) + b.log_pz.at(r) - lqv.at(r));
      total = add(obj, mul_scalar(reduce_sum(mul(b.logq, t.constant(w))),
                                  scale / static_cast<S>(L)));
      if (detail::sampled_features<S>(cfg.feature_source, L) &&
          m.kind == ModelKind::supervised && cfg.C > S(0)) {
        // hinge part: the sample-averaged features couple the draws through
        // the augmented label, so every draw's score function carries the
        // whole realized per-example hinge, summed (not averaged) over draws
        const Tensor<S>& hv = t.val(hr.value);
        Tensor<S> wh = Tensor<S>::zeros({mb * L});
        for (int i = 0; i < mb; ++i)
          for (int l = 0; l < L; ++l) wh.at(i * L + l) = cfg.C * hv.at(i);
        total = add(total, mul_scalar(reduce_sum(mul(b.logq, t.constant(wh))), scale));
      }
    }
    t.backward(total);
    detail::fill_grad_norms(st, rep);
  }
  return rep;
}

// Score-function phi gradient for a single example, as (name, grad) pairs for
// the recognition parameters. Cross-check oracle against the path estimator.
template <class S>
std::vector<std::pair<std::string, Tensor<S>>> phi_gradient(const ParamStore<S>& st0,
                                                            const ModelSet<S>& m,
                                                            const Tensor<S>& x, int y,
                                                            const TrainConfig<S>& cfg,
                                                            const NoiseDraw<S>& noise) {
  ParamStore<S> st = st0;
  st.zero_grad();
  Batch<S> batch;
  batch.X = Tensor<S>::zeros({1, x.shape[0]});
  batch.X.data = x.data;
  batch.y = {y};
  batch.N = 1;
  (void)supervised_objective(st, m, batch, cfg, noise, true);
  std::vector<std::pair<std::string, Tensor<S>>> out;
  for (int i = 0; i < st.size(); ++i)
    if (st.at(i).name.rfind("enc/", 0) == 0) out.push_back({st.at(i).name, st.at(i).grad});
  return out;
}

template <class S>
std::vector<std::pair<std::string, Tensor<S>>> grad_phi_score(const ParamStore<S>& st,
                                                              const ModelSet<S>& m,
                                                              const Tensor<S>& x, int y,
                                                              const TrainConfig<S>& cfg,
                                                              const NoiseDraw<S>& noise) {
  TrainConfig<S> c = cfg;
  c.estimator = Estimator::score;
  return phi_gradient(st, m, x, y, c, noise);
}

// ---- semi-supervised objective ------------------------------------------------

template <class S>
std::vector<int> predict_batch(ParamStore<S>& st, const ModelSet<S>& m, const Tensor<S>& X) {
  Tensor<S> F = features_batch(st, m.feature_net(), X, nullptr, m.fs);
  const Tensor<S>& lam = st.at("clf/lambda").value;
  std::vector<int> y(static_cast<std::size_t>(X.shape[0]), 0);
  for (int i = 0; i < F.shape[0]; ++i) {
    int best = 0;
    S bv = S(0);
    for (int c = 0; c < lam.shape[0]; ++c) {
      S s = S(0);
      for (int j = 0; j < lam.shape[1]; ++j) s += lam.at(c, j) * F.at(i, j);
      if (c == 0 || s > bv) {
        bv = s;
        best = c;
      }
    }
    y[static_cast<std::size_t>(i)] = best;
  }
  return y;
}

// L_G + alpha (L_L + alpha_u L_U + alpha_b L_B), with putative labels frozen
// for the whole evaluation. When yhat_frozen is null the labels are predicted
// here, once.
template <class S>
StepReport<S> ssl_objective(ParamStore<S>& st, const ModelSet<S>& m, const SslBatch<S>& batch,
                            const TrainConfig<S>& cfg, const NoiseDraw<S>& noise,
                            bool with_grad = false, const std::vector<int>* yhat_frozen = nullptr,
                            std::vector<int>* yhat_used = nullptr) {
  validate(cfg);
  if (m.kind != ModelKind::ssl)
    throw ContractError("ssl objective needs a class-conditional model set");
  if (batch.XL.rank() != 2 || batch.XL.shape[0] < 1)
    throw ContractError("ssl batch needs a non-empty labeled partition");
  int mLb = batch.XL.shape[0];
  int mUb = batch.XU.rank() == 2 ? batch.XU.shape[0] : 0;
  if (static_cast<int>(batch.yL.size()) != mLb)
    throw DimensionError("ssl batch labels do not match rows");
  if (batch.NL < mLb || (mUb > 0 && batch.NU < mUb))
    throw ContractError("dataset sizes smaller than the batch");
  int L = cfg.L;

  // putative labels, one prediction pass per step
  std::vector<int> yhat;
  if (mUb > 0) {
    if (yhat_frozen) {
      if (static_cast<int>(yhat_frozen->size()) != mUb)
        throw DimensionError("frozen putative labels do not match the unlabeled rows");
      yhat = *yhat_frozen;
    } else {
      yhat = predict_batch(st, m, batch.XU);
    }
  }
  if (yhat_used) *yhat_used = yhat;

  Tape<S> t;
  // classifier features come from the dedicated feature net
  auto rvL = recognize_rows(t, st, m.feat, batch.XL, nullptr);
  auto fL = feature_rows(rvL, m.fs);
  RecogVars<S> rvU;
  Var<S> fU = fL;
  if (mUb > 0) {
    rvU = recognize_rows(t, st, m.feat, batch.XU, nullptr);
    fU = feature_rows(rvU, m.fs);
  }

  // generative bounds; labeled rows first in the noise draw
  Tensor<S> epsL = detail::slice_rows(noise.eps, 0, mLb * L);
  std::vector<int> yrepL = detail::repeat_labels(batch.yL, L);
  auto bL = detail::bound_rows(t, st, m.enc, m.dec, detail::repeat_rows(batch.XL, L), &yrepL,
                               epsL, cfg.estimator);
  auto sumL = detail::sum_elbo_var(t, bL, L, true, m.num_classes, mLb);
  S scaleL = static_cast<S>(batch.NL) / static_cast<S>(mLb);
  auto gen = mul_scalar(neg(sumL), scaleL);

  S scaleU = S(0);
  detail::BoundRows<S> bU;
  if (mUb > 0) {
    Tensor<S> epsU = detail::slice_rows(noise.eps, mLb * L, (mLb + mUb) * L);
    std::vector<int> yrepU = detail::repeat_labels(yhat, L);
    bU = detail::bound_rows(t, st, m.enc, m.dec, detail::repeat_rows(batch.XU, L), &yrepU, epsU,
                            cfg.estimator);
    auto sumU = detail::sum_elbo_var(t, bU, L, true, m.num_classes, mUb);
    scaleU = static_cast<S>(batch.NU) / static_cast<S>(mUb);
    gen = add(gen, mul_scalar(neg(sumU), scaleU));
  }

  auto lam = t.param(st, "clf/lambda");
  auto loss = LossMatrix<S>::zero_one(m.num_classes);
  auto hrL = hinge_rows(t, lam, fL, batch.yL, loss);
  auto hinge_sum = mul_scalar(reduce_sum(hrL.value), scaleL);

  Var<S> hat_sum = t.scalar(S(0));
  Var<S> bal = t.scalar(S(0));
  if (mUb > 0) {
    auto hrU = hinge_rows(t, lam, fU, yhat, loss);  // hat loss with frozen putative labels
    hat_sum = mul_scalar(reduce_sum(hrU.value), scaleU);
    // balance gap as a live expression: frozen memberships select rows, the
    // class means keep their feature gradient
    Tensor<S> MU = Tensor<S>::zeros({m.num_classes, mUb});
    for (int i = 0; i < mUb; ++i)
      MU.at(yhat[static_cast<std::size_t>(i)], i) = S(1) / static_cast<S>(mUb);
    Tensor<S> ML = Tensor<S>::zeros({m.num_classes, mLb});
    for (int i = 0; i < mLb; ++i)
      ML.at(batch.yL[static_cast<std::size_t>(i)], i) = S(1) / static_cast<S>(mLb);
    auto gap = sub(matmul(t.constant(MU), fU), matmul(t.constant(ML), fL));
    bal = l2_norm(reduce_sum_rows(mul(lam, gap)));
  }

  auto disc = add(hinge_sum, add(mul_scalar(hat_sum, cfg.alpha_u), mul_scalar(bal, cfg.alpha_b)));
  auto obj = add(gen, mul_scalar(disc, cfg.alpha));

  StepReport<S> rep;
  rep.elbo_term = t.val(gen).at(0);
  rep.hinge_term = t.val(hinge_sum).at(0);
  rep.hat_term = t.val(hat_sum).at(0);
  rep.balance_term = t.val(bal).at(0);
  rep.reg_term = S(0);
  rep.objective_estimate = t.val(obj).at(0);

  if (with_grad) {
    auto total = obj;
    if (bL.score) {
      auto add_score = [&](const detail::BoundRows<S>& b, int rows, S scale) {
        const Tensor<S>& llv = t.val(b.ll);
        const Tensor<S>& lqv = t.val(b.logq);
        Tensor<S> w = Tensor<S>::zeros({rows});
        for (int r = 0; r < rows; ++r) w.at(r) = -(llv.at(r) + b.log_pz.at(r) - lqv.at(r));
        auto term =
            mul_scalar(reduce_sum(mul(b.logq, t.constant(w))), scale / static_cast<S>(L));
        total = add(total, term);
      };
      add_score(bL, mLb * L, scaleL);
      if (mUb > 0) add_score(bU, mUb * L, scaleU);
    }
    t.backward(total);
    detail::fill_grad_norms(st, rep);
  }
  return rep;
}

}  // namespace mmdgm
