#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "mmdgm/errors.hpp"
#include "mmdgm/random.hpp"
#include "mmdgm/tape.hpp"
#include "mmdgm/tensor.hpp"

namespace mmdgm {

// Linear multiclass classifier: row y of lambda scores class y. sigma_sq is
// the prior variance of the weight posterior; its KL shows up as an L2 term.
template <class S>
struct ClassifierWeights {
  Tensor<S> lambda;  // [M x F]
  S sigma_sq = S(1);

  int num_classes() const { return lambda.shape[0]; }
  int feat_dim() const { return lambda.shape[1]; }
};

template <class S>
void validate(const ClassifierWeights<S>& w) {
  if (w.lambda.rank() != 2 || w.lambda.shape[0] < 1)
    throw ContractError("classifier weights must be [M x F] with M >= 1");
  if (!(w.sigma_sq > S(0))) throw ContractError("sigma_sq must be positive");
}

// Per-pair misclassification costs; zero diagonal, non-negative elsewhere.
template <class S>
struct LossMatrix {
  Tensor<S> delta;  // [M x M], delta.at(y_true, y)

  static LossMatrix zero_one(int M) {
    LossMatrix lm{Tensor<S>::full({M, M}, S(1))};
    for (int i = 0; i < M; ++i) lm.delta.at(i, i) = S(0);
    return lm;
  }
};

template <class S>
void validate(const LossMatrix<S>& lm) {
  if (lm.delta.rank() != 2 || lm.delta.shape[0] != lm.delta.shape[1])
    throw ContractError("loss matrix must be square");
  for (int i = 0; i < lm.delta.shape[0]; ++i) {
    if (lm.delta.at(i, i) != S(0)) throw ContractError("loss matrix diagonal must be zero");
    for (int j = 0; j < lm.delta.shape[1]; ++j)
      if (lm.delta.at(i, j) < S(0)) throw ContractError("loss matrix entries must be >= 0");
  }
}

namespace detail {

// Accepts [F] or [L x F]; returns the sample-averaged feature row.
template <class S>
Tensor<S> mean_feature(const Tensor<S>& feat_samples, int F) {
  if (feat_samples.rank() == 1) {
    if (feat_samples.shape[0] != F)
      throw DimensionError("feature length " + feat_samples.shape_str() + " vs F " +
                           std::to_string(F));
    return feat_samples;
  }
  if (feat_samples.rank() != 2 || feat_samples.shape[1] != F)
    throw DimensionError("feature samples " + feat_samples.shape_str() + " vs F " +
                         std::to_string(F));
  if (feat_samples.shape[0] < 1) throw ContractError("need at least one feature sample");
  Tensor<S> m = Tensor<S>::zeros({F});
  m.data = feat_samples.mat().colwise().mean().transpose();
  return m;
}

}  // namespace detail

template <class S>
Tensor<S> discriminant(const ClassifierWeights<S>& w, const Tensor<S>& feat) {
  validate(w);
  if (feat.rank() != 1 || feat.shape[0] != w.feat_dim())
    throw DimensionError("discriminant: feature " + feat.shape_str() + " vs lambda " +
                         w.lambda.shape_str());
  Tensor<S> s = Tensor<S>::zeros({w.num_classes()});
  s.data = w.lambda.mat() * feat.data;
  return s;
}

namespace detail {

template <class S>
int argmax_lowest(const Tensor<S>& scores) {
  int best = 0;
  for (int y = 1; y < scores.shape[0]; ++y)
    if (scores.at(y) > scores.at(best)) best = y;
  return best;
}

}  // namespace detail

template <class S>
int predict(const ClassifierWeights<S>& w, const Tensor<S>& feat) {
  return detail::argmax_lowest(discriminant(w, feat));
}

template <class S>
struct HingeResult {
  S value = S(0);
  int y_aug = 0;
};

// Loss-augmented hinge on sample-averaged scores: max over y of
// delta(y_true, y) + s_y - s_{y_true}. Non-negative because y = y_true
// attains zero.
template <class S>
HingeResult<S> hinge(const ClassifierWeights<S>& w, const Tensor<S>& feat_samples, int y_true,
                     const LossMatrix<S>& loss) {
  validate(w);
  int M = w.num_classes();
  if (y_true < 0 || y_true >= M) throw ContractError("hinge: y_true out of range");
  Tensor<S> fbar = detail::mean_feature(feat_samples, w.feat_dim());
  Tensor<S> s = discriminant(w, fbar);
  HingeResult<S> r{loss.delta.at(y_true, 0) + s.at(0) - s.at(y_true), 0};
  for (int y = 1; y < M; ++y) {
    S v = loss.delta.at(y_true, y) + s.at(y) - s.at(y_true);
    if (v > r.value) {
      r.value = v;
      r.y_aug = y;
    }
  }
  return r;
}

// Hinge subgradient in lambda: mean feature added to the loss-augmented row,
// subtracted from the true row.
template <class S>
Tensor<S> grad_lambda(const ClassifierWeights<S>& w, int y_aug, int y_true,
                      const Tensor<S>& feat_samples) {
  int M = w.num_classes();
  if (y_aug < 0 || y_aug >= M || y_true < 0 || y_true >= M)
    throw ContractError("grad_lambda: class out of range");
  Tensor<S> g = Tensor<S>::zeros({M, w.feat_dim()});
  if (y_aug == y_true) return g;
  Tensor<S> fbar = detail::mean_feature(feat_samples, w.feat_dim());
  for (int j = 0; j < w.feat_dim(); ++j) {
    g.at(y_aug, j) = fbar.at(j);
    g.at(y_true, j) = -fbar.at(j);
  }
  return g;
}

template <class S>
struct HatResult {
  S value = S(0);
  int y_hat = 0;
  int y_aug = 0;
};

// Hinge against the model's own prediction on the same averaged features.
template <class S>
HatResult<S> hat_loss(const ClassifierWeights<S>& w, const Tensor<S>& feat_samples,
                      const LossMatrix<S>& loss) {
  Tensor<S> fbar = detail::mean_feature(feat_samples, w.feat_dim());
  int y_hat = predict(w, fbar);
  auto h = hinge(w, fbar, y_hat, loss);
  return HatResult<S>{h.value, y_hat, h.y_aug};
}

// Per-class activation gap between predicted-unlabeled and labeled means,
// collapsed to an L2 norm. Normalizers are the set sizes, so a class nobody
// lands in simply contributes nothing.
template <class S>
Tensor<S> balance_feature_gap(const std::vector<std::pair<Tensor<S>, int>>& labeled,
                              const std::vector<std::pair<Tensor<S>, int>>& unlabeled, int M,
                              int F) {
  if (labeled.empty()) throw ContractError("balance penalty needs a non-empty labeled set");
  Tensor<S> D = Tensor<S>::zeros({M, F});
  S inv_u = unlabeled.empty() ? S(0) : S(1) / static_cast<S>(unlabeled.size());
  S inv_l = S(1) / static_cast<S>(labeled.size());
  for (const auto& [f, y] : unlabeled) {
    if (y < 0 || y >= M) throw ContractError("balance: predicted class out of range");
    if (f.rank() != 1 || f.shape[0] != F) throw DimensionError("balance: bad feature shape");
    for (int j = 0; j < F; ++j) D.at(y, j) += inv_u * f.at(j);
  }
  for (const auto& [f, y] : labeled) {
    if (y < 0 || y >= M) throw ContractError("balance: label out of range");
    if (f.rank() != 1 || f.shape[0] != F) throw DimensionError("balance: bad feature shape");
    for (int j = 0; j < F; ++j) D.at(y, j) -= inv_l * f.at(j);
  }
  return D;
}

template <class S>
S balance_penalty(const ClassifierWeights<S>& w,
                  const std::vector<std::pair<Tensor<S>, int>>& labeled,
                  const std::vector<std::pair<Tensor<S>, int>>& unlabeled) {
  validate(w);
  Tensor<S> D = balance_feature_gap(labeled, unlabeled, w.num_classes(), w.feat_dim());
  S ss = S(0);
  for (int y = 0; y < w.num_classes(); ++y) {
    S d = S(0);
    for (int j = 0; j < w.feat_dim(); ++j) d += w.lambda.at(y, j) * D.at(y, j);
    ss += d * d;
  }
  return std::sqrt(ss);
}

// Hard-constraint residual: class-proportion mismatch between predictions on
// the unlabeled pool and the labeled empirical distribution. Diagnostic only;
// piecewise constant in lambda.
template <class S>
S balance_violation(const std::vector<int>& labeled_y, const std::vector<int>& unlabeled_yhat,
                    int M) {
  if (labeled_y.empty()) throw ContractError("balance violation needs labeled labels");
  std::vector<S> d(static_cast<std::size_t>(M), S(0));
  S inv_u = unlabeled_yhat.empty() ? S(0) : S(1) / static_cast<S>(unlabeled_yhat.size());
  S inv_l = S(1) / static_cast<S>(labeled_y.size());
  for (int y : unlabeled_yhat) d[static_cast<std::size_t>(y)] += inv_u;
  for (int y : labeled_y) d[static_cast<std::size_t>(y)] -= inv_l;
  S ss = S(0);
  for (S v : d) ss += v * v;
  return std::sqrt(ss);
}

template <class S>
S l2_reg(const ClassifierWeights<S>& w) {
  validate(w);
  return static_cast<S>(w.lambda.data.squaredNorm()) / (S(2) * w.sigma_sq);
}

// ---- tape builders ----------------------------------------------------------

template <class S>
struct HingeRows {
  Var<S> value;  // [B]
  std::vector<int> y_aug;
};

// Batched loss-augmented hinge on a tape. Scores are row-features times
// lambda; the max over classes is resolved at value level and enters the
// graph through picks, which is exactly the subgradient.
template <class S>
HingeRows<S> hinge_rows(Tape<S>& t, Var<S> lambda, Var<S> fbar, const std::vector<int>& y_true,
                        const LossMatrix<S>& loss) {
  auto scores = matmul_nt(fbar, lambda);  // [B x M]
  const Tensor<S>& sv = t.val(scores);
  int B = sv.shape[0], M = sv.shape[1];
  if (static_cast<int>(y_true.size()) != B) throw DimensionError("hinge_rows: label count");
  std::vector<int> y_aug(static_cast<std::size_t>(B), 0);
  Tensor<S> dl = Tensor<S>::zeros({B});
  for (int i = 0; i < B; ++i) {
    int yt = y_true[static_cast<std::size_t>(i)];
    if (yt < 0 || yt >= M) throw ContractError("hinge_rows: y_true out of range");
    int best = 0;
    S bv = loss.delta.at(yt, 0) + sv.at(i, 0) - sv.at(i, yt);
    for (int y = 1; y < M; ++y) {
      S v = loss.delta.at(yt, y) + sv.at(i, y) - sv.at(i, yt);
      if (v > bv) {
        bv = v;
        best = y;
      }
    }
    y_aug[static_cast<std::size_t>(i)] = best;
    dl.at(i) = loss.delta.at(yt, best);
  }
  auto margin = sub(pick_per_row(scores, y_aug), pick_per_row(scores, y_true));
  return HingeRows<S>{add(margin, t.constant(dl)), std::move(y_aug)};
}

template <class S>
struct HatRows {
  Var<S> value;  // [B]
  std::vector<int> y_hat;
  std::vector<int> y_aug;
};

template <class S>
HatRows<S> hat_rows(Tape<S>& t, Var<S> lambda, Var<S> fbar, const LossMatrix<S>& loss) {
  const Tensor<S>& sv = t.val(matmul_nt(fbar, lambda));
  int B = sv.shape[0], M = sv.shape[1];
  std::vector<int> y_hat(static_cast<std::size_t>(B), 0);
  for (int i = 0; i < B; ++i) {
    int best = 0;
    for (int y = 1; y < M; ++y)
      if (sv.at(i, y) > sv.at(i, best)) best = y;
    y_hat[static_cast<std::size_t>(i)] = best;
  }
  auto h = hinge_rows(t, lambda, fbar, y_hat, loss);
  return HatRows<S>{h.value, std::move(y_hat), std::move(h.y_aug)};
}

// sqrt(sum_y (lambda_y . D_y)^2) with D held constant.
template <class S>
Var<S> balance_term(Tape<S>& t, Var<S> lambda, const Tensor<S>& D) {
  return l2_norm(reduce_sum_rows(mul(lambda, t.constant(D))));
}

// ---- Pegasos baseline --------------------------------------------------------

// Multiclass Pegasos on frozen features: step size 1/(reg*t), subgradient of
// reg/2 ||lambda||^2 + mean loss-augmented hinge, one uniform example per
// step, no projection.
template <class S>
ClassifierWeights<S> pegasos_fit(const std::vector<std::pair<Tensor<S>, int>>& data, S reg,
                                 int epochs, std::uint64_t seed, int num_classes = -1) {
  if (data.empty()) throw ContractError("pegasos: empty dataset");
  if (!(reg > S(0))) throw ContractError("pegasos: reg must be positive");
  int F = data.front().first.shape[0];
  int M = num_classes;
  if (M < 0) {
    M = 1;
    for (const auto& [f, y] : data) M = std::max(M, y + 1);
  }
  for (const auto& [f, y] : data) {
    if (f.rank() != 1 || f.shape[0] != F) throw DimensionError("pegasos: ragged features");
    if (y < 0 || y >= M) throw ContractError("pegasos: label out of range");
  }
  ClassifierWeights<S> w{Tensor<S>::zeros({M, F}), S(1) / reg};
  LossMatrix<S> loss = LossMatrix<S>::zero_one(M);
  Rng rng(seed, STREAM_PEGASOS);
  std::int64_t steps = static_cast<std::int64_t>(epochs) * static_cast<std::int64_t>(data.size());
  for (std::int64_t t = 1; t <= steps; ++t) {
    const auto& [f, y] = data[static_cast<std::size_t>(rng.integer(data.size()))];
    S eta = S(1) / (reg * static_cast<S>(t));
    auto h = hinge(w, f, y, loss);
    w.lambda.data *= (S(1) - eta * reg);
    if (h.value > S(0) && h.y_aug != y) {
      for (int j = 0; j < F; ++j) {
        w.lambda.at(h.y_aug, j) -= eta * f.at(j);
        w.lambda.at(y, j) += eta * f.at(j);
      }
    }
  }
  return w;
}

}  // namespace mmdgm
