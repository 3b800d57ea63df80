#pragma once

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "mmdgm/objectives.hpp"
#include "mmdgm/optimizer.hpp"

namespace mmdgm {

template <class S>
struct FitResult {
  long steps = 0;
  S train_err = S(-1);
  S valid_err = S(-1);  // -1: no validation set
  std::vector<S> epoch_objectives;
};

namespace detail {

inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Cycling minibatch source: fixed-size draws, reshuffled whenever the pass
// wraps, all order from one stream.
struct BatchCursor {
  std::vector<int> order;
  std::size_t pos = 0;

  explicit BatchCursor(int n) : order(static_cast<std::size_t>(n)) {
    std::iota(order.begin(), order.end(), 0);
  }

  void next(int k, Rng& rng, std::vector<int>& out) {
    out.clear();
    for (int i = 0; i < k; ++i) {
      if (pos == order.size()) {
        rng.shuffle(order);
        pos = 0;
      }
      out.push_back(order[pos++]);
    }
  }
};

template <class S>
Tensor<S> gather_rows(const Tensor<S>& X, const std::vector<int>& idx) {
  Tensor<S> r = Tensor<S>::zeros({static_cast<int>(idx.size()), X.shape[1]});
  for (std::size_t i = 0; i < idx.size(); ++i)
    r.mat().row(static_cast<Eigen::Index>(i)) = X.mat().row(idx[i]);
  return r;
}

inline std::vector<int> gather_labels(const std::vector<int>& y, const std::vector<int>& idx) {
  std::vector<int> r;
  r.reserve(idx.size());
  for (int i : idx) r.push_back(y[static_cast<std::size_t>(i)]);
  return r;
}

template <class S>
NoiseDraw<S> step_noise(int rows, int K, std::uint64_t seed, long gstep) {
  return noise_draw<S>(rows, K, seed + static_cast<std::uint64_t>(gstep));
}

}  // namespace detail

template <class S>
S dataset_error(ParamStore<S>& st, const ModelSet<S>& m, const Tensor<S>& X,
                const std::vector<int>& y) {
  if (X.shape[0] < 1) throw ContractError("dataset_error on an empty set");
  auto p = predict_batch(st, m, X);
  long wrong = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] != y[i]) ++wrong;
  return static_cast<S>(wrong) / static_cast<S>(p.size());
}

// Mean per-example bound on a held-out set, single-draw, from the evaluation
// stream: the point-estimate bound for class-conditional models, the plain
// bound otherwise.
template <class S>
S mean_validation_bound(ParamStore<S>& st, const ModelSet<S>& m, const Tensor<S>& X,
                        std::uint64_t seed) {
  if (X.shape[0] < 1) throw ContractError("validation bound on an empty set");
  Rng r(seed, STREAM_EVAL);
  S acc = S(0);
  Tensor<S> x = Tensor<S>::zeros({X.shape[1]});
  for (int i = 0; i < X.shape[0]; ++i) {
    for (int j = 0; j < X.shape[1]; ++j) x.at(j) = X.at(i, j);
    NoiseDraw<S> nd;
    nd.eps = Tensor<S>::zeros({1, m.latent_dim});
    for (int k = 0; k < m.latent_dim; ++k) nd.eps.at(0, k) = static_cast<S>(r.normal());
    nd.seed = seed;
    if (m.dec.conditions_on_label)
      acc += point_estimate_bound(st, m, x, nd).value;
    else
      acc += elbo(st, m.enc, m.dec, x, -1, nd);
  }
  return acc / static_cast<S>(X.shape[0]);
}

template <class S>
StepReport<S> supervised_step(ParamStore<S>& st, AdamState<S>& opt, const ModelSet<S>& m,
                              const Batch<S>& batch, const TrainConfig<S>& cfg,
                              const NoiseDraw<S>& noise, S lr) {
  st.zero_grad();
  auto rep = supervised_objective(st, m, batch, cfg, noise, true);
  adam_update(st, opt, lr);
  return rep;
}

// The four-step doubly stochastic update: predict putative labels, freeze
// them, evaluate the objective with gradients, update.
template <class S>
StepReport<S> ssl_step(ParamStore<S>& st, AdamState<S>& opt, const ModelSet<S>& m,
                       const SslBatch<S>& batch, const TrainConfig<S>& cfg,
                       const NoiseDraw<S>& noise, S lr, std::vector<int>* yhat_used = nullptr) {
  std::vector<int> yhat;
  if (batch.XU.rank() == 2 && batch.XU.shape[0] > 0) yhat = predict_batch(st, m, batch.XU);
  st.zero_grad();
  auto rep = ssl_objective(st, m, batch, cfg, noise, true, &yhat, yhat_used);
  adam_update(st, opt, lr);
  return rep;
}

namespace detail {

// Shared epoch bookkeeping for both fit loops.
template <class S>
struct EpochLog {
  S obj = S(0), hinge = S(0), hat = S(0), bal = S(0), reg = S(0);
  long n = 0;

  void add(const StepReport<S>& r) {
    obj += r.objective_estimate;
    hinge += r.hinge_term;
    hat += r.hat_term;
    bal += r.balance_term;
    reg += r.reg_term;
    ++n;
  }

  S mean_obj() const { return obj / static_cast<S>(n); }
};

template <class S>
void write_metrics_row(std::ostream& os, long step, int epoch, const EpochLog<S>& log,
                       bool have_vbound, S vbound, S train_err, bool have_verr, S valid_err,
                       S lr) {
  S n = static_cast<S>(log.n);
  os << step << ',' << epoch << ',' << g17(static_cast<double>(log.obj / n)) << ','
     << (have_vbound ? g17(static_cast<double>(vbound)) : std::string()) << ','
     << g17(static_cast<double>(log.hinge / n)) << ',' << g17(static_cast<double>(log.hat / n))
     << ',' << g17(static_cast<double>(log.bal / n)) << ','
     << g17(static_cast<double>(log.reg / n)) << ',' << g17(static_cast<double>(train_err))
     << ',' << (have_verr ? g17(static_cast<double>(valid_err)) : std::string()) << ','
     << g17(static_cast<double>(lr)) << '\n';
}

inline constexpr const char* kMetricsHeader =
    "step,epoch,objective,elbo,hinge,hat,balance,reg,train_err,valid_err,lr";

inline int default_decay_epoch(int epochs) { return (2 * epochs) / 3; }

}  // namespace detail

// Minibatch training on a fully labeled set: each epoch walks one shuffled
// pass in chunks (the last chunk may be short; scaling uses the actual rows).
// A NaN gradient aborts with the step and parameter named.
template <class S>
FitResult<S> fit_supervised(ParamStore<S>& st, const ModelSet<S>& m, const Tensor<S>& X,
                            const std::vector<int>& y, const Tensor<S>* Xvalid,
                            const std::vector<int>* yvalid, const TrainConfig<S>& cfg,
                            std::ostream* metrics = nullptr) {
  validate(cfg);
  if (X.rank() != 2 || X.shape[0] < 1)
    throw ContractError("fit_supervised needs a non-empty training set");
  int N = X.shape[0];
  if (static_cast<int>(y.size()) != N) throw DimensionError("labels do not match rows");
  if ((Xvalid == nullptr) != (yvalid == nullptr))
    throw ContractError("validation images and labels must come together");
  int mb = std::min(cfg.batch_labeled, N);
  int decay_epoch =
      cfg.lr_decay_epoch >= 0 ? cfg.lr_decay_epoch : detail::default_decay_epoch(cfg.epochs);
  S lr = cfg.lr;
  Rng shuffle_rng(cfg.seed, STREAM_BATCH);
  std::vector<int> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), 0);

  AdamState<S> opt;
  FitResult<S> res;
  if (metrics) *metrics << detail::kMetricsHeader << '\n';
  long gstep = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (epoch == decay_epoch && epoch > 0) lr = cfg.lr * cfg.lr_decay_factor;
    shuffle_rng.shuffle(order);
    detail::EpochLog<S> log;
    for (int start = 0; start < N; start += mb) {
      int stop = std::min(start + mb, N);
      std::vector<int> idx(order.begin() + start, order.begin() + stop);
      Batch<S> batch;
      batch.X = detail::gather_rows(X, idx);
      batch.y = detail::gather_labels(y, idx);
      batch.N = N;
      auto noise =
          detail::step_noise<S>(static_cast<int>(idx.size()) * cfg.L, m.latent_dim, cfg.seed,
                                gstep);
      try {
        log.add(supervised_step(st, opt, m, batch, cfg, noise, lr));
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                           ", global step " + std::to_string(gstep) + ")");
      }
      ++gstep;
    }
    res.epoch_objectives.push_back(log.mean_obj());
    if (metrics) {
      S train_err = dataset_error(st, m, X, y);
      bool have_valid = Xvalid && Xvalid->shape[0] > 0;
      S vbound = have_valid ? mean_validation_bound(st, m, *Xvalid, cfg.seed) : S(0);
      S verr = have_valid ? dataset_error(st, m, *Xvalid, *yvalid) : S(0);
      detail::write_metrics_row(*metrics, gstep, epoch, log, have_valid, vbound, train_err,
                                have_valid, verr, lr);
    }
  }
  res.steps = gstep;
  res.train_err = dataset_error(st, m, X, y);
  if (Xvalid && Xvalid->shape[0] > 0) res.valid_err = dataset_error(st, m, *Xvalid, *yvalid);
  return res;
}

// Semi-supervised training: labeled and unlabeled minibatches drawn
// independently with fixed counts, each stream cycling through its own
// shuffled order. An epoch is one pass over the unlabeled set (the labeled
// set when there is none).
template <class S>
FitResult<S> fit_ssl(ParamStore<S>& st, const ModelSet<S>& m, const Tensor<S>& XL,
                     const std::vector<int>& yL, const Tensor<S>& XU, const Tensor<S>* Xvalid,
                     const std::vector<int>* yvalid, const TrainConfig<S>& cfg,
                     std::ostream* metrics = nullptr) {
  validate(cfg);
  if (XL.rank() != 2 || XL.shape[0] < 1) throw ContractError("fit_ssl needs labeled examples");
  int NL = XL.shape[0];
  int NU = XU.rank() == 2 ? XU.shape[0] : 0;
  if (static_cast<int>(yL.size()) != NL) throw DimensionError("labels do not match rows");
  if ((Xvalid == nullptr) != (yvalid == nullptr))
    throw ContractError("validation images and labels must come together");
  int mLb = std::min(cfg.batch_labeled, NL);
  int mUb = NU > 0 ? std::min(cfg.batch_unlabeled, NU) : 0;
  int steps_per_epoch = NU > 0 ? (NU + mUb - 1) / mUb : (NL + mLb - 1) / mLb;
  int decay_epoch =
      cfg.lr_decay_epoch >= 0 ? cfg.lr_decay_epoch : detail::default_decay_epoch(cfg.epochs);
  S lr = cfg.lr;
  Rng shuffle_rng(cfg.seed, STREAM_BATCH);
  detail::BatchCursor curL(NL), curU(NU > 0 ? NU : 1);

  AdamState<S> opt;
  FitResult<S> res;
  if (metrics) *metrics << detail::kMetricsHeader << '\n';
  long gstep = 0;
  std::vector<int> idxL, idxU;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (epoch == decay_epoch && epoch > 0) lr = cfg.lr * cfg.lr_decay_factor;
    detail::EpochLog<S> log;
    for (int s = 0; s < steps_per_epoch; ++s) {
      curL.next(mLb, shuffle_rng, idxL);
      SslBatch<S> batch;
      batch.XL = detail::gather_rows(XL, idxL);
      batch.yL = detail::gather_labels(yL, idxL);
      batch.NL = NL;
      batch.NU = NU;
      if (mUb > 0) {
        curU.next(mUb, shuffle_rng, idxU);
        batch.XU = detail::gather_rows(XU, idxU);
      }
      auto noise =
          detail::step_noise<S>((mLb + mUb) * cfg.L, m.latent_dim, cfg.seed, gstep);
      try {
        log.add(ssl_step(st, opt, m, batch, cfg, noise, lr));
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                           ", global step " + std::to_string(gstep) + ")");
      }
      ++gstep;
    }
    res.epoch_objectives.push_back(log.mean_obj());
    if (metrics) {
      S train_err = dataset_error(st, m, XL, yL);
      bool have_valid = Xvalid && Xvalid->shape[0] > 0;
      S vbound = have_valid ? mean_validation_bound(st, m, *Xvalid, cfg.seed) : S(0);
      S verr = have_valid ? dataset_error(st, m, *Xvalid, *yvalid) : S(0);
      detail::write_metrics_row(*metrics, gstep, epoch, log, have_valid, vbound, train_err,
                                have_valid, verr, lr);
    }
  }
  res.steps = gstep;
  res.train_err = dataset_error(st, m, XL, yL);
  if (Xvalid && Xvalid->shape[0] > 0) res.valid_err = dataset_error(st, m, *Xvalid, *yvalid);
  return res;
}

}  // namespace mmdgm
