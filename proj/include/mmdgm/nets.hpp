#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mmdgm/distributions.hpp"
#include "mmdgm/errors.hpp"
#include "mmdgm/random.hpp"
#include "mmdgm/tape.hpp"
#include "mmdgm/tensor.hpp"

namespace mmdgm {

enum class Nonlinearity { softplus = 0, rectify = 1, tanh = 2 };
enum class Likelihood { bernoulli = 0, gaussian = 1 };
enum class FeatureSource { latent_mean = 0, last_hidden = 1, concat_hidden = 2 };

struct MlpSpec {
  std::vector<int> layer_widths{500, 500};
  Nonlinearity nonlinearity = Nonlinearity::softplus;
};

inline void validate(const MlpSpec& s) {
  if (s.layer_widths.empty()) throw ContractError("mlp needs at least one hidden layer");
  for (int w : s.layer_widths)
    if (w <= 0) throw ContractError("mlp layer width must be positive");
}

template <class S>
Var<S> apply_nonlinearity(Var<S> h, Nonlinearity n) {
  switch (n) {
    case Nonlinearity::softplus: return softplus(h);
    case Nonlinearity::rectify: return rectify(h);
    case Nonlinearity::tanh: return tanh(h);
  }
  throw ContractError("unknown nonlinearity");
}

// One-hot rows for a label vector.
template <class S>
Tensor<S> onehot_rows(const std::vector<int>& y, int M) {
  Tensor<S> r = Tensor<S>::zeros({static_cast<int>(y.size()), M});
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] < 0 || y[i] >= M) throw ContractError("label out of range");
    r.at(static_cast<int>(i), y[i]) = S(1);
  }
  return r;
}

// One-hot label block appended to X, for label-conditioned nets.
template <class S>
Tensor<S> with_onehot(const Tensor<S>& X, const std::vector<int>& y, int M) {
  if (X.rank() != 2 || static_cast<int>(y.size()) != X.shape[0])
    throw DimensionError("with_onehot: label count != rows");
  Tensor<S> oh = onehot_rows<S>(y, M);
  Tensor<S> r = Tensor<S>::zeros({X.shape[0], X.shape[1] + M});
  r.mat().leftCols(X.shape[1]) = X.mat();
  r.mat().rightCols(M) = oh.mat();
  return r;
}

namespace detail {

// Trunk weights are N(0, 1/fan_in), biases zero; log-variance head biases
// start at -1 so early posteriors/likelihoods have sigma < 1.
template <class S>
void init_affine(ParamStore<S>& st, const std::string& w_name, const std::string& b_name,
                 int out, int in, Rng& rng, S bias_fill = S(0)) {
  Tensor<S> W = Tensor<S>::zeros({out, in});
  S scale = S(1) / std::sqrt(S(in));
  for (Eigen::Index i = 0; i < W.size(); ++i) W.data[i] = scale * static_cast<S>(rng.normal());
  st.add(w_name, std::move(W));
  st.add(b_name, Tensor<S>::full({out}, bias_fill));
}

template <class S>
Var<S> affine(Tape<S>& t, ParamStore<S>& st, const std::string& prefix, const std::string& name,
              Var<S> in) {
  return add_rowvec(matmul_nt(in, t.param(st, prefix + "/" + name + "_W")),
                    t.param(st, prefix + "/" + name + "_b"));
}

}  // namespace detail

// Recognition network q(z | x) or q(z | x, y): MLP trunk plus mu and
// log-variance heads reading the same final activation.
template <class S>
struct RecognitionNet {
  MlpSpec spec;
  int x_dim = 0;
  int latent_dim = 0;
  bool conditions_on_label = false;
  int num_classes = 0;
  std::string prefix = "enc";

  int in_dim() const { return x_dim + (conditions_on_label ? num_classes : 0); }

  void init_params(ParamStore<S>& st, Rng& rng) const {
    validate(spec);
    if (x_dim <= 0 || latent_dim <= 0) throw ContractError("recognition net dims must be positive");
    if (conditions_on_label && num_classes <= 0)
      throw ContractError("conditional recognition net needs num_classes");
    int in = in_dim();
    for (std::size_t l = 0; l < spec.layer_widths.size(); ++l) {
      detail::init_affine(st, layer_w(l), layer_b(l), spec.layer_widths[l], in, rng);
      in = spec.layer_widths[l];
    }
    detail::init_affine(st, prefix + "/mu_W", prefix + "/mu_b", latent_dim, in, rng);
    detail::init_affine(st, prefix + "/lv_W", prefix + "/lv_b", latent_dim, in, rng, S(-1));
  }

  std::string layer_w(std::size_t l) const { return prefix + "/W" + std::to_string(l); }
  std::string layer_b(std::size_t l) const { return prefix + "/b" + std::to_string(l); }
};

template <class S>
struct RecogVars {
  Var<S> mu;
  Var<S> log_var;
  std::vector<Var<S>> hidden;
};

// Batched forward pass; X is [B x x_dim], y required iff the net conditions
// on labels.
template <class S>
RecogVars<S> recognize_rows(Tape<S>& t, ParamStore<S>& st, const RecognitionNet<S>& net,
                            const Tensor<S>& X, const std::vector<int>* y) {
  if (X.rank() != 2 || X.shape[1] != net.x_dim)
    throw DimensionError("recognize: input " + X.shape_str() + " vs x_dim " +
                         std::to_string(net.x_dim));
  if (net.conditions_on_label && y == nullptr)
    throw ContractError("recognize: net conditions on label but none supplied");
  if (!net.conditions_on_label && y != nullptr)
    throw ContractError("recognize: net is unconditional but a label was supplied");
  Var<S> h = t.constant(net.conditions_on_label ? with_onehot(X, *y, net.num_classes) : X);
  RecogVars<S> out{h, h, {}};
  for (std::size_t l = 0; l < net.spec.layer_widths.size(); ++l) {
    h = apply_nonlinearity(
        add_rowvec(matmul_nt(h, t.param(st, net.layer_w(l))), t.param(st, net.layer_b(l))),
        net.spec.nonlinearity);
    out.hidden.push_back(h);
  }
  out.mu = detail::affine(t, st, net.prefix, "mu", h);
  out.log_var = detail::affine(t, st, net.prefix, "lv", h);
  return out;
}

// Generative decoder p(x | z) or p(x | z, y). Bernoulli head goes through a
// sigmoid; Gaussian head emits mean and log-variance.
template <class S>
struct DecoderNet {
  MlpSpec spec;
  int z_dim = 0;
  int out_dim = 0;
  Likelihood likelihood = Likelihood::bernoulli;
  bool conditions_on_label = false;
  int num_classes = 0;
  std::string prefix = "dec";

  int in_dim() const { return z_dim + (conditions_on_label ? num_classes : 0); }

  void init_params(ParamStore<S>& st, Rng& rng) const {
    validate(spec);
    if (z_dim <= 0 || out_dim <= 0) throw ContractError("decoder dims must be positive");
    if (conditions_on_label && num_classes <= 0)
      throw ContractError("conditional decoder needs num_classes");
    int in = in_dim();
    for (std::size_t l = 0; l < spec.layer_widths.size(); ++l) {
      detail::init_affine(st, layer_w(l), layer_b(l), spec.layer_widths[l], in, rng);
      in = spec.layer_widths[l];
    }
    if (likelihood == Likelihood::bernoulli) {
      detail::init_affine(st, prefix + "/out_W", prefix + "/out_b", out_dim, in, rng);
    } else {
      detail::init_affine(st, prefix + "/mean_W", prefix + "/mean_b", out_dim, in, rng);
      detail::init_affine(st, prefix + "/lv_W", prefix + "/lv_b", out_dim, in, rng, S(-1));
    }
  }

  std::string layer_w(std::size_t l) const { return prefix + "/W" + std::to_string(l); }
  std::string layer_b(std::size_t l) const { return prefix + "/b" + std::to_string(l); }
};

template <class S>
struct DecodeVars {
  Var<S> head;        // bernoulli: per-pixel probabilities; gaussian: mean
  Var<S> log_var;     // gaussian only
  bool has_log_var = false;
  std::vector<Var<S>> hidden;
};

template <class S>
DecodeVars<S> decode_rows(Tape<S>& t, ParamStore<S>& st, const DecoderNet<S>& net, Var<S> z,
                          const std::vector<int>* y) {
  const Tensor<S>& Z = t.val(z);
  if (Z.rank() != 2 || Z.shape[1] != net.z_dim)
    throw DimensionError("decode: z " + Z.shape_str() + " vs z_dim " + std::to_string(net.z_dim));
  if (net.conditions_on_label && y == nullptr)
    throw ContractError("decode: net conditions on label but none supplied");
  if (!net.conditions_on_label && y != nullptr)
    throw ContractError("decode: net is unconditional but a label was supplied");
  Var<S> h = z;
  if (net.conditions_on_label) {
    if (static_cast<int>(y->size()) != Z.shape[0])
      throw DimensionError("decode: label count != rows");
    h = concat_cols(z, t.constant(onehot_rows<S>(*y, net.num_classes)));
  }
  DecodeVars<S> out{h, h, false, {}};
  for (std::size_t l = 0; l < net.spec.layer_widths.size(); ++l) {
    h = apply_nonlinearity(
        add_rowvec(matmul_nt(h, t.param(st, net.layer_w(l))), t.param(st, net.layer_b(l))),
        net.spec.nonlinearity);
    out.hidden.push_back(h);
  }
  if (net.likelihood == Likelihood::bernoulli) {
    out.head = sigmoid(detail::affine(t, st, net.prefix, "out", h));
  } else {
    out.head = detail::affine(t, st, net.prefix, "mean", h);
    out.log_var = detail::affine(t, st, net.prefix, "lv", h);
    out.has_log_var = true;
  }
  return out;
}

// Per-row likelihood of X under decoder outputs.
template <class S>
Var<S> likelihood_ll_rows(Tape<S>& t, const DecoderNet<S>& net, const Tensor<S>& X,
                          const DecodeVars<S>& d) {
  if (net.likelihood == Likelihood::bernoulli) return bernoulli_ll_rows(t.constant(X), d.head);
  return gaussian_logpdf_rows(t.constant(X), d.head, d.log_var);
}

// ---- feature extraction ----------------------------------------------------

inline int feature_dim(const MlpSpec& spec, int latent_dim, FeatureSource fs) {
  switch (fs) {
    case FeatureSource::latent_mean: return latent_dim;
    case FeatureSource::last_hidden: return spec.layer_widths.back();
    case FeatureSource::concat_hidden: {
      int n = 0;
      for (int w : spec.layer_widths) n += w;
      return n;
    }
  }
  throw ContractError("unknown feature source");
}

template <class S>
int feature_dim(const RecognitionNet<S>& net, FeatureSource fs) {
  return feature_dim(net.spec, net.latent_dim, fs);
}

template <class S>
Var<S> feature_rows(const RecogVars<S>& rv, FeatureSource fs) {
  switch (fs) {
    case FeatureSource::latent_mean: return rv.mu;
    case FeatureSource::last_hidden: return rv.hidden.back();
    case FeatureSource::concat_hidden: {
      Var<S> acc = rv.hidden.front();
      for (std::size_t i = 1; i < rv.hidden.size(); ++i) acc = concat_cols(acc, rv.hidden[i]);
      return acc;
    }
  }
  throw ContractError("unknown feature source");
}

// ---- value-level single-sample wrappers ------------------------------------

namespace detail {

template <class S>
Tensor<S> one_row(const Tensor<S>& x) {
  if (x.rank() != 1) throw DimensionError("expected a rank-1 sample, got " + x.shape_str());
  Tensor<S> r = Tensor<S>::zeros({1, x.shape[0]});
  r.data = x.data;
  return r;
}

template <class S>
Tensor<S> row_to_vec(const Tensor<S>& x) {
  Tensor<S> r = Tensor<S>::zeros({x.shape[1]});
  r.data = x.data;
  return r;
}

}  // namespace detail

// y < 0 means "no label".
template <class S>
LatentGaussian<S> recognize(ParamStore<S>& st, const RecognitionNet<S>& net, const Tensor<S>& x,
                            int y = -1) {
  Tape<S> t;
  std::vector<int> ys{y};
  auto rv = recognize_rows(t, st, net, detail::one_row(x), y >= 0 ? &ys : nullptr);
  return LatentGaussian<S>{detail::row_to_vec(t.val(rv.mu)), detail::row_to_vec(t.val(rv.log_var))};
}

template <class S>
struct DecodeOut {
  Tensor<S> head;
  Tensor<S> log_var;
  bool has_log_var = false;
};

template <class S>
DecodeOut<S> decode(ParamStore<S>& st, const DecoderNet<S>& net, const Tensor<S>& z, int y = -1) {
  Tape<S> t;
  std::vector<int> ys{y};
  auto dv = decode_rows(t, st, net, t.constant(detail::one_row(z)), y >= 0 ? &ys : nullptr);
  DecodeOut<S> out;
  out.head = detail::row_to_vec(t.val(dv.head));
  if (dv.has_log_var) {
    out.log_var = detail::row_to_vec(t.val(dv.log_var));
    out.has_log_var = true;
  }
  return out;
}

template <class S>
Tensor<S> features(ParamStore<S>& st, const RecognitionNet<S>& net, const Tensor<S>& x, int y,
                   FeatureSource fs) {
  Tape<S> t;
  std::vector<int> ys{y};
  auto rv = recognize_rows(t, st, net, detail::one_row(x), y >= 0 ? &ys : nullptr);
  return detail::row_to_vec(t.val(feature_rows(rv, fs)));
}

// Batched value-level features, the prediction-time path.
template <class S>
Tensor<S> features_batch(ParamStore<S>& st, const RecognitionNet<S>& net, const Tensor<S>& X,
                         const std::vector<int>* y, FeatureSource fs) {
  Tape<S> t;
  auto rv = recognize_rows(t, st, net, X, y);
  return t.val(feature_rows(rv, fs));
}

// Decoder expectations for given latents: Bernoulli probabilities or the
// Gaussian mean.
template <class S>
Tensor<S> decode_expectations(ParamStore<S>& st, const DecoderNet<S>& net, const Tensor<S>& Z,
                              const std::vector<int>* y) {
  Tape<S> t;
  auto dv = decode_rows(t, st, net, t.constant(Z), y);
  return t.val(dv.head);
}

// Ancestral sampling: z ~ N(0, I), decoded to per-pixel expectations.
template <class S>
Tensor<S> generate(ParamStore<S>& st, const DecoderNet<S>& net, int n, int y, std::uint64_t seed) {
  if (n < 1) throw ContractError("generate: n must be positive");
  if (net.conditions_on_label && y < 0)
    throw ContractError("generate: conditional decoder needs a class");
  Rng rng(seed, STREAM_GENERATE);
  Tensor<S> Z = Tensor<S>::zeros({n, net.z_dim});
  for (Eigen::Index i = 0; i < Z.size(); ++i) Z.data[i] = static_cast<S>(rng.normal());
  std::vector<int> ys;
  if (net.conditions_on_label) ys.assign(static_cast<std::size_t>(n), y);
  return decode_expectations(st, net, Z, net.conditions_on_label ? &ys : nullptr);
}

}  // namespace mmdgm
