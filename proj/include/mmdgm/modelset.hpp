#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mmdgm/checkpoint.hpp"
#include "mmdgm/nets.hpp"

namespace mmdgm {

enum class ModelKind {
  supervised = 0,  // unconditional recognition + decoder, features from the encoder
  ssl = 1          // class-conditional recognition + decoder, separate feature net
};

// Everything a trained run needs to be reloaded: network shapes, classifier
// geometry, and bookkeeping for image output. Parameters themselves live in a
// ParamStore; meta entries travel in the same checkpoint under "meta/".
template <class S>
struct ModelSet {
  ModelKind kind = ModelKind::supervised;
  RecognitionNet<S> enc;
  DecoderNet<S> dec;
  RecognitionNet<S> feat;  // ssl only
  int num_classes = 0;
  int x_dim = 0;
  int latent_dim = 0;
  FeatureSource fs = FeatureSource::latent_mean;
  S sigma_sq = S(1);
  int side = 0;  // image edge length when x is a square bitmap, else 0

  const RecognitionNet<S>& feature_net() const {
    return kind == ModelKind::ssl ? feat : enc;
  }

  int feature_dim() const { return mmdgm::feature_dim(feature_net(), fs); }

  void init_params(ParamStore<S>& st, std::uint64_t seed) const {
    Rng rng(seed, STREAM_INIT);
    enc.init_params(st, rng);
    dec.init_params(st, rng);
    if (kind == ModelKind::ssl) feat.init_params(st, rng);
    st.add("clf/lambda", Tensor<S>::zeros({num_classes, feature_dim()}));
  }
};

template <class S>
ModelSet<S> make_supervised_model(int x_dim, int latent_dim, int num_classes, MlpSpec enc_spec,
                                  MlpSpec dec_spec, Likelihood lik, FeatureSource fs, S sigma_sq,
                                  int side) {
  ModelSet<S> m;
  m.kind = ModelKind::supervised;
  m.num_classes = num_classes;
  m.x_dim = x_dim;
  m.latent_dim = latent_dim;
  m.fs = fs;
  m.sigma_sq = sigma_sq;
  m.side = side;
  m.enc = RecognitionNet<S>{std::move(enc_spec), x_dim, latent_dim, false, num_classes, "enc"};
  m.dec = DecoderNet<S>{std::move(dec_spec), latent_dim, x_dim, lik, false, num_classes, "dec"};
  return m;
}

template <class S>
ModelSet<S> make_ssl_model(int x_dim, int latent_dim, int num_classes, MlpSpec enc_spec,
                           MlpSpec dec_spec, MlpSpec feat_spec, Likelihood lik, FeatureSource fs,
                           S sigma_sq, int side) {
  ModelSet<S> m;
  m.kind = ModelKind::ssl;
  m.num_classes = num_classes;
  m.x_dim = x_dim;
  m.latent_dim = latent_dim;
  m.fs = fs;
  m.sigma_sq = sigma_sq;
  m.side = side;
  m.enc = RecognitionNet<S>{std::move(enc_spec), x_dim, latent_dim, true, num_classes, "enc"};
  m.dec = DecoderNet<S>{std::move(dec_spec), latent_dim, x_dim, lik, true, num_classes, "dec"};
  m.feat = RecognitionNet<S>{std::move(feat_spec), x_dim, latent_dim, false, num_classes, "feat"};
  return m;
}

namespace detail {

inline NamedArray meta_scalar(const std::string& name, double v) {
  return NamedArray{name, {1}, {v}};
}

inline NamedArray meta_vector(const std::string& name, const std::vector<int>& vs) {
  NamedArray a{name, {static_cast<int>(vs.size())}, {}};
  for (int v : vs) a.data.push_back(static_cast<double>(v));
  return a;
}

struct MetaView {
  const std::vector<NamedArray>& arrays;

  const NamedArray& get(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return a;
    throw FormatError("checkpoint missing '" + name + "'");
  }

  double scalar(const std::string& name) const {
    const auto& a = get(name);
    if (a.data.size() != 1) throw FormatError("checkpoint entry '" + name + "' is not a scalar");
    return a.data[0];
  }

  int integer(const std::string& name) const { return static_cast<int>(scalar(name)); }

  std::vector<int> ints(const std::string& name) const {
    const auto& a = get(name);
    std::vector<int> v;
    for (double d : a.data) v.push_back(static_cast<int>(d));
    return v;
  }
};

}  // namespace detail

template <class S>
std::vector<NamedArray> model_meta_arrays(const ModelSet<S>& m) {
  using detail::meta_scalar;
  using detail::meta_vector;
  std::vector<NamedArray> a;
  a.push_back(meta_scalar("meta/format", 1.0));
  a.push_back(meta_scalar("meta/kind", static_cast<double>(m.kind)));
  a.push_back(meta_scalar("meta/num_classes", m.num_classes));
  a.push_back(meta_scalar("meta/x_dim", m.x_dim));
  a.push_back(meta_scalar("meta/latent_dim", m.latent_dim));
  a.push_back(meta_scalar("meta/feature_source", static_cast<double>(m.fs)));
  a.push_back(meta_scalar("meta/sigma_sq", static_cast<double>(m.sigma_sq)));
  a.push_back(meta_scalar("meta/side", m.side));
  a.push_back(meta_scalar("meta/likelihood", static_cast<double>(m.dec.likelihood)));
  a.push_back(meta_scalar("meta/enc_nl", static_cast<double>(m.enc.spec.nonlinearity)));
  a.push_back(meta_scalar("meta/dec_nl", static_cast<double>(m.dec.spec.nonlinearity)));
  a.push_back(meta_vector("meta/enc_widths", m.enc.spec.layer_widths));
  a.push_back(meta_vector("meta/dec_widths", m.dec.spec.layer_widths));
  if (m.kind == ModelKind::ssl) {
    a.push_back(meta_scalar("meta/feat_nl", static_cast<double>(m.feat.spec.nonlinearity)));
    a.push_back(meta_vector("meta/feat_widths", m.feat.spec.layer_widths));
  }
  return a;
}

template <class S>
ModelSet<S> model_from_meta(const std::vector<NamedArray>& arrays) {
  detail::MetaView mv{arrays};
  if (mv.integer("meta/format") != 1) throw FormatError("unsupported checkpoint format version");
  int kind = mv.integer("meta/kind");
  if (kind != 0 && kind != 1) throw FormatError("unknown model kind in checkpoint");
  int M = mv.integer("meta/num_classes");
  int x_dim = mv.integer("meta/x_dim");
  int K = mv.integer("meta/latent_dim");
  auto fs = static_cast<FeatureSource>(mv.integer("meta/feature_source"));
  S sigma_sq = static_cast<S>(mv.scalar("meta/sigma_sq"));
  int side = mv.integer("meta/side");
  auto lik = static_cast<Likelihood>(mv.integer("meta/likelihood"));
  MlpSpec enc_spec{mv.ints("meta/enc_widths"),
                   static_cast<Nonlinearity>(mv.integer("meta/enc_nl"))};
  MlpSpec dec_spec{mv.ints("meta/dec_widths"),
                   static_cast<Nonlinearity>(mv.integer("meta/dec_nl"))};
  if (kind == 0)
    return make_supervised_model<S>(x_dim, K, M, enc_spec, dec_spec, lik, fs, sigma_sq, side);
  MlpSpec feat_spec{mv.ints("meta/feat_widths"),
                    static_cast<Nonlinearity>(mv.integer("meta/feat_nl"))};
  return make_ssl_model<S>(x_dim, K, M, enc_spec, dec_spec, feat_spec, lik, fs, sigma_sq, side);
}

namespace detail {

template <class S>
void expect_shapes(const RecognitionNet<S>& net,
                   std::vector<std::pair<std::string, std::vector<int>>>& out) {
  int in = net.in_dim();
  for (std::size_t l = 0; l < net.spec.layer_widths.size(); ++l) {
    out.push_back({net.layer_w(l), {net.spec.layer_widths[l], in}});
    out.push_back({net.layer_b(l), {net.spec.layer_widths[l]}});
    in = net.spec.layer_widths[l];
  }
  out.push_back({net.prefix + "/mu_W", {net.latent_dim, in}});
  out.push_back({net.prefix + "/mu_b", {net.latent_dim}});
  out.push_back({net.prefix + "/lv_W", {net.latent_dim, in}});
  out.push_back({net.prefix + "/lv_b", {net.latent_dim}});
}

template <class S>
void expect_shapes(const DecoderNet<S>& net,
                   std::vector<std::pair<std::string, std::vector<int>>>& out) {
  int in = net.in_dim();
  for (std::size_t l = 0; l < net.spec.layer_widths.size(); ++l) {
    out.push_back({net.layer_w(l), {net.spec.layer_widths[l], in}});
    out.push_back({net.layer_b(l), {net.spec.layer_widths[l]}});
    in = net.spec.layer_widths[l];
  }
  if (net.likelihood == Likelihood::bernoulli) {
    out.push_back({net.prefix + "/out_W", {net.out_dim, in}});
    out.push_back({net.prefix + "/out_b", {net.out_dim}});
  } else {
    out.push_back({net.prefix + "/mean_W", {net.out_dim, in}});
    out.push_back({net.prefix + "/mean_b", {net.out_dim}});
    out.push_back({net.prefix + "/lv_W", {net.out_dim, in}});
    out.push_back({net.prefix + "/lv_b", {net.out_dim}});
  }
}

}  // namespace detail

template <class S>
std::vector<std::pair<std::string, std::vector<int>>> expected_params(const ModelSet<S>& m) {
  std::vector<std::pair<std::string, std::vector<int>>> out;
  detail::expect_shapes(m.enc, out);
  detail::expect_shapes(m.dec, out);
  if (m.kind == ModelKind::ssl) detail::expect_shapes(m.feat, out);
  out.push_back({"clf/lambda", {m.num_classes, m.feature_dim()}});
  return out;
}

template <class S>
void validate_model_params(const ModelSet<S>& m, const ParamStore<S>& st) {
  for (const auto& [name, shape] : expected_params(m)) {
    if (!st.has(name)) throw FormatError("checkpoint missing parameter '" + name + "'");
    if (st.at(name).value.shape != shape)
      throw FormatError("checkpoint parameter '" + name + "' has shape " +
                        st.at(name).value.shape_str());
  }
}

template <class S>
void save_model(const ModelSet<S>& m, const ParamStore<S>& st, const std::string& path) {
  std::vector<NamedArray> arrays = model_meta_arrays(m);
  for (auto& a : store_to_arrays(st)) arrays.push_back(std::move(a));
  save_arrays(path, arrays);
}

template <class S>
std::pair<ModelSet<S>, ParamStore<S>> load_model(const std::string& path) {
  std::vector<NamedArray> arrays = load_arrays(path);
  ModelSet<S> m = model_from_meta<S>(arrays);
  std::vector<NamedArray> params;
  for (auto& a : arrays)
    if (a.name.rfind("meta/", 0) != 0) params.push_back(std::move(a));
  std::pair<ModelSet<S>, ParamStore<S>> out{std::move(m), ParamStore<S>{}};
  arrays_into_store(params, out.second);
  validate_model_params(out.first, out.second);
  return out;
}

}  // namespace mmdgm
