#pragma once

#include <Eigen/Dense>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "mmdgm/errors.hpp"

namespace mmdgm {

// Dense real array of rank 0, 1 or 2. Rank-2 data is stored row-major in a
// flat Eigen vector; mat() maps it as a matrix without copying.
template <class S>
struct Tensor {
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
  using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<RowMat>;
  using ConstMatMap = Eigen::Map<const RowMat>;

  std::vector<int> shape;
  Vec data;

  Tensor() : data(1) { data[0] = S(0); }

  static Tensor scalar(S v) {
    Tensor t;
    t.data[0] = v;
    return t;
  }
  static Tensor zeros(std::vector<int> shp) {
    Tensor t;
    t.shape = std::move(shp);
    t.data = Vec::Zero(count(t.shape));
    return t;
  }
  static Tensor full(std::vector<int> shp, S v) {
    Tensor t = zeros(std::move(shp));
    t.data.setConstant(v);
    return t;
  }
  static Tensor zeros_like(const Tensor& o) {
    Tensor t;
    t.shape = o.shape;
    t.data = Vec::Zero(o.data.size());
    return t;
  }
  static Tensor vec(std::initializer_list<S> xs) {
    Tensor t;
    t.shape = {static_cast<int>(xs.size())};
    t.data.resize(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (S x : xs) t.data[i++] = x;
    return t;
  }
  static Tensor from_vector(const std::vector<S>& xs) {
    Tensor t;
    t.shape = {static_cast<int>(xs.size())};
    t.data.resize(static_cast<Eigen::Index>(xs.size()));
    for (std::size_t i = 0; i < xs.size(); ++i) t.data[static_cast<Eigen::Index>(i)] = xs[i];
    return t;
  }
  static Tensor matrix(std::initializer_list<std::initializer_list<S>> rows_in) {
    int m = static_cast<int>(rows_in.size());
    int n = m ? static_cast<int>(rows_in.begin()->size()) : 0;
    Tensor t = zeros({m, n});
    Eigen::Index i = 0;
    for (const auto& r : rows_in) {
      if (static_cast<int>(r.size()) != n) throw DimensionError("ragged matrix literal");
      for (S x : r) t.data[i++] = x;
    }
    return t;
  }
  static Tensor from_flat(std::vector<int> shp, Vec d) {
    Tensor t;
    t.shape = std::move(shp);
    t.data = std::move(d);
    if (t.data.size() != count(t.shape)) throw DimensionError("flat data does not fill shape");
    return t;
  }

  static Eigen::Index count(const std::vector<int>& shp) {
    Eigen::Index n = 1;
    for (int d : shp) {
      if (d <= 0) throw DimensionError("non-positive dimension");
      n *= d;
    }
    return n;
  }

  int rank() const { return static_cast<int>(shape.size()); }
  Eigen::Index size() const { return data.size(); }
  int rows() const { return rank() == 2 ? shape[0] : (rank() == 1 ? shape[0] : 1); }
  int cols() const { return rank() == 2 ? shape[1] : 1; }

  S& at(Eigen::Index i) { return data[i]; }
  S at(Eigen::Index i) const { return data[i]; }
  S& at(Eigen::Index i, Eigen::Index j) { return data[i * cols() + j]; }
  S at(Eigen::Index i, Eigen::Index j) const { return data[i * cols() + j]; }

  MatMap mat() { return MatMap(data.data(), rows(), cols()); }
  ConstMatMap mat() const { return ConstMatMap(data.data(), rows(), cols()); }

  bool all_finite() const { return data.allFinite(); }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
  }
};

template <class S>
bool same_shape(const Tensor<S>& a, const Tensor<S>& b) {
  return a.shape == b.shape;
}

}  // namespace mmdgm
