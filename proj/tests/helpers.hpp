#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "mmdgm/random.hpp"
#include "mmdgm/tape.hpp"
#include "mmdgm/tensor.hpp"

namespace th {

inline bool same_bits(const mmdgm::Tensor<double>& a, const mmdgm::Tensor<double>& b) {
  if (a.shape != b.shape) return false;
  return std::memcmp(a.data.data(), b.data.data(),
                     sizeof(double) * static_cast<std::size_t>(a.data.size())) == 0;
}

inline mmdgm::Tensor<double> randn(std::vector<int> shape, mmdgm::Rng& r, double scale = 1.0) {
  auto t = mmdgm::Tensor<double>::zeros(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = scale * r.normal();
  return t;
}

inline mmdgm::Tensor<double> randu(std::vector<int> shape, mmdgm::Rng& r, double lo = 0.0,
                                   double hi = 1.0) {
  auto t = mmdgm::Tensor<double>::zeros(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = lo + (hi - lo) * r.uniform();
  return t;
}

struct FdReport {
  double worst = 0.0;   // max of |analytic-fd| / max(|analytic|,|fd|,1e-4)
  int checked = 0;
  std::string where;
};

// Central finite differences over every entry of every parameter.
// `eval(true)` must rebuild the graph from current store values and run
// backward (grads accumulate); `eval(false)` only returns the value.
template <class F>
FdReport fd_check(mmdgm::ParamStore<double>& st, F eval, double h = 1e-5) {
  st.zero_grad();
  eval(true);
  std::vector<mmdgm::Tensor<double>> g;
  g.reserve(static_cast<std::size_t>(st.size()));
  for (int i = 0; i < st.size(); ++i) g.push_back(st.at(i).grad);

  FdReport rep;
  for (int i = 0; i < st.size(); ++i) {
    auto& value = st.at(i).value;
    for (Eigen::Index j = 0; j < value.size(); ++j) {
      double orig = value.data[j];
      value.data[j] = orig + h;
      double fp = eval(false);
      value.data[j] = orig - h;
      double fm = eval(false);
      value.data[j] = orig;
      double fd = (fp - fm) / (2.0 * h);
      double an = g[static_cast<std::size_t>(i)].data[j];
      double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-4});
      ++rep.checked;
      if (rel > rep.worst) {
        rep.worst = rel;
        rep.where = st.at(i).name + "[" + std::to_string(j) + "]";
      }
    }
  }
  return rep;
}

}  // namespace th
