#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mmdgm/errors.hpp"
#include "mmdgm/tape.hpp"
#include "mmdgm/tensor.hpp"

namespace mmdgm {

// Adaptive-moment optimizer state; moments persist across steps and stay
// aligned with the store's entry order.
template <class S>
struct AdamState {
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
  std::int64_t t = 0;
  std::vector<typename Tensor<S>::Vec> m, v;
};

template <class S>
void adam_update(ParamStore<S>& st, AdamState<S>& state, S lr) {
  if (state.m.empty()) {
    for (int i = 0; i < st.size(); ++i) {
      state.m.push_back(Tensor<S>::Vec::Zero(st.at(i).value.size()));
      state.v.push_back(Tensor<S>::Vec::Zero(st.at(i).value.size()));
    }
  }
  if (static_cast<int>(state.m.size()) != st.size())
    throw ContractError("optimizer state does not match the parameter store");
  state.t += 1;
  S c1 = S(1) - std::pow(state.beta1, static_cast<S>(state.t));
  S c2 = S(1) - std::pow(state.beta2, static_cast<S>(state.t));
  for (int i = 0; i < st.size(); ++i) {
    auto& e = st.at(i);
    if (!e.grad.all_finite())
      throw NumericError("non-finite gradient in '" + e.name + "' at optimizer step " +
                         std::to_string(state.t));
    auto& m = state.m[static_cast<std::size_t>(i)];
    auto& v = state.v[static_cast<std::size_t>(i)];
    m = state.beta1 * m + (S(1) - state.beta1) * e.grad.data;
    v = state.beta2 * v + (S(1) - state.beta2) * e.grad.data.cwiseProduct(e.grad.data);
    e.value.data -= lr * ((m / c1).array() / ((v / c2).array().sqrt() + state.eps)).matrix();
  }
}

}  // namespace mmdgm
