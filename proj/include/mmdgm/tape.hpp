#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmdgm/errors.hpp"
#include "mmdgm/tensor.hpp"

namespace mmdgm {

// Named parameter arrays with paired gradient accumulators. Backward passes
// add into grad; callers reset with zero_grad between steps.
template <class S>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<S> value;
    Tensor<S> grad;
  };

  Entry& add(const std::string& name, Tensor<S> value) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    index_[name] = static_cast<int>(entries_.size());
    entries_.push_back(Entry{name, std::move(value), Tensor<S>()});
    Entry& e = entries_.back();
    e.grad = Tensor<S>::zeros_like(e.value);
    return e;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Entry& at(const std::string& name) { return entries_[idx(name)]; }
  const Entry& at(const std::string& name) const { return entries_[idx(name)]; }
  Entry& at(int i) { return entries_[static_cast<std::size_t>(i)]; }
  const Entry& at(int i) const { return entries_[static_cast<std::size_t>(i)]; }

  int index_of(const std::string& name) const { return static_cast<int>(idx(name)); }
  int size() const { return static_cast<int>(entries_.size()); }

  Eigen::Index total_values() const {
    Eigen::Index n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.grad.data.setZero();
  }

 private:
  std::size_t idx(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return static_cast<std::size_t>(it->second);
  }

  std::deque<Entry> entries_;  // deque: references stay valid across add()
  std::unordered_map<std::string, int> index_;
};

template <class S>
class Tape;

// Handle to a tape node.
template <class S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;
};

// Reverse-mode tape, rebuilt per training step. Nodes store values eagerly;
// backward walks the recording in reverse and scatters adjoints. Every
// operation checks its output for NaN/Inf and throws NumericError, so a
// diverged model surfaces as an error instead of quiet garbage.
template <class S>
class Tape {
 public:
  Var<S> constant(Tensor<S> v) {
    check_finite(v, "constant");
    int id = push(std::move(v), false, nullptr);
    return Var<S>{this, id};
  }
  Var<S> scalar(S v) { return constant(Tensor<S>::scalar(v)); }

  // Leaf reading a parameter's current value; backward adds into its grad.
  // One node per (store, entry) pair per tape.
  Var<S> param(ParamStore<S>& store, const std::string& name) {
    int pi = store.index_of(name);
    auto key = std::make_pair(static_cast<const void*>(&store), pi);
    auto it = param_nodes_.find(key);
    if (it != param_nodes_.end()) return Var<S>{this, it->second};
    Tensor<S> v = store.at(pi).value;
    check_finite(v, "param " + name);
    int id = push(std::move(v), true, nullptr);
    nodes_[static_cast<std::size_t>(id)].store = &store;
    nodes_[static_cast<std::size_t>(id)].pindex = pi;
    param_nodes_[key] = id;
    return Var<S>{this, id};
  }

  const Tensor<S>& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor<S>& val(Var<S> v) const { return val(v.id); }

  bool needs(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  // Adjoint of a node, allocated as zeros on first touch per backward pass.
  Tensor<S>& adjoint(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_adj) {
      n.adjoint = Tensor<S>::zeros_like(n.value);
      n.has_adj = true;
    }
    return n.adjoint;
  }

  int size() const { return static_cast<int>(nodes_.size()); }

  int push(Tensor<S> value, bool needs_grad, std::function<void()> back) {
    check_finite(value, "op");
    nodes_.push_back(Node{std::move(value), Tensor<S>(), needs_grad, false,
                          std::move(back), nullptr, -1});
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Accumulates d(loss)/d(param) into every participating store entry's grad.
  // Node adjoints are reset per call, store grads are not: two backward
  // passes without zero_grad leave exactly twice the gradient.
  void backward(Var<S> loss) {
    if (loss.tape != this || loss.id < 0) throw ContractError("backward: foreign node");
    if (val(loss.id).size() != 1) throw ContractError("backward requires a scalar loss");
    for (auto& n : nodes_) n.has_adj = false;
    adjoint(loss.id).data.setConstant(S(1));
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.has_adj || !n.needs_grad) continue;
      if (n.back) n.back();
      if (n.store) n.store->at(n.pindex).grad.data += n.adjoint.data;
    }
  }

  void check_finite(const Tensor<S>& t, const std::string& op) const {
    if (!t.all_finite()) throw NumericError("non-finite value produced by " + op);
  }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> adjoint;
    bool needs_grad = false;
    bool has_adj = false;
    std::function<void()> back;
    ParamStore<S>* store = nullptr;
    int pindex = -1;
  };

  std::vector<Node> nodes_;
  std::map<std::pair<const void*, int>, int> param_nodes_;
};

namespace detail {

template <class S>
Tape<S>& tape_of(Var<S> a, Var<S> b, const char* op) {
  if (a.tape == nullptr || b.tape == nullptr || a.tape != b.tape)
    throw ContractError(std::string(op) + ": operands from different tapes");
  return *a.tape;
}

// Supported broadcasting: equal shapes, or one rank-0 operand.
enum class Bcast { equal, a_scalar, b_scalar };

template <class S>
Bcast bcast_kind(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (same_shape(a, b)) return Bcast::equal;
  if (a.rank() == 0) return Bcast::a_scalar;
  if (b.rank() == 0) return Bcast::b_scalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_str() +
                       " vs " + b.shape_str());
}

// Adds g into the adjoint of node `pid`, collapsing to a scalar if the node
// is rank 0 and g is not.
template <class S>
void spread(Tape<S>* tp, int pid, const typename Tensor<S>::Vec& g) {
  Tensor<S>& d = tp->adjoint(pid);
  if (d.size() == 1 && g.size() != 1)
    d.data[0] += g.sum();
  else
    d.data += g;
}

}  // namespace detail

template <class S>
S scalar_value(Var<S> v) {
  const Tensor<S>& t = v.tape->val(v);
  if (t.size() != 1) throw ContractError("scalar_value on non-scalar");
  return t.data[0];
}

// ---- binary elementwise ------------------------------------------------

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  Tape<S>& t = detail::tape_of(a, b, "add");
  const Tensor<S>&A = t.val(a), &B = t.val(b);
  auto k = detail::bcast_kind(A, B, "add");
  Tensor<S> r = (k == detail::Bcast::a_scalar) ? B : A;
  if (k == detail::Bcast::a_scalar)
    r.data.array() += A.data[0];
  else if (k == detail::Bcast::b_scalar)
    r.data.array() += B.data[0];
  else
    r.data += B.data;
  bool ng = t.needs(a.id) || t.needs(b.id);
  int ia = a.id, ib = b.id, id = t.size();
  Tape<S>* tp = &t;
  std::function<void()> back;
  if (ng)
    back = [tp, ia, ib, id]() {
      const auto& g = tp->adjoint(id).data;
      if (tp->needs(ia)) detail::spread(tp, ia, g);
      if (tp->needs(ib)) detail::spread(tp, ib, g);
    };
  t.push(std::move(r), ng, std::move(back));
  return Var<S>{&t, id};
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
  Tape<S>& t = detail::tape_of(a, b, "sub");
  const Tensor<S>&A = t.val(a), &B = t.val(b);
  auto k = detail::bcast_kind(A, B, "sub");
  Tensor<S> r;
  if (k == detail::Bcast::a_scalar) {
    r = B;
    r.data = (A.data[0] - B.data.array()).matrix();
  } else if (k == detail::Bcast::b_scalar) {
    r = A;
    r.data.array() -= B.data[0];
  } else {
    r = A;
    r.data -= B.data;
  }
  bool ng = t.needs(a.id) || t.needs(b.id);
  int ia = a.id, ib = b.id, id = t.size();
  Tape<S>* tp = &t;
  std::function<void()> back;
  if (ng)
    back = [tp, ia, ib, id]() {
      const auto& g = tp->adjoint(id).data;
      if (tp->needs(ia)) detail::spread(tp, ia, g);
      if (tp->needs(ib)) detail::spread<S>(tp, ib, -g);
    };
  t.push(std::move(r), ng, std::move(back));
  return Var<S>{&t, id};
}

template <class S>
Var<S> mul(Var<S> a, Var<S> b) {
  Tape<S>& t = detail::tape_of(a, b, "mul");
  const Tensor<S>&A = t.val(a), &B = t.val(b);
  auto k = detail::bcast_kind(A, B, "mul");
  Tensor<S> r = (k == detail::Bcast::a_scalar) ? B : A;
  if (k == detail::Bcast::a_scalar)
    r.data *= A.data[0];
  else if (k == detail::Bcast::b_scalar)
    r.data *= B.data[0];
  else
    r.data = A.data.cwiseProduct(B.data);
  bool ng = t.needs(a.id) || t.needs(b.id);
  int ia = a.id, ib = b.id, id = t.size();
  Tape<S>* tp = &t;
  std::function<void()> back;
  if (ng)
    back = [tp, ia, ib, id, k]() {
      const auto& g = tp->adjoint(id).data;
      const auto& Av = tp->val(ia).data;
      const auto& Bv = tp->val(ib).data;
      if (tp->needs(ia)) {
        if (k == detail::Bcast::b_scalar)
          detail::spread<S>(tp, ia, g * Bv[0]);
        else if (k == detail::Bcast::a_scalar)
          detail::spread<S>(tp, ia, g.cwiseProduct(Bv));
        else
          detail::spread<S>(tp, ia, g.cwiseProduct(Bv));
      }
      if (tp->needs(ib)) {
        if (k == detail::Bcast::a_scalar)
          detail::spread<S>(tp, ib, g * Av[0]);
        else
          detail::spread<S>(tp, ib, g.cwiseProduct(Av));
      }
    };
  t.push(std::move(r), ng, std::move(back));
  return Var<S>{&t, id};
}

template <class S>
Var<S> neg(Var<S> a) {
  Tape<S>& t = *a.tape;
  Tensor<S> r = t.val(a);
  r.data = -r.data;
  bool ng = t.needs(a.id);
  int ia = a.id, id = t.size();
  Tape<S>* tp = &t;
  std::function<void()> back;
  if (ng)
    back = [tp, ia, id]() { tp->adjoint(ia).data -= tp->adjoint(id).data; };
  t.push(std::move(r), ng, std::move(back));
  return Var<S>{&t, id};
}

template <class S>
Var<S> add_scalar(Var<S> a, S c) {
  Tape<S>& t = *a.tape;
  Tensor<S> r = t.val(a);
  r.data.array() += c;
  bool ng = t.needs(a.id);
  int ia = a.id, id = t.size();
  Tape<S>* tp = &t;
  std::function<void()> back;
  if (ng)
    back = [tp, ia, id]() { tp->adjoint(ia).data += tp->adjoint(id).data; };
  t.push(std::move(r), ng, std::move(back));
  return Var<S>{&t, id};
}

template <class S>
Var<S> mul_scalar(Var<S> a, S c) {
  Tape<S>& t = *a.tape;
  Tensor<S> r = t.val(a);
  r.data *= c;
  bool ng = t.needs(a.id);
  int ia = a.id, id = t.size();
  Tape<S>* tp = &t;
  std::function<void()> back;
  if (ng)
    back = [tp, ia, id, c]() { tp->adjoint(ia).data += c * tp->adjoint(id).data; };
  t.push(std::move(r), ng, std::move(back));
  return Var<S>{&t, id};
}

// ---- unary elementwise ---------------------------------------------------

namespace detail {

template <class S, class FwdF, class BackF>
Var<S> unary(Var<S> a, const char* /*name*/, FwdF fwd, BackF dfd) {
  Tape<S>& t = *a.tape;
  Tensor<S> r = t.val(a);
  for (Eigen::Index i = 0; i < r.data.size(); ++i) r.data[i] = fwd(r.data[i]);
  bool ng = t.needs(a.id);
  int ia = a.id, id = t.size();
  Tape<S>* tp = &t;
  std::function<void()> back;
  if (ng)
    back = [tp, ia, id, dfd]() {
      const auto& g = tp->adjoint(id).data;
      const auto& x = tp->val(ia).data;
      const auto& y = tp->val(id).data;
      auto& d = tp->adjoint(ia).data;
      for (Eigen::Index i = 0; i < g.size(); ++i) d[i] += g[i] * dfd(x[i], y[i]);
    };
  t.push(std::move(r), ng, std::move(back));
  return Var<S>{&t, id};
}

}  // namespace detail

template <class S>
Var<S> exp(Var<S> a) {
  return detail::unary(
      a, "exp", [](S x) { return std::exp(x); },
      [](S, S y) { return y; });
}

// Input clamped at 1e-12; below the clamp the function is constant, so the
// gradient there is exactly zero.
template <class S>
Var<S> log(Var<S> a) {
  const S lo = S(1e-12);
  return detail::unary(
      a, "log", [lo](S x) { return std::log(x < lo ? lo : x); },
      [lo](S x, S) { return x < lo ? S(0) : S(1) / x; });
}

template <class S>
Var<S> tanh(Var<S> a) {
  return detail::unary(
      a, "tanh", [](S x) { return std::tanh(x); },
      [](S, S y) { return S(1) - y * y; });
}

namespace detail {
template <class S>
S sigmoid_s(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  S e = std::exp(x);
  return e / (S(1) + e);
}
}  // namespace detail

template <class S>
Var<S> softplus(Var<S> a) {
  return detail::unary(
      a, "softplus",
      [](S x) { return (x > S(0) ? x : S(0)) + std::log1p(std::exp(-std::abs(x))); },
      [](S x, S) { return detail::sigmoid_s(x); });
}

template <class S>
Var<S> rectify(Var<S> a) {
  return detail::unary(
      a, "rectify", [](S x) { return x > S(0) ? x : S(0); },
      [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <class S>
Var<S> sigmoid(Var<S> a) {
  return detail::unary(
      a, "sigmoid", [](S x) { return detail::sigmoid_s(x); },
      [](S, S y) { return y * (S(1) - y); });
}

// Pass-through gradient strictly inside (lo, hi), zero outside.
template <class S>
Var<S> clamp(Var<S> a, S lo, S hi) {
  return detail::unary(
      a, "clamp", [lo, hi](S x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](S x, S) { return (x > lo && x < hi) ? S(1) : S(0); });
}

// ---- matrix ops ----------------------------------------------------------

template <class S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Tape<S>& t = detail::tape_of(a, b, "matmul");
  const Tensor<S>&A = t.val(a), &B = t.val(b);
  if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[0])
    throw DimensionError("matmul: " + A.shape_str() + " x " + B.shape_str());
  Tensor<S> r = Tensor<S>::zeros({A.shape[0], B.shape[1]});
  r.mat() = A.mat() * B.mat();
  bool ng = t.needs(a.id) || t.needs(b.id);
  int ia = a.id, ib = b.id, id = t.size();
  Tape<S>* tp = &t;
  std::function<void()> back;
  if (ng)
    back = [tp, ia, ib, id]() {
      const Tensor<S>& G = tp->adjoint(id);
      auto g = G.mat();
      if (tp->needs(ia)) tp->adjoint(ia).mat() += g * tp->val(ib).mat().transpose();
      if (tp->needs(ib)) tp->adjoint(ib).mat() += tp->val(ia).mat().transpose() * g;
    };
  t.push(std::move(r), ng, std::move(back));
  return Var<S>{&t, id};
}

// a [m x k] times b^T for b [n x k]; the layer-forward shape.
template <class S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  Tape<S>& t = detail::tape_of(a, b, "matmul_nt");
  const Tensor<S>&A = t.val(a), &B = t.val(b);
  if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[1])
    throw DimensionError("matmul_nt: " + A.shape_str() + " x " + B.shape_str() + "^T");
  Tensor<S> r = Tensor<S>::zeros({A.shape[0], B.shape[0]});
  r.mat() = A.mat() * B.mat().transpose();
  bool ng = t.needs(a.id) || t.needs(b.id);
  int ia = a.id, ib = b.id, id = t.size();
  Tape<S>* tp = &t;
  std::function<void()> back;
  if (ng)
    back = [tp, ia, ib, id]() {
      const Tensor<S>& G = tp->adjoint(id);
      auto g = G.mat();
      if (tp->needs(ia)) tp->adjoint(ia).mat() += g * tp->val(ib).mat();
      if (tp->needs(ib)) tp->adjoint(ib).mat() += g.transpose() * tp->val(ia).mat();
    };
  t.push(std::move(r), ng, std::move(back));
  return Var<S>{&t, id};
}

// X [m x n] plus row vector b [n], broadcast down the rows.
template <class S>
Var<S> add_rowvec(Var<S> x, Var<S> b) {
  Tape<S>& t = detail::tape_of(x, b, "add_rowvec");
  const Tensor<S>&X = t.val(x), &B = t.val(b);
  if (X.rank() != 2 || B.rank() != 1 || X.shape[1] != B.shape[0])
    throw DimensionError("add_rowvec: " + X.shape_str() + " + " + B.shape_str());
  Tensor<S> r = X;
  r.mat().rowwise() += B.data.transpose();
  bool ng = t.needs(x.id) || t.needs(b.id);
  int ix = x.id, ib = b.id, id = t.size();
  Tape<S>* tp = &t;
  std::function<void()> back;
  if (ng)
    back = [tp, ix, ib, id]() {
      const Tensor<S>& G = tp->adjoint(id);
      if (tp->needs(ix)) tp->adjoint(ix).data += G.data;
      if (tp->needs(ib)) tp->adjoint(ib).data += G.mat().colwise().sum().transpose();
    };
  t.push(std::move(r), ng, std::move(back));
  return Var<S>{&t, id};
}

// ---- reductions ----------------------------------------------------------

template <class S>
Var<S> reduce_sum(Var<S> a) {
  Tape<S>& t = *a.tape;
  Tensor<S> r = Tensor<S>::scalar(t.val(a).data.sum());
  bool ng = t.needs(a.id);
  int ia = a.id, id = t.size();
  Tape<S>* tp = &t;
  std::function<void()> back;
  if (ng)
    back = [tp, ia, id]() {
      tp->adjoint(ia).data.array() += tp->adjoint(id).data[0];
    };
  t.push(std::move(r), ng, std::move(back));
  return Var<S>{&t, id};
}

template <class S>
Var<S> reduce_mean(Var<S> a) {
  Tape<S>& t = *a.tape;
  const Tensor<S>& A = t.val(a);
  S inv = S(1) / S(A.size());
  Tensor<S> r = Tensor<S>::scalar(A.data.sum() * inv);
  bool ng = t.needs(a.id);
  int ia = a.id, id = t.size();
  Tape<S>* tp = &t;
  std::function<void()> back;
  if (ng)
    back = [tp, ia, id, inv]() {
      tp->adjoint(ia).data.array() += inv * tp->adjoint(id).data[0];
    };
  t.push(std::move(r), ng, std::move(back));
  return Var<S>{&t, id};
}

// Per-row sum of a rank-2 tensor: [m x n] -> [m].
template <class S>
Var<S> reduce_sum_rows(Var<S> a) {
  Tape<S>& t = *a.tape;
  const Tensor<S>& A = t.val(a);
  if (A.rank() != 2) throw DimensionError("reduce_sum_rows needs rank 2, got " + A.shape_str());
  Tensor<S> r = Tensor<S>::zeros({A.shape[0]});
  r.data = A.mat().rowwise().sum();
  bool ng = t.needs(a.id);
  int ia = a.id, id = t.size();
  Tape<S>* tp = &t;
  std::function<void()> back;
  if (ng)
    back = [tp, ia, id]() {
      tp->adjoint(ia).mat().colwise() += tp->adjoint(id).data;
    };
  t.push(std::move(r), ng, std::move(back));
  return Var<S>{&t, id};
}

// [m*L x F] -> [m x F], averaging each contiguous block of L rows. Used to
// collapse per-sample features back to per-example means.
template <class S>
Var<S> block_mean_rows(Var<S> a, int L) {
  Tape<S>& t = *a.tape;
  const Tensor<S>& A = t.val(a);
  if (L < 1) throw ContractError("block_mean_rows: block must be positive");
  if (A.rank() != 2 || A.shape[0] % L != 0)
    throw DimensionError("block_mean_rows: " + A.shape_str() + " not divisible into blocks of " +
                         std::to_string(L));
  int m = A.shape[0] / L;
  Tensor<S> r = Tensor<S>::zeros({m, A.shape[1]});
  for (int i = 0; i < m; ++i)
    r.mat().row(i) = A.mat().middleRows(i * L, L).colwise().mean();
  bool ng = t.needs(a.id);
  int ia = a.id, id = t.size();
  Tape<S>* tp = &t;
  std::function<void()> back;
  if (ng)
    back = [tp, ia, id, L, m]() {
      const Tensor<S>& G = tp->adjoint(id);
      Tensor<S>& d = tp->adjoint(ia);
      S inv = S(1) / static_cast<S>(L);
      for (int i = 0; i < m; ++i)
        d.mat().middleRows(i * L, L).rowwise() += G.mat().row(i) * inv;
    };
  t.push(std::move(r), ng, std::move(back));
  return Var<S>{&t, id};
}

// out[i] = X[i, idx[i]]; the hinge picks class scores with it.
template <class S>
Var<S> pick_per_row(Var<S> x, std::vector<int> idx) {
  Tape<S>& t = *x.tape;
  const Tensor<S>& X = t.val(x);
  if (X.rank() != 2) throw DimensionError("pick_per_row needs rank 2, got " + X.shape_str());
  if (static_cast<int>(idx.size()) != X.shape[0])
    throw DimensionError("pick_per_row: index count != rows");
  for (int j : idx)
    if (j < 0 || j >= X.shape[1]) throw ContractError("pick_per_row: index out of range");
  Tensor<S> r = Tensor<S>::zeros({X.shape[0]});
  for (int i = 0; i < X.shape[0]; ++i) r.data[i] = X.at(i, idx[static_cast<std::size_t>(i)]);
  bool ng = t.needs(x.id);
  int ix = x.id, id = t.size();
  Tape<S>* tp = &t;
  std::function<void()> back;
  if (ng)
    back = [tp, ix, id, idx = std::move(idx)]() {
      const auto& g = tp->adjoint(id).data;
      Tensor<S>& d = tp->adjoint(ix);
      for (Eigen::Index i = 0; i < g.size(); ++i)
        d.at(i, idx[static_cast<std::size_t>(i)]) += g[i];
    };
  t.push(std::move(r), ng, std::move(back));
  return Var<S>{&t, id};
}

// [m x a] ++ [m x b] -> [m x (a+b)].
template <class S>
Var<S> concat_cols(Var<S> a, Var<S> b) {
  Tape<S>& t = detail::tape_of(a, b, "concat_cols");
  const Tensor<S>&A = t.val(a), &B = t.val(b);
  if (A.rank() != 2 || B.rank() != 2 || A.shape[0] != B.shape[0])
    throw DimensionError("concat_cols: " + A.shape_str() + " ++ " + B.shape_str());
  int m = A.shape[0], na = A.shape[1], nb = B.shape[1];
  Tensor<S> r = Tensor<S>::zeros({m, na + nb});
  r.mat().leftCols(na) = A.mat();
  r.mat().rightCols(nb) = B.mat();
  bool ng = t.needs(a.id) || t.needs(b.id);
  int ia = a.id, ib = b.id, id = t.size();
  Tape<S>* tp = &t;
  std::function<void()> back;
  if (ng)
    back = [tp, ia, ib, id, na, nb]() {
      const Tensor<S>& G = tp->adjoint(id);
      if (tp->needs(ia)) tp->adjoint(ia).mat() += G.mat().leftCols(na);
      if (tp->needs(ib)) tp->adjoint(ib).mat() += G.mat().rightCols(nb);
    };
  t.push(std::move(r), ng, std::move(back));
  return Var<S>{&t, id};
}

// Frobenius norm with subgradient 0 at the origin (sqrt would blow up there).
template <class S>
Var<S> l2_norm(Var<S> a) {
  Tape<S>& t = *a.tape;
  const Tensor<S>& A = t.val(a);
  S v = std::sqrt(A.data.squaredNorm());
  Tensor<S> r = Tensor<S>::scalar(v);
  bool ng = t.needs(a.id);
  int ia = a.id, id = t.size();
  Tape<S>* tp = &t;
  std::function<void()> back;
  if (ng)
    back = [tp, ia, id, v]() {
      if (v > S(0))
        tp->adjoint(ia).data += (tp->adjoint(id).data[0] / v) * tp->val(ia).data;
    };
  t.push(std::move(r), ng, std::move(back));
  return Var<S>{&t, id};
}

template <class S>
Var<S> operator+(Var<S> a, Var<S> b) {
  return add(a, b);
}
template <class S>
Var<S> operator-(Var<S> a, Var<S> b) {
  return sub(a, b);
}
template <class S>
Var<S> operator*(Var<S> a, Var<S> b) {
  return mul(a, b);
}

}  // namespace mmdgm
