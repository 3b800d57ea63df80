#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mmdgm/random.hpp"
#include "mmdgm/tape.hpp"

using namespace mmdgm;
using T = Tensor<double>;

TEST_SUITE_BEGIN("tape");

TEST_CASE("matmul identity and direct arithmetic") {
  Tape<double> t;
  auto I = t.constant(T::matrix({{1, 0}, {0, 1}}));
  auto v = t.constant(T::matrix({{3}, {4}}));
  auto r = matmul(I, v);
  CHECK(t.val(r).at(0, 0) == 3.0);
  CHECK(t.val(r).at(1, 0) == 4.0);

  auto a = t.constant(T::matrix({{1, 2}}));
  auto b = t.constant(T::matrix({{3}, {4}}));
  CHECK(t.val(matmul(a, b)).at(0, 0) == 11.0);
}

TEST_CASE("matmul matches a naive triple-loop oracle") {
  Rng rng(11, 1);
  T A = th::randn({3, 4}, rng);
  T B = th::randn({4, 2}, rng);
  Tape<double> t;
  auto r = matmul(t.constant(A), t.constant(B));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += A.at(i, k) * B.at(k, j);
      CHECK(t.val(r).at(i, j) == doctest::Approx(acc).epsilon(1e-14));
    }
}

TEST_CASE("matmul shape mismatch raises a dimension error") {
  Tape<double> t;
  auto a = t.constant(T::matrix({{1, 2}}));
  auto b = t.constant(T::matrix({{1, 2}}));
  CHECK_THROWS_AS((void)matmul(a, b), DimensionError);
}

TEST_CASE("backward on linear and quadratic losses") {
  ParamStore<double> st;
  st.add("w", T::vec({1.0, -2.0, 3.0}));

  Tape<double> t;
  auto w = t.param(st, "w");
  t.backward(reduce_sum(w));
  for (int i = 0; i < 3; ++i) CHECK(st.at("w").grad.data[i] == 1.0);

  st.zero_grad();
  Tape<double> t2;
  auto w2 = t2.param(st, "w");
  t2.backward(mul_scalar(reduce_sum(mul(w2, w2)), 0.5));
  for (int i = 0; i < 3; ++i)
    CHECK(st.at("w").grad.data[i] == doctest::Approx(st.at("w").value.data[i]).epsilon(1e-15));
}

TEST_CASE("backward on a non-scalar is a contract error") {
  ParamStore<double> st;
  st.add("w", T::vec({1.0, 2.0}));
  Tape<double> t;
  auto w = t.param(st, "w");
  CHECK_THROWS_AS(t.backward(w), ContractError);
}

TEST_CASE("gradient accumulators are additive across backward passes") {
  ParamStore<double> st;
  st.add("w", T::vec({0.5, -1.5}));
  Tape<double> t;
  auto w = t.param(st, "w");
  auto loss = reduce_sum(mul(w, w));
  t.backward(loss);
  T once = st.at("w").grad;
  t.backward(loss);
  for (int i = 0; i < 2; ++i)
    CHECK(st.at("w").grad.data[i] == doctest::Approx(2.0 * once.data[i]).epsilon(1e-15));
}

TEST_CASE("elementwise values") {
  Tape<double> t;
  auto r = rectify(t.constant(T::vec({-1, 2})));
  CHECK(t.val(r).data[0] == 0.0);
  CHECK(t.val(r).data[1] == 2.0);

  auto sp = softplus(t.constant(T::scalar(0.0)));
  CHECK(scalar_value(sp) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("exp of log round-trips on positive arrays") {
  Rng rng(5, 1);
  T x = th::randu({4, 3}, rng, 0.1, 7.0);
  Tape<double> t;
  auto r = exp(log(t.constant(x)));
  for (Eigen::Index i = 0; i < x.size(); ++i)
    CHECK(std::abs(t.val(r).data[i] - x.data[i]) <= 1e-12 * x.data[i]);
}

TEST_CASE("log clamps its input at 1e-12 with zero gradient below") {
  ParamStore<double> st;
  st.add("x", T::vec({0.0, 1e-13, 2.0}));
  Tape<double> t;
  auto r = log(t.param(st, "x"));
  CHECK(t.val(r).data[0] == doctest::Approx(std::log(1e-12)));
  CHECK(t.val(r).data[1] == doctest::Approx(std::log(1e-12)));
  t.backward(reduce_sum(r));
  CHECK(st.at("x").grad.data[0] == 0.0);
  CHECK(st.at("x").grad.data[1] == 0.0);
  CHECK(st.at("x").grad.data[2] == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("scalar broadcasting works and incompatible shapes fail") {
  Tape<double> t;
  auto v = t.constant(T::vec({1, 2, 3}));
  auto c = t.scalar(10.0);
  CHECK(t.val(add(v, c)).data[2] == 13.0);
  CHECK(t.val(add(c, v)).data[0] == 11.0);
  CHECK(t.val(mul(v, c)).data[1] == 20.0);
  CHECK(t.val(sub(c, v)).data[0] == 9.0);

  auto w = t.constant(T::vec({1, 2}));
  CHECK_THROWS_AS((void)add(v, w), DimensionError);
}

TEST_CASE("operations reject non-finite results") {
  Tape<double> t;
  CHECK_THROWS_AS((void)exp(t.constant(T::vec({1000.0}))), NumericError);
  T bad = T::vec({1.0});
  bad.data[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS((void)t.constant(bad), NumericError);
}

TEST_CASE("operations are deterministic given identical inputs") {
  Rng rng(3, 1);
  T X = th::randn({5, 4}, rng);
  T W = th::randn({3, 4}, rng);
  auto run = [&]() {
    Tape<double> t;
    auto r = softplus(matmul_nt(t.constant(X), t.constant(W)));
    return t.val(r);
  };
  T a = run(), b = run();
  for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_CASE("finite differences across the op suite") {
  Rng rng(29, 1);
  ParamStore<double> st;
  st.add("X", th::randn({4, 3}, rng));
  st.add("W", th::randn({5, 3}, rng, 0.7));
  st.add("b", th::randn({5}, rng, 0.3));
  st.add("v", th::randn({4, 5}, rng, 0.5));
  st.add("s", T::scalar(0.7));

  auto eval = [&](bool do_backward) {
    Tape<double> t;
    auto X = t.param(st, "X");
    auto W = t.param(st, "W");
    auto b = t.param(st, "b");
    auto v = t.param(st, "v");
    auto s = t.param(st, "s");
    auto h = add_rowvec(matmul_nt(X, W), b);          // [4x5]
    auto a1 = tanh(h);
    auto a2 = sigmoid(h);
    auto a3 = softplus(h);
    auto mixed = add(mul(a1, a2), mul(a3, s));        // scalar broadcast
    auto cc = concat_cols(mixed, v);                  // [4x10]
    auto rows = reduce_sum_rows(cc);                  // [4]
    auto picked = pick_per_row(mixed, {0, 2, 4, 1});  // [4]
    auto pos = exp(mul_scalar(reduce_mean(cc), 0.1));
    auto lg = log(add_scalar(mul(pos, pos), 1.0));
    auto loss = add(add(reduce_sum(mul(rows, rows)),
                        reduce_sum(sub(picked, neg(picked)))),
                    add(lg, l2_norm(v)));
    if (do_backward) t.backward(loss);
    return scalar_value(loss);
  };
  auto rep = th::fd_check(st, eval);
  CAPTURE(rep.where);
  CHECK(rep.checked == 12 + 15 + 5 + 20 + 1);
  CHECK(rep.worst < 1e-4);
}

TEST_CASE("finite differences through rectify and clamp away from kinks") {
  Rng rng(31, 1);
  ParamStore<double> st;
  // keep every coordinate at least 0.1 away from the rectify kink and the
  // clamp boundaries so central differences stay one-sided-free
  T x = th::randn({6}, rng);
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (std::abs(x.data[i]) < 0.1) x.data[i] = 0.3;
  st.add("x", x);
  auto eval = [&](bool do_backward) {
    Tape<double> t;
    auto xv = t.param(st, "x");
    auto loss = add(reduce_sum(rectify(xv)),
                    reduce_sum(mul(clamp(xv, -0.9, 0.9), xv)));
    if (do_backward) t.backward(loss);
    return scalar_value(loss);
  };
  // nudge values off the clamp boundaries too
  for (Eigen::Index i = 0; i < st.at("x").value.size(); ++i) {
    double& v = st.at("x").value.data[i];
    if (std::abs(std::abs(v) - 0.9) < 0.1) v *= 0.5;
  }
  auto rep = th::fd_check(st, eval);
  CAPTURE(rep.where);
  CHECK(rep.worst < 1e-4);
}

TEST_CASE("a 50-parameter MLP loss passes the finite-difference oracle") {
  Rng rng(17, 1);
  ParamStore<double> st;
  st.add("W0", th::randn({4, 3}, rng, 0.6));  // 12
  st.add("b0", th::randn({4}, rng, 0.2));     // 4
  st.add("W1", th::randn({5, 4}, rng, 0.6));  // 20
  st.add("b1", th::randn({5}, rng, 0.2));     // 5
  st.add("W2", th::randn({1, 5}, rng, 0.6));  // 5
  st.add("b2", th::randn({1}, rng, 0.2));     // 1
  st.add("c", th::randn({3}, rng));           // 3 -> 50 total
  CHECK(st.total_values() == 50);

  T X = th::randn({7, 3}, rng);
  auto eval = [&](bool do_backward) {
    Tape<double> t;
    auto h0 = softplus(add_rowvec(matmul_nt(t.constant(X), t.param(st, "W0")), t.param(st, "b0")));
    auto h1 = tanh(add_rowvec(matmul_nt(h0, t.param(st, "W1")), t.param(st, "b1")));
    auto out = add_rowvec(matmul_nt(h1, t.param(st, "W2")), t.param(st, "b2"));
    auto target = reduce_sum(mul(out, out));
    auto reg = mul_scalar(reduce_sum(mul(t.param(st, "c"), t.param(st, "c"))), 0.5);
    auto loss = add(target, reg);
    if (do_backward) t.backward(loss);
    return scalar_value(loss);
  };
  auto rep = th::fd_check(st, eval);
  CAPTURE(rep.where);
  CHECK(rep.worst < 1e-4);
}

TEST_SUITE_END();
