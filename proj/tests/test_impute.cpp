#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "mmdgm/impute.hpp"
#include "mmdgm/pgm.hpp"
#include "mmdgm/trainer.hpp"

using namespace mmdgm;

namespace {

MlpSpec soft(std::vector<int> w) { return MlpSpec{std::move(w), Nonlinearity::softplus}; }

// Two-prototype 4x4 images: one class bright on the left half, the other on
// the right, plus a little noise.
Tensor<double> proto_image(int c, Rng& r) {
  Tensor<double> x = Tensor<double>::zeros({16});
  for (int i = 0; i < 16; ++i) {
    bool left = (i % 4) < 2;
    bool bright = (c == 0) == left;
    x.at(i) = (bright ? 0.85 : 0.15) + 0.05 * r.normal();
  }
  return x;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(bool(f));
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

}  // namespace

TEST_SUITE("impute") {
  TEST_CASE("random-drop masks hit the requested density") {
    auto none = rand_drop_mask(50, 0.0, 1);
    CHECK(none.missing_count() == 0);
    auto all = rand_drop_mask(50, 1.0, 1);
    CHECK(all.missing_count() == 50);

    auto m = rand_drop_mask(784, 0.4, 7);
    CHECK(m.dim() == 784);
    // binomial: mean 313.6, sd 13.72; four sigma
    CHECK(m.missing_count() >= 259);
    CHECK(m.missing_count() <= 368);

    auto m2 = rand_drop_mask(784, 0.4, 7);
    CHECK(m.mask == m2.mask);  // same seed, same mask
    CHECK(rand_drop_mask(784, 0.4, 8).mask != m.mask);

    CHECK_THROWS_AS(rand_drop_mask(0, 0.5, 1), ContractError);
    CHECK_THROWS_AS(rand_drop_mask(10, 1.5, 1), ContractError);
    CHECK_THROWS_AS(rand_drop_mask(10, -0.1, 1), ContractError);
  }

  TEST_CASE("rectangle masks sit centered") {
    auto m = rect_mask(28, 12);
    CHECK(m.dim() == 784);
    CHECK(m.missing_count() == 144);
    for (int i = 0; i < 28; ++i)
      for (int j = 0; j < 28; ++j) {
        bool in = i >= 8 && i < 20 && j >= 8 && j < 20;
        CHECK(m.missing(i * 28 + j) == in);
      }

    CHECK(rect_mask(28, 0).missing_count() == 0);
    CHECK(rect_mask(28, 28).missing_count() == 784);

    // odd gap goes to the floor side
    auto o = rect_mask(5, 2);
    CHECK(o.missing_count() == 4);
    CHECK(o.missing(1 * 5 + 1));
    CHECK(o.missing(2 * 5 + 2));
    CHECK(!o.missing(3 * 5 + 3));

    CHECK_THROWS_AS(rect_mask(5, 6), ContractError);
  }

  TEST_CASE("missing-pixel mse agrees with a scalar loop") {
    Tensor<double> a = Tensor<double>::zeros({6});
    Tensor<double> b = Tensor<double>::zeros({6});
    MissingMask m;
    m.mask = {0, 1, 0, 1, 1, 0};

    CHECK(mse_missing(a, b, m) == 0.0);

    b.at(1) = 0.5;  // one missing pixel off by 0.5
    MissingMask one;
    one.mask = {0, 1, 0, 0, 0, 0};
    CHECK(mse_missing(a, b, one) == doctest::Approx(0.25).epsilon(1e-15));

    Rng r(3, 50);
    for (int i = 0; i < 6; ++i) {
      a.at(i) = r.normal();
      b.at(i) = r.normal();
    }
    double acc = 0;
    int n = 0;
    for (int i = 0; i < 6; ++i)
      if (m.missing(i)) {
        acc += (a.at(i) - b.at(i)) * (a.at(i) - b.at(i));
        ++n;
      }
    CHECK(mse_missing(a, b, m) == doctest::Approx(acc / n).epsilon(1e-15));

    double acc_all = 0;
    for (int i = 0; i < 6; ++i) acc_all += (a.at(i) - b.at(i)) * (a.at(i) - b.at(i));
    CHECK(mse_missing(a, b, m, false) == doctest::Approx(acc_all / 6).epsilon(1e-15));

    MissingMask empty;
    empty.mask = {0, 0, 0, 0, 0, 0};
    CHECK_THROWS_AS(mse_missing(a, b, empty), ContractError);
    Tensor<double> c = Tensor<double>::zeros({5});
    CHECK_THROWS_AS(mse_missing(a, c, m), DimensionError);
  }

  TEST_CASE("imputation preserves observed pixels exactly") {
    auto m = make_supervised_model<double>(16, 2, 2, soft({6}), soft({6}), Likelihood::gaussian,
                                           FeatureSource::latent_mean, 1.0, 4);
    ParamStore<double> st;
    m.init_params(st, 5);

    Rng rd(9, 50);
    Tensor<double> x = proto_image(0, rd);
    auto mask = rand_drop_mask(16, 0.5, 3);
    REQUIRE(mask.missing_count() >= 1);
    REQUIRE(mask.missing_count() <= 15);

    auto r = impute_iterate(st, m.enc, m.dec, x, mask, 10, ImputeInit::uniform01, 17);
    REQUIRE(r.trajectory.size() == 11);
    CHECK(th::same_bits(r.completed, r.trajectory.back()));
    for (const auto& step : r.trajectory)
      for (int d = 0; d < 16; ++d)
        if (!mask.missing(d)) CHECK(step.at(d) == x.at(d));

    // initial fill lands in [0,1) for the uniform kind
    for (int d = 0; d < 16; ++d)
      if (mask.missing(d)) {
        CHECK(r.trajectory[0].at(d) >= 0.0);
        CHECK(r.trajectory[0].at(d) < 1.0);
      }

    // bit-identical rerun
    auto r2 = impute_iterate(st, m.enc, m.dec, x, mask, 10, ImputeInit::uniform01, 17);
    for (std::size_t i = 0; i < r.trajectory.size(); ++i)
      CHECK(th::same_bits(r.trajectory[i], r2.trajectory[i]));

    // a different init kind fills differently
    auto rg = impute_iterate(st, m.enc, m.dec, x, mask, 1, ImputeInit::gaussian, 17);
    bool differs = false;
    for (int d = 0; d < 16; ++d)
      if (mask.missing(d) && rg.trajectory[0].at(d) != r.trajectory[0].at(d)) differs = true;
    CHECK(differs);

    // empty mask: the input passes through untouched
    MissingMask none;
    none.mask.assign(16, 0);
    auto re = impute_iterate(st, m.enc, m.dec, x, none, 5, ImputeInit::uniform01, 17);
    for (const auto& step : re.trajectory) CHECK(th::same_bits(step, x));
    CHECK(th::same_bits(re.completed, x));

    CHECK_THROWS_AS(impute_iterate(st, m.enc, m.dec, x, mask, 0, ImputeInit::uniform01, 17),
                    ContractError);
    MissingMask shortm;
    shortm.mask.assign(8, 1);
    CHECK_THROWS_AS(impute_iterate(st, m.enc, m.dec, x, shortm, 3, ImputeInit::uniform01, 17),
                    DimensionError);
  }

  TEST_CASE("a conditional model imputes only with a class") {
    auto m = make_ssl_model<double>(16, 2, 3, soft({6}), soft({6}), soft({6}),
                                    Likelihood::gaussian, FeatureSource::latent_mean, 1.0, 4);
    ParamStore<double> st;
    m.init_params(st, 5);
    Rng rd(9, 50);
    Tensor<double> x = proto_image(1, rd);
    auto mask = rect_mask(4, 2);

    CHECK_THROWS_AS(impute_iterate(st, m.enc, m.dec, x, mask, 3, ImputeInit::gaussian, 1),
                    ContractError);
    auto r = impute_iterate(st, m.enc, m.dec, x, mask, 3, ImputeInit::gaussian, 1, 2);
    CHECK(r.trajectory.size() == 4);

    // the classify wrapper guesses the class itself, deterministically
    int c1 = classify_after_impute(st, m, x, mask, 3, ImputeInit::gaussian, 1);
    int c2 = classify_after_impute(st, m, x, mask, 3, ImputeInit::gaussian, 1);
    CHECK(c1 == c2);
    CHECK(c1 >= 0);
    CHECK(c1 < 3);
  }

  TEST_CASE("a trained model fills missing pixels better than noise") {
    auto m = make_supervised_model<double>(16, 2, 2, soft({16}), soft({16}),
                                           Likelihood::gaussian, FeatureSource::latent_mean,
                                           1.0, 4);
    const int N = 200;
    Rng rd(1, 50);
    Tensor<double> X = Tensor<double>::zeros({N, 16});
    std::vector<int> y(N);
    for (int i = 0; i < N; ++i) {
      auto xi = proto_image(i % 2, rd);
      X.mat().row(i) = xi.data.transpose();
      y[i] = i % 2;
    }
    TrainConfig<double> cfg;
    cfg.C = 0.0;
    cfg.lr = 3e-3;
    cfg.epochs = 30;
    cfg.batch_labeled = 50;
    cfg.seed = 4;
    ParamStore<double> st;
    m.init_params(st, 2);
    (void)fit_supervised<double>(st, m, X, y, nullptr, nullptr, cfg);

    std::vector<double> before, after;
    for (int i = 0; i < 20; ++i) {
      Tensor<double> x_true = proto_image(i % 2, rd);
      auto mask = rand_drop_mask(16, 0.4, 100 + static_cast<std::uint64_t>(i));
      if (mask.missing_count() == 0) continue;
      auto r = impute_iterate(st, m.enc, m.dec, x_true, mask, 20, ImputeInit::gaussian,
                              200 + static_cast<std::uint64_t>(i));
      before.push_back(mse_missing(x_true, r.trajectory[0], mask));
      after.push_back(mse_missing(x_true, r.completed, mask));
    }
    REQUIRE(before.size() >= 15);
    INFO("median mse, initial fill ", median(before), " -> after 20 rounds ", median(after));
    CHECK(median(after) < median(before));
  }

  TEST_CASE("imputing before classifying beats classifying the corrupted image") {
    const int D = 9;
    auto m = make_supervised_model<double>(D, 2, 2, soft({8}), soft({8}), Likelihood::gaussian,
                                           FeatureSource::latent_mean, 1.0, 3);
    const int N = 60;
    Rng rd(12, 50);
    Tensor<double> X = Tensor<double>::zeros({N, D});
    std::vector<int> y(N);
    for (int i = 0; i < N; ++i) {
      int c = i % 2;
      for (int j = 0; j < D; ++j) X.at(i, j) = (c == 0 ? 2.0 : -2.0) + 0.3 * rd.normal();
      y[i] = c;
    }
    TrainConfig<double> cfg;
    cfg.C = 5.0;
    cfg.lr = 1e-2;
    cfg.epochs = 20;
    cfg.batch_labeled = 20;
    cfg.seed = 2;
    ParamStore<double> st;
    m.init_params(st, 6);
    auto res = fit_supervised<double>(st, m, X, y, nullptr, nullptr, cfg);
    REQUIRE(res.train_err < 0.1);  // the baseline comparison needs a working classifier

    ClassifierWeights<double> clf{st.at("clf/lambda").value, m.sigma_sq};
    std::vector<double> acc_raw, acc_imp;
    for (std::uint64_t s = 1; s <= 5; ++s) {
      int raw_ok = 0, imp_ok = 0;
      const int T = 30;
      Rng rt(s, 50);
      for (int i = 0; i < T; ++i) {
        int c = i % 2;
        Tensor<double> x = Tensor<double>::zeros({D});
        for (int j = 0; j < D; ++j) x.at(j) = (c == 0 ? 2.0 : -2.0) + 0.3 * rt.normal();
        auto mask = rand_drop_mask(D, 0.5, 1000 * s + static_cast<std::uint64_t>(i));
        Tensor<double> x_raw = x;
        for (int j = 0; j < D; ++j)
          if (mask.missing(j)) x_raw.at(j) = 0.0;
        int p_raw = predict(clf, features(st, m.feature_net(), x_raw, -1, m.fs));
        int p_imp = classify_after_impute(st, m, x_raw, mask, 30, ImputeInit::gaussian,
                                          2000 * s + static_cast<std::uint64_t>(i));
        raw_ok += p_raw == c;
        imp_ok += p_imp == c;
      }
      acc_raw.push_back(double(raw_ok) / T);
      acc_imp.push_back(double(imp_ok) / T);
    }
    INFO("median accuracy raw ", median(acc_raw), " vs imputed ", median(acc_imp));
    CHECK(median(acc_imp) >= median(acc_raw));

    // no corruption: the wrapper reduces to a direct prediction
    Rng rt(9, 50);
    Tensor<double> x = Tensor<double>::zeros({D});
    for (int j = 0; j < D; ++j) x.at(j) = 2.0 + 0.3 * rt.normal();
    MissingMask none;
    none.mask.assign(D, 0);
    CHECK(classify_after_impute(st, m, x, none, 5, ImputeInit::gaussian, 3) ==
          predict(clf, features(st, m.feature_net(), x, -1, m.fs)));
  }

  TEST_CASE("pgm grids carry the clamped bytes in raster order") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path();

    Tensor<double> im0 = Tensor<double>::zeros({4});
    im0.at(0) = 0.0;
    im0.at(1) = 1.0;
    im0.at(2) = 0.5;
    im0.at(3) = 2.0;  // clamps to 255
    Tensor<double> im1 = Tensor<double>::zeros({4});
    for (int i = 0; i < 4; ++i) im1.at(i) = 0.25;
    Tensor<double> im2 = Tensor<double>::zeros({4});
    for (int i = 0; i < 4; ++i) im2.at(i) = 1.0;

    auto path = dir / "mmdgm_test_grid.pgm";
    write_pgm_grid(path.string(), std::vector<Tensor<double>>{im0, im1, im2}, 2, 2);
    std::string s = read_file(path);
    const std::string header = "P5\n4 4\n255\n";
    REQUIRE(s.size() == header.size() + 16);
    CHECK(s.substr(0, header.size()) == header);
    auto px = [&](int r, int c) { return static_cast<unsigned char>(s[header.size() + r * 4 + c]); };
    // top-left image
    CHECK(px(0, 0) == 0);
    CHECK(px(0, 1) == 255);
    CHECK(px(1, 0) == 128);
    CHECK(px(1, 1) == 255);
    // top-right image: 0.25 -> 64
    CHECK(px(0, 2) == 64);
    CHECK(px(1, 3) == 64);
    // bottom-left image, bottom-right cell padded black
    CHECK(px(2, 0) == 255);
    CHECK(px(3, 1) == 255);
    CHECK(px(2, 2) == 0);
    CHECK(px(3, 3) == 0);

    auto single = dir / "mmdgm_test_single.pgm";
    write_pgm(single.string(), im1, 2);
    std::string s1 = read_file(single);
    REQUIRE(s1.size() == 11 + 4);
    CHECK(s1.substr(0, 11) == "P5\n2 2\n255\n");

    CHECK_THROWS_AS(write_pgm_grid(path.string(), std::vector<Tensor<double>>{}, 2, 2),
                    ContractError);
    Tensor<double> bad = Tensor<double>::zeros({3});
    CHECK_THROWS_AS(write_pgm_grid<double>(path.string(), {bad}, 2, 2), DimensionError);

    fs::remove(path);
    fs::remove(single);
  }
}
