#include <doctest.h>

#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "calibra/datasets.hpp"
#include "calibra/meanfn.hpp"
#include "calibra/reliability.hpp"
#include "calibra/special.hpp"

using namespace calibra;

namespace {

Dataset make_1d(const std::vector<double>& xs, const std::vector<double>& ys) {
  Dataset ds;
  ds.dim = 1;
  ds.x = xs;
  ds.y = ys;
  return ds;
}

}  // namespace

TEST_CASE("kernel ridge interpolates smooth targets with a tiny ridge") {
  std::vector<double> xs, ys;
  for (int i = 0; i < 30; ++i) {
    xs.push_back(i / 29.0);
    ys.push_back(2.0 * xs.back() + 1.0);
  }
  const Dataset train = make_1d(xs, ys);
  KrGrid grid;
  grid.length_scale_factors = {0.3};
  grid.ridge_factors = {1e-10};
  const MeanModel m = fit_kernel_ridge(train, train, grid);
  double mse = 0.0;
  for (std::size_t i = 0; i < train.n(); ++i) {
    const double p = predict_mean(m, train.x_row(i));
    mse += (p - train.y[i]) * (p - train.y[i]);
  }
  CHECK(mse / train.n() <= 1e-6);
}

TEST_CASE("kernel ridge tolerates duplicate inputs") {
  std::vector<double> xs{0.1, 0.1, 0.5, 0.5, 0.9, 0.9};
  std::vector<double> ys{1.0, 1.2, 2.0, 2.2, 3.0, 3.2};
  const Dataset train = make_1d(xs, ys);
  const MeanModel m = fit_kernel_ridge(train, train);
  const double x[] = {0.5};
  CHECK(std::isfinite(predict_mean(m, x)));
}

TEST_CASE("kernel ridge prediction is linear in the targets") {
  Rng rng(4);
  std::vector<double> xs(20), y1(20), y2(20), ysum(20);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    xs[i] = rng.uniform();
    y1[i] = rng.normal();
    y2[i] = rng.normal();
    ysum[i] = y1[i] + y2[i];
  }
  // Pin identical absolute hyperparameters for all three fits (the grid's
  // ridge factors are relative to var(y), so undo that per target).
  auto var_of = [](const std::vector<double>& y) {
    double m = 0.0;
    for (double v : y) m += v;
    m /= static_cast<double>(y.size());
    double s = 0.0;
    for (double v : y) s += (v - m) * (v - m);
    return s / static_cast<double>(y.size());
  };
  const double lambda_abs = 1e-4;
  auto fit_fixed = [&](const std::vector<double>& y) {
    KrGrid fixed;
    fixed.length_scale_factors = {0.3};
    fixed.ridge_factors = {lambda_abs / var_of(y)};
    const Dataset d = make_1d(xs, y);
    return fit_kernel_ridge(d, d, fixed);
  };
  const MeanModel a = fit_fixed(y1);
  const MeanModel b = fit_fixed(y2);
  const MeanModel c = fit_fixed(ysum);
  for (double x = 0.05; x < 1.0; x += 0.17) {
    const double xv[] = {x};
    CHECK(predict_mean(c, xv) ==
          doctest::Approx(predict_mean(a, xv) + predict_mean(b, xv)).epsilon(1e-9));
  }
}

TEST_CASE("kernel ridge tracks the G mean function") {
  const Dataset data = gen_toy("G", 200, 17);
  const SplitIndices idx = split(data.n(), {0.66, 0.17, 0.17, 17});
  const MeanModel m = fit_kernel_ridge(subset(data, idx.train), subset(data, idx.val));
  double se = 0.0;
  for (int g = 0; g <= 100; ++g) {
    const double x = g / 100.0;
    const double xv[] = {x};
    const double d = predict_mean(m, xv) - 2.0 * std::sin(2.0 * 3.141592653589793 * x);
    se += d * d;
  }
  CHECK(std::sqrt(se / 101.0) < 0.5);
}

TEST_CASE("network mean fits constants and linear maps") {
  {
    Rng rng(6);
    Dataset ds;
    ds.dim = 1;
    for (int i = 0; i < 60; ++i) {
      ds.x.push_back(rng.uniform());
      ds.y.push_back(3.25);
    }
    const SplitIndices idx = split(ds.n(), {0.5, 0.25, 0.25, 3});
    NetFitOptions opts;
    opts.optim.restarts = 2;
    opts.optim.max_iters = 200;
    const MeanModel m = fit_network_mse(ds, idx.train, idx.val, opts);
    const double x[] = {0.4};
    CHECK(predict_mean(m, x) == doctest::Approx(3.25).epsilon(1e-3));
  }
  {
    Rng rng(61);
    Dataset ds;
    ds.dim = 2;
    for (int i = 0; i < 200; ++i) {
      const double a = rng.uniform(), b = rng.uniform();
      ds.x.push_back(a);
      ds.x.push_back(b);
      ds.y.push_back(2.0 * a - 3.0 * b + 0.5);
    }
    const SplitIndices idx = split(ds.n(), {0.5, 0.25, 0.25, 5});
    NetFitOptions opts;
    opts.optim.restarts = 3;
    opts.optim.seed = 2;
    const MeanModel m = fit_network_mse(ds, idx.train, idx.val, opts);
    double mse = 0.0;
    for (std::size_t i : idx.val) {
      const double p = predict_mean(m, ds.x_row(i));
      mse += (p - ds.y[i]) * (p - ds.y[i]);
    }
    mse /= static_cast<double>(idx.val.size());
    CHECK(mse <= 1e-3);
  }
}

TEST_CASE("residuals") {
  // Exact mean on noiseless data: every error is zero.
  Dataset ds = gen_toy("G", 40, 2);
  ds.y = ds.true_mean;
  const auto rs = residuals(ds, ExactToyMean{"G"});
  for (const auto& s : rs) CHECK(s.epsilon == 0.0);

  // Exact mean on noisy data: standardized errors look standard normal.
  const Dataset noisy = gen_toy("G", 2000, 77);
  const auto r2 = residuals(noisy, ExactToyMean{"G"});
  std::vector<double> phis(noisy.n());
  for (std::size_t i = 0; i < noisy.n(); ++i) {
    phis[i] = phi(r2[i].epsilon / (kSqrt2 * noisy.true_sigma[i]));
  }
  CHECK(calibration_error(phis) <= 1.36 * 100.0 / std::sqrt(2000.0));

  // Column predictions pass through.
  const std::vector<double> preds(noisy.n(), 1.5);
  const auto r3 = residuals_from_predictions(noisy, preds);
  CHECK(r3[7].epsilon == noisy.y[7] - 1.5);
  CHECK_THROWS_AS(residuals(noisy, ColumnMean{"pred"}), std::invalid_argument);
}

TEST_CASE("mean model serialization round trip") {
  {
    const MeanModel m = ExactToyMean{"W"};
    const auto back = mean_model_from_json(mean_model_to_json(m));
    CHECK(std::get<ExactToyMean>(back).toy == "W");
  }
  {
    KernelRidgeMean kr;
    kr.dim = 1;
    kr.train_x = {0.0, 0.5, 1.0};
    kr.alpha = {2.0, -1.0, 0.25};
    kr.length_scale = 0.37;
    kr.ridge = 1e-5;
    const auto back = mean_model_from_json(mean_model_to_json(MeanModel{kr}));
    const double x[] = {0.3};
    CHECK(predict_mean(back, x) == predict_mean(MeanModel{kr}, x));
  }
  {
    NetworkMean nm(2);
    std::mt19937_64 rng(8);
    nm.net.init_random(rng);
    nm.x_mean = {0.1, 0.2};
    nm.x_scale = {1.0, 2.0};
    nm.y_mean = -3.0;
    nm.y_scale = 2.5;
    const auto back = mean_model_from_json(mean_model_to_json(MeanModel{nm}));
    const double x[] = {0.9, -0.4};
    CHECK(predict_mean(back, x) == predict_mean(MeanModel{nm}, x));
  }
  {
    const auto back = mean_model_from_json(mean_model_to_json(MeanModel{ColumnMean{"pred"}}));
    CHECK(std::get<ColumnMean>(back).column == "pred");
  }
}
