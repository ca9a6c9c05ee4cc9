#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "calibra/datasets.hpp"
#include "calibra/estimators.hpp"
#include "calibra/special.hpp"
#include "oracles.hpp"

using namespace calibra;

namespace {

std::vector<ErrorSample> make_samples(const std::vector<double>& xs,
                                      const std::vector<double>& eps) {
  std::vector<ErrorSample> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out[i].x = {xs[i]};
    out[i].epsilon = eps[i];
  }
  return out;
}

}  // namespace

TEST_CASE("predict_sigma across model kinds") {
  const VarianceModel constant = PolynomialVarianceModel{{0.5}};
  const double x1[] = {0.3}, x2[] = {-7.0};
  CHECK(predict_sigma(constant, x1) == 0.5);
  CHECK(predict_sigma(constant, x2) == 0.5);

  // Negative prediction carries the offending input in a typed error.
  const VarianceModel descending = PolynomialVarianceModel{{0.1, -1.0}};
  const double bad[] = {2.0};
  try {
    predict_sigma(descending, bad);
    FAIL("expected NonPositiveSigmaError");
  } catch (const NonPositiveSigmaError& e) {
    CHECK(e.x == 2.0);
    CHECK(e.sigma < 0.0);
  }

  // Zero-weight network: sigma = exp(0) = 1 everywhere.
  NetworkVarianceModel net(2);
  net.x_mean = {0.0, 0.0};
  net.x_scale = {1.0, 1.0};
  const double x3[] = {0.4, -1.0};
  CHECK(predict_sigma(VarianceModel{net}, x3) == 1.0);

  const VarianceModel pw = PointwiseSigmas{{1.0, 2.0}};
  CHECK_THROWS_AS(predict_sigma(pw, x1), std::invalid_argument);
}

TEST_CASE("variance model serialization round-trips bit-exactly") {
  std::mt19937_64 rng(12);
  {
    PolynomialVarianceModel poly{{0.5, -0.125, 1.0 / 3.0}};
    const auto j = variance_model_to_json(poly);
    const auto back = std::get<PolynomialVarianceModel>(
        variance_model_from_json(nlohmann::json::parse(j.dump())));
    CHECK(back.theta == poly.theta);
  }
  {
    NetworkVarianceModel net(3);
    net.x_mean = {0.1, -0.2, 0.3};
    net.x_scale = {1.0, 2.0, 0.5};
    net.net.init_random(rng);
    const auto j = variance_model_to_json(net);
    const auto back = std::get<NetworkVarianceModel>(
        variance_model_from_json(nlohmann::json::parse(j.dump())));
    CHECK(std::equal(back.net.params().begin(), back.net.params().end(),
                     net.net.params().begin()));
    CHECK(back.x_mean == net.x_mean);
    const double x[] = {0.7, 0.1, -2.0};
    CHECK(back.sigma_at(x) == net.sigma_at(x));
  }
  {
    PointwiseSigmas pw{{0.25, 1.0, 9.75}};
    const auto j = variance_model_to_json(pw);
    const auto back =
        std::get<PointwiseSigmas>(variance_model_from_json(nlohmann::json::parse(j.dump())));
    CHECK(back.sigmas == pw.sigmas);
  }
}

TEST_CASE("fit_pointwise closed forms") {
  const std::vector<double> eps{1.0, -2.0, 0.5};
  const auto crps_sig = fit_pointwise(eps, RsVariant::practical, FitLoss::crps);
  for (std::size_t i = 0; i < eps.size(); ++i) {
    CHECK(crps_sig[i] == std::fabs(eps[i]) / std::sqrt(kLog2));
  }
  const auto nlpd_sig = fit_pointwise(eps, RsVariant::practical, FitLoss::nlpd);
  for (std::size_t i = 0; i < eps.size(); ++i) {
    CHECK(nlpd_sig[i] == std::fabs(eps[i]));
  }
  CHECK_THROWS_AS(fit_pointwise(std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("fit_pointwise AR matches a brute-force grid at N = 2") {
  const std::vector<double> eps{1.0, 2.0};
  const auto sig = fit_pointwise(eps);

  // Two-stage grid oracle.
  auto ar_of = [&](double s1, double s2) {
    const std::vector<double> s{s1, s2};
    return ar_cost(eps, s).ar;
  };
  double b1 = 0.0, b2 = 0.0, best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 400; ++i) {
    for (int j = 0; j <= 400; ++j) {
      const double s1 = 0.05 + 6.0 * i / 400.0;
      const double s2 = 0.05 + 6.0 * j / 400.0;
      const double v = ar_of(s1, s2);
      if (v < best) {
        best = v;
        b1 = s1;
        b2 = s2;
      }
    }
  }
  for (int stage = 0; stage < 2; ++stage) {
    const double span = stage == 0 ? 0.02 : 0.001;
    const double c1 = b1, c2 = b2;
    for (int i = -40; i <= 40; ++i) {
      for (int j = -40; j <= 40; ++j) {
        const double s1 = c1 + span * i / 40.0;
        const double s2 = c2 + span * j / 40.0;
        const double v = ar_of(s1, s2);
        if (v < best) {
          best = v;
          b1 = s1;
          b2 = s2;
        }
      }
    }
  }
  CHECK(std::fabs(sig[0] - b1) <= 1e-3);
  CHECK(std::fabs(sig[1] - b2) <= 1e-3);
}

TEST_CASE("fit_pointwise minimality and competition") {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> nd;
  std::vector<double> eps(60);
  for (auto& e : eps) e = nd(rng) * 1.3 + 0.2;

  const auto sig = fit_pointwise(eps);
  const double ar_star = ar_cost(eps, sig).ar;

  // Not worse than the CRPS-only solution...
  const auto sig_crps = fit_pointwise(eps, RsVariant::practical, FitLoss::crps);
  CHECK(ar_star <= ar_cost(eps, sig_crps).ar + 1e-10);

  // ... nor than sigmas matching the optimal standardized-error quantiles
  // (scaled into the positive orthant where signs disagree).
  std::vector<std::size_t> order(eps.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return eps[a] < eps[b]; });
  std::vector<double> sig_q(eps.size());
  const std::size_t n = eps.size();
  for (std::size_t pos = 0; pos < n; ++pos) {
    const double target = erf_inv((2.0 * (pos + 1.0) - 1.0) / static_cast<double>(n) - 1.0);
    const double raw = target != 0.0 ? eps[order[pos]] / (kSqrt2 * target) : 1.0;
    sig_q[order[pos]] = raw > 0.0 ? raw : 0.1;
  }
  CHECK(ar_star <= ar_cost(eps, sig_q).ar + 1e-10);

  // At the AR optimum neither objective sits on its floor.
  const auto bd = ar_cost(eps, sig).breakdown;
  CHECK(bd.crps_mean > bd.crps_min);
  CHECK(bd.rs > bd.rs_min);
}

TEST_CASE("fit_pointwise scale equivariance") {
  std::mt19937_64 rng(43);
  std::normal_distribution<double> nd;
  std::vector<double> eps(25);
  for (auto& e : eps) e = nd(rng) + 0.4;
  OptimOptions opts;
  opts.max_iters = 20000;
  opts.grad_tol = 1e-11;
  const auto base = fit_pointwise(eps, RsVariant::practical, FitLoss::ar, opts);
  const double c = 7.5;
  std::vector<double> scaled(eps);
  for (auto& e : scaled) e *= c;
  const auto res = fit_pointwise(scaled, RsVariant::practical, FitLoss::ar, opts);
  for (std::size_t i = 0; i < eps.size(); ++i) {
    CHECK(res[i] == doctest::Approx(c * base[i]).epsilon(1e-5));
  }
}

TEST_CASE("fit_pointwise recovers calibrated synthetic noise pointwise") {
  const std::size_t n = 1000;
  Rng rng(8675309);
  std::vector<double> sigma_true(n), eps(n);
  for (std::size_t i = 0; i < n; ++i) {
    sigma_true[i] = 0.5 + 0.5 * rng.uniform();
    eps[i] = sigma_true[i] * rng.normal();
  }
  OptimOptions opts;
  opts.max_iters = 20000;
  const auto sig = fit_pointwise(eps, RsVariant::practical, FitLoss::ar, opts);
  std::vector<double> rel(n);
  for (std::size_t i = 0; i < n; ++i) {
    rel[i] = std::fabs(sig[i] / sigma_true[i] - 1.0);
  }
  std::nth_element(rel.begin(), rel.begin() + n / 2, rel.end());
  // Measured floor of the free per-point optimum: without any smoothness
  // structure the AR-optimal sigmas track the truth to ~42% median
  // deviation at N = 1000 (the fit's AR is genuinely below the AR of the
  // true sigmas). Guard therefore sits at 0.5.
  CHECK(rel[n / 2] <= 0.5);
}

TEST_CASE("fit_polynomial stopping rules") {
  // Infinite tolerance: the constant model comes back untouched.
  Rng rng(3001);
  std::vector<double> xs(300), eps(300);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    xs[i] = rng.uniform();
    eps[i] = 0.5 * rng.normal();
  }
  const auto samples = make_samples(xs, eps);
  {
    PolyFitOptions opts;
    opts.tol = std::numeric_limits<double>::infinity();
    const auto [model, report] = fit_polynomial(samples, opts);
    CHECK(model.order() == 0);
    CHECK(report.order_trace.size() == 1);
    double mean = 0.0;
    for (double e : eps) mean += e;
    mean /= static_cast<double>(eps.size());
    double var = 0.0;
    for (double e : eps) var += (e - mean) * (e - mean);
    CHECK(model.theta[0] == doctest::Approx(std::sqrt(var / eps.size())).epsilon(1e-12));
  }
  // Constant noise: the fit stays at a low order with theta_0 near the
  // true noise level.
  {
    PolyFitOptions opts;
    opts.tol = 1e-4;
    const auto [model, report] = fit_polynomial(samples, opts);
    CHECK(model.order() <= 1);
    CHECK(model.theta[0] == doctest::Approx(0.5).epsilon(0.1));
    const auto sig0 = model.value_at(0.2);
    CHECK(sig0 > 0.0);
  }
  // Dimension guard.
  std::vector<ErrorSample> bad(5);
  for (auto& s : bad) s = {{0.1, 0.2}, 0.3};
  CHECK_THROWS_AS(fit_polynomial(bad), std::invalid_argument);
}

TEST_CASE("fit_polynomial recovers the G noise ramp with an exact mean") {
  Rng rng(555);
  std::vector<double> xs(100), eps(100);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    xs[i] = rng.uniform();
    eps[i] = (0.5 * xs[i] + 0.5) * rng.normal();
  }
  const auto [model, report] = fit_polynomial(make_samples(xs, eps));
  double se = 0.0;
  for (int g = 0; g <= 100; ++g) {
    const double x = g / 100.0;
    const double d = model.value_at(x) - (0.5 * x + 0.5);
    se += d * d;
  }
  CHECK(std::sqrt(se / 101.0) < 0.2);
  CHECK(report.train.n == 100);
  CHECK_FALSE(report.order_trace.empty());
}

TEST_CASE("fit_network learns input-dependent noise and reports restarts") {
  // G-style data with the exact mean; a quick, loose recovery check.
  Rng rng(777);
  const std::size_t n = 120;
  std::vector<ErrorSample> samples(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform();
    samples[i].x = {x};
    samples[i].epsilon = (0.5 * x + 0.5) * rng.normal();
  }
  SplitIndices idx = split(n, {0.33, 0.33, 0.34, 9});

  NetFitOptions opts;
  opts.optim.seed = 5;
  opts.optim.restarts = 3;
  opts.optim.max_iters = 400;
  const auto [model, report] = fit_network(samples, idx.train, idx.val, opts);
  CHECK(report.restarts.size() == 3);
  CHECK(report.chosen_restart >= 0);
  REQUIRE(report.val.has_value());

  const double x_lo[] = {0.05}, x_hi[] = {0.95};
  const double s_lo = model.sigma_at(x_lo), s_hi = model.sigma_at(x_hi);
  CHECK(s_lo > 0.0);
  CHECK(s_hi > s_lo);  // the ramp slopes upward
  CHECK(s_lo == doctest::Approx(0.525).epsilon(0.6));
  CHECK(s_hi == doctest::Approx(0.975).epsilon(0.6));

  CHECK_THROWS_AS(fit_network(samples, std::vector<std::size_t>{0, 1}, idx.val, opts),
                  std::invalid_argument);
}

TEST_CASE("network AR gradient matches finite differences") {
  // The full composite: AR of exp(net(x)) on a small batch, ranks frozen.
  Rng rng(31415);
  const std::size_t n = 30, d = 2;
  std::vector<double> X(n * d), eps(n);
  for (auto& v : X) v = rng.uniform(-1.0, 1.0);
  for (auto& e : eps) e = 0.8 * rng.normal() + 0.1;

  Mlp net(d);
  std::mt19937_64 wrng(99);
  net.init_random(wrng);
  const double beta = ar_beta(eps, RsVariant::practical);

  Mlp::BatchCache cache;
  std::vector<double> grad(net.param_count(), 0.0);
  net.forward_batch(X, n, cache);
  std::vector<double> sig(n);
  for (std::size_t i = 0; i < n; ++i) sig[i] = std::exp(cache.out[i]);
  std::vector<double> dsig;
  ar_fixed_beta(eps, sig, RsVariant::practical, beta, &dsig);
  std::vector<double> dout(n);
  for (std::size_t i = 0; i < n; ++i) dout[i] = dsig[i] * sig[i];
  net.backward_batch(X, cache, dout, grad);

  auto value_at = [&](std::span<const double> params) {
    Mlp probe(d);
    std::copy(params.begin(), params.end(), probe.params().begin());
    Mlp::BatchCache c2;
    probe.forward_batch(X, n, c2);
    std::vector<double> s2(n);
    for (std::size_t i = 0; i < n; ++i) s2[i] = std::exp(c2.out[i]);
    return ar_fixed_beta(eps, s2, RsVariant::practical, beta, nullptr);
  };
  std::mt19937_64 pick(7);
  std::uniform_int_distribution<std::size_t> which(0, net.param_count() - 1);
  for (int rep = 0; rep < 25; ++rep) {
    const std::size_t k = which(pick);
    std::vector<double> p(net.params().begin(), net.params().end());
    const double h = 1e-6 * (1.0 + std::fabs(p[k]));
    p[k] += h;
    const double fp = value_at(p);
    p[k] -= 2.0 * h;
    const double fm = value_at(p);
    const double fd = (fp - fm) / (2.0 * h);
    CHECK(std::fabs(fd - grad[k]) <= 1e-4 * std::max(1.0, std::fabs(grad[k])));
  }
}
