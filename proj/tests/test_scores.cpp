#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "calibra/scores.hpp"
#include "calibra/special.hpp"
#include "oracles.hpp"

using namespace calibra;

namespace {

std::vector<double> sorted_copy(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v;
}

// Optimal standardized errors of Eq.-9 type: erf(eta_i) = (2i-1)/N - 1.
std::vector<double> optimal_etas(std::size_t n) {
  std::vector<double> etas(n);
  for (std::size_t i = 1; i <= n; ++i) {
    etas[i - 1] = erf_inv((2.0 * static_cast<double>(i) - 1.0) / static_cast<double>(n) - 1.0);
  }
  return etas;
}

}  // namespace

TEST_CASE("nlpd closed form and minimizer") {
  CHECK(nlpd(0.0, 1.0) == doctest::Approx(0.9189385332046727).epsilon(1e-14));
  CHECK(nlpd(1.0, 1.0) == doctest::Approx(1.4189385332046727).epsilon(1e-14));
  CHECK_THROWS_AS(nlpd(1.0, 0.0), std::domain_error);
  CHECK_THROWS_AS(nlpd(1.0, -2.0), std::domain_error);

  // argmin over sigma at eps = 2 sits at sigma^2 = eps^2.
  const double s = oracles::golden_min([](double sig) { return nlpd(2.0, sig); }, 0.1, 10.0);
  CHECK(s * s == doctest::Approx(4.0).epsilon(1e-6));
}

TEST_CASE("crps_gaussian closed form") {
  CHECK(crps_gaussian(0.0, 1.0, 0.0) == doctest::Approx(0.2336949772551091).epsilon(1e-14));
  // Deterministic limit: collapses to the absolute error.
  CHECK(std::fabs(crps_gaussian(0.0, 1e-12, 1.0) - 1.0) <= 1e-9);
  CHECK_THROWS_AS(crps_gaussian(0.0, 0.0, 1.0), std::domain_error);

  // Always nonnegative, and equal to |eps| in the sigma -> 0 limit.
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ue(-10.0, 10.0);
  for (int i = 0; i < 200; ++i) {
    const double e = ue(rng);
    const double sig = std::exp(std::uniform_real_distribution<double>(-7.0, 7.0)(rng));
    CHECK(crps_gaussian(0.0, sig, e) >= 0.0);
    if (std::fabs(e) > 1e-3) {
      CHECK(std::fabs(crps_gaussian(0.0, 1e-10 * std::fabs(e), e) - std::fabs(e)) <= 1e-9);
    }
  }
}

TEST_CASE("crps_gaussian agrees with quadrature") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ue(-10.0, 10.0);
  std::uniform_real_distribution<double> uls(std::log(1e-3), std::log(1e3));
  for (int i = 0; i < 100; ++i) {
    const double eps = ue(rng);
    const double sig = std::exp(uls(rng));
    const auto cdf = [&](double y) { return normal_cdf(y / sig); };
    const double numeric = crps_numeric(cdf, eps, gaussian_grid(0.0, sig, eps));
    CHECK(std::fabs(crps_gaussian(0.0, sig, eps) - numeric) <= 1e-8);
  }
  // Spot independence check against a different quadrature scheme.
  const auto cdf = [](double y) { return normal_cdf(y); };
  const double ind = oracles::simpson(
      [&](double y) {
        const double c = cdf(y) - (y >= 0.7 ? 1.0 : 0.0);
        return c * c;
      },
      -10.0, 0.7, 1e-12) +
      oracles::simpson(
          [&](double y) {
            const double c = cdf(y) - 1.0;
            return c * c;
          },
          0.7, 10.0, 1e-12);
  CHECK(crps_gaussian(0.0, 1.0, 0.7) == doctest::Approx(ind).epsilon(1e-9));
}

TEST_CASE("crps_gaussian_dsigma") {
  const double sig_star = 1.0 / std::sqrt(kLog2);
  CHECK(std::fabs(crps_gaussian_dsigma(1.0, sig_star)) <= 1e-12);
  CHECK(crps_gaussian_dsigma(0.0, 3.7) == doctest::Approx(0.2336949772551091).epsilon(1e-14));
  CHECK_THROWS_AS(crps_gaussian_dsigma(1.0, 0.0), std::domain_error);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ue(-4.0, 4.0);
  std::uniform_real_distribution<double> us(0.2, 5.0);
  for (int i = 0; i < 50; ++i) {
    const double e = ue(rng), s = us(rng);
    const double fd = oracles::central_diff(
        [&](double sig) { return crps_gaussian(0.0, sig, e); }, s, 1e-6 * s);
    const double an = crps_gaussian_dsigma(e, s);
    CHECK(std::fabs(fd - an) <= 1e-6 * std::max(1.0, std::fabs(an)));
  }
}

TEST_CASE("crps_numeric on reference cdfs") {
  // Standard normal, observation at the mean.
  const double v = crps_numeric([](double y) { return normal_cdf(y); }, 0.0,
                                gaussian_grid(0.0, 1.0, 0.0));
  CHECK(v == doctest::Approx(0.2336949772551091).epsilon(1e-8));

  // Perfect deterministic forecast: step exactly at the observation.
  const auto step_at = [](double t) {
    return [t](double y) { return y >= t ? 1.0 : 0.0; };
  };
  IntegrationGrid g{-2.0, 3.0, 1e-10, 48};
  CHECK(std::fabs(crps_numeric(step_at(1.0), 1.0, g)) <= 1e-9);
  // Step at 0 scored against y = 1: integral of 1 over [0, 1].
  CHECK(crps_numeric(step_at(0.0), 1.0, g) == doctest::Approx(1.0).epsilon(1e-9));

  // A decreasing "cdf" must be rejected.
  CHECK_THROWS_AS(crps_numeric([](double y) { return -y; }, 0.0, g), std::invalid_argument);
}

TEST_CASE("reliability_score closed form") {
  const std::vector<double> zero{0.0};
  CHECK(reliability_score(zero, RsVariant::exact) ==
        doctest::Approx(0.16524730314632361).epsilon(1e-14));
  CHECK(reliability_score(zero, RsVariant::practical) ==
        doctest::Approx(0.5641895835477563).epsilon(1e-14));

  const std::vector<double> unsorted{1.0, 0.0};
  CHECK_THROWS_AS(reliability_score(unsorted, RsVariant::exact), std::invalid_argument);
  CHECK_THROWS_AS(reliability_score({}, RsVariant::exact), std::domain_error);

  // Eq.-9 quantile etas attain rs_min for both variants.
  for (std::size_t n : {1u, 2u, 5u, 20u, 137u}) {
    const auto etas = optimal_etas(n);
    for (auto variant : {RsVariant::exact, RsVariant::practical}) {
      CHECK(std::fabs(reliability_score(etas, variant) - rs_min(n, variant)) <= 1e-12);
    }
  }
}

TEST_CASE("reliability_score matches the defining integral") {
  std::mt19937_64 rng(19);
  std::normal_distribution<double> nd(0.0, 1.2);
  for (int rep = 0; rep < 8; ++rep) {
    std::vector<double> etas(50);
    for (auto& e : etas) e = nd(rng);
    etas = sorted_copy(etas);
    const double closed = reliability_score(etas, RsVariant::exact);
    const double quad = oracles::rs_quadrature(etas, true);
    CHECK(std::fabs(closed - quad) <= 1e-6);
  }
  // Also for a tiny sample where the tails matter.
  const std::vector<double> small{-2.5, 0.3, 3.1};
  CHECK(std::fabs(reliability_score(small, RsVariant::exact) -
                  oracles::rs_quadrature(small, true)) <= 1e-8);
}

TEST_CASE("reliability_score_grad") {
  // Stationary at the optimum.
  for (std::size_t n : {2u, 7u, 30u}) {
    const auto etas = optimal_etas(n);
    std::vector<double> sigmas(n, 1.3);
    const auto grad = reliability_score_grad(etas, sigmas);
    for (double g : grad) CHECK(std::fabs(g) <= 1e-12);
  }
  // eta = 0 kills the derivative.
  {
    const std::vector<double> etas{-1.0, 0.0, 2.0};
    const std::vector<double> sigmas{1.0, 2.0, 3.0};
    const auto grad = reliability_score_grad(etas, sigmas);
    CHECK(grad[1] == 0.0);
  }
  CHECK_THROWS_AS(reliability_score_grad(std::vector<double>{0.0}, std::vector<double>{-1.0}),
                  std::domain_error);

  // Finite differences with ranks frozen at the evaluated order.
  std::mt19937_64 rng(23);
  std::normal_distribution<double> nd;
  std::vector<double> eps(12), sig(12);
  for (auto& e : eps) e = nd(rng) + 0.3;
  for (auto& s : sig) s = 0.5 + std::fabs(nd(rng));
  std::vector<double> etas(12);
  for (int i = 0; i < 12; ++i) etas[i] = eps[i] / (kSqrt2 * sig[i]);
  std::vector<std::size_t> order(12);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return etas[a] < etas[b]; });
  std::vector<double> etas_sorted(12), sig_sorted(12), eps_sorted(12);
  std::vector<int> ranks(12);
  for (int i = 0; i < 12; ++i) {
    etas_sorted[i] = etas[order[i]];
    sig_sorted[i] = sig[order[i]];
    eps_sorted[i] = eps[order[i]];
    ranks[i] = i + 1;
  }
  const auto grad = reliability_score_grad(etas_sorted, sig_sorted);
  for (int i = 0; i < 12; ++i) {
    const double h = 1e-6 * sig_sorted[i];
    auto rs_at = [&](double s) {
      std::vector<double> e2 = etas_sorted;
      e2[i] = eps_sorted[i] / (kSqrt2 * s);
      return oracles::rs_with_ranks(e2, ranks, true);
    };
    const double fd = (rs_at(sig_sorted[i] + h) - rs_at(sig_sorted[i] - h)) / (2.0 * h);
    CHECK(std::fabs(fd - grad[i]) <= 1e-5 * std::max(1.0, std::fabs(grad[i])));
  }
}

TEST_CASE("rs_min values and convergence") {
  CHECK(rs_min(1, RsVariant::exact) == doctest::Approx(0.16524730314632361).epsilon(1e-13));
  CHECK(rs_min(2, RsVariant::exact) == doctest::Approx(0.05046165849287096).epsilon(1e-12));
  CHECK(rs_min(5, RsVariant::exact) == doctest::Approx(0.00985712900071000).epsilon(1e-11));
  CHECK_THROWS_AS(rs_min(0, RsVariant::exact), std::domain_error);

  // Exact variant vanishes as N grows; practical converges to (1/2)sqrt(2/pi).
  CHECK(rs_min(1000000, RsVariant::exact) < 1e-3);
  CHECK(std::fabs(rs_min(1000000, RsVariant::practical) - 0.3989422804014327) < 1e-3);
}

TEST_CASE("crps_min") {
  // The attainable per-sample minimum |eps| erf(sqrt(log4)/2), cross-checked
  // against the closed form at the minimizing sigma.
  const std::vector<double> one{1.0};
  CHECK(crps_min(one) == doctest::Approx(0.5949040335669752).epsilon(1e-14));
  CHECK(crps_min(one) ==
        doctest::Approx(crps_gaussian(0.0, 1.0 / std::sqrt(kLog2), 1.0)).epsilon(1e-13));
  const std::vector<double> zeros{0.0, 0.0};
  CHECK(crps_min(zeros) == 0.0);
  const std::vector<double> pm{1.0, -1.0};
  CHECK(crps_min(pm) == doctest::Approx(0.5949040335669752).epsilon(1e-14));
  CHECK_THROWS_AS(crps_min({}), std::domain_error);
}

TEST_CASE("ar_cost breakdown and weighting") {
  // Large-sample beta for unit errors, practical variant.
  {
    std::vector<double> eps(100000);
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = i % 2 ? 1.0 : -1.0;
    std::vector<double> sig(eps.size(), 1.0);
    const auto res = ar_cost(eps, sig, RsVariant::practical);
    CHECK(res.breakdown.beta == doctest::Approx(0.4014124465667779).epsilon(2e-4));
  }

  std::mt19937_64 rng(101);
  std::normal_distribution<double> nd;
  std::vector<double> eps(40), sig(40);
  for (auto& e : eps) e = nd(rng) * 1.5 + 0.1;
  for (auto& s : sig) s = 0.4 + std::fabs(nd(rng));

  const auto res = ar_cost(eps, sig, RsVariant::practical);
  CHECK(res.breakdown.n == 40);
  CHECK(res.breakdown.beta > 0.0);
  CHECK(res.breakdown.beta < 1.0);
  CHECK(std::fabs(res.breakdown.ar - (res.breakdown.beta * res.breakdown.crps_mean +
                                      (1.0 - res.breakdown.beta) * res.breakdown.rs)) <= 1e-12);
  CHECK(res.breakdown.crps_mean >= res.breakdown.crps_min - 1e-12);
  CHECK(res.breakdown.rs >= res.breakdown.rs_min - 1e-12);

  // CRPS-optimal sigmas: the accuracy term attains its floor, the
  // reliability term cannot (distinct |eps|).
  {
    std::vector<double> sig_opt(eps.size());
    for (std::size_t i = 0; i < eps.size(); ++i) {
      sig_opt[i] = std::fabs(eps[i]) / std::sqrt(kLog2);
    }
    const auto r2 = ar_cost(eps, sig_opt, RsVariant::practical);
    CHECK(std::fabs(r2.breakdown.crps_mean - r2.breakdown.crps_min) <=
          1e-12 * std::max(1.0, r2.breakdown.crps_min));
    CHECK(r2.breakdown.rs > r2.breakdown.rs_min);
  }

  // Gradient against rank-frozen central differences.
  {
    const double beta = res.breakdown.beta;
    std::vector<double> etas(eps.size());
    for (std::size_t i = 0; i < eps.size(); ++i) etas[i] = eps[i] / (kSqrt2 * sig[i]);
    std::vector<std::size_t> order(eps.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return etas[a] < etas[b]; });
    std::vector<int> rank_of(eps.size());
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      rank_of[order[pos]] = static_cast<int>(pos) + 1;
    }
    auto frozen_ar = [&](std::span<const double> s) {
      double crps_sum = 0.0;
      std::vector<double> e2(eps.size());
      for (std::size_t i = 0; i < eps.size(); ++i) {
        crps_sum += crps_gaussian(0.0, s[i], eps[i]);
        e2[i] = eps[i] / (kSqrt2 * s[i]);
      }
      return beta * crps_sum / static_cast<double>(eps.size()) +
             (1.0 - beta) * oracles::rs_with_ranks(e2, rank_of, false);
    };
    for (std::size_t i = 0; i < eps.size(); i += 5) {
      std::vector<double> sp(sig), sm(sig);
      const double h = 1e-6 * sig[i];
      sp[i] += h;
      sm[i] -= h;
      const double fd = (frozen_ar(sp) - frozen_ar(sm)) / (2.0 * h);
      CHECK(std::fabs(fd - res.grad[i]) <= 1e-5 * std::max(1.0, std::fabs(res.grad[i])));
    }
  }
}

TEST_CASE("ar_cost degenerate and override paths") {
  std::vector<double> eps(5, 0.0), sig(5, 1.0);
  CHECK_THROWS_AS(ar_cost(eps, sig, RsVariant::exact), DegenerateBetaError);
  // The documented fallback: explicit beta.
  const auto res = ar_cost(eps, sig, RsVariant::exact, 0.5);
  CHECK(res.breakdown.beta == 0.5);
  // Practical variant still defines the weighting (beta collapses to 1).
  const auto res2 = ar_cost(eps, sig, RsVariant::practical);
  CHECK(res2.breakdown.beta == doctest::Approx(1.0));
}

TEST_CASE("reliability score depends only on the standardized errors") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  std::vector<double> eps(30), sig(30);
  for (auto& e : eps) e = nd(rng);
  for (auto& s : sig) s = 0.3 + std::fabs(nd(rng));
  const auto base = ar_cost(eps, sig, RsVariant::practical).breakdown.rs;
  for (double c : {0.01, 3.0, 250.0}) {
    std::vector<double> e2(eps), s2(sig);
    for (auto& e : e2) e *= c;
    for (auto& s : s2) s *= c;
    const auto scaled = ar_cost(e2, s2, RsVariant::practical).breakdown.rs;
    CHECK(scaled == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("rs_min is the infimum over random samples") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> nd;
  for (std::size_t n : {2u, 5u, 10u, 50u}) {
    const double floor = rs_min(n, RsVariant::exact);
    for (int rep = 0; rep < 1000; ++rep) {
      std::vector<double> etas(n);
      for (auto& e : etas) e = nd(rng) * 1.4;
      std::sort(etas.begin(), etas.end());
      CHECK(reliability_score(etas, RsVariant::exact) >= floor - 1e-12);
    }
  }
}

TEST_CASE("constant standardized errors never minimize the reliability score") {
  // The CRPS-only configuration eta = (1/2)sqrt(log 4) for every sample.
  const double eta_star = 0.5 * std::sqrt(std::log(4.0));
  for (std::size_t n : {2u, 5u, 10u, 100u}) {
    std::vector<double> etas(n, eta_star);
    const double delta = reliability_score(etas, RsVariant::exact) - rs_min(n, RsVariant::exact);
    CHECK(delta > 0.0);
  }
}

TEST_CASE("unique stationary points of the per-sample scores") {
  for (double e : {0.1, 1.0, 10.0}) {
    const double s_crps = oracles::golden_min(
        [&](double s) { return crps_gaussian(0.0, s, e); }, 1e-3 * e, 1e3 * e, 1e-12 * e);
    CHECK(s_crps * s_crps == doctest::Approx(e * e / kLog2).epsilon(1e-6));
    const double s_nlpd = oracles::golden_min(
        [&](double s) { return nlpd(e, s); }, 1e-3 * e, 1e3 * e, 1e-12 * e);
    CHECK(s_nlpd * s_nlpd == doctest::Approx(e * e).epsilon(1e-6));
  }
}

TEST_CASE("ar_fixed_beta matches ar_cost") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> nd;
  std::vector<double> eps(25), sig(25);
  for (auto& e : eps) e = nd(rng) + 0.2;
  for (auto& s : sig) s = 0.5 + std::fabs(nd(rng));
  const auto full = ar_cost(eps, sig, RsVariant::practical);
  std::vector<double> grad;
  const double v = ar_fixed_beta(eps, sig, RsVariant::practical, full.breakdown.beta, &grad);
  CHECK(v == doctest::Approx(full.ar).epsilon(1e-14));
  for (std::size_t i = 0; i < eps.size(); ++i) {
    CHECK(grad[i] == doctest::Approx(full.grad[i]).epsilon(1e-12));
  }
}
