#include "calibra/scores.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "calibra/special.hpp"

namespace calibra {

namespace {

void require_positive_sigma(double sigma) {
  if (!(sigma > 0.0)) {
    throw std::domain_error("sigma must be positive, got " + std::to_string(sigma));
  }
}

// One term of the reliability-score sum for sorted position `rank` (1-based).
double rs_term(double eta, std::size_t rank, std::size_t n) {
  const double nn = static_cast<double>(n);
  return eta / nn * (std::erf(eta) + 1.0) -
         eta * (2.0 * static_cast<double>(rank) - 1.0) / (nn * nn) +
         std::exp(-eta * eta) / (kSqrtPi * nn);
}

// Adaptive trapezoid with bisection; successive estimates on a subinterval
// must agree to the local tolerance before it is accepted.
double adapt_trapezoid(const std::function<double(double)>& f, double a, double b,
                       double fa, double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double fm = f(m);
  const double left = 0.5 * (fa + fm) * (m - a);
  const double right = 0.5 * (fm + fb) * (b - m);
  const double refined = left + right;
  if (depth <= 0 || std::fabs(refined - whole) <= 3.0 * tol) {
    return refined + (refined - whole) / 3.0;
  }
  return adapt_trapezoid(f, a, m, fa, fm, left, 0.5 * tol, depth - 1) +
         adapt_trapezoid(f, m, b, fm, fb, right, 0.5 * tol, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b,
                 double tol, int max_depth) {
  if (!(b > a)) return 0.0;
  // Seed with 16 panels so a symmetric integrand cannot fool the first
  // convergence check.
  constexpr int kPanels = 16;
  const double h = (b - a) / kPanels;
  double total = 0.0;
  double x0 = a, f0 = f(a);
  for (int i = 0; i < kPanels; ++i) {
    const double x1 = (i + 1 == kPanels) ? b : a + (i + 1) * h;
    const double f1 = f(x1);
    const double whole = 0.5 * (f0 + f1) * (x1 - x0);
    total += adapt_trapezoid(f, x0, x1, f0, f1, whole, tol / kPanels, max_depth);
    x0 = x1;
    f0 = f1;
  }
  return total;
}

}  // namespace

double nlpd(double epsilon, double sigma) {
  require_positive_sigma(sigma);
  const double z = epsilon / sigma;
  return std::log(sigma) + 0.5 * z * z + 0.5 * kLog2Pi;
}

double crps_gaussian(double mu, double sigma, double y_obs) {
  require_positive_sigma(sigma);
  const double e = y_obs - mu;
  const double eta = e / (kSqrt2 * sigma);
  return e * std::erf(eta) + sigma * (kSqrt2OverPi * std::exp(-eta * eta) - kInvSqrtPi);
}

double crps_gaussian_dsigma(double epsilon, double sigma) {
  require_positive_sigma(sigma);
  const double eta = epsilon / (kSqrt2 * sigma);
  return kSqrt2OverPi * std::exp(-eta * eta) - kInvSqrtPi;
}

IntegrationGrid gaussian_grid(double mu, double sigma, double y_obs) {
  IntegrationGrid g;
  g.lo = std::min(mu - 8.0 * sigma, y_obs - 1.0);
  g.hi = std::max(mu + 8.0 * sigma, y_obs + 1.0);
  return g;
}

double crps_numeric(const std::function<double(double)>& cdf, double y_obs,
                    const IntegrationGrid& grid) {
  if (!(grid.hi > grid.lo)) {
    throw std::invalid_argument("crps_numeric: empty integration window");
  }
  // Monotonicity scan; a decreasing pair of samples invalidates the input.
  constexpr int kScan = 128;
  double prev = cdf(grid.lo);
  for (int i = 1; i <= kScan; ++i) {
    const double x = grid.lo + (grid.hi - grid.lo) * i / kScan;
    const double c = cdf(x);
    if (c < prev - 1e-12) {
      throw std::invalid_argument("crps_numeric: cdf is not nondecreasing");
    }
    prev = c;
  }
  const double yo = std::clamp(y_obs, grid.lo, grid.hi);
  const auto below = [&](double y) { const double c = cdf(y); return c * c; };
  const auto above = [&](double y) { const double c = 1.0 - cdf(y); return c * c; };
  return integrate(below, grid.lo, yo, grid.tol, grid.max_depth) +
         integrate(above, yo, grid.hi, grid.tol, grid.max_depth);
}

double reliability_score(std::span<const double> etas_sorted, RsVariant variant) {
  const std::size_t n = etas_sorted.size();
  if (n == 0) throw std::domain_error("reliability_score: empty sample");
  for (std::size_t i = 1; i < n; ++i) {
    if (etas_sorted[i] < etas_sorted[i - 1]) {
      throw std::invalid_argument("reliability_score: etas must be sorted ascending");
    }
  }
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += rs_term(etas_sorted[i], i + 1, n);
  if (variant == RsVariant::exact) s -= kHalfSqrt2OverPi;
  return s;
}

std::vector<double> reliability_score_grad(std::span<const double> etas_sorted,
                                           std::span<const double> sigmas_sorted) {
  const std::size_t n = etas_sorted.size();
  if (sigmas_sorted.size() != n) {
    throw std::invalid_argument("reliability_score_grad: size mismatch");
  }
  std::vector<double> grad(n);
  const double nn = static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    require_positive_sigma(sigmas_sorted[i]);
    const double eta = etas_sorted[i];
    grad[i] = eta / (nn * sigmas_sorted[i]) *
              ((2.0 * static_cast<double>(i + 1) - 1.0) / nn - std::erf(eta) - 1.0);
  }
  return grad;
}

double rs_min(std::size_t n, RsVariant variant) {
  if (n < 1) throw std::domain_error("rs_min: sample count must be >= 1");
  const double nn = static_cast<double>(n);
  double s = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    const double z = erf_inv((2.0 * static_cast<double>(i) - 1.0) / nn - 1.0);
    s += std::exp(-z * z);
  }
  s /= kSqrtPi * nn;
  if (variant == RsVariant::exact) s -= kHalfSqrt2OverPi;
  return s;
}

double crps_min_coeff() {
  static const double c = std::erf(0.5 * std::sqrt(std::log(4.0)));
  return c;
}

double crps_min(std::span<const double> epsilons) {
  if (epsilons.empty()) throw std::domain_error("crps_min: empty error list");
  double s = 0.0;
  for (double e : epsilons) s += std::fabs(e);
  return crps_min_coeff() * s / static_cast<double>(epsilons.size());
}

double ar_beta(std::span<const double> epsilons, RsVariant variant) {
  const double cmin = crps_min(epsilons);
  if (cmin == 0.0 && variant == RsVariant::exact) {
    throw DegenerateBetaError(
        "ar_beta: all errors are zero, so crps_min = 0 and the exact-variant "
        "beta is undefined; use the practical variant or pass a fixed beta");
  }
  const double rmin = rs_min(epsilons.size(), variant);
  return rmin / (cmin + rmin);
}

double ar_fixed_beta(std::span<const double> epsilons, std::span<const double> sigmas,
                     RsVariant variant, double beta, std::vector<double>* grad) {
  const std::size_t n = epsilons.size();
  if (n == 0 || sigmas.size() != n) {
    throw std::invalid_argument("ar_fixed_beta: epsilons and sigmas must be nonempty and equal-length");
  }
  const double nn = static_cast<double>(n);
  double crps_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    require_positive_sigma(sigmas[i]);
    crps_sum += crps_gaussian(0.0, sigmas[i], epsilons[i]);
  }
  if (grad) {
    grad->resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      (*grad)[i] = beta / nn * crps_gaussian_dsigma(epsilons[i], sigmas[i]);
    }
  }
  double value = beta * crps_sum / nn;
  if (beta != 1.0) {
    std::vector<double> etas(n);
    for (std::size_t i = 0; i < n; ++i) etas[i] = epsilons[i] / (kSqrt2 * sigmas[i]);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return etas[a] < etas[b]; });
    double rs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t orig = order[i];
      const double eta = etas[orig];
      rs += rs_term(eta, i + 1, n);
      if (grad) {
        (*grad)[orig] += (1.0 - beta) * eta / (nn * sigmas[orig]) *
                         ((2.0 * static_cast<double>(i + 1) - 1.0) / nn - std::erf(eta) - 1.0);
      }
    }
    if (variant == RsVariant::exact) rs -= kHalfSqrt2OverPi;
    value += (1.0 - beta) * rs;
  }
  return value;
}

ArResult ar_cost(std::span<const double> epsilons, std::span<const double> sigmas,
                 RsVariant variant, std::optional<double> beta_override) {
  const std::size_t n = epsilons.size();
  if (n == 0 || sigmas.size() != n) {
    throw std::invalid_argument("ar_cost: epsilons and sigmas must be nonempty and equal-length");
  }

  ArResult res;
  res.breakdown.n = n;
  const double nn = static_cast<double>(n);

  double crps_sum = 0.0, nlpd_sum = 0.0;
  std::vector<double> etas(n);
  for (std::size_t i = 0; i < n; ++i) {
    require_positive_sigma(sigmas[i]);
    crps_sum += crps_gaussian(0.0, sigmas[i], epsilons[i]);
    nlpd_sum += nlpd(epsilons[i], sigmas[i]);
    etas[i] = epsilons[i] / (kSqrt2 * sigmas[i]);
  }
  res.breakdown.crps_mean = crps_sum / nn;
  res.breakdown.nlpd_mean = nlpd_sum / nn;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return etas[a] < etas[b]; });
  std::vector<double> etas_sorted(n), sigmas_sorted(n);
  for (std::size_t i = 0; i < n; ++i) {
    etas_sorted[i] = etas[order[i]];
    sigmas_sorted[i] = sigmas[order[i]];
  }
  res.breakdown.rs = reliability_score(etas_sorted, variant);
  res.breakdown.crps_min = crps_min(epsilons);
  res.breakdown.rs_min = rs_min(n, variant);

  double beta;
  if (beta_override) {
    beta = *beta_override;
  } else {
    if (res.breakdown.crps_min == 0.0 && variant == RsVariant::exact) {
      throw DegenerateBetaError(
          "ar_cost: all errors are zero, so crps_min = 0 and the exact-variant "
          "beta is undefined; use the practical variant or pass a fixed beta");
    }
    beta = res.breakdown.rs_min / (res.breakdown.crps_min + res.breakdown.rs_min);
  }
  res.breakdown.beta = beta;
  res.breakdown.ar = beta * res.breakdown.crps_mean + (1.0 - beta) * res.breakdown.rs;
  res.ar = res.breakdown.ar;

  const std::vector<double> rs_grad = reliability_score_grad(etas_sorted, sigmas_sorted);
  res.grad.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t orig = order[i];
    res.grad[orig] = beta / nn * crps_gaussian_dsigma(epsilons[orig], sigmas[orig]) +
                     (1.0 - beta) * rs_grad[i];
  }
  return res;
}

}  // namespace calibra
