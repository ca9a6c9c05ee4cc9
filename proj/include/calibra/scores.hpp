#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace calibra {

/// Which form of the reliability score to use. The practical variant drops
/// the trailing constant -(1/2)sqrt(2/pi) of the closed form; it is the
/// default everywhere. The exact variant matches the defining integral and
/// is kept for oracle checks and convergence studies.
enum class RsVariant { exact, practical };

/// One (input, error) pair: everything the variance estimation needs.
struct ErrorSample {
  std::vector<double> x;
  double epsilon = 0.0;
};

/// A predictive normal distribution for a single point.
struct GaussianForecast {
  double mu = 0.0;
  double sigma = 1.0;
};

/// Aggregate scores of one (model, dataset) evaluation.
struct ScoreBreakdown {
  double crps_mean = 0.0;
  double rs = 0.0;
  double ar = 0.0;
  double nlpd_mean = 0.0;
  double beta = 0.0;
  double crps_min = 0.0;
  double rs_min = 0.0;
  std::size_t n = 0;
};

/// Thrown when beta = rs_min / (crps_min + rs_min) is not usable because
/// every error is exactly zero.
class DegenerateBetaError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Negative log probability density of a N(0, sigma^2) error. Per sample,
/// negatively oriented. sigma must be positive.
double nlpd(double epsilon, double sigma);

/// Closed-form CRPS of a Gaussian forecast N(mu, sigma^2) against an
/// observed value. Nonnegative, same units as y; collapses to |y - mu|
/// as sigma -> 0. sigma must be positive.
double crps_gaussian(double mu, double sigma, double y_obs);

/// d CRPS / d sigma at fixed error. Vanishes exactly at
/// sigma^2 = epsilon^2 / log 2.
double crps_gaussian_dsigma(double epsilon, double sigma);

/// Integration window and tolerance for crps_numeric.
struct IntegrationGrid {
  double lo = 0.0;
  double hi = 0.0;
  double tol = 1e-10;
  int max_depth = 48;
};

/// Window [min(mu-8sigma, y-1), max(mu+8sigma, y+1)]: wide enough that the
/// cdf is within 1e-10 of its tail limits outside it.
IntegrationGrid gaussian_grid(double mu, double sigma, double y_obs);

/// CRPS of an arbitrary cdf by adaptive quadrature of the defining
/// integral. Validates that the cdf is nondecreasing over the grid.
/// Used as the oracle for the closed form and to score recalibrated
/// (non-Gaussian) forecasts.
double crps_numeric(const std::function<double(double)>& cdf, double y_obs,
                    const IntegrationGrid& grid);

/// Reliability score of a sorted sample of standardized errors
/// eta_i = eps_i / (sqrt(2) sigma_i). Closed form of the integrated squared
/// deviation between the empirical cdf of eta and the standard normal cdf.
/// Throws if the input is not sorted ascending or is empty.
double reliability_score(std::span<const double> etas_sorted, RsVariant variant);

/// Per-sample derivative d RS_i / d sigma_i with ranks held fixed at the
/// evaluated sort order. sigmas_sorted[i] is the std that produced
/// etas_sorted[i].
std::vector<double> reliability_score_grad(std::span<const double> etas_sorted,
                                           std::span<const double> sigmas_sorted);

/// Minimum attainable reliability score for a sample of size n. Depends on
/// n only. The exact variant converges to 0 as n -> inf, the practical one
/// to (1/2)sqrt(2/pi).
double rs_min(std::size_t n, RsVariant variant);

/// Minimum attainable mean CRPS over per-sample sigmas:
/// mean of |eps_i| * erf((1/2)sqrt(log 4)), attained at
/// sigma_i = |eps_i| / sqrt(log 2).
double crps_min(std::span<const double> epsilons);

/// Constant in crps_min: erf((1/2) sqrt(log 4)).
double crps_min_coeff();

struct ArResult {
  double ar = 0.0;
  std::vector<double> grad;  // d AR / d sigma_i, in original sample order
  ScoreBreakdown breakdown;
};

/// Accuracy-Reliability cost beta * mean CRPS + (1 - beta) * RS with
/// beta = rs_min / (crps_min + rs_min), plus its gradient over the sigmas.
/// Ranks in the RS term are frozen at the current sort order (piecewise-
/// smooth subgradient). beta_override skips the heuristic weighting; it is
/// the documented fallback for degenerate (all-zero-error) inputs.
ArResult ar_cost(std::span<const double> epsilons, std::span<const double> sigmas,
                 RsVariant variant = RsVariant::practical,
                 std::optional<double> beta_override = std::nullopt);

/// The heuristic weight beta = rs_min / (crps_min + rs_min) for a sample of
/// errors. Throws DegenerateBetaError when every error is zero and the
/// variant is exact.
double ar_beta(std::span<const double> epsilons, RsVariant variant);

/// Fast path for training loops: beta * mean CRPS + (1 - beta) * RS and its
/// sigma-gradient, with beta fixed by the caller (so the reference minima
/// are not recomputed on every evaluation). beta = 1 skips the RS term,
/// which is the CRPS-only objective.
double ar_fixed_beta(std::span<const double> epsilons, std::span<const double> sigmas,
                     RsVariant variant, double beta, std::vector<double>* grad);

}  // namespace calibra
