#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "calibra/estimators.hpp"
#include "calibra/scores.hpp"

namespace calibra {

enum class RegressorKind { pointwise, polynomial, network };

/// Variance estimated by minimizing mean CRPS alone (the beta = 1 path of
/// the shared machinery). Pointwise mode is the closed form
/// sigma_i = |eps_i| / sqrt(log 2).
VarianceModel fit_crps_only(std::span<const ErrorSample> samples, RegressorKind kind,
                            std::span<const std::size_t> train_idx = {},
                            std::span<const std::size_t> val_idx = {},
                            const NetFitOptions& net_opts = {});

/// Nearest-centroid sigma: k centroids from seeded Lloyd iterations
/// (farthest-point seeding, best of 10 inits by within-cluster sum of
/// squares); each cluster carries the standard deviation of its member
/// errors, falling back to the global error std for clusters with fewer
/// than two members or zero spread.
struct KMeansSigmaModel {
  std::size_t k = 1;
  std::size_t dim = 1;
  std::vector<double> centroids;  // row-major k x dim
  std::vector<double> sigma_per_cluster;

  std::size_t nearest(std::span<const double> x) const;
  double sigma_at(std::span<const double> x) const;
};

KMeansSigmaModel fit_kmeans_sigma(std::span<const double> x_rows, std::size_t dim,
                                  std::span<const double> eps, std::size_t k,
                                  std::uint64_t seed);

/// Monotone piecewise-linear recalibration map R: [0,1] -> [0,1] with knots
/// from isotonic regression, endpoints pinned to 0 and 1.
struct RecalibrationMap {
  std::vector<double> knots_x, knots_y;
  bool identity_fallback = false;

  double operator()(double p) const;
};

/// Isotonic regression (pool-adjacent-violators) of observed empirical
/// frequency on predicted probability, fitted on a calibration partition.
RecalibrationMap fit_recalibration(std::span<const double> phis_val);

/// General weighted PAV on (x sorted ascending, y): the monotone
/// least-squares fit. Exposed for the recalibration construction.
std::vector<double> pav_isotonic(std::span<const double> y, std::span<const double> w = {});

struct RecalResult {
  ScoreBreakdown breakdown;  // crps_mean and n; Gaussian-only fields are NaN
  double cal_err_pct = 0.0;
};

/// Scores recalibrated forecasts: cdf R(F(y; mu, sigma)) through numeric
/// quadrature, calibration error on the remapped probabilities.
RecalResult score_recalibrated(const RecalibrationMap& map,
                               std::span<const GaussianForecast> forecasts,
                               std::span<const double> y_obs);

}  // namespace calibra
