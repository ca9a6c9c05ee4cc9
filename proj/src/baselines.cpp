#include "calibra/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "calibra/datasets.hpp"
#include "calibra/reliability.hpp"
#include "calibra/special.hpp"

namespace calibra {

namespace {

double global_error_std(std::span<const double> eps) {
  const double n = static_cast<double>(eps.size());
  const double mean = std::accumulate(eps.begin(), eps.end(), 0.0) / n;
  double v = 0.0;
  for (double e : eps) v += (e - mean) * (e - mean);
  const double s = std::sqrt(v / std::max(1.0, n - 1.0));
  return s > 0.0 ? s : 1e-12;
}

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double diff = a[j] - b[j];
    s += diff * diff;
  }
  return s;
}

struct LloydResult {
  std::vector<double> centroids;
  std::vector<std::size_t> assign;
  double wcss = std::numeric_limits<double>::infinity();
};

LloydResult lloyd_once(std::span<const double> x, std::size_t n, std::size_t d,
                       std::size_t k, Rng& rng) {
  LloydResult res;
  res.centroids.resize(k * d);
  res.assign.resize(n);

  // Farthest-point seeding from a random first pick.
  std::vector<std::size_t> seeds;
  seeds.push_back(rng.bounded(n));
  std::vector<double> mind(n, std::numeric_limits<double>::infinity());
  while (seeds.size() < k) {
    const std::size_t last = seeds.back();
    std::size_t far = 0;
    double fard = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      mind[i] = std::min(mind[i], sq_dist(&x[i * d], &x[last * d], d));
      if (mind[i] > fard) {
        fard = mind[i];
        far = i;
      }
    }
    seeds.push_back(far);
  }
  for (std::size_t c = 0; c < k; ++c) {
    std::copy_n(&x[seeds[c] * d], d, &res.centroids[c * d]);
  }

  std::vector<double> sums(k * d);
  std::vector<std::size_t> counts(k);
  for (int it = 0; it < 100; ++it) {
    bool changed = it == 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t bestc = 0;
      double bestd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dist = sq_dist(&x[i * d], &res.centroids[c * d], d);
        if (dist < bestd) {
          bestd = dist;
          bestc = c;
        }
      }
      if (it > 0 && res.assign[i] != bestc) changed = true;
      res.assign[i] = bestc;
    }
    if (!changed) break;
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) {
      counts[res.assign[i]]++;
      for (std::size_t j = 0; j < d; ++j) sums[res.assign[i] * d + j] += x[i * d + j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Re-seed an empty cluster at the point farthest from its centroid.
        std::size_t far = rng.bounded(n);
        double fard = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double dist = sq_dist(&x[i * d], &res.centroids[res.assign[i] * d], d);
          if (dist > fard) {
            fard = dist;
            far = i;
          }
        }
        std::copy_n(&x[far * d], d, &res.centroids[c * d]);
      } else {
        for (std::size_t j = 0; j < d; ++j) {
          res.centroids[c * d + j] = sums[c * d + j] / static_cast<double>(counts[c]);
        }
      }
    }
  }
  res.wcss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    res.wcss += sq_dist(&x[i * d], &res.centroids[res.assign[i] * d], d);
  }
  return res;
}

}  // namespace

VarianceModel fit_crps_only(std::span<const ErrorSample> samples, RegressorKind kind,
                            std::span<const std::size_t> train_idx,
                            std::span<const std::size_t> val_idx,
                            const NetFitOptions& net_opts) {
  switch (kind) {
    case RegressorKind::pointwise: {
      std::vector<double> eps(samples.size());
      for (std::size_t i = 0; i < samples.size(); ++i) eps[i] = samples[i].epsilon;
      return PointwiseSigmas{fit_pointwise(eps, RsVariant::practical, FitLoss::crps)};
    }
    case RegressorKind::polynomial: {
      PolyFitOptions opts;
      opts.loss = FitLoss::crps;
      return fit_polynomial(samples, opts).first;
    }
    case RegressorKind::network: {
      NetFitOptions opts = net_opts;
      opts.loss = FitLoss::crps;
      return fit_network(samples, train_idx, val_idx, opts).first;
    }
  }
  throw std::invalid_argument("fit_crps_only: bad regressor kind");
}

std::size_t KMeansSigmaModel::nearest(std::span<const double> x) const {
  std::size_t best = 0;
  double bestd = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    const double dist = sq_dist(x.data(), &centroids[c * dim], dim);
    if (dist < bestd) {
      bestd = dist;
      best = c;
    }
  }
  return best;
}

double KMeansSigmaModel::sigma_at(std::span<const double> x) const {
  return sigma_per_cluster[nearest(x)];
}

KMeansSigmaModel fit_kmeans_sigma(std::span<const double> x_rows, std::size_t dim,
                                  std::span<const double> eps, std::size_t k,
                                  std::uint64_t seed) {
  const std::size_t n = eps.size();
  if (dim == 0 || x_rows.size() != n * dim) {
    throw std::invalid_argument("fit_kmeans_sigma: bad input shape");
  }
  if (k < 1 || k > n) throw std::invalid_argument("fit_kmeans_sigma: need 1 <= k <= n");

  LloydResult best;
  for (int init = 0; init < 10; ++init) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(init)));
    LloydResult cand = lloyd_once(x_rows, n, dim, k, rng);
    if (cand.wcss < best.wcss) best = std::move(cand);
  }

  KMeansSigmaModel model;
  model.k = k;
  model.dim = dim;
  model.centroids = best.centroids;
  model.sigma_per_cluster.assign(k, 0.0);

  const double fallback = global_error_std(eps);
  for (std::size_t c = 0; c < k; ++c) {
    double sum = 0.0, sum2 = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (best.assign[i] == c) {
        sum += eps[i];
        sum2 += eps[i] * eps[i];
        ++count;
      }
    }
    double s = 0.0;
    if (count >= 2) {
      const double mean = sum / static_cast<double>(count);
      const double var = (sum2 - sum * mean) / static_cast<double>(count - 1);
      s = var > 0.0 ? std::sqrt(var) : 0.0;
    }
    model.sigma_per_cluster[c] = s > 0.0 ? s : fallback;
  }
  return model;
}

std::vector<double> pav_isotonic(std::span<const double> y, std::span<const double> w) {
  const std::size_t n = y.size();
  std::vector<double> level(n), weight(n);
  std::vector<std::size_t> count(n);
  std::size_t top = 0;
  for (std::size_t i = 0; i < n; ++i) {
    level[top] = y[i];
    weight[top] = w.empty() ? 1.0 : w[i];
    count[top] = 1;
    // Pool while the new block violates monotonicity with its predecessor.
    while (top > 0 && level[top - 1] > level[top]) {
      const double tw = weight[top - 1] + weight[top];
      level[top - 1] = (level[top - 1] * weight[top - 1] + level[top] * weight[top]) / tw;
      weight[top - 1] = tw;
      count[top - 1] += count[top];
      --top;
    }
    ++top;
  }
  std::vector<double> out;
  out.reserve(n);
  for (std::size_t b = 0; b < top; ++b) {
    out.insert(out.end(), count[b], level[b]);
  }
  return out;
}

double RecalibrationMap::operator()(double p) const {
  p = std::clamp(p, 0.0, 1.0);
  const auto it = std::upper_bound(knots_x.begin(), knots_x.end(), p);
  const std::size_t hi = std::min<std::size_t>(
      static_cast<std::size_t>(it - knots_x.begin()), knots_x.size() - 1);
  const std::size_t lo = hi == 0 ? 0 : hi - 1;
  if (knots_x[hi] == knots_x[lo]) return knots_y[hi];
  const double t = (p - knots_x[lo]) / (knots_x[hi] - knots_x[lo]);
  return knots_y[lo] + t * (knots_y[hi] - knots_y[lo]);
}

RecalibrationMap fit_recalibration(std::span<const double> phis_val) {
  const std::size_t n = phis_val.size();
  if (n < 10) throw std::invalid_argument("fit_recalibration: need at least 10 points");
  std::vector<double> phis(phis_val.begin(), phis_val.end());
  for (double p : phis) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::domain_error("fit_recalibration: probabilities must lie in [0,1]");
    }
  }
  std::stable_sort(phis.begin(), phis.end());

  RecalibrationMap map;
  std::size_t distinct = 1;
  for (std::size_t i = 1; i < n; ++i) {
    if (phis[i] != phis[i - 1]) ++distinct;
  }
  if (distinct < 2) {
    map.identity_fallback = true;
    map.knots_x = {0.0, 1.0};
    map.knots_y = {0.0, 1.0};
    return map;
  }

  // Observed frequency of each sorted Phi is i/N; PAV pools ties.
  std::vector<double> freq(n);
  for (std::size_t i = 0; i < n; ++i) {
    freq[i] = static_cast<double>(i + 1) / static_cast<double>(n);
  }
  const std::vector<double> fitted = pav_isotonic(freq);

  map.knots_x.push_back(0.0);
  map.knots_y.push_back(0.0);
  for (std::size_t i = 0; i < n; ++i) {
    // Collapse exact-duplicate predicted values to one knot (last wins,
    // which after PAV carries the pooled level).
    if (!map.knots_x.empty() && phis[i] == map.knots_x.back()) {
      map.knots_y.back() = std::clamp(fitted[i], 0.0, 1.0);
      continue;
    }
    map.knots_x.push_back(phis[i]);
    map.knots_y.push_back(std::clamp(fitted[i], 0.0, 1.0));
  }
  if (map.knots_x.back() < 1.0) {
    map.knots_x.push_back(1.0);
    map.knots_y.push_back(1.0);
  } else {
    map.knots_y.back() = 1.0;
  }
  //.. and keep the y knots nondecreasing after the endpoint pinning.
  for (std::size_t i = 1; i < map.knots_y.size(); ++i) {
    map.knots_y[i] = std::max(map.knots_y[i], map.knots_y[i - 1]);
  }
  return map;
}

RecalResult score_recalibrated(const RecalibrationMap& map,
                               std::span<const GaussianForecast> forecasts,
                               std::span<const double> y_obs) {
  const std::size_t n = forecasts.size();
  if (n == 0 || y_obs.size() != n) {
    throw std::invalid_argument("score_recalibrated: bad input sizes");
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  RecalResult res;
  res.breakdown = {0.0, nan, nan, nan, nan, nan, nan, n};

  double crps_sum = 0.0;
  std::vector<double> phis(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& f = forecasts[i];
    const auto cdf = [&](double y) {
      return map(phi((y - f.mu) / (kSqrt2 * f.sigma)));
    };
    crps_sum += crps_numeric(cdf, y_obs[i], gaussian_grid(f.mu, f.sigma, y_obs[i]));
    phis[i] = map(phi((y_obs[i] - f.mu) / (kSqrt2 * f.sigma)));
  }
  res.breakdown.crps_mean = crps_sum / static_cast<double>(n);
  res.cal_err_pct = calibration_error(phis);
  return res;
}

}  // namespace calibra
