#include "calibra/reliability.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "calibra/scores.hpp"
#include "calibra/special.hpp"

namespace calibra {

StandardizedErrors standardize(std::span<const double> epsilons,
                               std::span<const double> sigmas) {
  const std::size_t n = epsilons.size();
  if (n == 0 || sigmas.size() != n) {
    throw std::invalid_argument("standardize: epsilons and sigmas must be nonempty and equal-length");
  }
  std::vector<double> etas(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(sigmas[i] > 0.0)) {
      throw std::domain_error("standardize: sigma must be positive at index " + std::to_string(i));
    }
    etas[i] = epsilons[i] / (kSqrt2 * sigmas[i]);
  }
  StandardizedErrors out;
  out.perm.resize(n);
  std::iota(out.perm.begin(), out.perm.end(), std::size_t{0});
  std::stable_sort(out.perm.begin(), out.perm.end(),
                   [&](std::size_t a, std::size_t b) { return etas[a] < etas[b]; });
  out.etas.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.etas[i] = etas[out.perm[i]];
  return out;
}

double phi(double eta) { return 0.5 * (std::erf(eta) + 1.0); }

ReliabilityDiagram reliability_diagram(std::span<const double> phis) {
  const std::size_t n = phis.size();
  if (n == 0) throw std::domain_error("reliability_diagram: empty input");
  ReliabilityDiagram d;
  d.predicted.assign(phis.begin(), phis.end());
  std::stable_sort(d.predicted.begin(), d.predicted.end());
  d.observed.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.observed[i] = static_cast<double>(i + 1) / static_cast<double>(n);
  }
  return d;
}

double calibration_error(const ReliabilityDiagram& diagram) {
  const std::size_t n = diagram.predicted.size();
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = diagram.predicted[i];
    const double hi = diagram.observed[i];            // i/N after the step
    const double lo = hi - 1.0 / static_cast<double>(n);  // (i-1)/N before it
    worst = std::max(worst, std::max(std::fabs(hi - p), std::fabs(lo - p)));
  }
  return 100.0 * worst;
}

double calibration_error(std::span<const double> phis) {
  return calibration_error(reliability_diagram(phis));
}

double equal_nlpd_sigma(double epsilon, double sigma, double tol) {
  if (!(sigma > 0.0)) throw std::domain_error("equal_nlpd_sigma: sigma must be positive");
  const double ae = std::fabs(epsilon);
  if (ae == 0.0) {
    throw std::domain_error("equal_nlpd_sigma: no second solution exists for epsilon = 0");
  }
  if (sigma == ae) {
    throw std::domain_error("equal_nlpd_sigma: sigma sits at the NLPD minimum |epsilon|");
  }
  const double target = nlpd(epsilon, sigma);

  // NLPD(eps, s) is decreasing on (0, |eps|) and increasing on (|eps|, inf),
  // so the twin solution lives on the other side of |eps|.
  double lo, hi;
  if (sigma > ae) {
    hi = ae;
    lo = ae;
    do { lo *= 0.5; } while (nlpd(epsilon, lo) < target);
  } else {
    lo = ae;
    hi = ae;
    do { hi *= 2.0; } while (nlpd(epsilon, hi) < target);
  }
  // On [lo, hi] the NLPD is monotone and brackets the target.
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double v = nlpd(epsilon, mid);
    if (std::fabs(v - target) <= tol) return mid;
    const bool mid_below = v < target;
    if (sigma > ae) {
      // decreasing branch: value falls as s grows toward |eps|
      (mid_below ? hi : lo) = mid;
    } else {
      (mid_below ? lo : hi) = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace calibra
