#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace calibra {

/// Standardized errors eta_i = eps_i / (sqrt(2) sigma_i), sorted ascending,
/// with the permutation back to sample order: perm[sorted_index] is the
/// original index.
struct StandardizedErrors {
  std::vector<double> etas;
  std::vector<std::size_t> perm;
};

StandardizedErrors standardize(std::span<const double> epsilons,
                               std::span<const double> sigmas);

/// Predicted probability Phi(eta) = (erf(eta) + 1) / 2.
double phi(double eta);

/// Binless reliability diagram: (sorted predicted probability, observed
/// frequency i/N) pairs. Perfect calibration puts the points on the
/// diagonal as N grows.
struct ReliabilityDiagram {
  std::vector<double> predicted;  // sorted Phi values
  std::vector<double> observed;   // i/N
};

ReliabilityDiagram reliability_diagram(std::span<const double> phis);

/// Maximum deviation of the diagram from the diagonal, in percent.
/// Two-sided: both step endpoints i/N and (i-1)/N are compared against
/// each sorted Phi, which makes the value independent of the step
/// convention (the Kolmogorov-Smirnov statistic, scaled by 100).
double calibration_error(const ReliabilityDiagram& diagram);

/// Convenience: diagram construction plus error in one call.
double calibration_error(std::span<const double> phis);

/// Given (epsilon, sigma) with sigma != |epsilon|, returns the other
/// standard deviation with the same NLPD, found by bisection on the
/// opposite side of the NLPD minimum at |epsilon|. The returned value
/// matches the input's NLPD to within `tol`.
double equal_nlpd_sigma(double epsilon, double sigma, double tol = 1e-12);

}  // namespace calibra
