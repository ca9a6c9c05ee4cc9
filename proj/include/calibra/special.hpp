#pragma once

namespace calibra {

// Numeric constants used throughout the scoring formulas.
inline constexpr double kSqrt2 = 1.4142135623730951;
inline constexpr double kSqrtPi = 1.7724538509055160;
inline constexpr double kInvSqrtPi = 0.5641895835477563;
inline constexpr double kSqrt2OverPi = 0.7978845608028654;   // sqrt(2/pi)
inline constexpr double kHalfSqrt2OverPi = 0.3989422804014327;
inline constexpr double kLog2Pi = 1.8378770664093453;
inline constexpr double kLog2 = 0.6931471805599453;

/// Inverse of std::erf on (-1, 1), accurate to <= 1e-14 absolute error.
/// Throws std::domain_error for |p| >= 1.
double erf_inv(double p);

/// Standard normal cdf and pdf.
double normal_cdf(double z);
double normal_pdf(double z);

}  // namespace calibra
