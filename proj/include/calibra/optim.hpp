#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace calibra {

/// Objective callback: fills grad (same length as x) and returns the value.
/// A non-finite return is treated as "step too far" by the line search.
using Objective = std::function<double(std::span<const double> x, std::span<double> grad)>;

/// Optional validation objective used for early stopping; value only.
using Validation = std::function<double(std::span<const double> x)>;

struct OptimOptions {
  int max_iters = 500;
  double grad_tol = 1e-8;   // infinity norm of the gradient
  double step_tol = 1e-12;  // relative infinity norm of the step
  int patience = 10;        // validation iterations without improvement before stop
  int restarts = 5;
  std::uint64_t seed = 0;
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;
  // Directional finite-difference check of the supplied gradient at x0.
  // On by default in debug builds.
#ifdef NDEBUG
  bool check_gradient = false;
#else
  bool check_gradient = true;
#endif
};

struct OptimResult {
  std::vector<double> x;
  double objective = 0.0;              // training objective at x
  std::optional<double> validation;    // validation value at x, when tracked
  int iterations = 0;
  bool converged = false;
  int restart_index = 0;
};

/// BFGS with a cubic-interpolation line search satisfying the strong Wolfe
/// conditions. With a validation callback, stops after `patience`
/// iterations without validation improvement and returns the
/// best-validation iterate. On line-search failure returns the best
/// iterate so far with converged = false.
OptimResult minimize(const Objective& objective, std::span<const double> x0,
                     const OptimOptions& opts = {}, const Validation& validation = {});

/// Generator of initial points, one per restart.
using StartSampler = std::function<std::vector<double>(int restart, std::mt19937_64& rng)>;

/// Runs minimize from `opts.restarts` sampled starts and keeps the result
/// with the lowest monitored objective (validation value when a validation
/// callback is given, training objective otherwise). Deterministic given
/// the seed. Throws if every restart fails its line search at the start.
OptimResult multi_start(const Objective& objective, const StartSampler& sampler,
                        const OptimOptions& opts = {}, const Validation& validation = {});

}  // namespace calibra
