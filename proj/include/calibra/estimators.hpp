#pragma once

#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "calibra/network.hpp"
#include "calibra/optim.hpp"
#include "calibra/scores.hpp"

#include <nlohmann/json_fwd.hpp>

namespace calibra {

/// Training objective for a variance model.
enum class FitLoss { ar, crps, nlpd };

/// sigma(x) = sum_l theta_l x^l, 1-D inputs, order <= 10.
struct PolynomialVarianceModel {
  std::vector<double> theta;

  int order() const { return static_cast<int>(theta.size()) - 1; }
  /// Raw polynomial value (may be nonpositive; predict_sigma validates).
  double value_at(double x) const;
};

/// sigma(x) = exp(net(standardized x)); positive by construction.
struct NetworkVarianceModel {
  Mlp net;
  std::vector<double> x_mean, x_scale;

  explicit NetworkVarianceModel(std::size_t input_dim = 1) : net(input_dim) {}
  double sigma_at(std::span<const double> x) const;
};

/// Free per-sample sigmas from the diagnostic pointwise fit; tied to the
/// sample that produced them, no x -> sigma map.
struct PointwiseSigmas {
  std::vector<double> sigmas;
};

using VarianceModel = std::variant<PolynomialVarianceModel, NetworkVarianceModel, PointwiseSigmas>;

/// Thrown when a polynomial model predicts a nonpositive sigma; carries the
/// offending input.
class NonPositiveSigmaError : public std::runtime_error {
 public:
  NonPositiveSigmaError(double x, double sigma);
  double x;
  double sigma;
};

/// Evaluates a variance model at a point. Polynomial predictions are
/// validated positive; pointwise models cannot predict at new inputs.
double predict_sigma(const VarianceModel& model, std::span<const double> x);

std::size_t model_input_dim(const VarianceModel& model);
std::string model_kind(const VarianceModel& model);

/// Versioned JSON document {kind, input_dim, standardization, parameters};
/// round-trips bit-exactly.
nlohmann::json variance_model_to_json(const VarianceModel& model);
VarianceModel variance_model_from_json(const nlohmann::json& j);

struct RestartTrace {
  int restart = 0;
  double train_objective = 0.0;
  double val_objective = 0.0;
  int iterations = 0;
  bool converged = false;
  bool discarded = false;
};

struct FitReport {
  ScoreBreakdown train;
  std::optional<ScoreBreakdown> val;
  std::optional<ScoreBreakdown> test;
  std::vector<std::pair<int, double>> order_trace;  // polynomial: (order, train cost)
  std::vector<RestartTrace> restarts;               // network
  int chosen_restart = -1;
  std::string warning;
};

struct PolyFitOptions {
  // Stop when one more order improves the cost by <= tol. Per-order
  // overfitting gains on ~100-point samples sit around 1e-4..1e-3, so a
  // much smaller tolerance would always run to p_max and overfit.
  double tol = 1e-3;
  int p_max = 10;
  RsVariant variant = RsVariant::practical;
  FitLoss loss = FitLoss::ar;
  OptimOptions optim;
  // Range over which accepted orders must keep sigma(x) positive; defaults
  // to the span of the training inputs. Callers that know the data domain
  // (e.g. the toy generators) pass it explicitly.
  std::optional<std::pair<double, double>> positivity_range;
};

/// Iterative polynomial best fit: starts from the constant model
/// theta_0 = std of the errors, then grows the order with the previous
/// solution (plus a zero) as warm start, keeping each order only while it
/// improves the cost by more than tol. Orders whose sigma(x) dips
/// nonpositive anywhere on the training domain are rejected in favor of
/// the previous order.
std::pair<PolynomialVarianceModel, FitReport> fit_polynomial(
    std::span<const ErrorSample> samples, const PolyFitOptions& opts = {});

struct NetFitOptions {
  RsVariant variant = RsVariant::practical;
  FitLoss loss = FitLoss::ar;
  OptimOptions optim;

  NetFitOptions() {
    optim.max_iters = 2000;
    optim.restarts = 5;
    optim.patience = 10;
  }
};

/// Full-batch training of the variance network on the train partition with
/// analytic gradients, early stopping on the validation cost (patience from
/// opts), and opts.optim.restarts independent restarts ranked by validation
/// cost. Restarts that diverge to a non-finite loss are discarded.
std::pair<NetworkVarianceModel, FitReport> fit_network(
    std::span<const ErrorSample> samples, std::span<const std::size_t> train_idx,
    std::span<const std::size_t> val_idx, const NetFitOptions& opts = {});

/// Free per-sample sigmas minimizing the chosen loss. For the CRPS and
/// NLPD losses the per-sample minimizers are closed-form; the AR loss is
/// minimized numerically in log-sigma space.
std::vector<double> fit_pointwise(std::span<const double> epsilons,
                                  RsVariant variant = RsVariant::practical,
                                  FitLoss loss = FitLoss::ar,
                                  const OptimOptions& optim = {});

/// Standard evaluation of (errors, sigmas) under a variant: the AR
/// breakdown. Convenience wrapper over ar_cost.
ScoreBreakdown evaluate_forecasts(std::span<const double> epsilons,
                                  std::span<const double> sigmas,
                                  RsVariant variant = RsVariant::practical);

}  // namespace calibra
