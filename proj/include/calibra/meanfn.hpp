#pragma once

#include <span>
#include <string>
#include <variant>
#include <vector>

#include "calibra/datasets.hpp"
#include "calibra/estimators.hpp"
#include "calibra/network.hpp"
#include "calibra/optim.hpp"

#include <nlohmann/json_fwd.hpp>

namespace calibra {

/// The true f(x) of a named toy problem.
struct ExactToyMean {
  std::string toy;
};

/// RBF kernel ridge: f(x) = sum_j alpha_j exp(-|x - X_j|^2 / (2 l^2)).
/// Stands in for a homoskedastic GP posterior mean.
struct KernelRidgeMean {
  std::size_t dim = 1;
  std::vector<double> train_x;  // row-major
  std::vector<double> alpha;
  double length_scale = 1.0;
  double ridge = 1e-6;
};

/// MLP trained on mean squared error; predicts in original target units.
struct NetworkMean {
  Mlp net;
  std::vector<double> x_mean, x_scale;
  double y_mean = 0.0, y_scale = 1.0;

  explicit NetworkMean(std::size_t input_dim = 1) : net(input_dim) {}
};

/// Predictions supplied as a named column of the data file (archived
/// black-box runs); cannot predict at new inputs by itself.
struct ColumnMean {
  std::string column;
};

using MeanModel = std::variant<ExactToyMean, KernelRidgeMean, NetworkMean, ColumnMean>;

double predict_mean(const MeanModel& model, std::span<const double> x);
std::string mean_kind(const MeanModel& model);

nlohmann::json mean_model_to_json(const MeanModel& model);
MeanModel mean_model_from_json(const nlohmann::json& j);

/// Hyperparameter grid, as factors of the train-domain width (length
/// scales) and of var(y) (ridges).
struct KrGrid {
  std::vector<double> length_scale_factors = {0.05, 0.1, 0.2, 0.5, 1.0};
  std::vector<double> ridge_factors = {1e-6, 1e-4, 1e-2};
};

/// Fits the RBF kernel ridge on the train split, choosing hyperparameters
/// by validation MSE over the grid.
MeanModel fit_kernel_ridge(const Dataset& train, const Dataset& val, const KrGrid& grid = {});

/// Trains the MLP mean on mean squared error with early stopping on the
/// validation MSE; same restart protocol as the variance network.
MeanModel fit_network_mse(const Dataset& data, std::span<const std::size_t> train_idx,
                          std::span<const std::size_t> val_idx, const NetFitOptions& opts = {});

/// eps_i = y_i - f(x_i), paired with x_i. ColumnMean requires the
/// prediction values and has a dedicated overload.
std::vector<ErrorSample> residuals(const Dataset& data, const MeanModel& mean);
std::vector<ErrorSample> residuals_from_predictions(const Dataset& data,
                                                    std::span<const double> predictions);

}  // namespace calibra
