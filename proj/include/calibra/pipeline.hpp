#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "calibra/baselines.hpp"
#include "calibra/datasets.hpp"
#include "calibra/estimators.hpp"
#include "calibra/meanfn.hpp"
#include "calibra/reliability.hpp"
#include "calibra/scores.hpp"

namespace calibra {

/// Concurrency cap for benchmark runs: CALIBRA_THREADS, else the hardware
/// concurrency.
int thread_cap();

struct MethodScores {
  std::string name;
  ScoreBreakdown breakdown;
  double cal_err_pct = 0.0;
  std::map<std::string, double> extra;
};

/// The report written by fit/eval/bench; every number in it is
/// reproducible from (inputs, seeds).
struct RunReport {
  std::string version = "1";
  std::string command;
  nlohmann::json provenance;
  nlohmann::json splits;
  std::string rs_variant = "practical";
  std::vector<MethodScores> methods;
  double timing_s = 0.0;
  std::vector<std::uint64_t> seeds;
  nlohmann::json extra;
};

nlohmann::json run_report_to_json(const RunReport& report);
void write_json(const std::string& path, const nlohmann::json& j);

/// A fitted pair (mean model, variance model) plus the evaluation settings
/// it was trained under. Serializes to the versioned model document.
struct ModelBundle {
  MeanModel mean;
  VarianceModel variance;
  RsVariant variant = RsVariant::practical;
  std::optional<Standardizer> target_standardizer;  // tabular runs
};

nlohmann::json model_bundle_to_json(const ModelBundle& bundle);
ModelBundle model_bundle_from_json(const nlohmann::json& j);

/// Scores a set of Gaussian forecasts: AR breakdown plus the calibration
/// error of the standardized errors.
MethodScores score_method(const std::string& name, std::span<const double> epsilons,
                          std::span<const double> sigmas, RsVariant variant);

// ---------------------------------------------------------------------------
// Toy protocol: generate, split, fit mean + variance, evaluate against the
// known noise function.
// ---------------------------------------------------------------------------

struct ToyRunConfig {
  std::string dataset = "G";
  std::size_t n = 100;
  std::string estimator = "poly";     // poly | network | pointwise
  std::string mean = "kernel-ridge";  // kernel-ridge | exact
  FitLoss loss = FitLoss::ar;
  RsVariant variant = RsVariant::practical;
  SplitSpec split{0.33, 0.33, 0.34, 0};
  std::uint64_t seed = 0;
  std::size_t grid_points = 101;   // sigma-curve resolution (1-D)
  std::size_t fresh_points = 0;    // extra ground-truth sample (5D correlation)
  std::optional<int> max_iters;    // override the estimator default
};

struct ToyRunResult {
  bool ok = false;
  std::string error;
  MethodScores test;            // test-partition scores
  double rmse_sigma = 0.0;      // grid RMSE (1-D) or fresh-sample RMSE (5D)
  double pearson_sigma = 0.0;   // corr(sigma_hat, sigma_true) on the truth sample
  std::vector<double> grid_x, grid_sigma_true, grid_sigma_pred;  // 1-D only
};

ToyRunResult run_toy_once(const ToyRunConfig& cfg);

struct ToyBenchResult {
  std::vector<ToyRunResult> runs;
  int failures = 0;
  double median_rmse = 0.0;
  double median_crps = 0.0;
  double median_cal_err = 0.0;
  // Run-ensemble band of the estimated sigma over the grid (1-D).
  std::vector<double> grid_x, sigma_true, band_mean, band_std;
};

/// Seeded repetitions of the toy protocol with fresh data per run.
ToyBenchResult bench_toy(const ToyRunConfig& base, int runs, std::uint64_t master_seed);

// ---------------------------------------------------------------------------
// Tabular protocol: the real-world benchmark with the comparison methods.
// ---------------------------------------------------------------------------

struct TabularRunConfig {
  RsVariant variant = RsVariant::practical;
  SplitSpec split{0.70, 0.15, 0.15, 0};
  std::uint64_t seed = 0;
  bool standardize_target = true;
  std::vector<std::string> methods{"crps", "kmeans", "recal", "ar"};
  int kmeans_k_max = 10;
  std::optional<int> max_iters;  // override the network default
};

struct TabularRunResult {
  bool ok = false;
  std::string error;
  std::vector<MethodScores> methods;

  const MethodScores* find(const std::string& name) const;
};

TabularRunResult run_tabular_once(const Dataset& raw, const TabularRunConfig& cfg);

struct TabularBenchResult {
  std::vector<TabularRunResult> runs;
  int failures = 0;
  // median test CRPS / calibration error per method, over successful runs
  std::map<std::string, double> median_crps;
  std::map<std::string, double> median_cal_err;
  std::map<std::string, std::map<std::string, double>> median_extra;
};

TabularBenchResult bench_tabular(const Dataset& raw, const TabularRunConfig& base,
                                 int runs, std::uint64_t master_seed);

// ---------------------------------------------------------------------------
// Single fit / eval used by the CLI.
// ---------------------------------------------------------------------------

struct FitConfig {
  std::string mean = "kernel-ridge";  // exact | kernel-ridge | network | column:NAME
  std::string estimator = "poly";     // poly | network | pointwise
  FitLoss loss = FitLoss::ar;
  RsVariant variant = RsVariant::practical;
  SplitSpec split{0.33, 0.33, 0.34, 0};
  std::uint64_t seed = 0;
  bool standardize_target = false;
  std::optional<int> max_iters;
};

struct FitOutcome {
  ModelBundle bundle;
  FitReport fit_report;
  RunReport report;
  std::vector<double> pointwise_sigmas;  // estimator == pointwise only
};

FitOutcome run_fit(const LoadedCsv& data, const FitConfig& cfg, const std::string& command);

struct EvalOutcome {
  RunReport report;
  ReliabilityDiagram diagram;
  // sigma curve for 1-D inputs: per-row (x, sigma_true if known, sigma_pred)
  std::vector<std::vector<double>> sigma_curve;
  std::vector<std::string> sigma_curve_header;
};

EvalOutcome run_eval(const ModelBundle& bundle, const LoadedCsv& data,
                     const std::string& command);

}  // namespace calibra
