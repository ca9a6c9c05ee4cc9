// calibra: assign input-dependent Gaussian uncertainty to the predictions of
// a deterministic model, score and calibrate the resulting forecasts, and
// run the benchmark protocols.

#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "calibra/pipeline.hpp"
#include "calibra/reliability.hpp"

namespace {

using namespace calibra;

std::string join_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

SplitSpec parse_split(const std::string& text) {
  SplitSpec spec;
  if (std::sscanf(text.c_str(), "%lf,%lf,%lf", &spec.train, &spec.val, &spec.test) != 3) {
    throw CLI::ValidationError("--split", "expected three comma-separated fractions");
  }
  return spec;
}

FitLoss parse_loss(const std::string& name) {
  if (name == "ar") return FitLoss::ar;
  if (name == "crps") return FitLoss::crps;
  if (name == "nlpd") return FitLoss::nlpd;
  throw CLI::ValidationError("--loss", "expected ar, crps or nlpd");
}

RsVariant parse_variant(const std::string& name) {
  if (name == "practical") return RsVariant::practical;
  if (name == "exact") return RsVariant::exact;
  throw CLI::ValidationError("--rs-variant", "expected practical or exact");
}

void write_reliability_csv(const std::string& path, const ReliabilityDiagram& d) {
  std::vector<std::vector<double>> rows;
  rows.reserve(d.predicted.size());
  for (std::size_t i = 0; i < d.predicted.size(); ++i) {
    rows.push_back({d.predicted[i], d.observed[i]});
  }
  const std::vector<std::string> header = {"predicted_prob", "observed_freq"};
  write_table_csv(path, header, rows);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Accuracy-Reliability uncertainty estimation for deterministic models"};
  app.require_subcommand(1);
  const std::string command = join_args(argc, argv);

  // --- gen ---------------------------------------------------------------
  auto* gen = app.add_subcommand("gen", "generate a toy dataset CSV");
  std::string gen_dataset = "G", gen_out;
  std::size_t gen_n = 100;
  std::uint64_t gen_seed = 0;
  gen->add_option("--dataset", gen_dataset, "G, Y, W or 5D")->required();
  gen->add_option("--n", gen_n, "number of samples")->required();
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output CSV path")->required();

  // --- fit ---------------------------------------------------------------
  auto* fit = app.add_subcommand("fit", "fit mean and variance models");
  std::string fit_data, fit_mean = "kernel-ridge", fit_estimator = "poly";
  std::string fit_loss = "ar", fit_variant = "practical", fit_split = "0.33,0.33,0.34";
  std::string fit_out_model = "model.json", fit_out_report = "report.json", fit_out_sigmas;
  std::string fit_y_col, fit_x_cols;
  std::uint64_t fit_seed = 0;
  bool fit_standardize = false;
  int fit_max_iters = 0;
  fit->add_option("--data", fit_data, "input CSV")->required();
  fit->add_option("--mean", fit_mean, "exact | kernel-ridge | network | column:NAME");
  fit->add_option("--estimator", fit_estimator, "poly | network | pointwise");
  fit->add_option("--loss", fit_loss, "ar | crps | nlpd");
  fit->add_option("--split", fit_split, "train,val,test fractions");
  fit->add_option("--seed", fit_seed, "master seed");
  fit->add_option("--rs-variant", fit_variant, "practical | exact");
  fit->add_flag("--standardize-target", fit_standardize,
                "standardize inputs and target on train statistics");
  fit->add_option("--max-iters", fit_max_iters, "optimizer iteration cap override");
  fit->add_option("--y-col", fit_y_col, "target column name");
  fit->add_option("--x-cols", fit_x_cols, "comma-separated input column names");
  fit->add_option("--out-model", fit_out_model, "model JSON path");
  fit->add_option("--out-report", fit_out_report, "report JSON path");
  fit->add_option("--out-sigmas", fit_out_sigmas, "per-sample sigma CSV (pointwise)");

  // --- eval --------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "evaluate a fitted model on data");
  std::string eval_model, eval_data, eval_report = "report.json";
  std::string eval_reliability, eval_curve;
  eval->add_option("--model", eval_model, "model JSON from fit")->required();
  eval->add_option("--data", eval_data, "input CSV")->required();
  eval->add_option("--out-report", eval_report, "report JSON path");
  eval->add_option("--out-reliability", eval_reliability, "reliability diagram CSV");
  eval->add_option("--out-sigma-curve", eval_curve, "sigma-vs-x CSV (1-D inputs)");

  // --- bench -------------------------------------------------------------
  auto* bench = app.add_subcommand("bench", "run a benchmark protocol");
  bench->require_subcommand(1);

  auto* btoy = bench->add_subcommand("toy", "repeated toy-recovery runs");
  std::string btoy_dataset = "G", btoy_estimator = "poly", btoy_mean = "kernel-ridge";
  std::string btoy_loss = "ar", btoy_variant = "practical", btoy_prefix = "bench_toy";
  int btoy_runs = 100, btoy_max_iters = 0;
  std::size_t btoy_n = 100;
  std::uint64_t btoy_seed = 0;
  btoy->add_option("--dataset", btoy_dataset, "G, Y, W or 5D")->required();
  btoy->add_option("--runs", btoy_runs, "number of seeded repetitions")->required();
  btoy->add_option("--estimator", btoy_estimator, "poly | network");
  btoy->add_option("--mean", btoy_mean, "kernel-ridge | exact");
  btoy->add_option("--n", btoy_n, "points per run");
  btoy->add_option("--seed", btoy_seed, "master seed");
  btoy->add_option("--loss", btoy_loss, "ar | crps | nlpd");
  btoy->add_option("--rs-variant", btoy_variant, "practical | exact");
  btoy->add_option("--max-iters", btoy_max_iters, "optimizer iteration cap override");
  btoy->add_option("--out-prefix", btoy_prefix, "output file prefix");

  auto* btab = bench->add_subcommand("tabular", "real-world comparison protocol");
  std::string btab_data, btab_methods = "crps,kmeans,recal,ar";
  std::string btab_variant = "practical", btab_prefix = "bench_tabular";
  std::string btab_split = "0.70,0.15,0.15";
  int btab_runs = 50, btab_max_iters = 0;
  std::uint64_t btab_seed = 0;
  bool btab_no_standardize = false;
  btab->add_option("--data", btab_data, "input CSV")->required();
  btab->add_option("--runs", btab_runs, "number of seeded repetitions")->required();
  btab->add_option("--methods", btab_methods, "comma-separated subset of crps,kmeans,recal,ar");
  btab->add_option("--split", btab_split, "train,val,test fractions");
  btab->add_option("--seed", btab_seed, "master seed");
  btab->add_option("--rs-variant", btab_variant, "practical | exact");
  btab->add_option("--max-iters", btab_max_iters, "optimizer iteration cap override");
  btab->add_flag("--no-standardize-target", btab_no_standardize,
                 "skip train-statistics target standardization");
  btab->add_option("--out-prefix", btab_prefix, "output file prefix");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const Dataset ds = gen_toy(gen_dataset, gen_n, gen_seed);
      write_csv(gen_out, ds);
      std::printf("wrote %zu rows to %s\n", ds.n(), gen_out.c_str());
      return 0;
    }

    if (fit->parsed()) {
      CsvSchema schema;
      if (!fit_y_col.empty()) schema.target = fit_y_col;
      if (!fit_x_cols.empty()) {
        std::string cur;
        for (char c : fit_x_cols + ",") {
          if (c == ',') {
            if (!cur.empty()) schema.inputs.push_back(cur);
            cur.clear();
          } else {
            cur.push_back(c);
          }
        }
      }
      if (fit_mean.rfind("column:", 0) == 0) schema.extra.push_back(fit_mean.substr(7));
      const LoadedCsv data = load_csv(fit_data, schema);

      FitConfig cfg;
      cfg.mean = fit_mean;
      cfg.estimator = fit_estimator;
      cfg.loss = parse_loss(fit_loss);
      cfg.variant = parse_variant(fit_variant);
      cfg.split = parse_split(fit_split);
      cfg.seed = fit_seed;
      cfg.standardize_target = fit_standardize;
      if (fit_max_iters > 0) cfg.max_iters = fit_max_iters;

      FitOutcome outcome = run_fit(data, cfg, command);
      write_json(fit_out_model, model_bundle_to_json(outcome.bundle));
      outcome.report.extra["artifacts"] = {{"model", fit_out_model}};
      if (!fit_out_sigmas.empty() && !outcome.pointwise_sigmas.empty()) {
        std::vector<std::vector<double>> rows;
        for (std::size_t i = 0; i < outcome.pointwise_sigmas.size(); ++i) {
          rows.push_back({static_cast<double>(i), outcome.pointwise_sigmas[i]});
        }
        const std::vector<std::string> header = {"index", "sigma"};
        write_table_csv(fit_out_sigmas, header, rows);
        outcome.report.extra["artifacts"]["sigmas"] = fit_out_sigmas;
      }
      write_json(fit_out_report, run_report_to_json(outcome.report));
      for (const auto& m : outcome.report.methods) {
        std::printf("%-10s crps=%.6f rs=%.6f ar=%.6f cal_err=%.2f%%\n", m.name.c_str(),
                    m.breakdown.crps_mean, m.breakdown.rs, m.breakdown.ar, m.cal_err_pct);
      }
      return 0;
    }

    if (eval->parsed()) {
      std::ifstream in(eval_model);
      if (!in) throw std::runtime_error("cannot open '" + eval_model + "'");
      nlohmann::json jm;
      in >> jm;
      const ModelBundle bundle = model_bundle_from_json(jm);

      CsvSchema schema;
      if (const auto* col = std::get_if<ColumnMean>(&bundle.mean)) {
        if (col->column != "true_mean") schema.extra.push_back(col->column);
      }
      const LoadedCsv data = load_csv(eval_data, schema);
      EvalOutcome outcome = run_eval(bundle, data, command);
      if (!eval_reliability.empty()) {
        write_reliability_csv(eval_reliability, outcome.diagram);
        outcome.report.extra["artifacts"]["reliability"] = eval_reliability;
      }
      if (!eval_curve.empty() && !outcome.sigma_curve.empty()) {
        write_table_csv(eval_curve, outcome.sigma_curve_header, outcome.sigma_curve);
        outcome.report.extra["artifacts"]["sigma_curve"] = eval_curve;
      }
      write_json(eval_report, run_report_to_json(outcome.report));
      for (const auto& m : outcome.report.methods) {
        std::printf("%-10s crps=%.6f nlpd=%.6f cal_err=%.2f%%\n", m.name.c_str(),
                    m.breakdown.crps_mean, m.breakdown.nlpd_mean, m.cal_err_pct);
      }
      return 0;
    }

    if (btoy->parsed()) {
      ToyRunConfig cfg;
      cfg.dataset = btoy_dataset;
      cfg.n = btoy_n;
      cfg.estimator = btoy_estimator;
      cfg.mean = btoy_mean;
      cfg.loss = parse_loss(btoy_loss);
      cfg.variant = parse_variant(btoy_variant);
      if (btoy_max_iters > 0) cfg.max_iters = btoy_max_iters;
      const ToyBenchResult res = bench_toy(cfg, btoy_runs, btoy_seed);

      std::vector<std::vector<double>> rows;
      for (std::size_t r = 0; r < res.runs.size(); ++r) {
        const auto& run = res.runs[r];
        if (!run.ok) continue;
        rows.push_back({static_cast<double>(r), run.rmse_sigma, run.test.breakdown.crps_mean,
                        run.test.cal_err_pct});
      }
      const std::vector<std::string> rheader = {"run", "rmse_sigma", "crps", "cal_err_pct"};
      write_table_csv(btoy_prefix + "_runs.csv", rheader, rows);
      if (!res.grid_x.empty()) {
        std::vector<std::vector<double>> band;
        for (std::size_t i = 0; i < res.grid_x.size(); ++i) {
          band.push_back({res.grid_x[i], res.sigma_true[i], res.band_mean[i], res.band_std[i]});
        }
        const std::vector<std::string> bheader = {"x", "sigma_true", "sigma_mean", "sigma_std"};
        write_table_csv(btoy_prefix + "_band.csv", bheader, band);
      }
      nlohmann::json summary = {{"command", command},
                                {"dataset", btoy_dataset},
                                {"estimator", btoy_estimator},
                                {"runs", btoy_runs},
                                {"failures", res.failures},
                                {"median_rmse_sigma", res.median_rmse},
                                {"median_crps", res.median_crps},
                                {"median_cal_err_pct", res.median_cal_err},
                                {"seed", btoy_seed}};
      write_json(btoy_prefix + "_summary.json", summary);
      std::printf("%s/%s: median rmse=%.4f crps=%.4f cal_err=%.2f%% (%d failures)\n",
                  btoy_dataset.c_str(), btoy_estimator.c_str(), res.median_rmse,
                  res.median_crps, res.median_cal_err, res.failures);
      return 0;
    }

    if (btab->parsed()) {
      const LoadedCsv data = load_csv(btab_data);
      TabularRunConfig cfg;
      cfg.split = parse_split(btab_split);
      cfg.variant = parse_variant(btab_variant);
      cfg.standardize_target = !btab_no_standardize;
      if (btab_max_iters > 0) cfg.max_iters = btab_max_iters;
      cfg.methods.clear();
      std::string cur;
      for (char c : btab_methods + ",") {
        if (c == ',') {
          if (!cur.empty()) cfg.methods.push_back(cur);
          cur.clear();
        } else {
          cur.push_back(c);
        }
      }
      const TabularBenchResult res = bench_tabular(data.data, cfg, btab_runs, btab_seed);

      std::vector<std::vector<double>> rows;
      for (std::size_t r = 0; r < res.runs.size(); ++r) {
        if (!res.runs[r].ok) continue;
        for (std::size_t m = 0; m < res.runs[r].methods.size(); ++m) {
          const auto& ms = res.runs[r].methods[m];
          rows.push_back({static_cast<double>(r), static_cast<double>(m),
                          ms.breakdown.crps_mean, ms.cal_err_pct});
        }
      }
      const std::vector<std::string> rheader = {"run", "method_index", "crps", "cal_err_pct"};
      write_table_csv(btab_prefix + "_runs.csv", rheader, rows);

      nlohmann::json medians = nlohmann::json::object();
      for (const auto& [name, v] : res.median_crps) {
        medians[name] = {{"crps", v}, {"cal_err_pct", res.median_cal_err.at(name)}};
        if (auto it = res.median_extra.find(name); it != res.median_extra.end()) {
          for (const auto& [k, ev] : it->second) medians[name][k] = ev;
        }
      }
      nlohmann::json summary = {{"command", command},
                                {"data", btab_data},
                                {"runs", btab_runs},
                                {"failures", res.failures},
                                {"methods", medians},
                                {"seed", btab_seed}};
      write_json(btab_prefix + "_summary.json", summary);
      for (const auto& [name, v] : res.median_crps) {
        std::printf("%-8s median crps=%.4f cal_err=%.2f%%\n", name.c_str(), v,
                    res.median_cal_err.at(name));
      }
      if (res.failures > 0) std::printf("%d run(s) failed and were excluded\n", res.failures);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
