#include "calibra/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

#include "calibra/reliability.hpp"
#include "calibra/special.hpp"

namespace calibra {

namespace {

double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

void parallel_runs(std::size_t count, const std::function<void(std::size_t)>& fn) {
  const std::size_t nt = std::min<std::size_t>(static_cast<std::size_t>(thread_cap()), count);
  if (nt <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(nt);
  for (std::size_t t = 0; t < nt; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count;) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

nlohmann::json provenance_json(const Provenance& p) {
  return {{"source", p.source}, {"seed", p.seed}, {"rng", p.rng}, {"file_hash", p.file_hash}};
}

nlohmann::json splits_json(const SplitSpec& spec, const SplitIndices& idx) {
  return {{"train", spec.train}, {"val", spec.val},     {"test", spec.test},
          {"seed", spec.seed},   {"sizes", {idx.train.size(), idx.val.size(), idx.test.size()}}};
}

nlohmann::json standardizer_json(const Standardizer& s) {
  return {{"x_mean", s.x_mean},
          {"x_scale", s.x_scale},
          {"y_mean", s.y_mean},
          {"y_scale", s.y_scale},
          {"include_y", s.include_y}};
}

Standardizer standardizer_from_json(const nlohmann::json& j) {
  Standardizer s;
  s.x_mean = j.at("x_mean").get<std::vector<double>>();
  s.x_scale = j.at("x_scale").get<std::vector<double>>();
  s.y_mean = j.at("y_mean").get<double>();
  s.y_scale = j.at("y_scale").get<double>();
  s.include_y = j.at("include_y").get<bool>();
  return s;
}

std::string variant_name(RsVariant v) {
  return v == RsVariant::practical ? "practical" : "exact";
}

std::vector<ErrorSample> pick(std::span<const ErrorSample> samples,
                              std::span<const std::size_t> idx) {
  std::vector<ErrorSample> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(samples[i]);
  return out;
}

std::vector<double> epsilons_of(std::span<const ErrorSample> samples,
                                std::span<const std::size_t> idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(samples[i].epsilon);
  return out;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  const double denom = std::sqrt(saa * sbb);
  return denom > 0.0 ? sab / denom : 0.0;
}

}  // namespace

int thread_cap() {
  if (const char* env = std::getenv("CALIBRA_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

nlohmann::json run_report_to_json(const RunReport& report) {
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& m : report.methods) {
    nlohmann::json jm = {{"name", m.name},
                         {"crps", m.breakdown.crps_mean},
                         {"rs", m.breakdown.rs},
                         {"ar", m.breakdown.ar},
                         {"nlpd", m.breakdown.nlpd_mean},
                         {"beta", m.breakdown.beta},
                         {"cal_err_pct", m.cal_err_pct},
                         {"n", m.breakdown.n}};
    for (const auto& [k, v] : m.extra) jm[k] = v;
    methods.push_back(std::move(jm));
  }
  nlohmann::json j = {{"version", report.version},
                      {"command", report.command},
                      {"provenance", report.provenance},
                      {"splits", report.splits},
                      {"rs_variant", report.rs_variant},
                      {"methods", std::move(methods)},
                      {"timing_s", report.timing_s},
                      {"seeds", report.seeds}};
  if (!report.extra.is_null()) j["extra"] = report.extra;
  return j;
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

nlohmann::json model_bundle_to_json(const ModelBundle& bundle) {
  nlohmann::json j;
  j["version"] = 1;
  j["rs_variant"] = variant_name(bundle.variant);
  j["mean"] = mean_model_to_json(bundle.mean);
  j["variance"] = variance_model_to_json(bundle.variance);
  j["target_standardization"] =
      bundle.target_standardizer ? standardizer_json(*bundle.target_standardizer)
                                 : nlohmann::json(nullptr);
  return j;
}

ModelBundle model_bundle_from_json(const nlohmann::json& j) {
  ModelBundle b;
  b.variant = j.at("rs_variant").get<std::string>() == "exact" ? RsVariant::exact
                                                               : RsVariant::practical;
  b.mean = mean_model_from_json(j.at("mean"));
  b.variance = variance_model_from_json(j.at("variance"));
  if (!j.at("target_standardization").is_null()) {
    b.target_standardizer = standardizer_from_json(j.at("target_standardization"));
  }
  return b;
}

MethodScores score_method(const std::string& name, std::span<const double> epsilons,
                          std::span<const double> sigmas, RsVariant variant) {
  MethodScores m;
  m.name = name;
  m.breakdown = ar_cost(epsilons, sigmas, variant).breakdown;
  const StandardizedErrors se = standardize(epsilons, sigmas);
  std::vector<double> phis(se.etas.size());
  for (std::size_t i = 0; i < se.etas.size(); ++i) phis[i] = phi(se.etas[i]);
  m.cal_err_pct = calibration_error(phis);
  return m;
}

// ---------------------------------------------------------------------------
// Toy protocol
// ---------------------------------------------------------------------------

ToyRunResult run_toy_once(const ToyRunConfig& cfg) {
  ToyRunResult res;
  try {
    const std::uint64_t seed_data = derive_seed(cfg.seed, 1);
    const std::uint64_t seed_split = derive_seed(cfg.seed, 2);
    const std::uint64_t seed_fit = derive_seed(cfg.seed, 3);
    const std::uint64_t seed_fresh = derive_seed(cfg.seed, 4);

    const Dataset data = gen_toy(cfg.dataset, cfg.n, seed_data);
    SplitSpec spec = cfg.split;
    spec.seed = seed_split;
    const SplitIndices idx = split(data.n(), spec);

    MeanModel mean;
    if (cfg.mean == "exact") {
      mean = ExactToyMean{cfg.dataset};
    } else if (cfg.mean == "kernel-ridge") {
      mean = fit_kernel_ridge(subset(data, idx.train), subset(data, idx.val));
    } else {
      throw std::invalid_argument("toy protocol: mean must be 'exact' or 'kernel-ridge'");
    }
    const std::vector<ErrorSample> samples = residuals(data, mean);

    VarianceModel model = PointwiseSigmas{};
    if (cfg.estimator == "poly") {
      PolyFitOptions opts;
      opts.loss = cfg.loss;
      opts.variant = cfg.variant;
      opts.optim.seed = seed_fit;
      opts.positivity_range = toy_domain(cfg.dataset);
      if (cfg.max_iters) opts.optim.max_iters = *cfg.max_iters;
      const auto train_samples = pick(samples, idx.train);
      model = fit_polynomial(train_samples, opts).first;
    } else if (cfg.estimator == "network") {
      NetFitOptions opts;
      opts.loss = cfg.loss;
      opts.variant = cfg.variant;
      opts.optim.seed = seed_fit;
      if (cfg.max_iters) opts.optim.max_iters = *cfg.max_iters;
      model = fit_network(samples, idx.train, idx.val, opts).first;
    } else if (cfg.estimator == "pointwise") {
      const std::vector<double> eps = epsilons_of(samples, idx.train);
      OptimOptions oopts;
      oopts.seed = seed_fit;
      if (cfg.max_iters) oopts.max_iters = *cfg.max_iters;
      model = PointwiseSigmas{fit_pointwise(eps, cfg.variant, cfg.loss, oopts)};
    } else {
      throw std::invalid_argument("toy protocol: unknown estimator '" + cfg.estimator + "'");
    }

    // Test-partition scores. The pointwise diagnostic has no x -> sigma
    // map, so it is scored on the sample it was fitted to.
    if (cfg.estimator == "pointwise") {
      const std::vector<double> eps = epsilons_of(samples, idx.train);
      res.test = score_method("pointwise", eps, std::get<PointwiseSigmas>(model).sigmas,
                              cfg.variant);
    } else {
      std::vector<double> eps = epsilons_of(samples, idx.test);
      std::vector<double> sig(idx.test.size());
      for (std::size_t r = 0; r < idx.test.size(); ++r) {
        sig[r] = predict_sigma(model, data.x_row(idx.test[r]));
      }
      res.test = score_method(cfg.estimator + "-" +
                                  (cfg.loss == FitLoss::ar
                                       ? "ar"
                                       : (cfg.loss == FitLoss::crps ? "crps" : "nlpd")),
                              eps, sig, cfg.variant);
    }

    // Recovery of the true noise function.
    if (data.dim == 1 && cfg.estimator != "pointwise") {
      const auto [lo, hi] = toy_domain(cfg.dataset);
      res.grid_x.resize(cfg.grid_points);
      res.grid_sigma_true.resize(cfg.grid_points);
      res.grid_sigma_pred.resize(cfg.grid_points);
      double se = 0.0;
      for (std::size_t g = 0; g < cfg.grid_points; ++g) {
        const double x = lo + (hi - lo) * static_cast<double>(g) /
                                  static_cast<double>(cfg.grid_points - 1);
        res.grid_x[g] = x;
        res.grid_sigma_true[g] = toy_sigma(cfg.dataset, {&x, 1});
        if (const auto* poly = std::get_if<PolynomialVarianceModel>(&model)) {
          res.grid_sigma_pred[g] = poly->value_at(x);  // raw: off-domain dips count as error
        } else {
          res.grid_sigma_pred[g] = predict_sigma(model, {&x, 1});
        }
        const double d = res.grid_sigma_pred[g] - res.grid_sigma_true[g];
        se += d * d;
      }
      res.rmse_sigma = std::sqrt(se / static_cast<double>(cfg.grid_points));
      res.pearson_sigma = pearson(res.grid_sigma_pred, res.grid_sigma_true);
    }
    if (cfg.fresh_points > 0 && cfg.estimator != "pointwise") {
      const Dataset fresh = gen_toy(cfg.dataset, cfg.fresh_points, seed_fresh);
      std::vector<double> pred(fresh.n());
      for (std::size_t i = 0; i < fresh.n(); ++i) {
        pred[i] = predict_sigma(model, fresh.x_row(i));
      }
      res.pearson_sigma = pearson(pred, fresh.true_sigma);
      double se = 0.0;
      for (std::size_t i = 0; i < fresh.n(); ++i) {
        const double d = pred[i] - fresh.true_sigma[i];
        se += d * d;
      }
      res.rmse_sigma = std::sqrt(se / static_cast<double>(fresh.n()));
    }
    res.ok = true;
  } catch (const std::exception& e) {
    res.ok = false;
    res.error = e.what();
  }
  return res;
}

ToyBenchResult bench_toy(const ToyRunConfig& base, int runs, std::uint64_t master_seed) {
  ToyBenchResult out;
  out.runs.resize(runs);
  parallel_runs(static_cast<std::size_t>(runs), [&](std::size_t r) {
    ToyRunConfig cfg = base;
    cfg.seed = derive_seed(master_seed, r);
    out.runs[r] = run_toy_once(cfg);
  });

  std::vector<double> rmses, crpss, cals;
  for (const auto& r : out.runs) {
    if (!r.ok) {
      ++out.failures;
      continue;
    }
    rmses.push_back(r.rmse_sigma);
    crpss.push_back(r.test.breakdown.crps_mean);
    cals.push_back(r.test.cal_err_pct);
  }
  out.median_rmse = median_of(rmses);
  out.median_crps = median_of(crpss);
  out.median_cal_err = median_of(cals);

  // Run-ensemble band over the grid (1-D runs only).
  const ToyRunResult* first_ok = nullptr;
  for (const auto& r : out.runs) {
    if (r.ok && !r.grid_x.empty()) {
      first_ok = &r;
      break;
    }
  }
  if (first_ok) {
    const std::size_t g = first_ok->grid_x.size();
    out.grid_x = first_ok->grid_x;
    out.sigma_true = first_ok->grid_sigma_true;
    out.band_mean.assign(g, 0.0);
    out.band_std.assign(g, 0.0);
    std::size_t count = 0;
    for (const auto& r : out.runs) {
      if (!r.ok || r.grid_sigma_pred.size() != g) continue;
      ++count;
      for (std::size_t i = 0; i < g; ++i) out.band_mean[i] += r.grid_sigma_pred[i];
    }
    for (auto& m : out.band_mean) m /= static_cast<double>(count);
    for (const auto& r : out.runs) {
      if (!r.ok || r.grid_sigma_pred.size() != g) continue;
      for (std::size_t i = 0; i < g; ++i) {
        const double d = r.grid_sigma_pred[i] - out.band_mean[i];
        out.band_std[i] += d * d;
      }
    }
    for (auto& s : out.band_std) s = std::sqrt(s / static_cast<double>(count));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tabular protocol
// ---------------------------------------------------------------------------

const MethodScores* TabularRunResult::find(const std::string& name) const {
  for (const auto& m : methods) {
    if (m.name == name) return &m;
  }
  return nullptr;
}

TabularRunResult run_tabular_once(const Dataset& raw, const TabularRunConfig& cfg) {
  TabularRunResult res;
  try {
    const std::uint64_t seed_split = derive_seed(cfg.seed, 1);
    const std::uint64_t seed_mean = derive_seed(cfg.seed, 2);
    const std::uint64_t seed_ar = derive_seed(cfg.seed, 3);
    const std::uint64_t seed_crps = derive_seed(cfg.seed, 4);
    const std::uint64_t seed_km = derive_seed(cfg.seed, 5);

    SplitSpec spec = cfg.split;
    spec.seed = seed_split;
    const SplitIndices idx = split(raw.n(), spec);

    // Inputs are always standardized on train statistics; the target too
    // when requested (the default for real-world runs).
    const Standardizer st = fit_standardizer(subset(raw, idx.train), cfg.standardize_target);
    const Dataset data = apply_standardizer(st, raw);

    NetFitOptions mean_opts;
    mean_opts.optim.seed = seed_mean;
    if (cfg.max_iters) mean_opts.optim.max_iters = *cfg.max_iters;
    const MeanModel mean = fit_network_mse(data, idx.train, idx.val, mean_opts);
    const std::vector<ErrorSample> samples = residuals(data, mean);

    const std::vector<double> eps_test = epsilons_of(samples, idx.test);
    const std::vector<double> eps_train = epsilons_of(samples, idx.train);
    const std::vector<double> eps_val = epsilons_of(samples, idx.val);

    const bool want_ar = std::find(cfg.methods.begin(), cfg.methods.end(), "ar") != cfg.methods.end();
    const bool want_recal =
        std::find(cfg.methods.begin(), cfg.methods.end(), "recal") != cfg.methods.end();

    // The AR network backs both the "ar" row and the recalibration method.
    std::optional<NetworkVarianceModel> ar_model;
    if (want_ar || want_recal) {
      NetFitOptions opts;
      opts.loss = FitLoss::ar;
      opts.variant = cfg.variant;
      opts.optim.seed = seed_ar;
      if (cfg.max_iters) opts.optim.max_iters = *cfg.max_iters;
      ar_model = fit_network(samples, idx.train, idx.val, opts).first;
    }

    for (const std::string& name : cfg.methods) {
      if (name == "ar") {
        std::vector<double> sig(idx.test.size());
        for (std::size_t r = 0; r < idx.test.size(); ++r) {
          sig[r] = ar_model->sigma_at(data.x_row(idx.test[r]));
        }
        res.methods.push_back(score_method("ar", eps_test, sig, cfg.variant));
      } else if (name == "crps") {
        NetFitOptions opts;
        opts.loss = FitLoss::crps;
        opts.variant = cfg.variant;
        opts.optim.seed = seed_crps;
        if (cfg.max_iters) opts.optim.max_iters = *cfg.max_iters;
        const NetworkVarianceModel m = fit_network(samples, idx.train, idx.val, opts).first;
        std::vector<double> sig(idx.test.size());
        for (std::size_t r = 0; r < idx.test.size(); ++r) {
          sig[r] = m.sigma_at(data.x_row(idx.test[r]));
        }
        res.methods.push_back(score_method("crps", eps_test, sig, cfg.variant));
      } else if (name == "kmeans") {
        // Flatten the train inputs once.
        std::vector<double> x_train(idx.train.size() * data.dim);
        for (std::size_t r = 0; r < idx.train.size(); ++r) {
          const auto row = data.x_row(idx.train[r]);
          std::copy(row.begin(), row.end(), &x_train[r * data.dim]);
        }
        // k is chosen on the validation partition (separately for the CRPS
        // and the calibration column), then scored on test.
        double best_val_crps = std::numeric_limits<double>::infinity();
        double best_val_cal = std::numeric_limits<double>::infinity();
        int best_cal_k = 0, best_crps_k = 0;
        std::vector<KMeansSigmaModel> models;
        const int k_max = std::min<int>(cfg.kmeans_k_max,
                                        static_cast<int>(idx.train.size()));
        for (int k = 1; k <= k_max; ++k) {
          models.push_back(
              fit_kmeans_sigma(x_train, data.dim, eps_train, static_cast<std::size_t>(k),
                               derive_seed(seed_km, static_cast<std::uint64_t>(k))));
          std::vector<double> sig(idx.val.size());
          for (std::size_t r = 0; r < idx.val.size(); ++r) {
            sig[r] = models.back().sigma_at(data.x_row(idx.val[r]));
          }
          const MethodScores s = score_method("kmeans", eps_val, sig, cfg.variant);
          if (s.breakdown.crps_mean < best_val_crps) {
            best_val_crps = s.breakdown.crps_mean;
            best_crps_k = k;
          }
          if (s.cal_err_pct < best_val_cal) {
            best_val_cal = s.cal_err_pct;
            best_cal_k = k;
          }
        }
        auto test_scores_of = [&](int k) {
          std::vector<double> sig(idx.test.size());
          for (std::size_t r = 0; r < idx.test.size(); ++r) {
            sig[r] = models[k - 1].sigma_at(data.x_row(idx.test[r]));
          }
          return score_method("kmeans", eps_test, sig, cfg.variant);
        };
        // Table convention: the CRPS column comes from the best-CRPS k,
        // the calibration column from the best-calibrated k.
        MethodScores row = test_scores_of(best_cal_k);
        row.extra["best_crps"] = test_scores_of(best_crps_k).breakdown.crps_mean;
        row.extra["best_crps_k"] = best_crps_k;
        row.extra["best_cal_k"] = best_cal_k;
        row.breakdown.crps_mean = row.extra["best_crps"];
        res.methods.push_back(std::move(row));
      } else if (name == "recal") {
        // Kuleshov protocol: map fitted on the validation partition from
        // the AR model's predicted probabilities, applied to test.
        std::vector<double> sig_val(idx.val.size());
        for (std::size_t r = 0; r < idx.val.size(); ++r) {
          sig_val[r] = ar_model->sigma_at(data.x_row(idx.val[r]));
        }
        const StandardizedErrors se = standardize(eps_val, sig_val);
        std::vector<double> phis(se.etas.size());
        for (std::size_t i = 0; i < se.etas.size(); ++i) phis[i] = phi(se.etas[i]);
        const RecalibrationMap map = fit_recalibration(phis);

        std::vector<GaussianForecast> forecasts(idx.test.size());
        std::vector<double> y(idx.test.size());
        for (std::size_t r = 0; r < idx.test.size(); ++r) {
          const std::size_t i = idx.test[r];
          const double mu = data.y[i] - eps_test[r];  // f(x_i)
          forecasts[r] = {mu, ar_model->sigma_at(data.x_row(i))};
          y[r] = data.y[i];
        }
        const RecalResult rr = score_recalibrated(map, forecasts, y);
        MethodScores m;
        m.name = "recal";
        m.breakdown = rr.breakdown;
        m.cal_err_pct = rr.cal_err_pct;
        res.methods.push_back(std::move(m));
      } else {
        throw std::invalid_argument("bench tabular: unknown method '" + name + "'");
      }
    }
    res.ok = true;
  } catch (const std::exception& e) {
    res.ok = false;
    res.error = e.what();
  }
  return res;
}

TabularBenchResult bench_tabular(const Dataset& raw, const TabularRunConfig& base,
                                 int runs, std::uint64_t master_seed) {
  TabularBenchResult out;
  out.runs.resize(runs);
  parallel_runs(static_cast<std::size_t>(runs), [&](std::size_t r) {
    TabularRunConfig cfg = base;
    cfg.seed = derive_seed(master_seed, r);
    out.runs[r] = run_tabular_once(raw, cfg);
  });

  std::map<std::string, std::vector<double>> crps, cal;
  std::map<std::string, std::map<std::string, std::vector<double>>> extra;
  for (const auto& r : out.runs) {
    if (!r.ok) {
      ++out.failures;
      continue;
    }
    for (const auto& m : r.methods) {
      crps[m.name].push_back(m.breakdown.crps_mean);
      cal[m.name].push_back(m.cal_err_pct);
      for (const auto& [k, v] : m.extra) extra[m.name][k].push_back(v);
    }
  }
  for (const auto& [name, v] : crps) out.median_crps[name] = median_of(v);
  for (const auto& [name, v] : cal) out.median_cal_err[name] = median_of(v);
  for (const auto& [name, kv] : extra) {
    for (const auto& [k, v] : kv) out.median_extra[name][k] = median_of(v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Single fit / eval
// ---------------------------------------------------------------------------

namespace {

std::vector<double> mean_predictions(const MeanModel& mean, const LoadedCsv& data) {
  const Dataset& ds = data.data;
  if (const auto* col = std::get_if<ColumnMean>(&mean)) {
    if (col->column == "true_mean" && !ds.true_mean.empty()) return ds.true_mean;
    for (std::size_t j = 0; j < data.extra_names.size(); ++j) {
      if (data.extra_names[j] == col->column) return data.extra_cols[j];
    }
    throw std::runtime_error("mean column '" + col->column + "' not present in the data");
  }
  std::vector<double> out(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i) out[i] = predict_mean(mean, ds.x_row(i));
  return out;
}

}  // namespace

FitOutcome run_fit(const LoadedCsv& data, const FitConfig& cfg, const std::string& command) {
  const auto t0 = std::chrono::steady_clock::now();
  FitOutcome out;
  out.bundle.variant = cfg.variant;

  const std::uint64_t seed_split = derive_seed(cfg.seed, 1);
  const std::uint64_t seed_mean = derive_seed(cfg.seed, 2);
  const std::uint64_t seed_fit = derive_seed(cfg.seed, 3);

  SplitSpec spec = cfg.split;
  spec.seed = seed_split;
  const SplitIndices idx = split(data.data.n(), spec);

  LoadedCsv working = data;
  if (cfg.standardize_target) {
    const Standardizer st = fit_standardizer(subset(data.data, idx.train), true);
    working.data = apply_standardizer(st, data.data);
    out.bundle.target_standardizer = st;
  }
  const Dataset& ds = working.data;

  if (cfg.mean == "exact") {
    if (ds.true_mean.empty()) {
      throw std::runtime_error("--mean exact requires a true_mean column in the data");
    }
    out.bundle.mean = ColumnMean{"true_mean"};
  } else if (cfg.mean == "kernel-ridge") {
    out.bundle.mean = fit_kernel_ridge(subset(ds, idx.train), subset(ds, idx.val));
  } else if (cfg.mean == "network") {
    NetFitOptions opts;
    opts.optim.seed = seed_mean;
    if (cfg.max_iters) opts.optim.max_iters = *cfg.max_iters;
    out.bundle.mean = fit_network_mse(ds, idx.train, idx.val, opts);
  } else if (cfg.mean.rfind("column:", 0) == 0) {
    out.bundle.mean = ColumnMean{cfg.mean.substr(7)};
  } else {
    throw std::invalid_argument("unknown mean kind '" + cfg.mean + "'");
  }

  std::vector<double> preds = mean_predictions(out.bundle.mean, working);
  if (out.bundle.target_standardizer && std::holds_alternative<ColumnMean>(out.bundle.mean)) {
    const auto* col = std::get_if<ColumnMean>(&out.bundle.mean);
    if (!(col->column == "true_mean")) {
      // Column predictions come in original units; map them alongside y.
      for (auto& p : preds) p = out.bundle.target_standardizer->transform_y(p);
    }
  }
  const std::vector<ErrorSample> samples = residuals_from_predictions(ds, preds);

  if (cfg.estimator == "poly") {
    if (ds.dim != 1) {
      throw std::invalid_argument("--estimator poly supports 1-D inputs only");
    }
    PolyFitOptions opts;
    opts.loss = cfg.loss;
    opts.variant = cfg.variant;
    opts.optim.seed = seed_fit;
    const auto [lo_it, hi_it] = std::minmax_element(ds.x.begin(), ds.x.end());
    opts.positivity_range = {{*lo_it, *hi_it}};
    if (cfg.max_iters) opts.optim.max_iters = *cfg.max_iters;
    auto [model, rep] = fit_polynomial(pick(samples, idx.train), opts);
    out.bundle.variance = std::move(model);
    out.fit_report = std::move(rep);
  } else if (cfg.estimator == "network") {
    NetFitOptions opts;
    opts.loss = cfg.loss;
    opts.variant = cfg.variant;
    opts.optim.seed = seed_fit;
    if (cfg.max_iters) opts.optim.max_iters = *cfg.max_iters;
    auto [model, rep] = fit_network(samples, idx.train, idx.val, opts);
    out.bundle.variance = std::move(model);
    out.fit_report = std::move(rep);
  } else if (cfg.estimator == "pointwise") {
    std::vector<double> eps(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) eps[i] = samples[i].epsilon;
    OptimOptions oopts;
    oopts.seed = seed_fit;
    if (cfg.max_iters) oopts.max_iters = *cfg.max_iters;
    out.pointwise_sigmas = fit_pointwise(eps, cfg.variant, cfg.loss, oopts);
    out.bundle.variance = PointwiseSigmas{out.pointwise_sigmas};
    out.fit_report.train = evaluate_forecasts(eps, out.pointwise_sigmas, cfg.variant);
  } else {
    throw std::invalid_argument("unknown estimator '" + cfg.estimator + "'");
  }

  // Per-partition scores for the report.
  RunReport& rep = out.report;
  rep.command = command;
  rep.provenance = provenance_json(ds.provenance);
  rep.splits = splits_json(spec, idx);
  rep.rs_variant = cfg.variant == RsVariant::practical ? "practical" : "exact";
  rep.seeds = {cfg.seed, seed_split, seed_mean, seed_fit};
  if (cfg.estimator == "pointwise") {
    std::vector<double> eps(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) eps[i] = samples[i].epsilon;
    rep.methods.push_back(
        score_method("pointwise", eps, out.pointwise_sigmas, cfg.variant));
  } else {
    auto eval_partition = [&](const std::string& name, std::span<const std::size_t> part) {
      std::vector<double> eps = epsilons_of(samples, part);
      std::vector<double> sig(part.size());
      for (std::size_t r = 0; r < part.size(); ++r) {
        sig[r] = predict_sigma(out.bundle.variance, ds.x_row(part[r]));
      }
      rep.methods.push_back(score_method(name, eps, sig, cfg.variant));
    };
    eval_partition("train", idx.train);
    eval_partition("val", idx.val);
    eval_partition("test", idx.test);
    out.fit_report.test = rep.methods.back().breakdown;
  }
  rep.extra = {{"estimator", cfg.estimator},
               {"mean", cfg.mean},
               {"loss", cfg.loss == FitLoss::ar ? "ar"
                        : cfg.loss == FitLoss::crps ? "crps" : "nlpd"},
               {"standardize_target", cfg.standardize_target}};
  rep.timing_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

EvalOutcome run_eval(const ModelBundle& bundle, const LoadedCsv& data,
                     const std::string& command) {
  const auto t0 = std::chrono::steady_clock::now();
  EvalOutcome out;

  LoadedCsv working = data;
  if (bundle.target_standardizer) {
    working.data = apply_standardizer(*bundle.target_standardizer, data.data);
  }
  const Dataset& ds = working.data;

  const std::size_t model_dim = model_input_dim(bundle.variance);
  if (model_dim != 0 && model_dim != ds.dim) {
    throw std::runtime_error("model expects " + std::to_string(model_dim) +
                             "-D inputs but the data has " + std::to_string(ds.dim));
  }

  std::vector<double> preds = mean_predictions(bundle.mean, working);
  if (bundle.target_standardizer && std::holds_alternative<ColumnMean>(bundle.mean)) {
    const auto* col = std::get_if<ColumnMean>(&bundle.mean);
    if (!(col->column == "true_mean")) {
      for (auto& p : preds) p = bundle.target_standardizer->transform_y(p);
    }
  }

  std::vector<double> eps(ds.n()), sig(ds.n());
  if (const auto* pw = std::get_if<PointwiseSigmas>(&bundle.variance)) {
    if (pw->sigmas.size() != ds.n()) {
      throw std::runtime_error("pointwise model holds " + std::to_string(pw->sigmas.size()) +
                               " sigmas but the data has " + std::to_string(ds.n()) + " rows");
    }
    sig = pw->sigmas;
  } else {
    for (std::size_t i = 0; i < ds.n(); ++i) {
      sig[i] = predict_sigma(bundle.variance, ds.x_row(i));
    }
  }
  for (std::size_t i = 0; i < ds.n(); ++i) eps[i] = ds.y[i] - preds[i];

  MethodScores scores = score_method(model_kind(bundle.variance), eps, sig, bundle.variant);

  const StandardizedErrors se = standardize(eps, sig);
  std::vector<double> phis(se.etas.size());
  for (std::size_t i = 0; i < se.etas.size(); ++i) phis[i] = phi(se.etas[i]);
  out.diagram = reliability_diagram(phis);

  if (ds.dim == 1) {
    out.sigma_curve_header = {"x", "sigma_pred"};
    const bool truth = ds.has_truth();
    if (truth) out.sigma_curve_header = {"x", "sigma_true", "sigma_pred"};
    std::vector<std::size_t> order(ds.n());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return ds.x[a] < ds.x[b]; });
    for (std::size_t i : order) {
      if (truth) {
        out.sigma_curve.push_back({ds.x[i], ds.true_sigma[i], sig[i]});
      } else {
        out.sigma_curve.push_back({ds.x[i], sig[i]});
      }
    }
  }

  RunReport& rep = out.report;
  rep.command = command;
  rep.provenance = provenance_json(ds.provenance);
  rep.splits = nullptr;
  rep.rs_variant = bundle.variant == RsVariant::practical ? "practical" : "exact";
  rep.methods.push_back(std::move(scores));
  rep.timing_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace calibra
