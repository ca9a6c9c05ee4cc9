#include "calibra/meanfn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace calibra {

namespace {

double sq_dist(std::span<const double> a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double diff = a[j] - b[j];
    s += diff * diff;
  }
  return s;
}

}  // namespace

double predict_mean(const MeanModel& model, std::span<const double> x) {
  return std::visit(
      [&](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ExactToyMean>) {
          return toy_mean(m.toy, x);
        } else if constexpr (std::is_same_v<T, KernelRidgeMean>) {
          if (x.size() != m.dim) {
            throw std::invalid_argument("kernel ridge mean: input dimension mismatch");
          }
          const double inv2l2 = 1.0 / (2.0 * m.length_scale * m.length_scale);
          double s = 0.0;
          for (std::size_t j = 0; j < m.alpha.size(); ++j) {
            s += m.alpha[j] * std::exp(-sq_dist(x, &m.train_x[j * m.dim], m.dim) * inv2l2);
          }
          return s;
        } else if constexpr (std::is_same_v<T, NetworkMean>) {
          if (x.size() != m.net.input_dim()) {
            throw std::invalid_argument("network mean: input dimension mismatch");
          }
          std::vector<double> z(x.size());
          for (std::size_t j = 0; j < x.size(); ++j) z[j] = (x[j] - m.x_mean[j]) / m.x_scale[j];
          return m.net.forward(z) * m.y_scale + m.y_mean;
        } else {
          throw std::invalid_argument(
              "column mean: predictions come from the data file; use residuals_from_predictions");
        }
      },
      model);
}

std::string mean_kind(const MeanModel& model) {
  if (std::holds_alternative<ExactToyMean>(model)) return "exact_toy";
  if (std::holds_alternative<KernelRidgeMean>(model)) return "kernel_ridge";
  if (std::holds_alternative<NetworkMean>(model)) return "network_mse";
  return "column";
}

nlohmann::json mean_model_to_json(const MeanModel& model) {
  nlohmann::json j;
  j["kind"] = mean_kind(model);
  if (const auto* toy = std::get_if<ExactToyMean>(&model)) {
    j["toy"] = toy->toy;
  } else if (const auto* kr = std::get_if<KernelRidgeMean>(&model)) {
    j["input_dim"] = kr->dim;
    j["train_x"] = kr->train_x;
    j["alpha"] = kr->alpha;
    j["length_scale"] = kr->length_scale;
    j["ridge"] = kr->ridge;
  } else if (const auto* nm = std::get_if<NetworkMean>(&model)) {
    j["input_dim"] = nm->net.input_dim();
    j["standardization"] = {{"x_mean", nm->x_mean},
                            {"x_scale", nm->x_scale},
                            {"y_mean", nm->y_mean},
                            {"y_scale", nm->y_scale}};
    j["weights"] = std::vector<double>(nm->net.params().begin(), nm->net.params().end());
  } else {
    j["column"] = std::get<ColumnMean>(model).column;
  }
  return j;
}

MeanModel mean_model_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "exact_toy") return ExactToyMean{j.at("toy").get<std::string>()};
  if (kind == "kernel_ridge") {
    KernelRidgeMean m;
    m.dim = j.at("input_dim").get<std::size_t>();
    m.train_x = j.at("train_x").get<std::vector<double>>();
    m.alpha = j.at("alpha").get<std::vector<double>>();
    m.length_scale = j.at("length_scale").get<double>();
    m.ridge = j.at("ridge").get<double>();
    return m;
  }
  if (kind == "network_mse") {
    NetworkMean m(j.at("input_dim").get<std::size_t>());
    const auto& s = j.at("standardization");
    m.x_mean = s.at("x_mean").get<std::vector<double>>();
    m.x_scale = s.at("x_scale").get<std::vector<double>>();
    m.y_mean = s.at("y_mean").get<double>();
    m.y_scale = s.at("y_scale").get<double>();
    const auto w = j.at("weights").get<std::vector<double>>();
    if (w.size() != m.net.param_count()) throw std::runtime_error("mean model: weight count mismatch");
    std::copy(w.begin(), w.end(), m.net.params().begin());
    return m;
  }
  if (kind == "column") return ColumnMean{j.at("column").get<std::string>()};
  throw std::runtime_error("mean model: unknown kind '" + kind + "'");
}

MeanModel fit_kernel_ridge(const Dataset& train, const Dataset& val, const KrGrid& grid) {
  const std::size_t n = train.n();
  if (n < 5) throw std::invalid_argument("fit_kernel_ridge: need at least 5 training points");
  const std::size_t d = train.dim;

  // Domain width: average per-dimension range of the training inputs.
  double width = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double lo = train.x[j], hi = train.x[j];
    for (std::size_t i = 1; i < n; ++i) {
      lo = std::min(lo, train.x[i * d + j]);
      hi = std::max(hi, train.x[i * d + j]);
    }
    width += hi - lo;
  }
  width /= static_cast<double>(d);
  if (!(width > 0.0)) width = 1.0;

  const double y_mean = std::accumulate(train.y.begin(), train.y.end(), 0.0) / static_cast<double>(n);
  double y_var = 0.0;
  for (double yi : train.y) y_var += (yi - y_mean) * (yi - y_mean);
  y_var /= static_cast<double>(n);
  if (!(y_var > 0.0)) y_var = 1.0;

  Eigen::MatrixXd K(n, n);
  Eigen::VectorXd yv(n);
  for (std::size_t i = 0; i < n; ++i) yv(static_cast<Eigen::Index>(i)) = train.y[i];

  KernelRidgeMean best;
  double best_mse = std::numeric_limits<double>::infinity();
  bool solved_any = false;

  for (double lf : grid.length_scale_factors) {
    const double ell = lf * width;
    const double inv2l2 = 1.0 / (2.0 * ell * ell);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        const double k = std::exp(-sq_dist(train.x_row(i), &train.x[j * d], d) * inv2l2);
        K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = k;
        K(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = k;
      }
    }
    for (double rf : grid.ridge_factors) {
      const double lambda = std::max(rf * y_var, 1e-300);
      Eigen::MatrixXd A = K;
      A.diagonal().array() += lambda;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
      if (ldlt.info() != Eigen::Success) continue;
      Eigen::VectorXd alpha = ldlt.solve(yv);
      if (!alpha.allFinite()) continue;
      solved_any = true;

      KernelRidgeMean m;
      m.dim = d;
      m.train_x = train.x;
      m.alpha.assign(alpha.data(), alpha.data() + n);
      m.length_scale = ell;
      m.ridge = lambda;

      double mse = 0.0;
      for (std::size_t i = 0; i < val.n(); ++i) {
        const double p = predict_mean(MeanModel{m}, val.x_row(i));
        mse += (p - val.y[i]) * (p - val.y[i]);
      }
      mse /= static_cast<double>(val.n());
      if (mse < best_mse) {
        best_mse = mse;
        best = std::move(m);
      }
    }
  }
  if (!solved_any) {
    throw std::runtime_error("fit_kernel_ridge: kernel system singular beyond the ridge floor");
  }
  return best;
}

MeanModel fit_network_mse(const Dataset& data, std::span<const std::size_t> train_idx,
                          std::span<const std::size_t> val_idx, const NetFitOptions& opts) {
  if (train_idx.empty() || val_idx.empty()) {
    throw std::invalid_argument("fit_network_mse: empty partition");
  }
  const std::size_t d = data.dim;
  NetworkMean model(d);

  // Standardize x and y on the train partition.
  Dataset train = subset(data, train_idx);
  Standardizer st = fit_standardizer(train, true);
  model.x_mean = st.x_mean;
  model.x_scale = st.x_scale;
  model.y_mean = st.y_mean;
  model.y_scale = st.y_scale;

  auto flatten = [&](std::span<const std::size_t> idx, std::vector<double>& X,
                     std::vector<double>& t) {
    X.resize(idx.size() * d);
    t.resize(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t j = 0; j < d; ++j) {
        X[r * d + j] = (data.x[idx[r] * d + j] - st.x_mean[j]) / st.x_scale[j];
      }
      t[r] = st.transform_y(data.y[idx[r]]);
    }
  };
  std::vector<double> Xtr, Xva, ttr, tva;
  flatten(train_idx, Xtr, ttr);
  flatten(val_idx, Xva, tva);

  Mlp& net = model.net;
  Mlp::BatchCache cache, vcache;
  std::vector<double> dout;
  auto objective = [&](std::span<const double> params, std::span<double> grad) -> double {
    std::copy(params.begin(), params.end(), net.params().begin());
    net.forward_batch(Xtr, ttr.size(), cache);
    const double nn = static_cast<double>(ttr.size());
    double mse = 0.0;
    dout.resize(ttr.size());
    for (std::size_t i = 0; i < ttr.size(); ++i) {
      const double r = cache.out[i] - ttr[i];
      mse += r * r;
      dout[i] = 2.0 * r / nn;
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    net.backward_batch(Xtr, cache, dout, grad);
    return mse / nn;
  };
  auto validation = [&](std::span<const double> params) -> double {
    std::copy(params.begin(), params.end(), net.params().begin());
    net.forward_batch(Xva, tva.size(), vcache);
    double mse = 0.0;
    for (std::size_t i = 0; i < tva.size(); ++i) {
      const double r = vcache.out[i] - tva[i];
      mse += r * r;
    }
    return mse / static_cast<double>(tva.size());
  };

  std::optional<std::vector<double>> best_params;
  double best_val = std::numeric_limits<double>::infinity();
  for (int r = 0; r < opts.optim.restarts; ++r) {
    std::mt19937_64 rng(derive_seed(opts.optim.seed, 7000 + static_cast<std::uint64_t>(r)));
    net.init_random(rng);
    std::vector<double> p0(net.params().begin(), net.params().end());
    OptimOptions oopts = opts.optim;
    oopts.restarts = 1;
    try {
      OptimResult res = minimize(objective, p0, oopts, validation);
      const double v = res.validation.value_or(std::numeric_limits<double>::infinity());
      if (std::isfinite(v) && v < best_val) {
        best_val = v;
        best_params = res.x;
      }
    } catch (const std::exception&) {
      continue;
    }
  }
  if (!best_params) throw std::runtime_error("fit_network_mse: every restart failed");
  std::copy(best_params->begin(), best_params->end(), net.params().begin());
  return model;
}

std::vector<ErrorSample> residuals(const Dataset& data, const MeanModel& mean) {
  std::vector<ErrorSample> out(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto row = data.x_row(i);
    out[i].x.assign(row.begin(), row.end());
    out[i].epsilon = data.y[i] - predict_mean(mean, row);
  }
  return out;
}

std::vector<ErrorSample> residuals_from_predictions(const Dataset& data,
                                                    std::span<const double> predictions) {
  if (predictions.size() != data.n()) {
    throw std::invalid_argument("residuals_from_predictions: length mismatch");
  }
  std::vector<ErrorSample> out(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto row = data.x_row(i);
    out[i].x.assign(row.begin(), row.end());
    out[i].epsilon = data.y[i] - predictions[i];
  }
  return out;
}

}  // namespace calibra
