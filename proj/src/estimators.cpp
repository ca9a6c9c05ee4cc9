#include "calibra/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "calibra/datasets.hpp"
#include "calibra/special.hpp"

namespace calibra {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double error_std(std::span<const double> eps) {
  const double n = static_cast<double>(eps.size());
  const double mean = std::accumulate(eps.begin(), eps.end(), 0.0) / n;
  double v = 0.0;
  for (double e : eps) v += (e - mean) * (e - mean);
  return std::sqrt(v / n);
}

// Mean NLPD and its sigma-gradient.
double nlpd_value_grad(std::span<const double> eps, std::span<const double> sig,
                       std::vector<double>* grad) {
  const double nn = static_cast<double>(eps.size());
  double s = 0.0;
  if (grad) grad->resize(eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) {
    s += nlpd(eps[i], sig[i]);
    if (grad) {
      const double si = sig[i];
      (*grad)[i] = (1.0 / si - eps[i] * eps[i] / (si * si * si)) / nn;
    }
  }
  return s / nn;
}

// Shared sigma-space objective: value and d/dsigma for the chosen loss.
// For the AR loss beta is cached once by the caller.
struct SigmaLoss {
  FitLoss loss;
  RsVariant variant;
  double beta;  // meaningful for loss == ar
  std::span<const double> eps;

  double operator()(std::span<const double> sig, std::vector<double>* grad) const {
    switch (loss) {
      case FitLoss::ar:
        return ar_fixed_beta(eps, sig, variant, beta, grad);
      case FitLoss::crps:
        return ar_fixed_beta(eps, sig, variant, 1.0, grad);
      case FitLoss::nlpd:
        return nlpd_value_grad(eps, sig, grad);
    }
    return 0.0;
  }
};

SigmaLoss make_sigma_loss(FitLoss loss, RsVariant variant, std::span<const double> eps) {
  double beta = 1.0;
  if (loss == FitLoss::ar) beta = ar_beta(eps, variant);
  return SigmaLoss{loss, variant, beta, eps};
}

}  // namespace

double PolynomialVarianceModel::value_at(double x) const {
  double v = 0.0;
  for (std::size_t l = theta.size(); l-- > 0;) v = v * x + theta[l];
  return v;
}

double NetworkVarianceModel::sigma_at(std::span<const double> x) const {
  std::vector<double> z(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) z[j] = (x[j] - x_mean[j]) / x_scale[j];
  return std::exp(net.forward(z));
}

NonPositiveSigmaError::NonPositiveSigmaError(double x_, double sigma_)
    : std::runtime_error("polynomial variance model predicts sigma = " +
                         std::to_string(sigma_) + " <= 0 at x = " + std::to_string(x_)),
      x(x_),
      sigma(sigma_) {}

double predict_sigma(const VarianceModel& model, std::span<const double> x) {
  return std::visit(
      [&](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, PolynomialVarianceModel>) {
          if (x.size() != 1) {
            throw std::invalid_argument("polynomial variance model is 1-D");
          }
          const double s = m.value_at(x[0]);
          if (!(s > 0.0)) throw NonPositiveSigmaError(x[0], s);
          return s;
        } else if constexpr (std::is_same_v<T, NetworkVarianceModel>) {
          if (x.size() != m.net.input_dim()) {
            throw std::invalid_argument("network variance model: input dimension mismatch");
          }
          return m.sigma_at(x);
        } else {
          throw std::invalid_argument(
              "pointwise sigmas are tied to their sample; no x -> sigma prediction");
        }
      },
      model);
}

std::size_t model_input_dim(const VarianceModel& model) {
  if (std::holds_alternative<PolynomialVarianceModel>(model)) return 1;
  if (const auto* net = std::get_if<NetworkVarianceModel>(&model)) return net->net.input_dim();
  return 0;
}

std::string model_kind(const VarianceModel& model) {
  if (std::holds_alternative<PolynomialVarianceModel>(model)) return "polynomial";
  if (std::holds_alternative<NetworkVarianceModel>(model)) return "network";
  return "pointwise";
}

nlohmann::json variance_model_to_json(const VarianceModel& model) {
  nlohmann::json j;
  j["kind"] = model_kind(model);
  j["input_dim"] = model_input_dim(model);
  j["standardization"] = nullptr;
  if (const auto* poly = std::get_if<PolynomialVarianceModel>(&model)) {
    j["parameters"] = {{"theta", poly->theta}};
  } else if (const auto* net = std::get_if<NetworkVarianceModel>(&model)) {
    j["standardization"] = {{"x_mean", net->x_mean}, {"x_scale", net->x_scale}};
    j["parameters"] = {
        {"weights", std::vector<double>(net->net.params().begin(), net->net.params().end())}};
  } else {
    const auto& pw = std::get<PointwiseSigmas>(model);
    j["parameters"] = {{"sigmas", pw.sigmas}};
  }
  return j;
}

VarianceModel variance_model_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "polynomial") {
    PolynomialVarianceModel m;
    m.theta = j.at("parameters").at("theta").get<std::vector<double>>();
    return m;
  }
  if (kind == "network") {
    NetworkVarianceModel m(j.at("input_dim").get<std::size_t>());
    m.x_mean = j.at("standardization").at("x_mean").get<std::vector<double>>();
    m.x_scale = j.at("standardization").at("x_scale").get<std::vector<double>>();
    const auto w = j.at("parameters").at("weights").get<std::vector<double>>();
    if (w.size() != m.net.param_count()) {
      throw std::runtime_error("variance model: weight count mismatch");
    }
    std::copy(w.begin(), w.end(), m.net.params().begin());
    return m;
  }
  if (kind == "pointwise") {
    PointwiseSigmas m;
    m.sigmas = j.at("parameters").at("sigmas").get<std::vector<double>>();
    return m;
  }
  throw std::runtime_error("variance model: unknown kind '" + kind + "'");
}

ScoreBreakdown evaluate_forecasts(std::span<const double> epsilons,
                                  std::span<const double> sigmas, RsVariant variant) {
  return ar_cost(epsilons, sigmas, variant).breakdown;
}

std::pair<PolynomialVarianceModel, FitReport> fit_polynomial(
    std::span<const ErrorSample> samples, const PolyFitOptions& opts) {
  const std::size_t n = samples.size();
  if (n < 3) throw std::invalid_argument("fit_polynomial: need at least 3 samples");
  std::vector<double> xs(n), eps(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (samples[i].x.size() != 1) {
      throw std::invalid_argument("fit_polynomial: inputs must be 1-D");
    }
    xs[i] = samples[i].x[0];
    eps[i] = samples[i].epsilon;
  }
  const SigmaLoss sigma_loss = make_sigma_loss(opts.loss, opts.variant, eps);

  // Powers of x up to p_max, column-major by order.
  std::vector<std::vector<double>> pow(opts.p_max + 1, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) pow[0][i] = 1.0;
  for (int l = 1; l <= opts.p_max; ++l) {
    for (std::size_t i = 0; i < n; ++i) pow[l][i] = pow[l - 1][i] * xs[i];
  }

  auto objective_for_order = [&](int order) {
    return [&, order](std::span<const double> theta, std::span<double> grad) -> double {
      std::vector<double> sig(n, 0.0);
      for (int l = 0; l <= order; ++l) {
        for (std::size_t i = 0; i < n; ++i) sig[i] += theta[l] * pow[l][i];
      }
      for (std::size_t i = 0; i < n; ++i) {
        if (!(sig[i] > 0.0)) {
          std::fill(grad.begin(), grad.end(), 0.0);
          return kInf;  // infeasible; the line search backs off
        }
      }
      std::vector<double> dsig;
      const double v = sigma_loss(sig, &dsig);
      for (int l = 0; l <= order; ++l) {
        double g = 0.0;
        for (std::size_t i = 0; i < n; ++i) g += dsig[i] * pow[l][i];
        grad[l] = g;
      }
      return v;
    };
  };

  auto cost_of = [&](std::span<const double> theta, int order) -> double {
    std::vector<double> sig(n, 0.0);
    for (int l = 0; l <= order; ++l) {
      for (std::size_t i = 0; i < n; ++i) sig[i] += theta[l] * pow[l][i];
    }
    for (double s : sig) {
      if (!(s > 0.0)) return kInf;
    }
    return sigma_loss(sig, nullptr);
  };

  // Dense positivity check over the training domain (not just the training
  // inputs; a fitted order can dip negative between them).
  double x_lo, x_hi;
  if (opts.positivity_range) {
    x_lo = opts.positivity_range->first;
    x_hi = opts.positivity_range->second;
  } else {
    const auto [lo_it, hi_it] = std::minmax_element(xs.begin(), xs.end());
    x_lo = *lo_it;
    x_hi = *hi_it;
  }
  auto positive_on_domain = [&](const PolynomialVarianceModel& m) {
    constexpr int kGrid = 512;
    for (int i = 0; i <= kGrid; ++i) {
      const double x = x_lo + (x_hi - x_lo) * i / kGrid;
      if (!(m.value_at(x) > 0.0)) return false;
    }
    return true;
  };

  PolynomialVarianceModel model;
  double s0 = error_std(eps);
  if (!(s0 > 0.0)) {
    double ma = 0.0;
    for (double e : eps) ma = std::max(ma, std::fabs(e));
    s0 = ma > 0.0 ? 0.5 * ma : 1e-6;
  }
  model.theta = {s0};

  FitReport report;
  double cost_cur = cost_of(model.theta, 0);
  report.order_trace.emplace_back(0, cost_cur);

  OptimOptions oopts = opts.optim;
  for (int p = 1; p <= opts.p_max && std::isfinite(opts.tol); ++p) {
    std::vector<double> guess = model.theta;
    guess.push_back(0.0);

    // Warm start already a local minimum for this order: terminate.
    {
      std::vector<double> g(guess.size());
      auto obj = objective_for_order(p);
      obj(guess, g);
      double gn = 0.0;
      for (double v : g) gn = std::max(gn, std::fabs(v));
      if (gn <= oopts.grad_tol) break;
    }

    oopts.seed = opts.optim.seed + static_cast<std::uint64_t>(p);
    OptimResult res = minimize(objective_for_order(p), guess, oopts);
    report.order_trace.emplace_back(p, res.objective);

    PolynomialVarianceModel candidate{res.x};
    if (!positive_on_domain(candidate)) {
      report.warning = "order " + std::to_string(p) +
                       " rejected: sigma(x) nonpositive on the training domain";
      break;
    }
    const double improvement = cost_cur - res.objective;
    if (!(improvement > opts.tol)) break;
    model = std::move(candidate);
    cost_cur = res.objective;
  }

  std::vector<double> sig(n);
  for (std::size_t i = 0; i < n; ++i) sig[i] = model.value_at(xs[i]);
  report.train = evaluate_forecasts(eps, sig, opts.variant);
  return {std::move(model), std::move(report)};
}

std::pair<NetworkVarianceModel, FitReport> fit_network(
    std::span<const ErrorSample> samples, std::span<const std::size_t> train_idx,
    std::span<const std::size_t> val_idx, const NetFitOptions& opts) {
  if (train_idx.size() < 20) {
    throw std::invalid_argument("fit_network: need at least 20 training samples");
  }
  if (val_idx.empty()) throw std::invalid_argument("fit_network: empty validation set");
  const std::size_t d = samples[train_idx[0]].x.size();

  // Input standardization from the train partition.
  std::vector<double> mean(d, 0.0), scale(d, 1.0);
  for (std::size_t i : train_idx) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += samples[i].x[j];
  }
  for (auto& m : mean) m /= static_cast<double>(train_idx.size());
  std::vector<double> var(d, 0.0);
  for (std::size_t i : train_idx) {
    for (std::size_t j = 0; j < d; ++j) {
      const double dv = samples[i].x[j] - mean[j];
      var[j] += dv * dv;
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    var[j] /= static_cast<double>(train_idx.size());
    scale[j] = var[j] > 0.0 ? std::sqrt(var[j]) : 1.0;
  }

  auto flatten = [&](std::span<const std::size_t> idx, std::vector<double>& X,
                     std::vector<double>& e) {
    X.resize(idx.size() * d);
    e.resize(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto& s = samples[idx[r]];
      if (s.x.size() != d) throw std::invalid_argument("fit_network: ragged input dimensions");
      for (std::size_t j = 0; j < d; ++j) X[r * d + j] = (s.x[j] - mean[j]) / scale[j];
      e[r] = s.epsilon;
    }
  };
  std::vector<double> Xtr, Xva, eps_tr, eps_va;
  flatten(train_idx, Xtr, eps_tr);
  flatten(val_idx, Xva, eps_va);

  const SigmaLoss train_loss = make_sigma_loss(opts.loss, opts.variant, eps_tr);
  const SigmaLoss val_loss = make_sigma_loss(opts.loss, opts.variant, eps_va);

  NetworkVarianceModel model(d);
  model.x_mean = mean;
  model.x_scale = scale;
  Mlp& net = model.net;

  Mlp::BatchCache cache;
  std::vector<double> sig, dsig, dout;
  auto objective = [&](std::span<const double> params, std::span<double> grad) -> double {
    std::copy(params.begin(), params.end(), net.params().begin());
    net.forward_batch(Xtr, eps_tr.size(), cache);
    sig.resize(eps_tr.size());
    for (std::size_t i = 0; i < sig.size(); ++i) {
      if (std::fabs(cache.out[i]) > 300.0) {
        std::fill(grad.begin(), grad.end(), 0.0);
        return kInf;  // exp would overflow: reject the step
      }
      sig[i] = std::exp(cache.out[i]);
    }
    const double v = train_loss(sig, &dsig);
    dout.resize(sig.size());
    for (std::size_t i = 0; i < sig.size(); ++i) dout[i] = dsig[i] * sig[i];
    std::fill(grad.begin(), grad.end(), 0.0);
    net.backward_batch(Xtr, cache, dout, grad);
    return v;
  };

  Mlp::BatchCache vcache;
  std::vector<double> vsig;
  auto validation = [&](std::span<const double> params) -> double {
    std::copy(params.begin(), params.end(), net.params().begin());
    net.forward_batch(Xva, eps_va.size(), vcache);
    vsig.resize(eps_va.size());
    for (std::size_t i = 0; i < vsig.size(); ++i) {
      if (std::fabs(vcache.out[i]) > 300.0) return kInf;
      vsig[i] = std::exp(vcache.out[i]);
    }
    return val_loss(vsig, nullptr);
  };

  FitReport report;
  std::optional<std::vector<double>> best_params;
  double best_val = kInf;
  for (int r = 0; r < opts.optim.restarts; ++r) {
    std::mt19937_64 rng(derive_seed(opts.optim.seed, static_cast<std::uint64_t>(r)));
    net.init_random(rng);
    std::vector<double> p0(net.params().begin(), net.params().end());

    RestartTrace trace;
    trace.restart = r;
    OptimOptions oopts = opts.optim;
    oopts.restarts = 1;
    oopts.seed = derive_seed(opts.optim.seed, 1000 + static_cast<std::uint64_t>(r));
    try {
      OptimResult res = minimize(objective, p0, oopts, validation);
      trace.train_objective = res.objective;
      trace.val_objective = res.validation.value_or(kInf);
      trace.iterations = res.iterations;
      trace.converged = res.converged;
      if (!std::isfinite(trace.val_objective) || !std::isfinite(trace.train_objective)) {
        trace.discarded = true;  // divergent training
      } else if (trace.val_objective < best_val) {
        best_val = trace.val_objective;
        best_params = res.x;
        report.chosen_restart = r;
      }
    } catch (const std::exception&) {
      trace.discarded = true;
    }
    report.restarts.push_back(trace);
  }
  if (!best_params) {
    throw std::runtime_error("fit_network: every restart diverged or failed");
  }
  std::copy(best_params->begin(), best_params->end(), net.params().begin());

  // Final per-partition breakdowns.
  net.forward_batch(Xtr, eps_tr.size(), cache);
  sig.resize(eps_tr.size());
  for (std::size_t i = 0; i < sig.size(); ++i) sig[i] = std::exp(cache.out[i]);
  report.train = evaluate_forecasts(eps_tr, sig, opts.variant);
  net.forward_batch(Xva, eps_va.size(), vcache);
  vsig.resize(eps_va.size());
  for (std::size_t i = 0; i < vsig.size(); ++i) vsig[i] = std::exp(vcache.out[i]);
  report.val = evaluate_forecasts(eps_va, vsig, opts.variant);
  return {std::move(model), std::move(report)};
}

std::vector<double> fit_pointwise(std::span<const double> epsilons, RsVariant variant,
                                  FitLoss loss, const OptimOptions& optim) {
  const std::size_t n = epsilons.size();
  if (n < 2) throw std::invalid_argument("fit_pointwise: need at least 2 samples");
  double max_abs = 0.0;
  for (double e : epsilons) max_abs = std::max(max_abs, std::fabs(e));
  const double floor = max_abs > 0.0 ? 1e-12 * max_abs : 1e-12;

  if (loss == FitLoss::crps) {
    // Per-sample closed form: the CRPS decouples across samples.
    std::vector<double> out(n);
    const double c = 1.0 / std::sqrt(kLog2);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::max(std::fabs(epsilons[i]), floor) * c;
    return out;
  }
  if (loss == FitLoss::nlpd) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::max(std::fabs(epsilons[i]), floor);
    return out;
  }

  // Work on RMS-normalized errors: the AR argmin is equivariant under a
  // common positive rescaling of the errors, and normalizing makes the
  // optimization path (and hence the result) share that property.
  double rms = 0.0;
  for (double e : epsilons) rms += e * e;
  rms = std::sqrt(rms / static_cast<double>(n));
  if (!(rms > 0.0)) rms = 1.0;
  std::vector<double> eps_n(n);
  for (std::size_t i = 0; i < n; ++i) eps_n[i] = epsilons[i] / rms;

  const SigmaLoss sigma_loss = make_sigma_loss(loss, variant, eps_n);
  // Optimize t = log sigma to keep sigma positive. The start blends the
  // CRPS-optimal per-sample scale with the sample RMS: starting exactly at
  // |eps|/sqrt(log 2) would tie every |eta| and park the rank-based RS term
  // on a non-smooth point.
  std::vector<double> t0(n);
  const double c = 1.0 / std::sqrt(kLog2);
  const double small = std::max(0.05, floor / rms);
  for (std::size_t i = 0; i < n; ++i) {
    const double blend = 0.5 * std::fabs(eps_n[i]) * c + 0.5;
    t0[i] = std::log(std::max(blend, small));
  }
  std::vector<double> sig(n), dsig;
  auto objective = [&](std::span<const double> t, std::span<double> grad) -> double {
    for (std::size_t i = 0; i < n; ++i) {
      if (std::fabs(t[i]) > 300.0) {
        std::fill(grad.begin(), grad.end(), 0.0);
        return kInf;
      }
      sig[i] = std::exp(t[i]);
    }
    const double v = sigma_loss(sig, &dsig);
    for (std::size_t i = 0; i < n; ++i) grad[i] = dsig[i] * sig[i];
    return v;
  };
  OptimResult res = minimize(objective, t0, optim);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = rms * std::exp(res.x[i]);
  return out;
}

}  // namespace calibra
