#include "calibra/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace calibra {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double inf_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct LinePoint {
  double alpha = 0.0;
  double f = 0.0;
  double g = 0.0;  // directional derivative
};

// Cubic-interpolation minimizer of a bracket, safeguarded to its interior.
double cubic_step(const LinePoint& a, const LinePoint& b) {
  const double d1 = a.g + b.g - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
  const double disc = d1 * d1 - a.g * b.g;
  if (disc < 0.0 || !std::isfinite(disc)) return 0.5 * (a.alpha + b.alpha);
  const double d2 = std::copysign(std::sqrt(disc), b.alpha - a.alpha);
  const double denom = b.g - a.g + 2.0 * d2;
  if (denom == 0.0) return 0.5 * (a.alpha + b.alpha);
  double t = b.alpha - (b.alpha - a.alpha) * (b.g + d2 - d1) / denom;
  const double lo = std::min(a.alpha, b.alpha);
  const double hi = std::max(a.alpha, b.alpha);
  const double margin = 0.1 * (hi - lo);
  if (!std::isfinite(t) || t < lo + margin || t > hi - margin) t = 0.5 * (lo + hi);
  return t;
}

// Evaluates the objective along x + alpha * p.
class LineEval {
 public:
  LineEval(const Objective& f, std::span<const double> x, std::span<const double> p)
      : f_(f), x_(x), p_(p), trial_(x.size()), grad_(x.size()) {}

  LinePoint at(double alpha) {
    for (std::size_t i = 0; i < x_.size(); ++i) trial_[i] = x_[i] + alpha * p_[i];
    const double v = f_(trial_, grad_);
    return {alpha, v, dot(grad_, p_)};
  }

  std::span<const double> trial() const { return trial_; }
  std::span<const double> grad() const { return grad_; }

 private:
  const Objective& f_;
  std::span<const double> x_;
  std::span<const double> p_;
  std::vector<double> trial_;
  std::vector<double> grad_;
};

struct LineResult {
  bool ok = false;
  LinePoint pt;
};

// Strong Wolfe line search (bracket + zoom with cubic interpolation).
LineResult wolfe_search(LineEval& eval, const LinePoint& origin, double c1, double c2,
                        double alpha_init) {
  const double f0 = origin.f;
  const double g0 = origin.g;
  if (g0 >= 0.0) return {};

  auto armijo_ok = [&](const LinePoint& p) { return p.f <= f0 + c1 * p.alpha * g0; };
  auto curvature_ok = [&](const LinePoint& p) { return std::fabs(p.g) <= -c2 * g0; };

  auto zoom = [&](LinePoint lo, LinePoint hi) -> LineResult {
    for (int it = 0; it < 60; ++it) {
      double alpha;
      if (std::isfinite(hi.f) && std::isfinite(lo.f)) {
        alpha = cubic_step(lo, hi);
      } else {
        alpha = 0.5 * (lo.alpha + hi.alpha);
      }
      LinePoint p = eval.at(alpha);
      if (!std::isfinite(p.f) || !armijo_ok(p) || p.f >= lo.f) {
        hi = p;
      } else {
        if (curvature_ok(p)) return {true, p};
        if (p.g * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
        lo = p;
      }
      if (std::fabs(hi.alpha - lo.alpha) < 1e-16 * (1.0 + std::fabs(lo.alpha))) break;
    }
    return (std::isfinite(lo.f) && lo.f < f0) ? LineResult{true, lo} : LineResult{};
  };

  LinePoint prev = origin;
  double alpha = alpha_init;
  for (int it = 0; it < 60; ++it) {
    LinePoint p = eval.at(alpha);
    if (!std::isfinite(p.f) || !armijo_ok(p) || (it > 0 && p.f >= prev.f)) {
      return zoom(prev, p);
    }
    if (curvature_ok(p)) return {true, p};
    if (p.g >= 0.0) return zoom(p, prev);
    prev = p;
    alpha *= 2.0;
    if (alpha > 1e12) break;
  }
  return {};
}

void check_gradient_consistency(const Objective& f, std::span<const double> x0,
                                std::span<const double> g0, double f0,
                                std::mt19937_64& rng) {
  const std::size_t n = x0.size();
  std::vector<double> dir(n);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& d : dir) d = u(rng);
  const double dn = std::sqrt(dot(dir, dir));
  if (dn == 0.0) return;
  for (auto& d : dir) d /= dn;
  const double h = 1e-6 * (1.0 + inf_norm(x0));
  std::vector<double> xp(x0.begin(), x0.end()), xm(x0.begin(), x0.end()), scratch(n);
  for (std::size_t i = 0; i < n; ++i) {
    xp[i] += h * dir[i];
    xm[i] -= h * dir[i];
  }
  const double fd = (f(xp, scratch) - f(xm, scratch)) / (2.0 * h);
  const double an = dot(g0, dir);
  const double scale = std::max({std::fabs(fd), std::fabs(an), 1e-8 * (1.0 + std::fabs(f0))});
  if (std::isfinite(fd) && std::fabs(fd - an) > 1e-4 * scale) {
    throw std::invalid_argument(
        "minimize: supplied gradient disagrees with finite differences at x0 "
        "(directional derivative " + std::to_string(an) + " vs " + std::to_string(fd) + ")");
  }
}

}  // namespace

OptimResult minimize(const Objective& objective, std::span<const double> x0,
                     const OptimOptions& opts, const Validation& validation) {
  const std::size_t n = x0.size();
  if (n == 0) throw std::invalid_argument("minimize: empty starting point");

  std::vector<double> x(x0.begin(), x0.end());
  std::vector<double> g(n), g_new(n);
  double f = objective(x, g);
  if (!std::isfinite(f)) {
    throw std::invalid_argument("minimize: objective not finite at x0");
  }
  if (opts.check_gradient) {
    std::mt19937_64 rng(opts.seed ^ 0x9e3779b97f4a7c15ull);
    check_gradient_consistency(objective, x, g, f, rng);
  }

  // Inverse-Hessian approximation, dense.
  std::vector<double> H(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) H[i * n + i] = 1.0;

  OptimResult best;  // tracked only for early stopping / failure returns
  best.x = x;
  best.objective = f;
  double best_val = kInf;
  int since_improve = 0;
  if (validation) {
    best_val = validation(x);
    best.validation = best_val;
  }

  std::vector<double> p(n), s(n), y(n), Hy(n);
  enum class Stop { max_iters, grad_tol, step_tol, patience, line_failure, zero_gradient };
  Stop stop = Stop::max_iters;
  int iter = 0;
  bool just_reset = false;
  bool h_fresh = true;

  for (iter = 0; iter < opts.max_iters; ++iter) {
    if (inf_norm(g) <= opts.grad_tol) {
      stop = Stop::grad_tol;
      break;
    }
    // p = -H g
    for (std::size_t i = 0; i < n; ++i) {
      double s_i = 0.0;
      const double* row = &H[i * n];
      for (std::size_t j = 0; j < n; ++j) s_i += row[j] * g[j];
      p[i] = -s_i;
    }
    double gp = dot(g, p);
    if (!(gp < 0.0)) {
      // Numerical breakdown: restart from steepest descent.
      std::fill(H.begin(), H.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) H[i * n + i] = 1.0;
      h_fresh = true;
      for (std::size_t i = 0; i < n; ++i) p[i] = -g[i];
      gp = dot(g, p);
      if (!(gp < 0.0)) {
        stop = Stop::zero_gradient;
        break;
      }
    }

    LineEval eval(objective, x, p);
    const double alpha0 =
        (iter == 0 || just_reset) ? std::min(1.0, 1.0 / std::max(1.0, inf_norm(g))) : 1.0;
    LineResult lr = wolfe_search(eval, {0.0, f, gp}, opts.wolfe_c1, opts.wolfe_c2, alpha0);
    if (!lr.ok) {
      if (!just_reset) {
        // A stale curvature model can defeat the line search on
        // piecewise-smooth objectives; retry once from steepest descent.
        std::fill(H.begin(), H.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) H[i * n + i] = 1.0;
        just_reset = true;
        h_fresh = true;
        continue;
      }
      stop = Stop::line_failure;
      break;
    }
    just_reset = false;
    const double alpha = lr.pt.alpha;
    double step_norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = alpha * p[i];
      step_norm = std::max(step_norm, std::fabs(s[i]));
    }
    std::copy(eval.grad().begin(), eval.grad().end(), g_new.begin());
    for (std::size_t i = 0; i < n; ++i) y[i] = g_new[i] - g[i];
    for (std::size_t i = 0; i < n; ++i) x[i] += s[i];
    f = lr.pt.f;
    g.swap(g_new);

    const double sy = dot(s, y);
    if (sy > 1e-12 * std::sqrt(dot(s, s) * dot(y, y))) {
      if (h_fresh) {
        const double scale = sy / dot(y, y);
        for (std::size_t i = 0; i < n; ++i) H[i * n + i] = scale;
        h_fresh = false;
      }
      const double rho = 1.0 / sy;
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        const double* row = &H[i * n];
        for (std::size_t j = 0; j < n; ++j) acc += row[j] * y[j];
        Hy[i] = acc;
      }
      const double yHy = dot(y, Hy);
      const double c = rho * rho * yHy + rho;
      for (std::size_t i = 0; i < n; ++i) {
        double* row = &H[i * n];
        const double si = s[i], hyi = Hy[i];
        for (std::size_t j = 0; j < n; ++j) {
          row[j] += c * si * s[j] - rho * (si * Hy[j] + hyi * s[j]);
        }
      }
    }

    if (validation) {
      const double v = validation(x);
      if (v < best_val) {
        best_val = v;
        best.x = x;
        best.objective = f;
        best.validation = v;
        since_improve = 0;
      } else {
        ++since_improve;
        if (since_improve >= opts.patience) {
          stop = Stop::patience;
          ++iter;
          break;
        }
      }
    }

    if (step_norm <= opts.step_tol * (1.0 + inf_norm(x))) {
      stop = Stop::step_tol;
      ++iter;
      break;
    }
  }

  OptimResult out;
  out.iterations = iter;
  if (validation) {
    // Early stopping returns the best-validation iterate, not the last.
    out.x = std::move(best.x);
    out.objective = best.objective;
    out.validation = best.validation;
  } else {
    out.x = std::move(x);
    out.objective = f;
  }
  const bool failed = stop == Stop::line_failure;
  const bool exhausted = stop == Stop::max_iters && inf_norm(g) > opts.grad_tol;
  out.converged = !failed && !exhausted;
  return out;
}

OptimResult multi_start(const Objective& objective, const StartSampler& sampler,
                        const OptimOptions& opts, const Validation& validation) {
  if (opts.restarts < 1) throw std::invalid_argument("multi_start: restarts must be >= 1");
  std::mt19937_64 rng(opts.seed);
  // Sample every start upfront so the draws do not depend on run order.
  std::vector<std::vector<double>> starts;
  starts.reserve(opts.restarts);
  for (int r = 0; r < opts.restarts; ++r) starts.push_back(sampler(r, rng));

  std::optional<OptimResult> best;
  std::string failures;
  for (int r = 0; r < opts.restarts; ++r) {
    OptimResult res;
    try {
      res = minimize(objective, starts[r], opts, validation);
    } catch (const std::exception& e) {
      failures += "restart " + std::to_string(r) + ": " + e.what() + "; ";
      continue;
    }
    const double key = res.validation.value_or(res.objective);
    if (!std::isfinite(key)) {
      failures += "restart " + std::to_string(r) + ": non-finite result; ";
      continue;
    }
    res.restart_index = r;
    if (!best || key < best->validation.value_or(best->objective)) best = std::move(res);
  }
  if (!best) {
    throw std::runtime_error("multi_start: every restart failed (" + failures + ")");
  }
  return *best;
}

}  // namespace calibra
