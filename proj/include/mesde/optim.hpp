#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "mesde/errors.hpp"
#include "mesde/random.hpp"
#include "mesde/types.hpp"

namespace mesde {

using Objective = std::function<double(const Vec&)>;

struct OptimOptions {
  int restarts = 5;            ///< Nelder-Mead runs, the first from `start`
  std::uint64_t seed = 0;      ///< restart jitter stream
  double f_tol = 1e-8;         ///< simplex value spread, relative to max(1, |f|)
  double x_tol = 1e-6;         ///< simplex diameter (infinity norm)
  int max_evals_per_run = 0;   ///< 0 means 1000 * (dim + 1)
  double initial_step = 0.05;  ///< initial simplex edge, fraction of box width
  double jitter = 0.10;        ///< restart jitter, fraction of box width
  bool newton_polish = true;
  int polish_iterations = 5;
  double fd_scale = 1e-5;
  bool keep_trace = false;
};

struct TraceEntry {
  int restart;
  Vec x;
  double value;
};

struct OptimResult {
  Vec argmax;
  double value = -std::numeric_limits<double>::infinity();
  int n_evals = 0;
  bool converged = false;
  int restart_index = 0;
  std::vector<TraceEntry> trace;
};

namespace detail {

/// Objective restricted to a box: points outside (or non-finite values) are
/// rejected with -inf instead of being projected.
class BoxedObjective {
public:
  BoxedObjective(const Objective& f, const Box& box, OptimResult& out, bool trace)
      : f_(f), box_(box), out_(out), trace_(trace) {}

  double operator()(const Vec& x, int restart) {
    if (!box_.contains(x)) return -std::numeric_limits<double>::infinity();
    ++out_.n_evals;
    double v = f_(x);
    if (!std::isfinite(v)) v = -std::numeric_limits<double>::infinity();
    if (trace_) out_.trace.push_back({restart, x, v});
    return v;
  }

private:
  const Objective& f_;
  const Box& box_;
  OptimResult& out_;
  bool trace_;
};

struct RunResult {
  Vec x;
  double value;
  bool converged;
};

/// Nelder-Mead on -f with reflection 1, expansion 2, contraction 0.5, shrink 0.5.
/// Ties keep the earlier vertex, so a flat surface returns the start point.
inline RunResult nelder_mead(BoxedObjective& f, const Vec& start, double start_value, const Box& box,
                             const OptimOptions& opts, int restart) {
  const auto dim = start.size();
  const int max_evals = opts.max_evals_per_run > 0 ? opts.max_evals_per_run
                                                   : 1000 * static_cast<int>(dim + 1);
  std::vector<Vec> xs(static_cast<std::size_t>(dim + 1), start);
  std::vector<double> fs(static_cast<std::size_t>(dim + 1), start_value);
  const Vec width = box.width();
  for (Eigen::Index k = 0; k < dim; ++k) {
    double step = opts.initial_step * width[k];
    if (!std::isfinite(step) || step == 0.0) step = 0.05 * (1.0 + std::abs(start[k]));
    Vec x = start;
    x[k] = start[k] + step;
    if (x[k] > box.upper[k]) x[k] = start[k] - step;
    xs[static_cast<std::size_t>(k + 1)] = x;
    fs[static_cast<std::size_t>(k + 1)] = f(x, restart);
  }

  std::vector<std::size_t> order(xs.size());
  int evals = static_cast<int>(dim);
  bool converged = false;
  auto sort_vertices = [&] {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fs[a] > fs[b]; });
    std::vector<Vec> x2;
    std::vector<double> f2;
    for (auto i : order) {
      x2.push_back(std::move(xs[i]));
      f2.push_back(fs[i]);
    }
    xs = std::move(x2);
    fs = std::move(f2);
  };

  while (evals < max_evals) {
    sort_vertices();
    const double best = fs.front();
    const double worst = fs.back();
    double diameter = 0.0;
    for (std::size_t i = 1; i < xs.size(); ++i)
      diameter = std::max(diameter, (xs[i] - xs[0]).cwiseAbs().maxCoeff());
    const bool f_close = std::isfinite(worst) && (best - worst) <= opts.f_tol * std::max(1.0, std::abs(best));
    if (diameter <= opts.x_tol && (f_close || !std::isfinite(worst))) {
      converged = std::isfinite(best);
      break;
    }

    Vec centroid = Vec::Zero(dim);
    for (Eigen::Index i = 0; i < dim; ++i) centroid += xs[static_cast<std::size_t>(i)];
    centroid /= static_cast<double>(dim);

    const Vec& xw = xs.back();
    const Vec xr = centroid + (centroid - xw);
    const double fr = f(xr, restart);
    ++evals;
    const double second_worst = fs[static_cast<std::size_t>(dim - 1)];

    if (fr > best) {
      const Vec xe = centroid + 2.0 * (centroid - xw);
      const double fe = f(xe, restart);
      ++evals;
      if (fe > fr) {
        xs.back() = xe;
        fs.back() = fe;
      } else {
        xs.back() = xr;
        fs.back() = fr;
      }
      continue;
    }
    if (fr > second_worst) {
      xs.back() = xr;
      fs.back() = fr;
      continue;
    }
    // Contraction: outside if the reflected point beats the worst, inside otherwise.
    const bool outside = fr > worst;
    const Vec xc = outside ? Vec(centroid + 0.5 * (xr - centroid)) : Vec(centroid + 0.5 * (xw - centroid));
    const double fc = f(xc, restart);
    ++evals;
    if (fc > (outside ? fr : worst)) {
      xs.back() = xc;
      fs.back() = fc;
      continue;
    }
    for (std::size_t i = 1; i < xs.size(); ++i) {
      xs[i] = xs[0] + 0.5 * (xs[i] - xs[0]);
      fs[i] = f(xs[i], restart);
      ++evals;
    }
  }
  sort_vertices();
  return {xs.front(), fs.front(), converged};
}

} // namespace detail

/// Central-difference gradient with step scale (1 + |x_k|).
inline Vec fd_gradient(const Objective& f, const Vec& x, double scale = 1e-5) {
  Vec g(x.size());
  Vec xp = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double step = scale * (1.0 + std::abs(x[k]));
    xp[k] = x[k] + step;
    const double up = f(xp);
    xp[k] = x[k] - step;
    const double down = f(xp);
    xp[k] = x[k];
    if (!std::isfinite(up) || !std::isfinite(down))
      throw EstimationError("fd_gradient: non-finite evaluation at coordinate " + std::to_string(k));
    g[k] = (up - down) / (2.0 * step);
  }
  return g;
}

/// Central-difference Hessian, exactly symmetric.
inline Mat fd_hessian(const Objective& f, const Vec& x, double scale = 1e-5) {
  const auto d = x.size();
  Mat h(d, d);
  Vec steps(d);
  for (Eigen::Index k = 0; k < d; ++k) steps[k] = scale * (1.0 + std::abs(x[k]));
  auto eval = [&](const Vec& p, Eigen::Index coord) {
    const double v = f(p);
    if (!std::isfinite(v))
      throw EstimationError("fd_hessian: non-finite evaluation at coordinate " + std::to_string(coord));
    return v;
  };
  const double f0 = eval(x, 0);
  Vec p = x;
  for (Eigen::Index k = 0; k < d; ++k) {
    p[k] = x[k] + steps[k];
    const double up = eval(p, k);
    p[k] = x[k] - steps[k];
    const double down = eval(p, k);
    p[k] = x[k];
    h(k, k) = (up - 2.0 * f0 + down) / (steps[k] * steps[k]);
    for (Eigen::Index l = 0; l < k; ++l) {
      p[k] = x[k] + steps[k];
      p[l] = x[l] + steps[l];
      const double pp = eval(p, k);
      p[l] = x[l] - steps[l];
      const double pm = eval(p, k);
      p[k] = x[k] - steps[k];
      const double mm = eval(p, k);
      p[l] = x[l] + steps[l];
      const double mp = eval(p, k);
      p[k] = x[k];
      p[l] = x[l];
      h(k, l) = h(l, k) = (pp - pm - mp + mm) / (4.0 * steps[k] * steps[l]);
    }
  }
  return h;
}

/// Maximizes `objective` over `bounds`: Nelder-Mead from `start`, then
/// opts.restarts - 1 runs from jittered copies of the best point so far, then
/// a finite-difference Newton polish. The reported value never decreases
/// across restarts, and the whole search is deterministic given opts.seed.
inline OptimResult maximize(const Objective& objective, const Vec& start, const Box& bounds,
                            const OptimOptions& opts = {}) {
  OptimResult out;
  detail::BoxedObjective f(objective, bounds, out, opts.keep_trace);
  if (!bounds.contains(start)) throw EstimationError("maximize: start point outside bounds");
  const double f0 = f(start, 0);
  if (!std::isfinite(f0)) throw EstimationError("maximize: objective is not finite at the start point");

  out.argmax = start;
  out.value = f0;
  if (start.size() == 0) {
    out.converged = true;
    return out;
  }

  Rng rng(stream_key({opts.seed, 0x6f7074696dull}));
  const Vec width = bounds.width();
  bool best_converged = false;
  const int runs = std::max(1, opts.restarts);
  for (int r = 0; r < runs; ++r) {
    Vec x0 = out.argmax;
    double fx0 = out.value;
    if (r > 0) {
      for (Eigen::Index k = 0; k < x0.size(); ++k) {
        const double u = 2.0 * rng.uniform() - 1.0;
        double v = out.argmax[k] + u * opts.jitter * width[k];
        const double margin = 1e-9 * width[k];
        v = std::clamp(v, bounds.lower[k] + margin, bounds.upper[k] - margin);
        x0[k] = v;
      }
      fx0 = f(x0, r);
      if (!std::isfinite(fx0)) {
        x0 = out.argmax;
        fx0 = out.value;
      }
    }
    const auto run = detail::nelder_mead(f, x0, fx0, bounds, opts, r);
    if (run.value > out.value || (r == 0 && run.value >= out.value)) {
      out.argmax = run.x;
      out.value = run.value;
      out.restart_index = r;
      best_converged = run.converged;
    } else if (run.converged && run.value == out.value) {
      best_converged = best_converged || run.converged;
    }
  }
  out.converged = best_converged;

  if (opts.newton_polish) {
    Objective boxed = [&](const Vec& x) { return f(x, runs); };
    for (int it = 0; it < opts.polish_iterations; ++it) {
      Vec g;
      Mat h;
      try {
        g = fd_gradient(boxed, out.argmax, opts.fd_scale);
        h = fd_hessian(boxed, out.argmax, opts.fd_scale);
      } catch (const EstimationError&) {
        break; // stencil left the box or hit a rejected point
      }
      Eigen::LLT<Mat> llt(-h);
      if (llt.info() != Eigen::Success) break;
      const Vec step = llt.solve(g);
      if (!step.allFinite()) break;
      const Vec x1 = out.argmax + step;
      const double f1 = f(x1, runs);
      if (!(f1 > out.value)) break;
      out.argmax = x1;
      out.value = f1;
    }
  }
  return out;
}

} // namespace mesde
