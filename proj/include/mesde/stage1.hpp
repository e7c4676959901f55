#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mesde/errors.hpp"
#include "mesde/model.hpp"
#include "mesde/optim.hpp"
#include "mesde/parallel.hpp"

namespace mesde {

/// Smallest profiled time scale accepted before a trajectory is declared degenerate.
inline constexpr double kTauFloor = 1e-300;

struct Stage1Options {
  OptimOptions optim;
  /// Starting eta; the centre of the eta box when empty.
  Vec eta_start;
  unsigned workers = 1;
};

struct Stage1Estimate {
  Vec eta_hat;
  Vec theta_tau_hat;
  Vec tau_hat;          ///< tau_i(eta_hat), i = 1..N
  Mat q11_hat;
  Mat i12_hat;
  Vec se_eta;           ///< sqrt(diag(Q11^-1) / (n N))
  Vec se_theta;         ///< sqrt(diag(I12^-1) / N)
  double h11_value = 0.0;
  double h12_value = 0.0;
  bool eta_known = false; ///< c free of eta: tau_hat is the direct statistic
  bool q11_singular = false;
  OptimResult eta_optim;
  OptimResult theta_optim;
  std::vector<std::string> warnings;
};

namespace detail {

/// Per-individual sums over j of log S_{i,j-1}(eta) and S^{-1}_{i,j-1}(eta) y_ij^2.
struct DiffusionSums {
  double sum_log_s = 0.0;
  double sum_scaled_sq = 0.0;
};

/// Grid values S(t_j, .; eta) for time-only diffusions, else empty.
inline std::vector<double> time_only_s(const PanelData& panel, const ModelSpec& model, const Vec& eta) {
  std::vector<double> s;
  if (!model.time_only_diffusion) return s;
  s.resize(panel.n());
  for (std::size_t j = 0; j < panel.n(); ++j) s[j] = eval_S(model, panel.time(j), 0.0, eta);
  return s;
}

inline DiffusionSums diffusion_sums(const PanelData& panel, const ModelSpec& model, std::size_t i, const Vec& eta,
                                    const std::vector<double>& cached_s) {
  const auto row = panel.row(i);
  const double inv_h = 1.0 / panel.h();
  DiffusionSums out;
  if (!cached_s.empty()) {
    double scaled = 0.0;
    for (std::size_t j = 1; j < row.size(); ++j) {
      const double d = row[j] - row[j - 1];
      scaled += d * d * inv_h / cached_s[j - 1];
    }
    out.sum_scaled_sq = scaled;
    return out;
  }
  double log_s = 0.0, scaled = 0.0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    const double s = eval_S(model, panel.time(j - 1), row[j - 1], eta);
    const double d = row[j] - row[j - 1];
    log_s += std::log(s);
    scaled += d * d * inv_h / s;
  }
  out.sum_log_s = log_s;
  out.sum_scaled_sq = scaled;
  return out;
}

inline double cached_log_sum(const std::vector<double>& cached_s) {
  double s = 0.0;
  for (double v : cached_s) s += std::log(v);
  return s;
}

} // namespace detail

/// tau_i(eta) = n^{-1} sum_j S^{-1}_{i,j-1}(eta) y_ij^2.
inline double profile_tau(const PanelData& panel, const ModelSpec& model, std::size_t i, const Vec& eta) {
  const auto sums = detail::diffusion_sums(panel, model, i, eta, detail::time_only_s(panel, model, eta));
  const double tau = sums.sum_scaled_sq / static_cast<double>(panel.n());
  if (!(tau >= kTauFloor)) throw DegenerateTrajectoryError(i);
  return tau;
}

/// tau_i(eta) for every individual.
inline Vec profile_taus(const PanelData& panel, const ModelSpec& model, const Vec& eta, unsigned workers = 1) {
  const auto cached = detail::time_only_s(panel, model, eta);
  Vec out(static_cast<Eigen::Index>(panel.N()));
  parallel_for(panel.N(), workers, [&](std::size_t i) {
    const double tau = detail::diffusion_sums(panel, model, i, eta, cached).sum_scaled_sq /
                       static_cast<double>(panel.n());
    if (!(tau >= kTauFloor)) throw DegenerateTrajectoryError(i);
    out[static_cast<Eigen::Index>(i)] = tau;
  });
  return out;
}

/// First-stage profile quasi-likelihood
///   H11(eta) = -1/2 sum_i { sum_j log S_{i,j-1}(eta) + n log tau_i(eta) }.
inline double h11(const PanelData& panel, const ModelSpec& model, const Vec& eta, unsigned workers = 1) {
  const auto cached = detail::time_only_s(panel, model, eta);
  const double cached_log = cached.empty() ? 0.0 : detail::cached_log_sum(cached);
  const double n = static_cast<double>(panel.n());
  std::vector<double> terms(panel.N());
  parallel_for(panel.N(), workers, [&](std::size_t i) {
    const auto sums = detail::diffusion_sums(panel, model, i, eta, cached);
    const double tau = sums.sum_scaled_sq / n;
    if (!(tau >= kTauFloor)) throw DegenerateTrajectoryError(i);
    terms[i] = -0.5 * ((cached.empty() ? sums.sum_log_s : cached_log) + n * std::log(tau));
  });
  return deterministic_sum(std::move(terms));
}

namespace detail {

/// Precomputed g(t_{j-1}, Y_{i,j-1}) and squared normalized increments for
/// models with log S = eta . g, so that H11 needs one exp per point.
struct LogLinearCache {
  std::size_t N = 0, n = 0, p = 0;
  std::vector<double> g;        ///< (i, j, k) -> g[(i n + j) p + k]
  std::vector<double> sq;       ///< (i, j) -> y_ij^2
  std::vector<double> g_sums;   ///< (i, k) -> sum_j g_ij,k

  static LogLinearCache build(const PanelData& panel, const ModelSpec& model, unsigned workers) {
    LogLinearCache c;
    c.N = panel.N();
    c.n = panel.n();
    c.p = model.p_eta;
    c.g.resize(c.N * c.n * c.p);
    c.sq.resize(c.N * c.n);
    c.g_sums.assign(c.N * c.p, 0.0);
    const Vec eta0 = Vec::Zero(static_cast<Eigen::Index>(c.p));
    parallel_for(c.N, workers, [&](std::size_t i) {
      const auto row = panel.row(i);
      for (std::size_t j = 0; j < c.n; ++j) {
        double* gj = c.g.data() + (i * c.n + j) * c.p;
        model.log_s_gradient(panel.time(j), row[j], eta0, {gj, c.p});
        for (std::size_t k = 0; k < c.p; ++k) c.g_sums[i * c.p + k] += gj[k];
        const double d = row[j + 1] - row[j];
        c.sq[i * c.n + j] = d * d / panel.h();
      }
    });
    return c;
  }

  double h11(const Vec& eta, unsigned workers) const {
    const double nn = static_cast<double>(n);
    std::vector<double> terms(N);
    parallel_for(N, workers, [&](std::size_t i) {
      double scaled = 0.0, log_s = 0.0;
      for (std::size_t k = 0; k < p; ++k) log_s += eta[static_cast<Eigen::Index>(k)] * g_sums[i * p + k];
      for (std::size_t j = 0; j < n; ++j) {
        const double* gj = g.data() + (i * n + j) * p;
        double e = 0.0;
        for (std::size_t k = 0; k < p; ++k) e += eta[static_cast<Eigen::Index>(k)] * gj[k];
        scaled += sq[i * n + j] * std::exp(-e);
      }
      const double tau = scaled / nn;
      if (!std::isfinite(tau)) throw ModelError("diffusion coefficient overflow");
      if (!(tau >= kTauFloor)) throw DegenerateTrajectoryError(i);
      terms[i] = -0.5 * (log_s + nn * std::log(tau));
    });
    return deterministic_sum(std::move(terms));
  }
};

} // namespace detail

/// Centre of a box, the default starting point.
inline Vec box_centre(const Box& b) { return 0.5 * (b.lower + b.upper); }

/// argmax of h11 over `bounds`. Points where the model cannot be evaluated
/// (S not positive) are rejected. Throws EstimationError if no restart converges.
inline OptimResult fit_eta(const PanelData& panel, const ModelSpec& model, const Box& bounds,
                           const Stage1Options& opts = {}) {
  const Vec start = opts.eta_start.size() == static_cast<Eigen::Index>(model.p_eta) ? opts.eta_start
                                                                                     : box_centre(bounds);
  std::optional<detail::LogLinearCache> cache;
  if (model.log_linear_in_eta && !model.time_only_diffusion)
    cache.emplace(detail::LogLinearCache::build(panel, model, opts.workers));
  Objective objective = [&](const Vec& eta) {
    try {
      return cache ? cache->h11(eta, opts.workers) : h11(panel, model, eta, opts.workers);
    } catch (const ModelError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  OptimResult res = maximize(objective, start, bounds, opts.optim);
  if (!res.converged)
    throw EstimationError("eta optimization did not converge after " + std::to_string(opts.optim.restarts) +
                          " restarts (" + std::to_string(res.n_evals) + " evaluations, best H11 = " +
                          std::to_string(res.value) + ")");
  return res;
}

/// H12(theta) = sum_i log f(tau_i; theta).
inline double h12(const Vec& tau_hats, const TauFamily& family, const Vec& theta) {
  std::vector<double> terms(static_cast<std::size_t>(tau_hats.size()));
  for (Eigen::Index i = 0; i < tau_hats.size(); ++i) terms[static_cast<std::size_t>(i)] = family.log_density(tau_hats[i], theta);
  for (double t : terms)
    if (t == -std::numeric_limits<double>::infinity()) return t;
  return deterministic_sum(std::move(terms));
}

/// argmax of h12 over `bounds`, started from the family's moment guess
/// (pulled into the box). Pass the true tau_i to get the oracle estimate.
inline OptimResult fit_theta_tau(const Vec& tau_hats, const TauFamily& family, const Box& bounds,
                                 const OptimOptions& opts = {}) {
  Vec start = family.initial_guess(tau_hats);
  for (Eigen::Index k = 0; k < start.size(); ++k) {
    const double margin = 1e-6 * (bounds.upper[k] - bounds.lower[k]);
    start[k] = std::clamp(start[k], bounds.lower[k] + margin, bounds.upper[k] - margin);
  }
  if (!std::isfinite(h12(tau_hats, family, start))) {
    // A shifted family can have its guess outside the support; retreat the shift.
    if (family.kind() == TauKind::GeneralizedWeibull) start[2] = std::max(bounds.lower[2], 0.0);
  }
  Objective objective = [&](const Vec& theta) { return h12(tau_hats, family, theta); };
  OptimResult res = maximize(objective, start, bounds, opts);
  if (!res.converged)
    throw EstimationError("theta_tau optimization did not converge after " + std::to_string(opts.restarts) +
                          " restarts");
  return res;
}

/// Q11 = (2N)^{-1} sum_i { n^{-1} sum_j g_{i,j-1}^{(x)2} - (n^{-1} sum_j g_{i,j-1})^{(x)2} },
/// g = d/d(eta) log S evaluated at eta_hat.
inline Mat estimate_q11(const PanelData& panel, const ModelSpec& model, const Vec& eta_hat, unsigned workers = 1) {
  const auto p = static_cast<Eigen::Index>(model.p_eta);
  const double n = static_cast<double>(panel.n());
  std::vector<Mat> terms(panel.N());

  std::vector<Vec> cached_g;
  if (model.time_only_diffusion) {
    cached_g.resize(panel.n());
    for (std::size_t j = 0; j < panel.n(); ++j) {
      cached_g[j].resize(p);
      eval_log_s_gradient(model, panel.time(j), 0.0, eta_hat, {cached_g[j].data(), model.p_eta});
    }
  }
  parallel_for(panel.N(), workers, [&](std::size_t i) {
    const auto row = panel.row(i);
    Vec g(p), mean = Vec::Zero(p);
    Mat outer = Mat::Zero(p, p);
    for (std::size_t j = 1; j < row.size(); ++j) {
      if (cached_g.empty())
        eval_log_s_gradient(model, panel.time(j - 1), row[j - 1], eta_hat, {g.data(), model.p_eta});
      else
        g = cached_g[j - 1];
      mean += g;
      outer.noalias() += g * g.transpose();
    }
    mean /= n;
    outer /= n;
    terms[i] = outer - mean * mean.transpose();
  });
  Mat q = deterministic_sum(terms, p, p) / (2.0 * static_cast<double>(panel.N()));
  return 0.5 * (q + q.transpose());
}

/// I12 = N^{-1} sum_i (d/d(theta) log f(tau_i; theta_hat))^{(x)2}.
inline Mat estimate_i12(const Vec& tau_hats, const TauFamily& family, const Vec& theta_hat) {
  const auto p = static_cast<Eigen::Index>(family.dim());
  std::vector<Mat> terms;
  terms.reserve(static_cast<std::size_t>(tau_hats.size()));
  for (Eigen::Index i = 0; i < tau_hats.size(); ++i) {
    const Vec s = family.log_density_grad(tau_hats[i], theta_hat);
    terms.push_back(s * s.transpose());
  }
  Mat out = deterministic_sum(terms, p, p) / static_cast<double>(tau_hats.size());
  return 0.5 * (out + out.transpose());
}

/// Inverse for standard errors; falls back to the pseudo-inverse when `m` is
/// numerically singular and reports that through `singular`.
inline Mat information_inverse(const Mat& m, bool& singular) {
  singular = false;
  if (m.size() == 0) return m;
  Eigen::SelfAdjointEigenSolver<Mat> eig(m);
  const Vec ev = eig.eigenvalues();
  const double scale = std::max(std::abs(ev.maxCoeff()), std::abs(ev.minCoeff()));
  const double tol = 1e-12 * std::max(scale, 1e-300);
  if (!(ev.minCoeff() > tol)) {
    singular = true;
    Vec inv = Vec::Zero(ev.size());
    for (Eigen::Index k = 0; k < ev.size(); ++k)
      if (std::abs(ev[k]) > tol && scale > 0.0) inv[k] = 1.0 / ev[k];
    return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
  }
  return eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
}

/// Stage 1 end to end: eta_hat by H11 (skipped when c does not depend on eta),
/// tau_i(eta_hat), theta_tau_hat by H12, then Q11 and I12 with standard errors.
inline Stage1Estimate run_stage1(const PanelData& panel, const ModelSpec& model, const Stage1Options& opts = {}) {
  Stage1Estimate est;
  const double nN = static_cast<double>(panel.n()) * static_cast<double>(panel.N());
  if (model.p_eta == 0) {
    est.eta_known = true;
    est.eta_hat = Vec(0);
    est.h11_value = h11(panel, model, est.eta_hat, opts.workers);
  } else {
    est.eta_optim = fit_eta(panel, model, model.bounds.eta, opts);
    est.eta_hat = est.eta_optim.argmax;
    est.h11_value = est.eta_optim.value;
  }
  est.tau_hat = profile_taus(panel, model, est.eta_hat, opts.workers);

  OptimOptions theta_opts = opts.optim;
  theta_opts.seed = stream_key({opts.optim.seed, 0x7468657461ull});
  est.theta_optim = fit_theta_tau(est.tau_hat, model.tau_family, model.bounds.theta_tau, theta_opts);
  est.theta_tau_hat = est.theta_optim.argmax;
  est.h12_value = est.theta_optim.value;

  if (model.p_eta > 0) {
    est.q11_hat = estimate_q11(panel, model, est.eta_hat, opts.workers);
    const Mat inv = information_inverse(est.q11_hat, est.q11_singular);
    if (est.q11_singular)
      est.warnings.push_back("Q11 is singular: eta is not identifiable from the diffusion (log S has an "
                             "eta-gradient that is constant along paths); standard errors use a pseudo-inverse");
    est.se_eta = (inv.diagonal() / nN).cwiseSqrt();
  } else {
    est.q11_hat = Mat(0, 0);
    est.se_eta = Vec(0);
  }
  est.i12_hat = estimate_i12(est.tau_hat, model.tau_family, est.theta_tau_hat);
  bool i12_singular = false;
  const Mat i12_inv = information_inverse(est.i12_hat, i12_singular);
  if (i12_singular) est.warnings.push_back("I12 is singular; theta_tau standard errors use a pseudo-inverse");
  est.se_theta = (i12_inv.diagonal() / static_cast<double>(panel.N())).cwiseSqrt();
  return est;
}

} // namespace mesde
