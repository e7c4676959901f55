#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <algorithm>
#include <string>
#include <vector>

#include "mesde/errors.hpp"
#include "mesde/model.hpp"
#include "mesde/optim.hpp"
#include "mesde/parallel.hpp"

namespace mesde {

/// Condition-number threshold above which M_i is treated as singular.
inline constexpr double kMaxConditionNumber = 1e12;

/// Per-individual drift statistics
///   M_i = tau_i h sum_j S^{-1}_{i,j-1} a_{i,j-1} a_{i,j-1}^T,
///   v_i = sum_j S^{-1}_{i,j-1} a_{i,j-1} (Y_ij - Y_i,j-1),
/// and b_i = M_i^{-1} v_i.
struct SufficientPair {
  Mat m_hat;
  Vec v_hat;
  Vec b_hat;
  Mat m_inv;
  double condition = std::numeric_limits<double>::infinity();
  bool flagged = true;
};

/// Completes b_hat, m_inv, condition and flagged from m_hat and v_hat.
inline void finalize_pair(SufficientPair& pair) {
  const auto p = pair.m_hat.rows();
  pair.m_hat = 0.5 * (pair.m_hat + pair.m_hat.transpose());
  if (p == 0) {
    pair.flagged = false;
    pair.condition = 1.0;
    pair.m_inv = Mat(0, 0);
    pair.b_hat = Vec(0);
    return;
  }
  Eigen::SelfAdjointEigenSolver<Mat> eig(pair.m_hat);
  const Vec ev = eig.eigenvalues();
  const double lo = ev.minCoeff(), hi = ev.maxCoeff();
  pair.condition = (lo > 0.0 && std::isfinite(hi)) ? hi / lo : std::numeric_limits<double>::infinity();
  pair.flagged = !(pair.condition <= kMaxConditionNumber);
  if (pair.flagged) {
    pair.m_inv = Mat::Constant(p, p, std::numeric_limits<double>::quiet_NaN());
    pair.b_hat = Vec::Constant(p, std::numeric_limits<double>::quiet_NaN());
    return;
  }
  pair.m_inv = eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  pair.m_inv = 0.5 * (pair.m_inv + pair.m_inv.transpose());
  Eigen::LLT<Mat> llt(pair.m_hat);
  pair.b_hat = llt.solve(pair.v_hat);
}

inline SufficientPair make_pair(Mat m_hat, Vec v_hat) {
  SufficientPair p;
  p.m_hat = std::move(m_hat);
  p.v_hat = std::move(v_hat);
  finalize_pair(p);
  return p;
}

inline SufficientPair sufficient_stats(const PanelData& panel, const ModelSpec& model, std::size_t i,
                                       const Vec& eta_hat, double tau_hat_i) {
  if (!(tau_hat_i > 0.0)) throw EstimationError("sufficient_stats: tau_hat must be positive");
  const auto p = static_cast<Eigen::Index>(model.p_phi());
  const auto row = panel.row(i);
  Mat m = Mat::Zero(p, p);
  Vec v = Vec::Zero(p);
  Vec a(p);
  for (std::size_t j = 1; j < row.size(); ++j) {
    const double y = row[j - 1];
    eval_drift_basis(model, y, {a.data(), model.p_phi()});
    const double inv_s = 1.0 / eval_S(model, panel.time(j - 1), y, eta_hat);
    m.noalias() += inv_s * a * a.transpose();
    v.noalias() += (inv_s * (row[j] - y)) * a;
  }
  return make_pair(tau_hat_i * panel.h() * m, std::move(v));
}

inline std::vector<SufficientPair> sufficient_stats_all(const PanelData& panel, const ModelSpec& model,
                                                        const Vec& eta_hat, const Vec& tau_hats,
                                                        unsigned workers = 1) {
  std::vector<SufficientPair> out(panel.N());
  parallel_for(panel.N(), workers, [&](std::size_t i) {
    out[i] = sufficient_stats(panel, model, i, eta_hat, tau_hats[static_cast<Eigen::Index>(i)]);
  });
  return out;
}

/// Covariance M_i^{-1} + diag(0, Sigma_r); Sigma_r enters the trailing block only.
inline Mat marginal_covariance(const SufficientPair& pair, const Mat& sigma_r) {
  Mat c = pair.m_inv;
  const auto pr = sigma_r.rows();
  const auto off = c.rows() - pr;
  c.block(off, off, pr, pr) += sigma_r;
  return c;
}

/// log phi_p(b_i; mu, M_i^{-1} + Sigma) for one individual. `index` only labels errors.
inline double h2_term(const SufficientPair& pair, const Vec& mu, const Mat& sigma_r, std::size_t index = 0) {
  const Mat c = marginal_covariance(pair, sigma_r);
  Eigen::LLT<Mat> llt(c);
  if (llt.info() != Eigen::Success)
    throw EstimationError("H2: covariance M^-1 + Sigma is not positive definite for individual " +
                          std::to_string(index));
  const Vec r = pair.b_hat - mu;
  const Vec z = llt.matrixL().solve(r);
  const Mat l = llt.matrixL();
  double logdet = 0.0;
  for (Eigen::Index k = 0; k < l.rows(); ++k) logdet += std::log(l(k, k));
  const double p = static_cast<double>(mu.size());
  return -0.5 * p * std::log(2.0 * std::numbers::pi) - logdet - 0.5 * z.squaredNorm();
}

/// H2(mu, Sigma_r) = sum_i log phi(b_i; mu, M_i^{-1} + diag(0, Sigma_r)).
inline double h2(const std::vector<SufficientPair>& pairs, const Vec& mu, const Mat& sigma_r) {
  std::vector<double> terms(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].flagged) throw EstimationError("H2: individual " + std::to_string(i) + " has a singular M");
    terms[i] = h2_term(pairs[i], mu, sigma_r, i);
  }
  return deterministic_sum(std::move(terms));
}

/// Closed-form d/d(mu) H2 = sum_i (M_i^{-1} + Sigma)^{-1} (b_i - mu).
inline Vec h2_mu_score(const std::vector<SufficientPair>& pairs, const Vec& mu, const Mat& sigma_r) {
  std::vector<Vec> terms;
  terms.reserve(pairs.size());
  for (const auto& pair : pairs) terms.push_back(marginal_covariance(pair, sigma_r).llt().solve(pair.b_hat - mu));
  return deterministic_sum(terms, mu.size(), 1);
}

/// Analytic score of one H2 term in the natural coordinates (mu, vech(Sigma_r)).
inline Vec h2_term_score(const SufficientPair& pair, const Vec& mu, const Mat& sigma_r) {
  const auto p = mu.size();
  const auto pr = sigma_r.rows();
  const auto off = p - pr;
  const Mat c = marginal_covariance(pair, sigma_r);
  Eigen::LLT<Mat> llt(c);
  const Mat cinv = llt.solve(Mat::Identity(p, p));
  const Vec w = cinv * (pair.b_hat - mu);
  const Mat g = w * w.transpose() - cinv;
  Vec s(p + pr * (pr + 1) / 2);
  s.head(p) = w;
  Eigen::Index k = p;
  for (Eigen::Index col = 0; col < pr; ++col)
    for (Eigen::Index r = col; r < pr; ++r)
      s[k++] = (r == col) ? 0.5 * g(off + r, off + r) : g(off + r, off + col);
  return s;
}

struct Stage2Options {
  OptimOptions optim;
};

struct Stage2Estimate {
  Vec mu_hat;
  Mat sigma_r_hat;
  Mat cov_hat;  ///< estimate of the asymptotic covariance of sqrt(N)(theta2_hat - theta2)
  Vec se;       ///< sqrt(diag(cov_hat) / N), order (mu, vech(Sigma_r))
  double h2_value = 0.0;
  std::vector<SufficientPair> pairs;  ///< usable pairs only
  std::vector<std::size_t> dropped;   ///< indices of flagged (singular M) individuals
  std::vector<std::size_t> used;      ///< original indices of `pairs`
  bool boundary_flag = false;         ///< Sigma_r close to singular
  OptimResult optim;
  std::vector<std::string> warnings;
};

/// Splits pairs into usable ones and the indices of flagged individuals.
inline std::vector<SufficientPair> usable_pairs(const std::vector<SufficientPair>& all,
                                                std::vector<std::size_t>& used,
                                                std::vector<std::size_t>& dropped) {
  std::vector<SufficientPair> out;
  used.clear();
  dropped.clear();
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].flagged) {
      dropped.push_back(i);
    } else {
      used.push_back(i);
      out.push_back(all[i]);
    }
  }
  return out;
}

/// mu0(I) = (sum_i (M_i^{-1} + I)^{-1})^{-1} sum_i (M_i^{-1} + I)^{-1} b_i.
inline Vec mu0_explicit(const std::vector<SufficientPair>& pairs) {
  if (pairs.empty()) throw EstimationError("mu0_explicit: no usable individuals");
  const auto p = pairs.front().m_hat.rows();
  std::vector<Mat> weights;
  std::vector<Vec> weighted;
  for (const auto& pair : pairs) {
    const Mat w = (pair.m_inv + Mat::Identity(p, p)).llt().solve(Mat::Identity(p, p));
    weighted.push_back(w * pair.b_hat);
    weights.push_back(w);
  }
  const Mat wsum = deterministic_sum(weights, p, p);
  const Vec bsum = deterministic_sum(weighted, p, 1);
  Eigen::LDLT<Mat> ldlt(wsum);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw EstimationError("mu0_explicit: singular weight sum");
  return ldlt.solve(bsum);
}

/// Smallest eigenvalue of Sigma_r below which it is reported as degenerate.
inline constexpr double kSigmaBoundaryTol = 1e-6;

inline bool sigma_on_boundary(const Mat& sigma_r) {
  if (sigma_r.size() == 0) return false;
  Eigen::SelfAdjointEigenSolver<Mat> eig(sigma_r, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff() < kSigmaBoundaryTol;
}

/// Sandwich estimate H^{-1} S H^{-1} of the asymptotic covariance of
/// sqrt(N)(theta2_hat - theta2), with theta2 = (mu, vech(Sigma_r)): H is
/// -N^{-1} times the Hessian of H2 (central differences of the analytic
/// score) and S the mean outer product of the per-individual scores.
inline Mat estimate_cov2(const std::vector<SufficientPair>& pairs, const Vec& mu, const Mat& sigma_r,
                         double fd_scale = 1e-5) {
  const auto p = mu.size();
  const auto pr = sigma_r.rows();
  const auto q = p + pr * (pr + 1) / 2;
  const double n = static_cast<double>(pairs.size());
  if (pairs.empty()) throw EstimationError("estimate_cov2: no usable individuals");

  auto total_score = [&](const Vec& theta) {
    const Vec m = theta.head(p);
    const Mat s = unvech(theta.tail(q - p), static_cast<std::size_t>(pr));
    std::vector<Vec> terms;
    terms.reserve(pairs.size());
    for (const auto& pair : pairs) terms.push_back(h2_term_score(pair, m, s));
    return Vec(deterministic_sum(terms, q, 1));
  };

  Vec theta(q);
  theta << mu, vech(sigma_r);
  std::vector<Mat> outer;
  outer.reserve(pairs.size());
  for (const auto& pair : pairs) {
    const Vec s = h2_term_score(pair, mu, sigma_r);
    outer.push_back(s * s.transpose());
  }
  const Mat score_cov = deterministic_sum(outer, q, q) / n;

  Mat hess(q, q);
  for (Eigen::Index k = 0; k < q; ++k) {
    const double step = fd_scale * (1.0 + std::abs(theta[k]));
    Vec up = theta, down = theta;
    up[k] += step;
    down[k] -= step;
    hess.col(k) = (total_score(up) - total_score(down)) / (2.0 * step);
  }
  hess = 0.5 * (hess + hess.transpose());
  const Mat info = -hess / n;
  Eigen::FullPivLU<Mat> lu(info);
  if (!lu.isInvertible()) throw EstimationError("estimate_cov2: observed information is singular");
  const Mat inv = lu.inverse();
  Mat cov = inv * score_cov * inv.transpose();
  return 0.5 * (cov + cov.transpose());
}

namespace detail {

inline Mat sigma_start(const std::vector<SufficientPair>& pairs, std::size_t p_phi_r) {
  const auto pr = static_cast<Eigen::Index>(p_phi_r);
  if (pr == 0) return Mat(0, 0);
  const auto p = pairs.front().b_hat.size();
  const auto off = p - pr;
  const double n = static_cast<double>(pairs.size());
  std::vector<Vec> tails;
  std::vector<Mat> noises;
  for (const auto& pair : pairs) {
    tails.push_back(pair.b_hat.tail(pr));
    noises.push_back(pair.m_inv.block(off, off, pr, pr));
  }
  const Vec mean = deterministic_sum(tails, pr, 1) / n;
  const Mat noise = deterministic_sum(noises, pr, pr) / n;
  std::vector<Mat> outer;
  for (const auto& t : tails) outer.push_back((t - mean) * (t - mean).transpose());
  Mat cov = deterministic_sum(outer, pr, pr) / std::max(n - 1.0, 1.0);
  Mat start = cov - noise;
  Eigen::SelfAdjointEigenSolver<Mat> eig(start);
  const double floor = std::max(1e-3, 0.1 * cov.diagonal().maxCoeff());
  if (!(eig.eigenvalues().minCoeff() > floor)) {
    Vec ev = eig.eigenvalues().cwiseMax(floor);
    start = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
  }
  return 0.5 * (start + start.transpose());
}

/// Pulls a start vector strictly inside a box.
inline Vec into_box(Vec x, const Box& box) {
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double margin = 1e-6 * (box.upper[k] - box.lower[k]);
    x[k] = std::clamp(x[k], box.lower[k] + margin, box.upper[k] - margin);
  }
  return x;
}

inline Box joint_box(const Box& mu_box, const Box& chol_box) {
  Vec lo(mu_box.dim() + chol_box.dim()), hi(mu_box.dim() + chol_box.dim());
  lo << mu_box.lower, chol_box.lower;
  hi << mu_box.upper, chol_box.upper;
  return Box(lo, hi);
}

inline void finish_estimate(Stage2Estimate& est) {
  est.boundary_flag = sigma_on_boundary(est.sigma_r_hat);
  if (est.boundary_flag)
    est.warnings.push_back("Sigma_r is close to singular; its standard errors are not reliable on the boundary");
  try {
    est.cov_hat = estimate_cov2(est.pairs, est.mu_hat, est.sigma_r_hat);
    est.se = (est.cov_hat.diagonal().cwiseMax(0.0) / static_cast<double>(est.pairs.size())).cwiseSqrt();
  } catch (const EstimationError& e) {
    est.warnings.push_back(std::string("covariance estimate unavailable: ") + e.what());
    const auto q = est.mu_hat.size() + vech(est.sigma_r_hat).size();
    est.cov_hat = Mat::Constant(q, q, std::numeric_limits<double>::quiet_NaN());
    est.se = Vec::Constant(q, std::numeric_limits<double>::quiet_NaN());
  }
}

} // namespace detail

/// Maximizes H2 over (mu, log-Cholesky(Sigma_r)). Flagged individuals are
/// dropped and listed. Throws EstimationError (with the best point found) when
/// the optimizer does not converge.
inline Stage2Estimate fit_drift(const std::vector<SufficientPair>& all_pairs, std::size_t p_phi_r,
                                const Box& mu_box, const Box& chol_box, const Stage2Options& opts = {}) {
  Stage2Estimate est;
  est.pairs = usable_pairs(all_pairs, est.used, est.dropped);
  if (!est.dropped.empty())
    est.warnings.push_back("dropped " + std::to_string(est.dropped.size()) +
                           " individual(s) with numerically singular M");
  if (est.pairs.size() < 2) throw EstimationError("fit_drift: fewer than 2 usable individuals");
  const auto p = static_cast<Eigen::Index>(est.pairs.front().b_hat.size());
  const auto q = static_cast<Eigen::Index>(p_phi_r * (p_phi_r + 1) / 2);
  const auto& pairs = est.pairs;

  Vec start(p + q);
  start << mu0_explicit(pairs), log_cholesky_pack(detail::sigma_start(pairs, p_phi_r));
  const Box box = detail::joint_box(mu_box, chol_box);
  start = detail::into_box(start, box);

  Objective objective = [&](const Vec& x) {
    try {
      return h2(pairs, x.head(p), log_cholesky_unpack(x.tail(q), p_phi_r));
    } catch (const EstimationError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  est.optim = maximize(objective, start, box, opts.optim);
  est.mu_hat = est.optim.argmax.head(p);
  est.sigma_r_hat = log_cholesky_unpack(est.optim.argmax.tail(q), p_phi_r);
  est.h2_value = est.optim.value;
  if (!est.optim.converged) {
    std::ostringstream os;
    os << "H2 optimization did not converge; best point mu=(" << est.mu_hat.transpose() << "), H2=" << est.h2_value;
    throw EstimationError(os.str());
  }
  detail::finish_estimate(est);
  return est;
}

/// Newton-Raphson one-step update theta1 = theta0 - (d2 H2)^{-1} dH2 in the
/// unconstrained coordinates (mu, log-Cholesky(Sigma_r)), derivatives by
/// central differences. A singular or non-finite Hessian returns the start
/// with a warning.
inline Stage2Estimate one_step_refine(const std::vector<SufficientPair>& all_pairs, const Vec& mu_start,
                                      const Mat& sigma_start_r, double fd_scale = 1e-5) {
  Stage2Estimate est;
  est.pairs = usable_pairs(all_pairs, est.used, est.dropped);
  if (est.pairs.empty()) throw EstimationError("one_step_refine: no usable individuals");
  const auto p = mu_start.size();
  const auto pr = static_cast<std::size_t>(sigma_start_r.rows());
  const auto q = static_cast<Eigen::Index>(pr * (pr + 1) / 2);
  const auto& pairs = est.pairs;

  Vec x0(p + q);
  x0 << mu_start, log_cholesky_pack(sigma_start_r);
  Objective objective = [&](const Vec& x) {
    try {
      return h2(pairs, x.head(p), log_cholesky_unpack(x.tail(q), pr));
    } catch (const EstimationError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  Vec x1 = x0;
  try {
    const Vec g = fd_gradient(objective, x0, fd_scale);
    const Mat h = fd_hessian(objective, x0, fd_scale);
    Eigen::FullPivLU<Mat> lu(h);
    if (!lu.isInvertible()) {
      est.warnings.push_back("one-step: singular Hessian, returning the start point");
    } else {
      const Vec step = lu.solve(g);
      if (step.allFinite())
        x1 = x0 - step;
      else
        est.warnings.push_back("one-step: non-finite step, returning the start point");
    }
  } catch (const EstimationError& e) {
    est.warnings.push_back(std::string("one-step: ") + e.what() + ", returning the start point");
  }
  est.mu_hat = x1.head(p);
  est.sigma_r_hat = log_cholesky_unpack(x1.tail(q), pr);
  est.h2_value = objective(x1);
  est.optim.argmax = x1;
  est.optim.value = est.h2_value;
  est.optim.converged = true;
  detail::finish_estimate(est);
  return est;
}

/// argmax over Sigma_r of H2(mu, .) with mu held fixed.
inline Mat fit_sigma_given_mu(const std::vector<SufficientPair>& pairs, const Vec& mu, std::size_t p_phi_r,
                              const Box& chol_box, const OptimOptions& opts = {}) {
  const auto q = static_cast<Eigen::Index>(p_phi_r * (p_phi_r + 1) / 2);
  if (q == 0) return Mat(0, 0);
  const Vec start = detail::into_box(log_cholesky_pack(detail::sigma_start(pairs, p_phi_r)), chol_box);
  Objective objective = [&](const Vec& x) {
    try {
      return h2(pairs, mu, log_cholesky_unpack(x, p_phi_r));
    } catch (const EstimationError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  return log_cholesky_unpack(maximize(objective, start, chol_box, opts).argmax, p_phi_r);
}

/// Alternating procedure: mu0(I) in closed form, Sigma_0 = argmax H2(mu0, .),
/// then one Newton-Raphson step on the joint parameter.
inline Stage2Estimate fit_drift_alternating(const std::vector<SufficientPair>& all_pairs, std::size_t p_phi_r,
                                            const Box& chol_box, const Stage2Options& opts = {}) {
  std::vector<std::size_t> used, dropped;
  const auto pairs = usable_pairs(all_pairs, used, dropped);
  const Vec mu0 = mu0_explicit(pairs);
  const Mat sigma0 = fit_sigma_given_mu(pairs, mu0, p_phi_r, chol_box, opts.optim);
  Stage2Estimate est = one_step_refine(all_pairs, mu0, sigma0, opts.optim.fd_scale);
  return est;
}

struct CenteredSigma {
  Mat sigma_r;
  bool degenerate = false;
  double value = 0.0;
  OptimResult optim;
};

/// Sigma_r from the empirically centred objective
///   sum_i log phi(b_i - mean(b); 0, M_i^{-1} + diag(0, Sigma_r)).
/// When the optimum is at the boundary (Sigma_r -> 0) the boundary value is
/// returned and `degenerate` is set.
inline CenteredSigma fit_sigma_centered(const std::vector<SufficientPair>& all_pairs, std::size_t p_phi_r,
                                        const Box& chol_box, const OptimOptions& opts = {}) {
  std::vector<std::size_t> used, dropped;
  auto pairs = usable_pairs(all_pairs, used, dropped);
  if (pairs.size() < 2) throw EstimationError("fit_sigma_centered: fewer than 2 usable individuals");
  const auto p = pairs.front().b_hat.size();
  std::vector<Vec> bs;
  for (const auto& pair : pairs) bs.push_back(pair.b_hat);
  const Vec mean = deterministic_sum(bs, p, 1) / static_cast<double>(pairs.size());
  for (auto& pair : pairs) pair.b_hat -= mean;
  const Vec zero = Vec::Zero(p);

  CenteredSigma out;
  const Vec start = detail::into_box(log_cholesky_pack(detail::sigma_start(pairs, p_phi_r)), chol_box);
  Objective objective = [&](const Vec& x) {
    try {
      return h2(pairs, zero, log_cholesky_unpack(x, p_phi_r));
    } catch (const EstimationError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  out.optim = maximize(objective, start, chol_box, opts);
  out.sigma_r = log_cholesky_unpack(out.optim.argmax, p_phi_r);
  out.value = out.optim.value;
  out.degenerate = sigma_on_boundary(out.sigma_r);
  // A diagonal log-coordinate pinned at its lower bound is also the boundary.
  Eigen::Index k = 0;
  for (std::size_t c = 0; c < p_phi_r; ++c) {
    const double w = chol_box.upper[k] - chol_box.lower[k];
    if (out.optim.argmax[k] - chol_box.lower[k] < 1e-3 * w) out.degenerate = true;
    k += static_cast<Eigen::Index>(p_phi_r - c);
  }
  return out;
}

} // namespace mesde
