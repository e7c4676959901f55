#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mesde/errors.hpp"
#include "mesde/random.hpp"
#include "mesde/tau_family.hpp"
#include "mesde/types.hpp"

namespace mesde {

/// Drift basis a(y); writes the basis vector into `out` (already sized).
using DriftBasis = std::function<void(double y, std::span<double> out)>;

/// Diffusion coefficient c(t, y; eta). Time is part of the state so that
/// time-inhomogeneous coefficients such as exp(eta t / 2) fit the same interface.
using Diffusion = std::function<double(double t, double y, const Vec& eta)>;

/// Optional analytic d/d(eta) log S(t, y; eta); writes into `out` (size p_eta).
using LogSGradient = std::function<void(double t, double y, const Vec& eta, std::span<double> out)>;

/// Law of Y_i(0).
struct InitialLaw {
  std::string description = "constant 0";
  double constant = 0.0;
  std::function<double(Rng&)> sampler; ///< empty means `constant`

  static InitialLaw fixed(double value) {
    return InitialLaw{"constant " + std::to_string(value), value, {}};
  }

  double sample(Rng& rng) const { return sampler ? sampler(rng) : constant; }
};

/// Box constraints for every parameter block. Sigma_r is constrained through
/// its log-Cholesky coordinates (see log_cholesky_pack).
struct ParamBounds {
  Box eta;
  Box theta_tau;
  Box mu;
  Box sigma_r_chol;
};

/// Human-readable labels used in reports and Monte Carlo tables.
struct ParamNames {
  std::vector<std::string> eta;
  std::vector<std::string> theta_tau;
  std::vector<std::string> mu;      ///< layout (phi_f, mu_r)
  std::vector<std::string> sigma_r; ///< vech, column-major lower triangle
};

/// A mixed-effects SDE
///   dY_i = tau_i (phi_f . a_f(Y_i) + phi_{r,i} . a_r(Y_i)) dt + sqrt(tau_i) c(t, Y_i; eta) dW_i.
struct ModelSpec {
  std::string name;
  std::size_t p_eta = 0;
  std::size_t p_phi_f = 0;
  std::size_t p_phi_r = 0;
  DriftBasis drift_fixed;
  DriftBasis drift_random;
  Diffusion diffusion;
  LogSGradient log_s_gradient;
  /// c depends on t only, so S can be evaluated once per grid time.
  bool time_only_diffusion = false;
  /// log S(t, y; eta) = eta . g(t, y) exactly, with g given by log_s_gradient.
  /// Lets estimators cache g once per panel instead of re-evaluating c.
  bool log_linear_in_eta = false;
  TauFamily tau_family;
  ParamBounds bounds;
  InitialLaw initial_law;
  /// Range of y on which positivity of c is spot-checked by validate_model.
  double check_lo = -5.0;
  double check_hi = 5.0;
  double check_t_hi = 10.0;
  ParamNames names;

  std::size_t p_tau() const noexcept { return tau_family.dim(); }
  std::size_t p_phi() const noexcept { return p_phi_f + p_phi_r; }
  std::size_t sigma_dim() const noexcept { return p_phi_r * (p_phi_r + 1) / 2; }
};

/// Evaluates a = (a_f(y), a_r(y)) into `out` (size p_phi).
inline void eval_drift_basis(const ModelSpec& model, double y, std::span<double> out) {
  if (model.p_phi_f > 0) model.drift_fixed(y, out.first(model.p_phi_f));
  if (model.p_phi_r > 0) model.drift_random(y, out.subspan(model.p_phi_f, model.p_phi_r));
}

/// Squared diffusion coefficient S = c^2.
inline double eval_S(const ModelSpec& model, double t, double y, const Vec& eta) {
  const double c = model.diffusion(t, y, eta);
  const double s = c * c;
  if (!std::isfinite(s) || !(s > 0.0))
    throw ModelError("diffusion coefficient not finite and positive", t, y, to_std(eta));
  return s;
}

/// g(y; eta) = d/d(eta) log S. Uses the model's analytic hook when present,
/// otherwise central differences with step 1e-5 (1 + |eta_k|).
inline void eval_log_s_gradient(const ModelSpec& model, double t, double y, const Vec& eta,
                                std::span<double> out) {
  if (model.log_s_gradient) {
    model.log_s_gradient(t, y, eta, out);
    return;
  }
  Vec e = eta;
  for (std::size_t k = 0; k < model.p_eta; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const double step = 1e-5 * (1.0 + std::abs(eta[kk]));
    e[kk] = eta[kk] + step;
    const double up = std::log(eval_S(model, t, y, e));
    e[kk] = eta[kk] - step;
    const double down = std::log(eval_S(model, t, y, e));
    e[kk] = eta[kk];
    out[k] = (up - down) / (2.0 * step);
  }
}

/// Spot-checks the model invariants: declared dimensions match the bounds,
/// drift bases are finite and c > 0 on a grid of (t, y, eta) covering the
/// declared check range and the eta box.
inline void validate_model(const ModelSpec& model) {
  if (static_cast<std::size_t>(model.bounds.eta.dim()) != model.p_eta)
    throw ModelError("model '" + model.name + "': eta bounds dimension mismatch");
  if (model.bounds.theta_tau.dim() != model.p_tau())
    throw ModelError("model '" + model.name + "': theta_tau bounds dimension mismatch");
  if (model.bounds.mu.dim() != model.p_phi())
    throw ModelError("model '" + model.name + "': mu bounds dimension mismatch");
  if (model.bounds.sigma_r_chol.dim() != model.sigma_dim())
    throw ModelError("model '" + model.name + "': sigma_r bounds dimension mismatch");
  if (!model.diffusion) throw ModelError("model '" + model.name + "': missing diffusion");
  if (model.log_linear_in_eta && !model.log_s_gradient)
    throw ModelError("model '" + model.name + "': log-linear diffusion needs the gradient hook");
  if (model.p_phi_f > 0 && !model.drift_fixed)
    throw ModelError("model '" + model.name + "': missing fixed drift basis");
  if (model.p_phi_r > 0 && !model.drift_random)
    throw ModelError("model '" + model.name + "': missing random drift basis");

  constexpr int kGrid = 11;
  std::vector<double> a(model.p_phi());
  std::vector<Vec> etas;
  if (model.p_eta == 0) {
    etas.emplace_back(0);
  } else {
    for (int k = 0; k < 3; ++k) {
      const double w = k / 2.0;
      etas.push_back(model.bounds.eta.lower * (1.0 - w) + model.bounds.eta.upper * w);
    }
  }
  for (int iy = 0; iy < kGrid; ++iy) {
    const double y = model.check_lo + (model.check_hi - model.check_lo) * iy / (kGrid - 1);
    eval_drift_basis(model, y, a);
    for (double v : a)
      if (!std::isfinite(v))
        throw ModelError("model '" + model.name + "': drift basis not finite", 0.0, y, {});
    for (int it = 0; it < 3; ++it) {
      const double t = model.check_t_hi * it / 2.0;
      for (const auto& eta : etas) {
        const double s = eval_S(model, t, y, eta);
        if (model.log_linear_in_eta) {
          std::vector<double> g(model.p_eta);
          model.log_s_gradient(t, y, eta, g);
          double lin = 0.0;
          for (std::size_t k = 0; k < model.p_eta; ++k) lin += eta[static_cast<Eigen::Index>(k)] * g[k];
          if (std::abs(std::log(s) - lin) > 1e-9 * (1.0 + std::abs(lin)))
            throw ModelError("model '" + model.name + "': log S is not eta . g as declared", t, y, to_std(eta));
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Half-vectorization, column-major lower triangle: (S11, S21, ..., Sp1, S22, ...).
inline Vec vech(const Mat& m) {
  const auto p = m.rows();
  Vec out(p * (p + 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index c = 0; c < p; ++c)
    for (Eigen::Index r = c; r < p; ++r) out[k++] = m(r, c);
  return out;
}

inline Mat unvech(const Vec& v, std::size_t p) {
  const auto pp = static_cast<Eigen::Index>(p);
  Mat m(pp, pp);
  Eigen::Index k = 0;
  for (Eigen::Index c = 0; c < pp; ++c)
    for (Eigen::Index r = c; r < pp; ++r) m(r, c) = m(c, r) = v[k++];
  return m;
}

/// Maps an SPD matrix to unconstrained coordinates: the lower Cholesky factor
/// in column-major vech order with the diagonal replaced by its logarithm.
inline Vec log_cholesky_pack(const Mat& sigma) {
  if (sigma.rows() == 0) return Vec(0);
  Eigen::LLT<Mat> llt(sigma);
  if (llt.info() != Eigen::Success) throw EstimationError("log-Cholesky: matrix is not positive definite");
  Mat l = llt.matrixL();
  for (Eigen::Index k = 0; k < l.rows(); ++k) l(k, k) = std::log(l(k, k));
  return vech(l);
}

/// Inverse of log_cholesky_pack. Every real vector maps to an SPD matrix.
inline Mat log_cholesky_unpack(const Vec& x, std::size_t p) {
  const auto pp = static_cast<Eigen::Index>(p);
  Mat l = Mat::Zero(pp, pp);
  Eigen::Index k = 0;
  for (Eigen::Index c = 0; c < pp; ++c)
    for (Eigen::Index r = c; r < pp; ++r) l(r, c) = (r == c) ? std::exp(x[k++]) : x[k++];
  return l * l.transpose();
}

/// theta = (eta, theta_tau, mu, Sigma_r) with mu = (phi_f, mu_r).
struct ParamSet {
  Vec eta;
  Vec theta_tau;
  Vec mu;
  Mat sigma_r;

  std::size_t p_phi_r() const noexcept { return static_cast<std::size_t>(sigma_r.rows()); }
  std::size_t p_phi_f() const noexcept { return static_cast<std::size_t>(mu.size()) - p_phi_r(); }
  Vec phi_f() const { return mu.head(static_cast<Eigen::Index>(p_phi_f())); }
  Vec mu_r() const { return mu.tail(static_cast<Eigen::Index>(p_phi_r())); }
};

/// Natural flat layout (eta, theta_tau, mu, vech(Sigma_r)).
inline Vec pack(const ParamSet& p) {
  const Vec s = vech(p.sigma_r);
  Vec out(p.eta.size() + p.theta_tau.size() + p.mu.size() + s.size());
  out << p.eta, p.theta_tau, p.mu, s;
  return out;
}

inline ParamSet unpack(const Vec& x, std::size_t p_eta, std::size_t p_tau, std::size_t p_phi,
                       std::size_t p_phi_r) {
  const std::size_t q = p_phi_r * (p_phi_r + 1) / 2;
  if (static_cast<std::size_t>(x.size()) != p_eta + p_tau + p_phi + q)
    throw ConfigError("parameter vector has wrong length");
  ParamSet p;
  Eigen::Index off = 0;
  auto take = [&](std::size_t len) {
    Vec v = x.segment(off, static_cast<Eigen::Index>(len));
    off += static_cast<Eigen::Index>(len);
    return v;
  };
  p.eta = take(p_eta);
  p.theta_tau = take(p_tau);
  p.mu = take(p_phi);
  p.sigma_r = unvech(take(q), p_phi_r);
  return p;
}

/// Checks dimensions, symmetry and positive definiteness of Sigma_r, and the
/// bounds of `model`.
inline void validate_params(const ParamSet& p, const ModelSpec& model) {
  if (static_cast<std::size_t>(p.eta.size()) != model.p_eta ||
      static_cast<std::size_t>(p.theta_tau.size()) != model.p_tau() ||
      static_cast<std::size_t>(p.mu.size()) != model.p_phi() || p.p_phi_r() != model.p_phi_r ||
      p.sigma_r.cols() != p.sigma_r.rows())
    throw ConfigError("parameter dimensions do not match model '" + model.name + "'");
  if (p.sigma_r.size() > 0) {
    if (!p.sigma_r.isApprox(p.sigma_r.transpose(), 1e-12))
      throw ConfigError("Sigma_r is not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> eig(p.sigma_r, Eigen::EigenvaluesOnly);
    if (!(eig.eigenvalues().minCoeff() > 0.0)) throw ConfigError("Sigma_r is not positive definite");
  }
  if (!model.bounds.eta.contains(p.eta)) throw ConfigError("eta outside bounds");
  if (!model.bounds.theta_tau.contains(p.theta_tau)) throw ConfigError("theta_tau outside bounds");
  if (!model.bounds.mu.contains(p.mu)) throw ConfigError("mu outside bounds");
  if (p.sigma_r.size() > 0 && !model.bounds.sigma_r_chol.contains(log_cholesky_pack(p.sigma_r)))
    throw ConfigError("Sigma_r outside bounds");
}

// ---------------------------------------------------------------------------
// Panel data
// ---------------------------------------------------------------------------

/// N trajectories observed at t_j = j h, j = 0..n, on a common grid.
class PanelData {
public:
  PanelData() = default;

  PanelData(RowMat values, double h) : y_(std::move(values)), h_(h) {
    if (y_.cols() < 2) throw DataError("panel needs at least two observation times");
    if (y_.rows() < 1) throw DataError("panel has no individuals");
    if (!(h_ > 0.0) || !std::isfinite(h_)) throw DataError("panel step h must be positive");
    if (!y_.allFinite()) throw DataError("panel contains non-finite values");
    t_ = h_ * static_cast<double>(n());
  }

  /// Builds from a horizon instead of a step; T = n h holds exactly as given.
  static PanelData from_horizon(RowMat values, double horizon) {
    const auto steps = static_cast<double>(values.cols() - 1);
    PanelData p(std::move(values), horizon / steps);
    p.t_ = horizon;
    return p;
  }

  std::size_t N() const noexcept { return static_cast<std::size_t>(y_.rows()); }
  std::size_t n() const noexcept { return static_cast<std::size_t>(y_.cols() - 1); }
  double h() const noexcept { return h_; }
  double T() const noexcept { return t_; }
  double time(std::size_t j) const noexcept { return static_cast<double>(j) * h_; }
  const RowMat& values() const noexcept { return y_; }
  double operator()(std::size_t i, std::size_t j) const {
    return y_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  std::span<const double> row(std::size_t i) const {
    return {y_.data() + static_cast<std::ptrdiff_t>(i) * y_.cols(), static_cast<std::size_t>(y_.cols())};
  }

  /// Normalized increment y_ij = h^{-1/2} (Y_ij - Y_i,j-1), j >= 1.
  double increment(std::size_t i, std::size_t j) const {
    return ((*this)(i, j) - (*this)(i, j - 1)) / std::sqrt(h_);
  }

  /// First `count` individuals.
  PanelData head(std::size_t count) const {
    PanelData p;
    p.y_ = y_.topRows(static_cast<Eigen::Index>(count));
    p.h_ = h_;
    p.t_ = t_;
    return p;
  }

private:
  RowMat y_;
  double h_ = 0.0;
  double t_ = 0.0;
};

} // namespace mesde
