#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "mesde/errors.hpp"
#include "mesde/random.hpp"
#include "mesde/types.hpp"

namespace mesde {

enum class TauKind { LogNormal, Weibull, Exponential, GeneralizedWeibull };

/// Parametric law of the positive time-scale effect tau.
///
/// Parameter vectors, in order:
///   LogNormal(alpha, sigma):              log tau ~ N(alpha, sigma^2)
///   Weibull(alpha, lambda):               f = alpha lambda tau^(alpha-1) exp(-lambda tau^alpha)
///   Exponential(lambda):                  f = lambda exp(-lambda tau)
///   GeneralizedWeibull(gamma, sigma, lambda):
///       z = (tau - lambda) / sigma,       f = (gamma / sigma) z^(gamma-1) exp(-z^gamma), tau > lambda
///
/// Out-of-support points and invalid parameters give a log-density of -inf.
class TauFamily {
public:
  static constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  /// Support of the generalized Weibull starts this far above its shift.
  static constexpr double kShiftGuard = 1e-12;

  TauFamily() = default;
  explicit TauFamily(TauKind kind) : kind_(kind) {}

  static TauFamily log_normal() { return TauFamily(TauKind::LogNormal); }
  static TauFamily weibull() { return TauFamily(TauKind::Weibull); }
  static TauFamily exponential() { return TauFamily(TauKind::Exponential); }
  static TauFamily generalized_weibull() { return TauFamily(TauKind::GeneralizedWeibull); }

  static TauFamily from_name(std::string_view name) {
    if (name == "lognormal") return log_normal();
    if (name == "weibull") return weibull();
    if (name == "exponential") return exponential();
    if (name == "generalized_weibull") return generalized_weibull();
    throw ConfigError("unknown tau family '" + std::string(name) + "'");
  }

  TauKind kind() const noexcept { return kind_; }

  std::string name() const {
    switch (kind_) {
    case TauKind::LogNormal: return "lognormal";
    case TauKind::Weibull: return "weibull";
    case TauKind::Exponential: return "exponential";
    case TauKind::GeneralizedWeibull: return "generalized_weibull";
    }
    return {};
  }

  std::size_t dim() const noexcept {
    switch (kind_) {
    case TauKind::Exponential: return 1;
    case TauKind::GeneralizedWeibull: return 3;
    default: return 2;
    }
  }

  std::vector<std::string> parameter_names() const {
    switch (kind_) {
    case TauKind::LogNormal: return {"alpha", "sigma"};
    case TauKind::Weibull: return {"alpha", "lambda"};
    case TauKind::Exponential: return {"lambda"};
    case TauKind::GeneralizedWeibull: return {"gamma", "sigma", "lambda"};
    }
    return {};
  }

  /// Box used when the model does not override it.
  Box default_bounds() const {
    switch (kind_) {
    case TauKind::LogNormal: return Box(Vec{{-20.0, 1e-4}}, Vec{{20.0, 20.0}});
    case TauKind::Weibull: return Box(Vec{{0.05, 1e-4}}, Vec{{50.0, 1e4}});
    case TauKind::Exponential: return Box(Vec{{1e-4}}, Vec{{1e4}});
    case TauKind::GeneralizedWeibull: return Box(Vec{{0.05, 1e-4, 0.0}}, Vec{{50.0, 1e4, 1e4}});
    }
    return {};
  }

  double log_density(double tau, const Vec& theta) const {
    if (!(tau > 0.0) || !std::isfinite(tau)) return kNegInf;
    switch (kind_) {
    case TauKind::LogNormal: {
      const double alpha = theta[0], sigma = theta[1];
      if (!(sigma > 0.0)) return kNegInf;
      const double u = (std::log(tau) - alpha) / sigma;
      return -std::log(tau) - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * u * u;
    }
    case TauKind::Weibull: {
      const double alpha = theta[0], lambda = theta[1];
      if (!(alpha > 0.0 && lambda > 0.0)) return kNegInf;
      return std::log(alpha) + std::log(lambda) + (alpha - 1.0) * std::log(tau) -
             lambda * std::pow(tau, alpha);
    }
    case TauKind::Exponential: {
      const double lambda = theta[0];
      if (!(lambda > 0.0)) return kNegInf;
      return std::log(lambda) - lambda * tau;
    }
    case TauKind::GeneralizedWeibull: {
      const double gamma = theta[0], sigma = theta[1], shift = theta[2];
      if (!(gamma > 0.0 && sigma > 0.0)) return kNegInf;
      if (!(tau > shift + kShiftGuard)) return kNegInf;
      const double z = (tau - shift) / sigma;
      return std::log(gamma) - std::log(sigma) + (gamma - 1.0) * std::log(z) - std::pow(z, gamma);
    }
    }
    return kNegInf;
  }

  /// Gradient of log_density with respect to theta. Undefined (NaN) off-support.
  Vec log_density_grad(double tau, const Vec& theta) const {
    Vec g(static_cast<Eigen::Index>(dim()));
    switch (kind_) {
    case TauKind::LogNormal: {
      const double alpha = theta[0], sigma = theta[1];
      const double d = std::log(tau) - alpha;
      g[0] = d / (sigma * sigma);
      g[1] = -1.0 / sigma + d * d / (sigma * sigma * sigma);
      break;
    }
    case TauKind::Weibull: {
      const double alpha = theta[0], lambda = theta[1];
      const double lt = std::log(tau);
      const double ta = std::pow(tau, alpha);
      g[0] = 1.0 / alpha + lt - lambda * ta * lt;
      g[1] = 1.0 / lambda - ta;
      break;
    }
    case TauKind::Exponential:
      g[0] = 1.0 / theta[0] - tau;
      break;
    case TauKind::GeneralizedWeibull: {
      const double gamma = theta[0], sigma = theta[1], shift = theta[2];
      const double z = (tau - shift) / sigma;
      const double lz = std::log(z);
      const double zg = std::pow(z, gamma);
      g[0] = 1.0 / gamma + lz - zg * lz;
      g[1] = (gamma * zg - gamma) / sigma;
      g[2] = -(gamma - 1.0) / (tau - shift) + gamma * zg / (tau - shift);
      break;
    }
    }
    return g;
  }

  double sample(const Vec& theta, Rng& rng) const {
    switch (kind_) {
    case TauKind::LogNormal: return std::exp(theta[0] + theta[1] * rng.normal());
    case TauKind::Weibull: return std::pow(rng.exponential() / theta[1], 1.0 / theta[0]);
    case TauKind::Exponential: return rng.exponential() / theta[0];
    case TauKind::GeneralizedWeibull:
      return theta[2] + theta[1] * std::pow(rng.exponential(), 1.0 / theta[0]);
    }
    return 0.0;
  }

  double mean(const Vec& theta) const {
    switch (kind_) {
    case TauKind::LogNormal: return std::exp(theta[0] + 0.5 * theta[1] * theta[1]);
    case TauKind::Weibull: return std::pow(theta[1], -1.0 / theta[0]) * std::tgamma(1.0 + 1.0 / theta[0]);
    case TauKind::Exponential: return 1.0 / theta[0];
    case TauKind::GeneralizedWeibull: return theta[2] + theta[1] * std::tgamma(1.0 + 1.0 / theta[0]);
    }
    return 0.0;
  }

  double variance(const Vec& theta) const {
    switch (kind_) {
    case TauKind::LogNormal: {
      const double s2 = theta[1] * theta[1];
      return std::expm1(s2) * std::exp(2.0 * theta[0] + s2);
    }
    case TauKind::Weibull: {
      const double g1 = std::tgamma(1.0 + 1.0 / theta[0]);
      const double g2 = std::tgamma(1.0 + 2.0 / theta[0]);
      return std::pow(theta[1], -2.0 / theta[0]) * (g2 - g1 * g1);
    }
    case TauKind::Exponential: return 1.0 / (theta[0] * theta[0]);
    case TauKind::GeneralizedWeibull: {
      const double g1 = std::tgamma(1.0 + 1.0 / theta[0]);
      const double g2 = std::tgamma(1.0 + 2.0 / theta[0]);
      return theta[1] * theta[1] * (g2 - g1 * g1);
    }
    }
    return 0.0;
  }

  /// Moment-type starting point for maximizing sum_i log f(tau_i; theta).
  Vec initial_guess(const Vec& taus) const {
    const double n = static_cast<double>(taus.size());
    const double m = taus.mean();
    const double v = std::max((taus.array() - m).square().sum() / std::max(n - 1.0, 1.0), 1e-12 * m * m);
    switch (kind_) {
    case TauKind::LogNormal: {
      const Vec lt = taus.array().log();
      const double lm = lt.mean();
      const double lv = (lt.array() - lm).square().sum() / std::max(n, 1.0);
      return Vec{{lm, std::sqrt(std::max(lv, 1e-8))}};
    }
    case TauKind::Weibull: {
      const double shape = std::clamp(std::pow(std::sqrt(v) / m, -1.086), 0.1, 20.0);
      const double scale = m / std::tgamma(1.0 + 1.0 / shape);
      return Vec{{shape, std::pow(scale, -shape)}};
    }
    case TauKind::Exponential: return Vec{{1.0 / m}};
    case TauKind::GeneralizedWeibull: {
      const double lo = taus.minCoeff();
      const double shift = std::max(0.0, lo - 0.1 * std::sqrt(v));
      const double mz = m - shift;
      const double shape = std::clamp(std::pow(std::sqrt(v) / mz, -1.086), 0.1, 20.0);
      return Vec{{shape, mz / std::tgamma(1.0 + 1.0 / shape), shift}};
    }
    }
    return {};
  }

private:
  TauKind kind_ = TauKind::Exponential;
};

} // namespace mesde
