#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mesde/errors.hpp"
#include "mesde/model.hpp"

namespace mesde {

/// A named model together with reference parameter values and a default design.
struct Preset {
  ModelSpec model;
  ParamSet truth;
  std::size_t N = 200;
  std::size_t n = 1000;
  double T = 5.0;
  double fine_step = 1e-4;
  std::string description;
};

namespace detail {

inline double inv_hypot1(double y) { return 1.0 / std::sqrt(1.0 + y * y); }

inline Box sigma_chol_box(std::size_t p) {
  const std::size_t q = p * (p + 1) / 2;
  Vec lo(static_cast<Eigen::Index>(q)), hi(static_cast<Eigen::Index>(q));
  Eigen::Index k = 0;
  for (std::size_t c = 0; c < p; ++c)
    for (std::size_t r = c; r < p; ++r, ++k) {
      lo[k] = (r == c) ? -12.0 : -50.0;
      hi[k] = (r == c) ? 5.0 : 50.0;
    }
  return Box(lo, hi);
}

inline ModelSpec base_model(std::string name, std::size_t p_eta, std::size_t p_phi_f, std::size_t p_phi_r,
                            TauFamily family) {
  ModelSpec m;
  m.name = std::move(name);
  m.p_eta = p_eta;
  m.p_phi_f = p_phi_f;
  m.p_phi_r = p_phi_r;
  m.tau_family = family;
  m.bounds.eta = Box::uniform(p_eta, -3.0, 3.0);
  m.bounds.theta_tau = family.default_bounds();
  m.bounds.mu = Box::uniform(p_phi_f + p_phi_r, -100.0, 100.0);
  m.bounds.sigma_r_chol = sigma_chol_box(p_phi_r);
  m.names.eta = p_eta == 1 ? std::vector<std::string>{"eta"} : std::vector<std::string>{};
  m.names.theta_tau = family.parameter_names();
  return m;
}

inline void atan_diffusion(ModelSpec& m) {
  m.diffusion = [](double, double y, const Vec& eta) { return std::exp(eta[0] * std::atan(y)); };
  m.log_s_gradient = [](double, double y, const Vec&, std::span<double> out) { out[0] = 2.0 * std::atan(y); };
  m.log_linear_in_eta = true;
}

} // namespace detail

/// Model 1: dY = tau phi (-1/sqrt(1+Y^2)) dt + sqrt(tau) exp(eta t / 2) dW,
/// phi ~ N(mu, omega^2), tau ~ LogNormal(alpha, sigma).
inline Preset model1() {
  Preset p;
  auto& m = p.model;
  m = detail::base_model("model1", 1, 0, 1, TauFamily::log_normal());
  m.drift_random = [](double y, std::span<double> out) { out[0] = -detail::inv_hypot1(y); };
  m.diffusion = [](double t, double, const Vec& eta) { return std::exp(0.5 * eta[0] * t); };
  m.log_s_gradient = [](double t, double, const Vec&, std::span<double> out) { out[0] = t; };
  m.time_only_diffusion = true;
  m.bounds.eta = Box::uniform(1, -2.0, 3.0);
  m.names.mu = {"mu"};
  m.names.sigma_r = {"omega^2"};
  p.truth.eta = Vec{{0.5}};
  p.truth.theta_tau = Vec{{-0.7, 0.7}};
  p.truth.mu = Vec{{2.0}};
  p.truth.sigma_r = Mat::Constant(1, 1, 1.0);
  p.description = "tau-scaled drift -phi/sqrt(1+y^2), time-varying diffusion exp(eta t/2), lognormal tau";
  return p;
}

/// Model 2: fixed-effect basis -1/sqrt(1+y^2) (phi_2), random basis
/// -y/sqrt(1+y^2) (phi_1 ~ N(mu_1, omega_1^2)), c = exp(eta atan y),
/// tau ~ Weibull(alpha, lambda). mu layout is (mu_2, mu_1).
inline Preset model2() {
  Preset p;
  auto& m = p.model;
  m = detail::base_model("model2", 1, 1, 1, TauFamily::weibull());
  m.drift_fixed = [](double y, std::span<double> out) { out[0] = -detail::inv_hypot1(y); };
  m.drift_random = [](double y, std::span<double> out) { out[0] = -y * detail::inv_hypot1(y); };
  detail::atan_diffusion(m);
  m.names.mu = {"mu2", "mu1"};
  m.names.sigma_r = {"omega1^2"};
  p.truth.eta = Vec{{0.5}};
  p.truth.theta_tau = Vec{{1.0, 0.6}};
  p.truth.mu = Vec{{1.0, 2.0}};
  p.truth.sigma_r = Mat::Constant(1, 1, 1.0);
  p.T = 10.0;
  p.description = "fixed and random drift effects, diffusion exp(eta atan y), Weibull tau";
  return p;
}

/// Model 3: random bases (-y/sqrt(1+y^2), -1/sqrt(1+y^2)), full 2x2 Sigma_r,
/// c = exp(eta atan y), tau ~ Exponential(lambda).
inline Preset model3() {
  Preset p;
  auto& m = p.model;
  m = detail::base_model("model3", 1, 0, 2, TauFamily::exponential());
  m.drift_random = [](double y, std::span<double> out) {
    const double s = detail::inv_hypot1(y);
    out[0] = -y * s;
    out[1] = -s;
  };
  detail::atan_diffusion(m);
  m.names.mu = {"mu1", "mu2"};
  m.names.sigma_r = {"omega1^2", "omega3", "omega2^2"};
  p.truth.eta = Vec{{0.5}};
  p.truth.theta_tau = Vec{{1.0}};
  p.truth.mu = Vec{{2.0, 1.0}};
  p.truth.sigma_r = (Mat(2, 2) << 1.0, -0.2, -0.2, 0.5).finished();
  p.T = 10.0;
  p.n = 2000;
  p.description = "two correlated random drift effects, diffusion exp(eta atan y), exponential tau";
  return p;
}

/// Membrane-potential model: dY = tau (phi_1 + phi_2 Y) dt + sqrt(tau (1 + eta Y^2)) dW
/// with a generalized Weibull tau. The reference values describe a stable
/// (mean-reverting) stand-in used for synthetic panels.
inline Preset neuronal() {
  Preset p;
  auto& m = p.model;
  m = detail::base_model("neuronal", 1, 0, 2, TauFamily::generalized_weibull());
  m.drift_random = [](double y, std::span<double> out) {
    out[0] = 1.0;
    out[1] = y;
  };
  m.diffusion = [](double, double y, const Vec& eta) { return std::sqrt(1.0 + eta[0] * y * y); };
  m.log_s_gradient = [](double, double y, const Vec& eta, std::span<double> out) {
    out[0] = y * y / (1.0 + eta[0] * y * y);
  };
  m.bounds.eta = Box::uniform(1, -0.05, 1.0);
  m.check_lo = -3.0;
  m.check_hi = 3.0;
  m.names.mu = {"mu1", "mu2"};
  m.names.sigma_r = {"sigma11", "sigma21", "sigma22"};
  m.initial_law = InitialLaw::fixed(-0.489);
  p.truth.eta = Vec{{-0.013}};
  p.truth.theta_tau = Vec{{3.447, 4.592, 3.699}};
  p.truth.mu = Vec{{-5.056, -10.344}};
  p.truth.sigma_r = (Mat(2, 2) << 0.098, 0.122, 0.122, 2.322).finished();
  p.N = 240;
  p.n = 2000;
  p.T = 2000 * 0.00015;
  p.fine_step = 0.00005;
  p.description = "membrane-potential model with diffusion sqrt(1 + eta y^2) and generalized Weibull tau";
  return p;
}

/// Pure Brownian motion scaled by tau: no drift, c = 1, nothing to estimate for eta.
inline Preset brownian() {
  Preset p;
  auto& m = p.model;
  m = detail::base_model("bm", 0, 0, 0, TauFamily::log_normal());
  m.diffusion = [](double, double, const Vec&) { return 1.0; };
  m.time_only_diffusion = true;
  p.truth.eta = Vec(0);
  p.truth.theta_tau = Vec{{0.0, 0.5}};
  p.truth.mu = Vec(0);
  p.truth.sigma_r = Mat(0, 0);
  p.description = "tau-scaled Brownian motion";
  return p;
}

/// No drift, c = exp(eta atan y), lognormal tau.
inline Preset atan_driftless() {
  Preset p;
  auto& m = p.model;
  m = detail::base_model("atan", 1, 0, 0, TauFamily::log_normal());
  detail::atan_diffusion(m);
  p.truth.eta = Vec{{0.5}};
  p.truth.theta_tau = Vec{{0.0, 0.5}};
  p.truth.mu = Vec(0);
  p.truth.sigma_r = Mat(0, 0);
  p.description = "driftless diffusion exp(eta atan y)";
  return p;
}

/// Ornstein-Uhlenbeck with random level and rate, known unit diffusion.
inline Preset ou() {
  Preset p;
  auto& m = p.model;
  m = detail::base_model("ou", 0, 0, 2, TauFamily::exponential());
  m.drift_random = [](double y, std::span<double> out) {
    out[0] = 1.0;
    out[1] = -y;
  };
  m.diffusion = [](double, double, const Vec&) { return 1.0; };
  m.time_only_diffusion = true;
  m.names.mu = {"mu1", "mu2"};
  m.names.sigma_r = {"sigma11", "sigma21", "sigma22"};
  p.truth.eta = Vec(0);
  p.truth.theta_tau = Vec{{1.0}};
  p.truth.mu = Vec{{1.0, 2.0}};
  p.truth.sigma_r = (Mat(2, 2) << 0.25, 0.0, 0.0, 0.25).finished();
  p.T = 10.0;
  p.description = "Ornstein-Uhlenbeck with random level and rate, c = 1";
  return p;
}

inline std::vector<std::string> preset_names() { return {"model1", "model2", "model3", "neuronal", "bm", "atan", "ou"}; }

inline Preset preset(const std::string& name) {
  if (name == "model1" || name == "1") return model1();
  if (name == "model2" || name == "2") return model2();
  if (name == "model3" || name == "3") return model3();
  if (name == "neuronal") return neuronal();
  if (name == "bm") return brownian();
  if (name == "atan") return atan_driftless();
  if (name == "ou") return ou();
  throw ConfigError("unknown model preset '" + name + "'");
}

/// Flat parameter names in the natural layout (eta, theta_tau, mu, vech Sigma_r).
inline std::vector<std::string> parameter_names(const ModelSpec& m) {
  std::vector<std::string> out;
  for (const auto* part : {&m.names.eta, &m.names.theta_tau, &m.names.mu, &m.names.sigma_r})
    out.insert(out.end(), part->begin(), part->end());
  return out;
}

} // namespace mesde
