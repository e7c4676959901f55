#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mesde/errors.hpp"
#include "mesde/model.hpp"
#include "mesde/parallel.hpp"
#include "mesde/random.hpp"

namespace mesde {

struct RandomEffectDraw {
  double tau = 1.0;
  Vec phi_r;
};

struct SimConfig {
  std::size_t N = 0;
  std::size_t n = 0;
  double T = 0.0;
  double fine_step = 1e-4;
  std::uint64_t seed = 0;
  unsigned workers = 1;

  double h() const noexcept { return T / static_cast<double>(n); }
};

/// Blow-up guard on |Y|.
inline constexpr double kBlowUpLimit = 1e12;

/// Number of fine steps per observation interval; throws ConfigError unless
/// fine_step divides h to relative tolerance 1e-9.
inline std::size_t fine_steps_per_obs(double h, double fine_step) {
  if (!(fine_step > 0.0) || !(h > 0.0)) throw ConfigError("time steps must be positive");
  if (fine_step > h * (1.0 + 1e-9)) throw ConfigError("fine step exceeds the observation step");
  const double ratio = h / fine_step;
  const double m = std::round(ratio);
  if (std::abs(m * fine_step - h) > 1e-9 * h)
    throw ConfigError("fine step " + std::to_string(fine_step) + " does not divide h = " + std::to_string(h));
  return static_cast<std::size_t>(m);
}

inline void validate(const SimConfig& cfg) {
  if (cfg.N == 0 || cfg.n == 0) throw ConfigError("N and n must be positive");
  if (!(cfg.T > 0.0)) throw ConfigError("T must be positive");
  (void)fine_steps_per_obs(cfg.h(), cfg.fine_step);
}

/// Lower Cholesky factor of Sigma_r, reused across draws.
inline Mat effect_factor(const ParamSet& params) {
  if (params.sigma_r.rows() == 0) return Mat(0, 0);
  Eigen::LLT<Mat> llt(params.sigma_r);
  if (llt.info() != Eigen::Success) throw ConfigError("Sigma_r is not positive definite");
  return llt.matrixL();
}

/// One draw of (tau_i, phi_{r,i}): tau ~ f(.; theta_tau) first, then
/// phi_r = mu_r + L z.
inline RandomEffectDraw draw_effect(const ParamSet& params, const Mat& factor, const TauFamily& family,
                                    Rng& rng) {
  RandomEffectDraw d;
  d.tau = family.sample(params.theta_tau, rng);
  const auto p = factor.rows();
  Vec z(p);
  for (Eigen::Index k = 0; k < p; ++k) z[k] = rng.normal();
  d.phi_r = params.mu_r() + factor * z;
  return d;
}

/// N independent draws from one stream.
inline std::vector<RandomEffectDraw> draw_effects(const ParamSet& params, const TauFamily& family, std::size_t N,
                                                  Rng& rng) {
  const Mat factor = effect_factor(params);
  std::vector<RandomEffectDraw> out;
  out.reserve(N);
  for (std::size_t i = 0; i < N; ++i) out.push_back(draw_effect(params, factor, family, rng));
  return out;
}

/// Stream for individual i of a panel simulated with `seed`. Random effects,
/// the initial value and the Brownian increments all come from this stream,
/// so individual i is the same whatever N, n, T or the worker count.
inline Rng individual_stream(std::uint64_t seed, std::size_t i) {
  return Rng::stream({seed, static_cast<std::uint64_t>(i), 0x696e646976ull});
}

namespace detail {

/// Euler-Maruyama on the fine grid for one individual, recording Y at the
/// multiples of each entry of `record_every` into the matching output row.
inline RandomEffectDraw simulate_individual(const ModelSpec& model, const ParamSet& params, const Mat& factor,
                                            std::size_t i, std::uint64_t seed, double fine_step,
                                            std::size_t total_fine_steps,
                                            const std::vector<std::size_t>& record_every,
                                            std::vector<RowMat*>& outputs) {
  Rng rng = individual_stream(seed, i);
  RandomEffectDraw eff = draw_effect(params, factor, model.tau_family, rng);
  double y = model.initial_law.sample(rng);

  const std::size_t pf = model.p_phi_f, pr = model.p_phi_r;
  std::vector<double> af(pf), ar(pr);
  const Vec phi_f = params.phi_f();
  const double tau = eff.tau;
  const double sqrt_tau_dt = std::sqrt(tau * fine_step);
  const auto row = static_cast<Eigen::Index>(i);

  for (std::size_t g = 0; g < outputs.size(); ++g) (*outputs[g])(row, 0) = y;
  for (std::size_t k = 0; k < total_fine_steps; ++k) {
    const double t = static_cast<double>(k) * fine_step;
    double drift = 0.0;
    if (pf > 0) {
      model.drift_fixed(y, af);
      for (std::size_t q = 0; q < pf; ++q) drift += phi_f[static_cast<Eigen::Index>(q)] * af[q];
    }
    if (pr > 0) {
      model.drift_random(y, ar);
      for (std::size_t q = 0; q < pr; ++q) drift += eff.phi_r[static_cast<Eigen::Index>(q)] * ar[q];
    }
    const double c = model.diffusion(t, y, params.eta);
    y += tau * drift * fine_step + sqrt_tau_dt * c * rng.normal();
    if (!std::isfinite(y) || std::abs(y) > kBlowUpLimit)
      throw SimulationError(i, static_cast<double>(k + 1) * fine_step, y);
    const std::size_t step = k + 1;
    for (std::size_t g = 0; g < outputs.size(); ++g)
      if (step % record_every[g] == 0)
        (*outputs[g])(row, static_cast<Eigen::Index>(step / record_every[g])) = y;
  }
  return eff;
}

} // namespace detail

struct SimulatedPanel {
  PanelData panel;
  std::vector<RandomEffectDraw> effects;
};

/// Simulates one fine Euler path per individual on [0, T] and records it on
/// several observation grids at once (each n must give h = T/n divisible by
/// fine_step). Returns one panel per entry of `ns` and the true draws.
inline std::vector<PanelData> simulate_panel_grids(const ModelSpec& model, const ParamSet& params, std::size_t N,
                                                   double T, const std::vector<std::size_t>& ns, double fine_step,
                                                   std::uint64_t seed, unsigned workers,
                                                   std::vector<RandomEffectDraw>* effects_out = nullptr) {
  if (N == 0 || ns.empty()) throw ConfigError("N and the grid list must be non-empty");
  if (!(T > 0.0)) throw ConfigError("T must be positive");
  std::vector<std::size_t> every;
  std::size_t total = 0;
  for (std::size_t n : ns) {
    if (n == 0) throw ConfigError("n must be positive");
    const std::size_t m = fine_steps_per_obs(T / static_cast<double>(n), fine_step);
    every.push_back(m);
    const std::size_t t = m * n;
    if (total != 0 && t != total) throw ConfigError("grids do not share the horizon on the fine grid");
    total = t;
  }
  std::vector<RowMat> mats;
  for (std::size_t n : ns)
    mats.emplace_back(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(n + 1));
  std::vector<RowMat*> outs;
  for (auto& m : mats) outs.push_back(&m);

  const Mat factor = effect_factor(params);
  std::vector<RandomEffectDraw> effects(N);
  parallel_for(N, workers, [&](std::size_t i) {
    effects[i] = detail::simulate_individual(model, params, factor, i, seed, fine_step, total, every, outs);
  });

  std::vector<PanelData> panels;
  for (auto& m : mats) panels.push_back(PanelData::from_horizon(std::move(m), T));
  if (effects_out) *effects_out = std::move(effects);
  return panels;
}

/// Simulates the panel on the fine grid and subsamples to t_j = j T / n.
inline SimulatedPanel simulate_panel(const ModelSpec& model, const ParamSet& params, const SimConfig& cfg) {
  validate(cfg);
  validate_params(params, model);
  SimulatedPanel out;
  auto panels = simulate_panel_grids(model, params, cfg.N, cfg.T, {cfg.n}, cfg.fine_step, cfg.seed, cfg.workers,
                                     &out.effects);
  out.panel = std::move(panels.front());
  return out;
}

} // namespace mesde
