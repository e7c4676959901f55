// Simulates a Model 1 panel and runs both estimation stages on it.
#include <iostream>

#include "mesde/presets.hpp"
#include "mesde/simulate.hpp"
#include "mesde/stage1.hpp"
#include "mesde/stage2.hpp"

int main() {
  using namespace mesde;
  const Preset p = model1();
  const auto sim = simulate_panel(p.model, p.truth, SimConfig{100, 500, 5.0, 0.001, 42, 0});

  Stage1Options o1;
  const auto s1 = run_stage1(sim.panel, p.model, o1);
  std::cout << "eta_hat = " << s1.eta_hat.transpose() << " (se " << s1.se_eta.transpose() << ")\n";
  std::cout << "theta_tau_hat = " << s1.theta_tau_hat.transpose() << " (se " << s1.se_theta.transpose() << ")\n";

  const auto pairs = sufficient_stats_all(sim.panel, p.model, s1.eta_hat, s1.tau_hat);
  const auto s2 = fit_drift(pairs, p.model.p_phi_r, p.model.bounds.mu, p.model.bounds.sigma_r_chol, Stage2Options{});
  std::cout << "mu_hat = " << s2.mu_hat.transpose() << "\n";
  std::cout << "Sigma_r_hat =\n" << s2.sigma_r_hat << "\n";
  std::cout << "truth: eta " << p.truth.eta.transpose() << ", theta_tau " << p.truth.theta_tau.transpose() << ", mu "
            << p.truth.mu.transpose() << "\n";
}
