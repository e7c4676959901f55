// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// when any criterion fails. Criteria 6 and 7 are fast; 1-5 run Monte Carlo
// designs and take several minutes on one core.
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "mesde/mc.hpp"
#include "mesde/optim.hpp"
#include "mesde/presets.hpp"
#include "mesde/simulate.hpp"
#include "mesde/stage1.hpp"
#include "mesde/stage2.hpp"

using namespace mesde;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
};

std::vector<std::pair<std::string, bool>> g_results;

void report(int id, const std::string& title, const Outcome& o) {
  std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << title << " | " << o.detail.str()
            << std::endl;
  g_results.emplace_back(title, o.pass);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double slope(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
  }
  return sxy / sxx;
}

Mat random_spd(Rng& rng, int p, double floor) {
  Mat a(p, p);
  for (int r = 0; r < p; ++r)
    for (int c = 0; c < p; ++c) a(r, c) = rng.normal();
  return a * a.transpose() / p + floor * Mat::Identity(p, p);
}

std::vector<SufficientPair> random_pairs(Rng& rng, std::size_t N, int p, double scale = 5.0) {
  std::vector<SufficientPair> out;
  for (std::size_t i = 0; i < N; ++i) {
    const Mat m = scale * random_spd(rng, p, 0.5);
    Vec v(p);
    for (int k = 0; k < p; ++k) v[k] = 0.6 * scale * rng.normal();
    out.push_back(make_pair(m, v));
  }
  return out;
}

double gaussian_logpdf(const Vec& x, const Vec& mu, const Mat& cov) {
  Eigen::LLT<Mat> llt(cov);
  const Mat l = llt.matrixL();
  const Vec z = l.triangularView<Eigen::Lower>().solve(x - mu);
  return -0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) -
         l.diagonal().array().log().sum() - 0.5 * z.squaredNorm();
}

ModelSpec rescaled(const ModelSpec& m, double k) {
  ModelSpec out = m;
  const auto base = m.diffusion;
  out.diffusion = [base, k](double t, double y, const Vec& eta) { return std::sqrt(k) * base(t, y, eta); };
  out.log_linear_in_eta = false;
  return out;
}

Outcome analytic_suite() {
  Outcome o;
  Rng rng(2024);

  // H11 is unchanged when c is multiplied by a constant.
  double rescale_gap = 0.0;
  for (const auto& preset_model : {model1(), atan_driftless(), neuronal()}) {
    const auto& m = preset_model.model;
    const auto sim = simulate_panel(m, preset_model.truth, SimConfig{20, 200, 1.0, 0.005, 7, 1});
    for (double k : {1e-3, 0.5, 7.0, 1e4})
      for (double e : {-0.01, 0.2, 0.8}) {
        const Vec eta{{e}};
        rescale_gap = std::max(rescale_gap, std::abs(h11(sim.panel, rescaled(m, k), eta) - h11(sim.panel, m, eta)));
      }
  }

  // Degenerate covariance against the m = 1e8 regularized Gaussian, with pairs
  // at unit information scale (the gap is first order in 1/m times |C^-1|).
  double degenerate_gap = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto pairs = random_pairs(rng, 10, 3, 1.0);
    const Mat sigma_r = random_spd(rng, 2, 0.1);
    const Vec mu{{rng.normal(), rng.normal(), rng.normal()}};
    double regularized = 0.0;
    for (const auto& pair : pairs) {
      Mat cov = pair.m_inv + 1e-8 * Mat::Identity(3, 3);
      cov.bottomRightCorner(2, 2) += sigma_r;
      regularized += gaussian_logpdf(pair.b_hat, mu, cov);
    }
    degenerate_gap = std::max(degenerate_gap, std::abs(h2(pairs, mu, sigma_r) - regularized));
  }

  // mu0(I) against the numerical argmax of H2(., I).
  double mu0_gap = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const auto pairs = random_pairs(rng, 12, 2);
    OptimOptions opts;
    opts.x_tol = 1e-10;
    opts.f_tol = 1e-14;
    const auto r = maximize([&](const Vec& m) { return h2(pairs, m, Mat::Identity(2, 2)); }, Vec::Zero(2),
                            Box::uniform(2, -20.0, 20.0), opts);
    mu0_gap = std::max(mu0_gap, (r.argmax - mu0_explicit(pairs)).cwiseAbs().maxCoeff());
  }

  // Closed-form mu score against central differences (relative to 1 + |fd|).
  double score_gap = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const auto pairs = random_pairs(rng, 15, 3);
    const Mat sigma_r = random_spd(rng, 2, 0.2);
    const Vec mu{{rng.normal(), rng.normal(), rng.normal()}};
    const Vec closed = h2_mu_score(pairs, mu, sigma_r);
    const Vec fd = fd_gradient([&](const Vec& m) { return h2(pairs, m, sigma_r); }, mu, 1e-6);
    for (Eigen::Index k = 0; k < 3; ++k)
      score_gap = std::max(score_gap, std::abs(closed[k] - fd[k]) / (1.0 + std::abs(fd[k])));
  }

  // p_phi = 1: numerical integral of the conditional likelihood.
  double quad_gap = 0.0;
  boost::math::quadrature::gauss_kronrod<double, 61> gk;
  for (int trial = 0; trial < 20; ++trial) {
    const double m = 0.5 + 10.0 * rng.uniform();
    const double v = 4.0 * rng.normal();
    const double mu = 2.0 * rng.normal();
    const double s2 = 0.05 + 2.0 * rng.uniform();
    const auto pair = make_pair(Mat::Constant(1, 1, m), Vec{{v}});
    auto integrand = [&](double phi) {
      const double z = (phi - mu) / std::sqrt(s2);
      return std::exp(phi * v - 0.5 * m * phi * phi - 0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi * s2);
    };
    const double centre = (v + mu / s2) / (m + 1.0 / s2);
    const double width = 12.0 / std::sqrt(m + 1.0 / s2);
    const double quad = gk.integrate(integrand, centre - width, centre + width, 10, 1e-13);
    const double closed = std::exp(h2({pair}, Vec{{mu}}, Mat::Constant(1, 1, s2)) + 0.5 * v * v / m +
                                   0.5 * std::log(2.0 * std::numbers::pi / m));
    quad_gap = std::max(quad_gap, std::abs(closed / quad - 1.0));
  }

  o.pass = rescale_gap < 1e-9 && degenerate_gap < 1e-5 && mu0_gap < 1e-6 && score_gap < 1e-6 && quad_gap < 1e-6;
  o.detail << "rescaling " << fmt(rescale_gap) << " (<1e-9), degenerate " << fmt(degenerate_gap)
           << " (<1e-5), mu0 " << fmt(mu0_gap) << " (<1e-6), score " << fmt(score_gap) << " (<1e-6), quadrature "
           << fmt(quad_gap) << " (<1e-6)";
  return o;
}

Outcome determinism() {
  Outcome o;
  McDesign d = default_design("model1");
  d.cells = {{30, 2.0, 100}, {60, 2.0, 100}, {30, 2.0, 200}};
  d.R = 8;
  d.fine_step = 0.01;
  d.seed = 77;
  std::vector<std::string> outputs;
  for (unsigned w : {1u, 4u, 8u}) {
    const auto s = run_mc(d, w);
    outputs.push_back(mc_table_csv(s) + mc_boxplot_csv(s) + mc_json(s).dump(2));
  }
  o.pass = outputs[0] == outputs[1] && outputs[0] == outputs[2];
  o.detail << "workers 1/4/8 outputs " << (o.pass ? "identical" : "differ") << " (" << outputs[0].size() << " bytes)";
  return o;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace

int main() {
  std::cout << std::unitbuf;
  try {
    report(6, "analytic invariant suite", analytic_suite());
    report(7, "mc output identical across worker counts", determinism());

    const unsigned workers = resolve_workers(0);

    // Model 1 at T = 5 on the four rate cells; (200, 5, 1000) serves 1-3.
    auto t0 = std::chrono::steady_clock::now();
    McDesign d1 = default_design("model1");
    d1.cells = {{200, 5.0, 1000}, {200, 5.0, 5000}, {500, 5.0, 1000}, {500, 5.0, 5000}};
    d1.R = 100;
    d1.seed = 20240601;
    const auto s1 = run_mc(d1, workers);
    std::cout << "model 1 design finished in " << fmt(seconds_since(t0)) << " s\n" << mc_table_csv(s1);

    const auto& base = s1.at(d1.cells[0]);
    const auto& m1 = d1.model.model;
    const std::size_t p_eta = m1.p_eta, p_tau = m1.p_tau();
    {
      Outcome o;
      const auto& eta = base.summary[0];
      const double theory = 2.0 * std::sqrt(6.0) / (5.0 * std::sqrt(200.0 * 1000.0));
      const double rel = std::abs(eta.sd / theory - 1.0);
      o.pass = eta.mean >= 0.49 && eta.mean <= 0.51 && rel <= 0.35;
      o.detail << "mean eta " << fmt(eta.mean) << " in [0.49, 0.51]; sd " << fmt(eta.sd) << " vs " << fmt(theory)
               << " (off by " << fmt(100.0 * rel) << "%, limit 35%); " << base.failed.size() << " failed reps";
      report(1, "model 1 eta at (200,5,1000)", o);
    }
    {
      Outcome o;
      for (std::size_t k = 0; k < p_tau; ++k) {
        const auto& est = base.summary[p_eta + k];
        const auto& orc = base.summary[p_eta + p_tau + k];
        const double gap = std::abs(est.mean - orc.mean);
        const bool ok = gap <= 2.0 * est.mc_se();
        o.pass = o.pass && ok;
        o.detail << est.name << " gap " << fmt(gap) << " vs 2 se " << fmt(2.0 * est.mc_se()) << "; ";
      }
      report(2, "oracle gap of theta_tau at (200,5,1000)", o);
    }
    {
      Outcome o;
      const auto& mu = base.summary[p_eta + 2 * p_tau];
      const auto& om = base.summary[p_eta + 2 * p_tau + 1];
      o.pass = mu.mean >= 2.15 && mu.mean <= 2.35 && om.mean >= 0.5 && om.mean <= 0.85;
      o.detail << "mean mu " << fmt(mu.mean) << " in [2.15, 2.35]; mean omega^2 " << fmt(om.mean)
               << " in [0.5, 0.85]";
      report(3, "model 1 stage-2 means including finite-sample bias", o);
    }
    {
      Outcome o;
      std::vector<double> log_nn, log_n, log_sd_eta;
      std::vector<std::vector<double>> log_sd_theta(p_tau);
      for (const auto& c : s1.cells) {
        log_nn.push_back(std::log(static_cast<double>(c.cell.N * c.cell.n)));
        log_n.push_back(std::log(static_cast<double>(c.cell.N)));
        log_sd_eta.push_back(std::log(c.summary[0].sd));
        for (std::size_t k = 0; k < p_tau; ++k) log_sd_theta[k].push_back(std::log(c.summary[p_eta + k].sd));
      }
      const double se = slope(log_nn, log_sd_eta);
      o.pass = std::abs(se + 0.5) <= 0.1;
      o.detail << "eta slope " << fmt(se) << " (-0.5 +- 0.1)";
      for (std::size_t k = 0; k < p_tau; ++k) {
        const double st = slope(log_n, log_sd_theta[k]);
        o.pass = o.pass && std::abs(st + 0.5) <= 0.15;
        o.detail << "; " << m1.names.theta_tau[k] << " slope " << fmt(st) << " (-0.5 +- 0.15)";
      }
      report(5, "rate slopes over the four T=5 cells", o);
    }
    {
      // Informational: the oracle gap should shrink as n grows at fixed N.
      std::cout << "info: oracle gap by n at N=200:";
      for (std::size_t c : {0u, 1u}) {
        const auto& cell = s1.cells[c];
        std::cout << " n=" << cell.cell.n << " [";
        for (std::size_t k = 0; k < p_tau; ++k)
          std::cout << (k ? ", " : "")
                    << fmt(std::abs(cell.summary[p_eta + k].mean - cell.summary[p_eta + p_tau + k].mean));
        std::cout << "]";
      }
      std::cout << "\n";
    }

    t0 = std::chrono::steady_clock::now();
    McDesign d3 = default_design("model3");
    d3.cells = {{200, 10.0, 2000}};
    d3.R = 100;
    d3.oracle = false;
    d3.seed = 20240602;
    const auto s3 = run_mc(d3, workers);
    std::cout << "model 3 design finished in " << fmt(seconds_since(t0)) << " s\n" << mc_table_csv(s3);
    {
      Outcome o;
      const auto& cell = s3.cells[0];
      const std::vector<std::string> names = {"mu1", "mu2", "omega1^2", "omega3", "omega2^2"};
      const std::vector<double> truth = {2.0, 1.0, 1.0, -0.2, 0.5};
      for (std::size_t k = 0; k < names.size(); ++k) {
        const auto& s = cell.summary[s3.index_of(names[k])];
        const double z = (s.mean - truth[k]) / s.mc_se();
        o.pass = o.pass && std::abs(z) <= 3.0;
        o.detail << names[k] << " " << fmt(s.mean) << " (z " << fmt(z) << "); ";
      }
      o.detail << cell.failed.size() << " failed reps";
      report(4, "model 3 joint covariance at (200,10,2000)", o);
    }
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 1;
  }

  int failures = 0;
  for (const auto& [title, pass] : g_results) failures += pass ? 0 : 1;
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion(s) failed") << "\n";
  return failures == 0 ? 0 : 1;
}
