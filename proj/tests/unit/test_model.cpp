#include <gtest/gtest.h>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <cmath>
#include <limits>

#include "mesde/model.hpp"
#include "mesde/presets.hpp"
#include "mesde/tau_family.hpp"

using namespace mesde;

namespace {

struct FamilyCase {
  TauFamily family;
  Vec theta;
};

std::vector<FamilyCase> family_cases() {
  return {{TauFamily::log_normal(), Vec{{-0.7, 0.7}}},
          {TauFamily::log_normal(), Vec{{0.3, 0.2}}},
          {TauFamily::weibull(), Vec{{1.0, 0.6}}},
          {TauFamily::weibull(), Vec{{2.5, 1.7}}},
          {TauFamily::weibull(), Vec{{0.8, 0.5}}},
          {TauFamily::exponential(), Vec{{1.0}}},
          {TauFamily::exponential(), Vec{{3.2}}},
          {TauFamily::generalized_weibull(), Vec{{3.447, 4.592, 3.699}}},
          {TauFamily::generalized_weibull(), Vec{{1.5, 0.7, 0.2}}}};
}

double support_start(const FamilyCase& c) {
  return c.family.kind() == TauKind::GeneralizedWeibull ? c.theta[2] : 0.0;
}

} // namespace

TEST(TauFamily, DensitiesIntegrateToOne) {
  boost::math::quadrature::exp_sinh<double> integrator;
  for (const auto& c : family_cases()) {
    const double a = support_start(c);
    auto f = [&](double tau) {
      const double v = c.family.log_density(tau, c.theta);
      return std::isfinite(v) ? std::exp(v) : 0.0;
    };
    const double total = integrator.integrate(f, a, std::numeric_limits<double>::infinity());
    EXPECT_NEAR(total, 1.0, 1e-6) << c.family.name() << " " << c.theta.transpose();
  }
}

TEST(TauFamily, MeanAndVarianceMatchQuadrature) {
  boost::math::quadrature::exp_sinh<double> integrator;
  for (const auto& c : family_cases()) {
    const double a = support_start(c);
    auto moment = [&](int k) {
      return integrator.integrate(
          [&](double tau) {
            const double v = c.family.log_density(tau, c.theta);
            return std::isfinite(v) ? std::pow(tau, k) * std::exp(v) : 0.0;
          },
          a, std::numeric_limits<double>::infinity());
    };
    const double m1 = moment(1), m2 = moment(2);
    EXPECT_NEAR(c.family.mean(c.theta), m1, 1e-6 * (1.0 + m1)) << c.family.name();
    EXPECT_NEAR(c.family.variance(c.theta), m2 - m1 * m1, 1e-6 * (1.0 + m2)) << c.family.name();
  }
}

TEST(TauFamily, GradientMatchesFiniteDifferences) {
  const std::vector<double> taus = {0.3, 1.0, 2.7};
  for (const auto& c : family_cases()) {
    for (double tau0 : taus) {
      const double tau = tau0 + support_start(c) + 0.5 * (support_start(c) > 0.0);
      const Vec g = c.family.log_density_grad(tau, c.theta);
      for (Eigen::Index k = 0; k < c.theta.size(); ++k) {
        const double step = 1e-6 * (1.0 + std::abs(c.theta[k]));
        Vec up = c.theta, down = c.theta;
        up[k] += step;
        down[k] -= step;
        const double fd = (c.family.log_density(tau, up) - c.family.log_density(tau, down)) / (2.0 * step);
        EXPECT_NEAR(g[k], fd, 1e-5 * (1.0 + std::abs(fd))) << c.family.name() << " k=" << k << " tau=" << tau;
      }
    }
  }
}

TEST(TauFamily, SamplerMeansWithinThreeStandardErrors) {
  const int n = 100000;
  for (const auto& c : family_cases()) {
    Rng rng = Rng::stream({17, static_cast<std::uint64_t>(c.family.kind())});
    double s = 0.0;
    for (int k = 0; k < n; ++k) s += c.family.sample(c.theta, rng);
    const double se = std::sqrt(c.family.variance(c.theta) / n);
    EXPECT_NEAR(s / n, c.family.mean(c.theta), 3.0 * se) << c.family.name() << " " << c.theta.transpose();
  }
}

TEST(TauFamily, ClosedFormValues) {
  EXPECT_NEAR(TauFamily::exponential().log_density(1.0, Vec{{1.0}}), -1.0, 1e-15);
  EXPECT_NEAR(TauFamily::log_normal().log_density(1.0, Vec{{0.0, 1.0}}), -0.5 * std::log(2.0 * std::numbers::pi),
              1e-15);
  // Frozen high-precision value from tests/oracles/gen_oracles.py.
  EXPECT_NEAR(TauFamily::generalized_weibull().log_density(8.0, Vec{{3.447, 4.592, 3.699}}),
              -1.2449943671736696844, 1e-12);
}

TEST(TauFamily, OffSupportIsNegativeInfinity) {
  const double ninf = -std::numeric_limits<double>::infinity();
  EXPECT_EQ(TauFamily::exponential().log_density(0.0, Vec{{1.0}}), ninf);
  EXPECT_EQ(TauFamily::exponential().log_density(-1.0, Vec{{1.0}}), ninf);
  EXPECT_EQ(TauFamily::generalized_weibull().log_density(3.0, Vec{{3.447, 4.592, 3.699}}), ninf);
  EXPECT_EQ(TauFamily::log_normal().log_density(1.0, Vec{{0.0, -1.0}}), ninf);
}

TEST(TauFamily, NamesRoundTrip) {
  for (auto kind : {TauKind::LogNormal, TauKind::Weibull, TauKind::Exponential, TauKind::GeneralizedWeibull}) {
    const TauFamily f(kind);
    EXPECT_EQ(TauFamily::from_name(f.name()).kind(), kind);
    EXPECT_EQ(f.parameter_names().size(), f.dim());
    EXPECT_EQ(static_cast<std::size_t>(f.default_bounds().dim()), f.dim());
  }
  EXPECT_THROW(TauFamily::from_name("gamma"), ConfigError);
}

TEST(Diffusion, EvalSExamples) {
  const auto m1 = model1().model;
  EXPECT_NEAR(eval_S(m1, 2.0, 0.3, Vec{{0.5}}), std::exp(1.0), 1e-15);
  const auto m3 = model3().model;
  EXPECT_DOUBLE_EQ(eval_S(m3, 0.0, 0.0, Vec{{0.5}}), 1.0);
  EXPECT_NEAR(eval_S(m3, 0.0, 1.0, Vec{{0.5}}), 2.1932800507380154566, 1e-14);
}

TEST(Diffusion, NonPositiveCoefficientRaisesWithLocation) {
  const auto m = neuronal().model;
  try {
    eval_S(m, 0.1, 20.0, Vec{{-0.01}});
    FAIL() << "expected ModelError";
  } catch (const ModelError& e) {
    EXPECT_EQ(e.y(), 20.0);
    EXPECT_EQ(e.t(), 0.1);
    EXPECT_EQ(e.exit_code(), 4);
  }
}

TEST(Diffusion, AnalyticGradientMatchesFallback) {
  for (const auto& name : {"model1", "model2", "neuronal"}) {
    ModelSpec m = preset(name).model;
    ModelSpec fallback = m;
    fallback.log_s_gradient = nullptr;
    for (double y : {-1.3, 0.0, 0.4, 2.0}) {
      double a = 0.0, b = 0.0;
      const Vec eta = preset(name).truth.eta;
      eval_log_s_gradient(m, 0.7, y, eta, {&a, 1});
      eval_log_s_gradient(fallback, 0.7, y, eta, {&b, 1});
      EXPECT_NEAR(a, b, 1e-7) << name << " y=" << y;
    }
  }
}

TEST(Model, PresetsValidate) {
  for (const auto& name : preset_names()) {
    const Preset p = preset(name);
    EXPECT_NO_THROW(validate_model(p.model)) << name;
    EXPECT_NO_THROW(validate_params(p.truth, p.model)) << name;
    EXPECT_EQ(parameter_names(p.model).size(), static_cast<std::size_t>(pack(p.truth).size())) << name;
  }
  EXPECT_THROW(preset("model9"), ConfigError);
}

TEST(Model, ValidateRejectsInconsistentSpecs) {
  ModelSpec m = model3().model;
  m.bounds.eta = Box::uniform(2, -1.0, 1.0);
  EXPECT_THROW(validate_model(m), ModelError);

  ModelSpec wrong = model3().model;
  wrong.diffusion = [](double, double y, const Vec& eta) { return std::exp(eta[0] * y); };
  EXPECT_THROW(validate_model(wrong), ModelError);  // not log-linear in the declared g

  ModelSpec missing = model2().model;
  missing.drift_fixed = nullptr;
  EXPECT_THROW(validate_model(missing), ModelError);
}

TEST(Model, ValidateParamsRejectsBadSigma) {
  const Preset p = model3();
  ParamSet bad = p.truth;
  bad.sigma_r(0, 1) = 0.3;
  EXPECT_THROW(validate_params(bad, p.model), ConfigError);
  bad = p.truth;
  bad.sigma_r << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(validate_params(bad, p.model), ConfigError);
  bad = p.truth;
  bad.mu = Vec{{1.0}};
  EXPECT_THROW(validate_params(bad, p.model), ConfigError);
}

TEST(Params, PackUnpackRoundTrip) {
  for (const auto& name : preset_names()) {
    const Preset p = preset(name);
    const Vec x = pack(p.truth);
    const ParamSet back = unpack(x, p.model.p_eta, p.model.p_tau(), p.model.p_phi(), p.model.p_phi_r);
    EXPECT_EQ(pack(back), x) << name;
    EXPECT_EQ(back.sigma_r, p.truth.sigma_r) << name;
  }
  EXPECT_THROW(unpack(Vec::Zero(3), 1, 1, 2, 2), ConfigError);
}

TEST(Params, VechLayoutIsColumnMajorLower) {
  Mat s(3, 3);
  s << 1, 2, 3, 2, 4, 5, 3, 5, 6;
  const Vec v = vech(s);
  EXPECT_EQ(v, (Vec(6) << 1, 2, 3, 4, 5, 6).finished());
  EXPECT_EQ(unvech(v, 3), s);
}

TEST(Params, LogCholeskyRoundTripOnRandomSpd) {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const int p = 1 + trial % 4;
    Mat a(p, p);
    for (int r = 0; r < p; ++r)
      for (int c = 0; c < p; ++c) a(r, c) = rng.normal();
    const Mat s = a * a.transpose() + 0.1 * Mat::Identity(p, p);
    const Mat back = log_cholesky_unpack(log_cholesky_pack(s), static_cast<std::size_t>(p));
    EXPECT_LT((back - s).norm(), 1e-10 * (1.0 + s.norm()));
  }
}

TEST(Params, LogCholeskyMapsAnyVectorToSpd) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    Vec x(6);
    for (Eigen::Index k = 0; k < 6; ++k) x[k] = rng.normal();
    const Mat s = log_cholesky_unpack(x, 3);
    Eigen::SelfAdjointEigenSolver<Mat> eig(s);
    EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0);
    EXPECT_LT((log_cholesky_pack(s) - x).norm(), 1e-8 * (1.0 + x.norm()));
  }
  EXPECT_THROW(log_cholesky_pack(Mat::Zero(2, 2)), EstimationError);
}

TEST(Panel, ShapeAndIncrements) {
  RowMat y(2, 4);
  y << 0, 1, 3, 6, 1, 1, 1, 2;
  const PanelData p(y, 0.25);
  EXPECT_EQ(p.N(), 2u);
  EXPECT_EQ(p.n(), 3u);
  EXPECT_DOUBLE_EQ(p.T(), 0.75);
  EXPECT_DOUBLE_EQ(p.time(2), 0.5);
  EXPECT_DOUBLE_EQ(p.increment(0, 3), 3.0 / 0.5);
  EXPECT_EQ(p.head(1).N(), 1u);
  EXPECT_EQ(p.head(1).row(0)[2], 3.0);
}

TEST(Panel, RejectsInvalidInput) {
  EXPECT_THROW(PanelData(RowMat::Zero(2, 1), 0.1), DataError);
  EXPECT_THROW(PanelData(RowMat::Zero(2, 3), 0.0), DataError);
  RowMat y = RowMat::Zero(2, 3);
  y(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(PanelData(y, 0.1), DataError);
}

TEST(Panel, HorizonIsKeptExactly) {
  const PanelData p = PanelData::from_horizon(RowMat::Zero(1, 2001), 0.3);
  EXPECT_EQ(p.T(), 0.3);
  EXPECT_EQ(p.n(), 2000u);
}
