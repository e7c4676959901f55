#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "mesde/optim.hpp"

using namespace mesde;

namespace {

double neg_rosenbrock(const Vec& x) {
  const double a = 1.0 - x[0], b = x[1] - x[0] * x[0];
  return -(a * a + 100.0 * b * b);
}

} // namespace

TEST(Maximize, ConcaveQuadratic) {
  const Vec centre{{0.3, -1.2, 2.0}};
  Objective f = [&](const Vec& x) { return -(x - centre).squaredNorm(); };
  const auto r = maximize(f, Vec::Zero(3), Box::uniform(3, -5.0, 5.0));
  EXPECT_TRUE(r.converged);
  EXPECT_LT((r.argmax - centre).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Maximize, Rosenbrock) {
  const auto r = maximize(neg_rosenbrock, Vec{{-1.2, 1.0}}, Box::uniform(2, -3.0, 3.0));
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.argmax[0], 1.0, 1e-4);
  EXPECT_NEAR(r.argmax[1], 1.0, 1e-4);
}

TEST(Maximize, OptimumOnBoundary) {
  Objective f = [](const Vec& x) { return x[0] - x[1] * x[1]; };
  const auto r = maximize(f, Vec{{0.0, 0.5}}, Box::uniform(2, -1.0, 1.0));
  EXPECT_NEAR(r.argmax[0], 1.0, 1e-5);
  EXPECT_NEAR(r.argmax[1], 0.0, 1e-4);
  EXPECT_TRUE(Box::uniform(2, -1.0, 1.0).contains(r.argmax));
}

TEST(Maximize, ConstantFunctionReturnsStart) {
  Objective f = [](const Vec&) { return 3.0; };
  const Vec start{{0.1, 0.2}};
  const auto r = maximize(f, start, Box::uniform(2, -1.0, 1.0));
  EXPECT_EQ(r.value, 3.0);
  EXPECT_EQ(r.argmax, start);
}

TEST(Maximize, DeterministicForFixedSeed) {
  OptimOptions o;
  o.seed = 12;
  const auto a = maximize(neg_rosenbrock, Vec{{-1.2, 1.0}}, Box::uniform(2, -3.0, 3.0), o);
  const auto b = maximize(neg_rosenbrock, Vec{{-1.2, 1.0}}, Box::uniform(2, -3.0, 3.0), o);
  EXPECT_EQ(a.argmax, b.argmax);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.n_evals, b.n_evals);
}

TEST(Maximize, BestValueNeverDecreasesAcrossRestarts) {
  OptimOptions o;
  o.keep_trace = true;
  o.newton_polish = false;
  Objective f = [](const Vec& x) { return std::cos(3.0 * x[0]) * std::cos(2.0 * x[1]) - 0.1 * x.squaredNorm(); };
  const auto r = maximize(f, Vec{{2.0, -2.0}}, Box::uniform(2, -4.0, 4.0), o);
  double best = -std::numeric_limits<double>::infinity();
  int last_restart = 0;
  for (const auto& e : r.trace) {
    EXPECT_GE(e.restart, last_restart);
    last_restart = e.restart;
    best = std::max(best, e.value);
  }
  EXPECT_EQ(r.value, best);
  EXPECT_GE(r.value, f(Vec{{2.0, -2.0}}));
}

TEST(Maximize, NeverEvaluatesOutsideBox) {
  OptimOptions o;
  o.keep_trace = true;
  const Box box = Box::uniform(2, 0.0, 1.0);
  Objective f = [&](const Vec& x) {
    EXPECT_TRUE(box.contains(x));
    return -(x - Vec{{2.0, 2.0}}).squaredNorm();
  };
  const auto r = maximize(f, Vec{{0.5, 0.5}}, box, o);
  EXPECT_NEAR(r.argmax[0], 1.0, 1e-5);
}

TEST(Maximize, RejectsBadStart) {
  Objective f = [](const Vec& x) { return -x.squaredNorm(); };
  EXPECT_THROW(maximize(f, Vec{{2.0}}, Box::uniform(1, -1.0, 1.0)), EstimationError);
  Objective nan = [](const Vec&) { return std::numeric_limits<double>::quiet_NaN(); };
  EXPECT_THROW(maximize(nan, Vec{{0.0}}, Box::uniform(1, -1.0, 1.0)), EstimationError);
}

TEST(FiniteDifferences, GradientAndHessianOfQuadratic) {
  Mat a(3, 3);
  a << 4, 1, 0.5, 1, 3, -0.2, 0.5, -0.2, 2;
  const Vec b{{1.0, -2.0, 0.5}};
  Objective f = [&](const Vec& x) { return 0.5 * x.dot(a * x) + b.dot(x); };
  const Vec x{{0.3, -0.7, 1.1}};
  EXPECT_LT((fd_gradient(f, x) - (a * x + b)).cwiseAbs().maxCoeff(), 1e-7);
  const Mat h = fd_hessian(f, x);
  EXPECT_LT((h - a).cwiseAbs().maxCoeff(), 1e-4);
  EXPECT_EQ(h, h.transpose());
}

TEST(FiniteDifferences, NonFiniteStencilNamesCoordinate) {
  Objective f = [](const Vec& x) { return x[1] > 0.5 ? std::numeric_limits<double>::infinity() : x[0]; };
  try {
    fd_gradient(f, Vec{{0.0, 0.5}});
    FAIL() << "expected EstimationError";
  } catch (const EstimationError& e) {
    EXPECT_NE(std::string(e.what()).find("coordinate 1"), std::string::npos) << e.what();
  }
}
