#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include "ceff/error.hpp"
#include "ceff/nuisance.hpp"
#include "ceff/oracle.hpp"

using namespace ceff;

namespace {

Eigen::MatrixXd normal_z(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  boost::random::normal_distribution<double> nd;
  Eigen::MatrixXd z(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) z(i, j) = nd(rng);
  return z;
}

LearnerSpec ridge(int degree, std::optional<double> penalty = std::nullopt) {
  LearnerSpec l;
  l.degree = degree;
  l.penalty = penalty;
  return l;
}

}  // namespace

TEST(Learner, ConstantTarget) {
  const auto z = normal_z(300, 2, 1);
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(300, 3.25);
  LearnerSpec knn;
  knn.kind = LearnerKind::KNearest;
  for (const auto& l : {ridge(2), ridge(3, 0.0), ridge(0), knn}) {
    const auto p = fit_conditional_mean(l, z, y);
    const auto q = normal_z(20, 2, 2);
    const Eigen::VectorXd pred = p.predict(q);
    for (Eigen::Index i = 0; i < pred.size(); ++i) EXPECT_NEAR(pred[i], 3.25, 1e-12) << l.describe();
  }
}

TEST(Learner, RealizableLinear) {
  const auto z = normal_z(200, 1, 3);
  const Eigen::VectorXd y = 2.0 * z.col(0);
  for (int degree = 1; degree <= 4; ++degree) {
    const auto p = fit_conditional_mean(ridge(degree, 0.0), z, y);
    for (double t : {-2.5, -0.3, 0.0, 1.7}) EXPECT_NEAR(p.predict(std::vector<double>{t}), 2.0 * t, 1e-8);
  }
}

TEST(Learner, RealizableInteraction) {
  const auto z = normal_z(150, 2, 4);
  const Eigen::VectorXd y = (z.col(0).array() * z.col(1).array() - 0.5 * z.col(1).array()).matrix();
  const auto p = fit_conditional_mean(ridge(2, 0.0), z, y);
  EXPECT_NEAR(p.predict(std::vector<double>{1.5, -2.0}), -3.0 + 1.0, 1e-8);
}

TEST(Learner, QuadraticWithNoise) {
  const Eigen::Index n = 10000;
  const double sigma = 0.5;
  const auto z = normal_z(n, 1, 5);
  Rng rng(6);
  boost::random::normal_distribution<double> nd(0.0, sigma);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = z(i, 0) * z(i, 0) + nd(rng);
  const auto p = fit_conditional_mean(ridge(2), z, y);
  const Eigen::VectorXd fit = p.predict(z);
  const double rmse = std::sqrt((fit - y).squaredNorm() / static_cast<double>(n));
  EXPECT_LE(rmse, 2.0 * sigma);
  double err = 0.0;
  for (double t = -2.0; t <= 2.0; t += 0.25) err = std::max(err, std::abs(p.predict(std::vector<double>{t}) - t * t));
  EXPECT_LT(err, 0.05);
}

TEST(Learner, ResidualsOrthogonalToBasis) {
  const Eigen::Index n = 500;
  const auto z = normal_z(n, 1, 7);
  Rng rng(8);
  boost::random::normal_distribution<double> nd;
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = 1 + z(i, 0) - 0.5 * std::pow(z(i, 0), 3) + nd(rng);
  const auto p = fit_conditional_mean(ridge(3, 0.0), z, y);
  const Eigen::VectorXd r = y - p.predict(z);
  for (int k = 0; k <= 3; ++k) {
    const Eigen::VectorXd col = z.col(0).array().pow(k);
    EXPECT_NEAR(col.dot(r) / n, 0.0, 1e-8) << k;
  }
}

TEST(Learner, SingularFits) {
  Eigen::MatrixXd z = Eigen::MatrixXd::Constant(50, 1, 1.0);
  z(0, 0) = 2.0;
  const Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(50, 0, 1);
  EXPECT_THROW(fit_conditional_mean(ridge(2, 0.0), z, y), SingularFitError);
  EXPECT_NO_THROW(fit_conditional_mean(ridge(2, 1.0), z, y));
  EXPECT_THROW(fit_conditional_mean(ridge(4, 0.0), normal_z(4, 1, 9), Eigen::VectorXd::Zero(4)), SingularFitError);
}

TEST(Learner, NearestNeighbours) {
  const auto z = normal_z(100, 2, 10);
  const Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(100, 0, 99);
  LearnerSpec l;
  l.kind = LearnerKind::KNearest;
  l.k = 1;
  const auto p = fit_conditional_mean(l, z, y);
  const Eigen::VectorXd pred = p.predict(z);
  for (Eigen::Index i = 0; i < 100; ++i) EXPECT_EQ(pred[i], y[i]);
  l.k = 100;
  EXPECT_NEAR(fit_conditional_mean(l, z, y).predict(std::vector<double>{0.0, 0.0}), 49.5, 1e-12);
}

TEST(Learner, ParsesSpecs) {
  EXPECT_EQ(parse_learner("ridge").describe(), "ridge:2:gcv");
  EXPECT_EQ(parse_learner("ridge:3:0.5").describe(), "ridge:3:0.5");
  EXPECT_EQ(parse_learner("knn:7").k, 7);
  EXPECT_THROW(parse_learner("forest"), ConfigError);
  EXPECT_THROW(parse_learner("ridge:x"), ConfigError);
  EXPECT_THROW(parse_learner("knn:0"), ConfigError);
}

TEST(Folds, PartitionAndBalance) {
  for (std::size_t n : {10u, 101u, 2000u}) {
    const auto p = FoldPlan::make(n, 5, 42);
    std::vector<std::size_t> sizes(5, 0);
    for (int a : p.assignment) ++sizes[static_cast<std::size_t>(a)];
    EXPECT_LE(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()), 1u);
    std::set<std::size_t> all;
    for (int k = 0; k < 5; ++k) {
      const auto h = p.held_out(k), t = p.training(k);
      EXPECT_EQ(h.size() + t.size(), n);
      all.insert(h.begin(), h.end());
    }
    EXPECT_EQ(all.size(), n);
  }
  EXPECT_EQ(FoldPlan::make(50, 5, 1).assignment, FoldPlan::make(50, 5, 1).assignment);
  EXPECT_NE(FoldPlan::make(50, 5, 1).assignment, FoldPlan::make(50, 5, 2).assignment);
  EXPECT_THROW(FoldPlan::make(3, 5, 1), FoldError);
  EXPECT_THROW(FoldPlan::make(30, 1, 1), ConfigError);
}

TEST(Nuisances, OutOfFoldAndZeroOutcome) {
  auto d = simulate_scenario({2, 1}, 400, 11);
  d.y.setZero();
  const auto cf = fit_nuisances(d, VFunction::identity(), FoldPlan::make(400, 5, 3), ridge(2), true);
  EXPECT_TRUE(cf.out_of_fold());
  for (const auto& f : cf.folds) {
    EXPECT_EQ(f.m.fold, f.fold);
    for (std::size_t i : f.training_rows) EXPECT_NE(cf.plan.assignment[i], f.fold);
  }
  EXPECT_LT(cf.m.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(cf.lambda.cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Nuisances, LambdaTimesBetaIsNumeratorRegression) {
  const auto d = simulate_scenario({2, 1}, 1000, 12);
  const auto cf = fit_nuisances(d, VFunction::identity(), FoldPlan::make(1000, 5, 4), ridge(2), true);
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const auto& f = cf.folds[static_cast<std::size_t>(cf.plan.assignment[static_cast<std::size_t>(i)])];
    const std::vector<double> zi{d.z(i, 0)};
    const double b = f.beta->predict(zi);
    if (std::abs(b) > f.beta_floor) {
      EXPECT_NEAR(cf.lambda[i] * cf.beta[i], f.lambda_num->predict(zi), 1e-12 * std::max(1.0, std::abs(b)));
      EXPECT_EQ(cf.beta[i], b);
    }
  }
}

TEST(Nuisances, BetaClipIsCounted) {
  // Var(X|Z) is ~0 for z > 0, so a quadratic fit of the residual products
  // dips below zero there.
  auto d = simulate_scenario({2, 1}, 2000, 13);
  Rng rng(99);
  boost::random::normal_distribution<double> nd;
  for (Eigen::Index i = 0; i < d.n(); ++i) d.x[i] = d.z(i, 0) < 0 ? 3.0 * nd(rng) : 1e-6 * nd(rng);
  const auto cf = fit_nuisances(d, VFunction::identity(), FoldPlan::make(2000, 5, 4), ridge(2, 0.0), true);
  EXPECT_GT(cf.beta_clipped, 0u);
  std::size_t at_floor = 0;
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double floor = cf.folds[static_cast<std::size_t>(cf.plan.assignment[static_cast<std::size_t>(i)])].beta_floor;
    EXPECT_GE(cf.beta[i], floor);
    if (cf.beta[i] == floor) ++at_floor;
  }
  EXPECT_EQ(at_floor, cf.beta_clipped);
}

TEST(Nuisances, BinaryExposureBetaTracksOverlap) {
  const Eigen::Index n = 20000;
  Dataset d;
  d.z = normal_z(n, 1, 14);
  d.x.resize(n);
  d.y.resize(n);
  Rng rng(15);
  boost::random::uniform_01<double> u;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = expit(0.8 * d.z(i, 0));
    d.x[i] = u(rng) < p ? 1.0 : 0.0;
    d.y[i] = d.x[i] + d.z(i, 0) + u(rng);
  }
  const auto cf = fit_nuisances(d, VFunction::identity(), FoldPlan::make(static_cast<std::size_t>(n), 5, 5),
                                ridge(3), true);
  double worst = 0.0;
  for (double t = -1.5; t <= 1.5; t += 0.25) {
    const auto& f = cf.folds[0];
    const std::vector<double> zi{t};
    const double pi = f.pi.predict(zi);
    worst = std::max(worst, std::abs(f.beta->predict(zi) - pi * (1 - pi)));
  }
  EXPECT_LT(worst, 0.02);
}

TEST(Nuisances, LambdaTracksOracle) {
  const auto d = simulate_scenario({2, 1}, 20000, 16);
  const auto cf = fit_nuisances(d, VFunction::identity(), FoldPlan::make(20000, 5, 6), ridge(2), true);
  for (double t : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
    const double truth = conditional_lambda({2, 1}, VFunction::identity(), t).lambda;
    const auto& f = cf.folds[1];
    const std::vector<double> zi{t};
    EXPECT_NEAR(f.lambda_num->predict(zi) / f.beta->predict(zi), truth, 0.1) << t;
  }
}

TEST(Nuisances, InadmissibleV) {
  auto d = simulate_scenario({2, 2}, 50, 17);
  d.x[4] = 0.0;
  d.x[9] = 0.0;
  try {
    fit_nuisances(d, VFunction::reciprocal(), FoldPlan::make(50, 5, 1), ridge(1), false);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("rows 5, 10"), std::string::npos) << e.what();
  }
  d.x[4] = -1.0;
  d.x[9] = 2.0;
  EXPECT_THROW(fit_nuisances(d, VFunction::reciprocal(), FoldPlan::make(50, 5, 1), ridge(1), false), ValidationError);
  EXPECT_THROW(fit_nuisances(d, VFunction::threshold(1e6), FoldPlan::make(50, 5, 1), ridge(1), false), DegenerateError);
}

TEST(Nuisances, SmallFoldFails) {
  const auto d = simulate_scenario({2, 1}, 10, 18);
  EXPECT_THROW(fit_nuisances(d, VFunction::identity(), FoldPlan::make(10, 5, 1), ridge(8, 0.0), false), FoldError);
}

TEST(Nuisances, ThreadCountDoesNotMatter) {
  const auto d = simulate_scenario({1, 2}, 600, 19);
  const auto plan = FoldPlan::make(600, 5, 7);
  const auto a = fit_nuisances(d, VFunction::threshold(3.0), plan, ridge(2), true, 1);
  const auto b = fit_nuisances(d, VFunction::threshold(3.0), plan, ridge(2), true, 4);
  EXPECT_TRUE((a.lambda.array() == b.lambda.array()).all());
  EXPECT_TRUE((a.m.array() == b.m.array()).all());
  EXPECT_EQ(a.beta_clipped, b.beta_clipped);
}
