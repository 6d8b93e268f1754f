#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "ceff/density.hpp"
#include "ceff/error.hpp"

using namespace ceff;

namespace {

// Reference integrals come from Boost's own integrators, not from the
// library's Gauss-Kronrod code.
double ref_integral(const std::function<double(double)>& g, double a, double b) {
  if (std::isinf(a) || std::isinf(b))
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(g, a, b, 15, 1e-13);
  boost::math::quadrature::tanh_sinh<double> ts;
  return ts.integrate(g, a, b, 1e-13);
}

double ref_expect(const ConditionalDensity& f, const std::function<double(double)>& g,
                  double a, double b) {
  return ref_integral([&](double x) { return g(x) * f.pdf(x); }, a, b);
}

std::vector<ConditionalDensity> families() {
  return {ConditionalDensity::normal(4.0, 1.0),          ConditionalDensity::gamma(5.0, 2.5),
          ConditionalDensity::chi_squared(3.0),          ConditionalDensity::beta(2.0, 3.0),
          ConditionalDensity::beta_prime(2.0, 5.0),      ConditionalDensity::asymmetric_laplace(0.3, 0.5, 1.0),
          ConditionalDensity::gamma(2.5, 1.0)};
}

}  // namespace

TEST(Density, TruncatedMeansUniformHalves) {
  auto tm = ConditionalDensity::beta(1, 1).truncated_means(0.5);
  EXPECT_NEAR(tm.lower, 0.25, 1e-14);
  EXPECT_NEAR(tm.upper, 0.75, 1e-14);
}

TEST(Density, TruncatedMeansHalfNormal) {
  auto tm = ConditionalDensity::normal(0, 1).truncated_means(0.0);
  const double half = std::sqrt(2.0 / std::numbers::pi);
  EXPECT_NEAR(tm.lower, -half, 1e-14);
  EXPECT_NEAR(tm.upper, half, 1e-14);
  const double oracle = 2.0 * ref_integral([](double x) {
    return x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  }, 0.0, std::numeric_limits<double>::infinity());
  EXPECT_NEAR(tm.upper, oracle, 1e-10);
}

TEST(Density, TruncatedMeansGammaUpperTail) {
  auto tm = ConditionalDensity::gamma(5, 2.5).truncated_means(30.0);
  EXPECT_NEAR(tm.lower, 2.0, 1e-12);
}

TEST(Density, TruncatedMeansMatchQuadrature) {
  for (const auto& f : families()) {
    const Interval s = f.support();
    for (double q : {0.05, 0.3, 0.5, 0.8, 0.97}) {
      const double x = f.quantile(q);
      const double below = ref_expect(f, [](double u) { return u; }, s.lo, x) / f.cdf(x);
      const double above = ref_expect(f, [](double u) { return u; }, x, s.hi) / f.sf(x);
      const auto tm = f.truncated_means(x);
      EXPECT_NEAR(tm.lower, below, 1e-8 * (1 + std::abs(below))) << f.describe() << " q=" << q;
      EXPECT_NEAR(tm.upper, above, 1e-8 * (1 + std::abs(above))) << f.describe() << " q=" << q;
    }
  }
}

TEST(Density, TruncatedMeansRejectsOutsideSupport) {
  EXPECT_THROW(ConditionalDensity::gamma(2, 1).truncated_means(-1.0), DomainError);
  EXPECT_THROW(ConditionalDensity::beta(2, 2).truncated_means(1.0), DomainError);
}

TEST(Density, PdfIntegratesToOneAndMatchesCdf) {
  for (const auto& f : families()) {
    const Interval s = f.support();
    EXPECT_NEAR(ref_expect(f, [](double) { return 1.0; }, s.lo, s.hi), 1.0, 1e-8) << f.describe();
    EXPECT_NEAR(f.expect([](double) { return 1.0; }), 1.0, 1e-8) << f.describe();
    for (double q : {0.1, 0.5, 0.9}) {
      const double x = f.quantile(q);
      EXPECT_NEAR(f.cdf(x), q, 1e-10) << f.describe();
      EXPECT_NEAR(f.cdf(x) + f.sf(x), 1.0, 1e-14);
      EXPECT_NEAR(ref_expect(f, [](double) { return 1.0; }, s.lo, x), q, 1e-8) << f.describe();
    }
  }
}

TEST(Density, MomentsMatchQuadrature) {
  for (const auto& f : families()) {
    const Interval s = f.support();
    const double m = ref_expect(f, [](double u) { return u; }, s.lo, s.hi);
    const double m2 = ref_expect(f, [](double u) { return u * u; }, s.lo, s.hi);
    EXPECT_NEAR(f.mean(), m, 1e-8) << f.describe();
    EXPECT_NEAR(f.variance(), m2 - m * m, 1e-7) << f.describe();
  }
  EXPECT_TRUE(std::isinf(ConditionalDensity::beta_prime(1, 2).variance()));
}

TEST(Density, ScoreMatchesFiniteDifference) {
  for (const auto& f : families()) {
    for (double q : {0.1, 0.45, 0.9}) {
      const double x = f.quantile(q), h = 1e-5 * (1 + std::abs(x));
      const double fd = (f.log_pdf(x + h) - f.log_pdf(x - h)) / (2 * h);
      EXPECT_NEAR(f.score(x), fd, 1e-5 * (1 + std::abs(fd))) << f.describe();
    }
  }
  EXPECT_THROW(ConditionalDensity::asymmetric_laplace(0.3, 1, 0).score(0.0), DomainError);
}

TEST(Density, ConstructorsValidate) {
  EXPECT_THROW(ConditionalDensity::normal(0, 0), DomainError);
  EXPECT_THROW(ConditionalDensity::gamma(-1, 1), DomainError);
  EXPECT_THROW(ConditionalDensity::asymmetric_laplace(1.0, 1, 0), DomainError);
  EXPECT_THROW(ConditionalDensity::empirical({0, 0}, {1, 1}), DomainError);
}

TEST(Density, SamplerMoments) {
  Rng rng(11);
  for (const auto& f : families()) {
    if (!std::isfinite(f.variance())) continue;
    const int n = 200000;
    double s = 0;
    for (int i = 0; i < n; ++i) s += f.sample(rng);
    const double se = std::sqrt(f.variance() / n);
    EXPECT_NEAR(s / n, f.mean(), 4 * se) << f.describe();
  }
}

TEST(Alse, ClosedFormMap) {
  auto c = closed_form_alse(ConditionalDensity::chi_squared(3));
  EXPECT_EQ(c.family(), Family::ChiSquared);
  EXPECT_DOUBLE_EQ(std::get<family::ChiSquared>(c.params()).dof, 5.0);
  auto bp = std::get<family::BetaPrime>(closed_form_alse(ConditionalDensity::beta_prime(1, 3)).params());
  EXPECT_DOUBLE_EQ(bp.a, 2.0);
  EXPECT_DOUBLE_EQ(bp.b, 1.0);
  auto n = std::get<family::Normal>(closed_form_alse(ConditionalDensity::normal(4, 1)).params());
  EXPECT_DOUBLE_EQ(n.mean, 4.0);
  EXPECT_DOUBLE_EQ(n.sd, 1.0);
  EXPECT_THROW(closed_form_alse(ConditionalDensity::beta_prime(1, 2)), DomainError);
  EXPECT_THROW(closed_form_alse(ConditionalDensity::asymmetric_laplace(0.5, 1, 0)), NoClosedFormError);
}

TEST(Alse, NumericMatchesClosedForm) {
  const std::vector<ConditionalDensity> cases{
      ConditionalDensity::normal(0, 1),   ConditionalDensity::normal(4, 1),
      ConditionalDensity::gamma(2.5, 1),  ConditionalDensity::chi_squared(3),
      ConditionalDensity::beta(2, 3),     ConditionalDensity::beta(1, 1),
      ConditionalDensity::beta_prime(2, 5)};
  for (const auto& f : cases) {
    const auto curve = alse_transform(f);
    const auto target = closed_form_alse(f);
    double sup = 0.0;
    for (std::size_t i = 0; i < curve.grid.size(); ++i)
      sup = std::max(sup, std::abs(curve.values[i] - target.pdf(curve.grid[i])));
    EXPECT_LE(sup, 1e-6) << f.describe();
    EXPECT_NEAR(curve.trapezoid(), 1.0, 1e-6) << f.describe();
    const double covered = target.cdf(curve.grid.back()) - target.cdf(curve.grid.front());
    EXPECT_GE(covered, 1.0 - 1e-8) << f.describe();
  }
}

TEST(Alse, UniformGivesBeta22) {
  const auto f = ConditionalDensity::beta(1, 1);
  for (double x : {0.1, 0.25, 0.5, 0.8}) EXPECT_NEAR(alse_density(f, x), 6 * x * (1 - x), 1e-13);
}

TEST(Alse, SymmetryPreserved) {
  for (const auto& f : {ConditionalDensity::normal(1.5, 2.0), ConditionalDensity::beta(3, 3),
                        ConditionalDensity::beta(0.7, 0.7)}) {
    const double mu = f.mean();
    const double half = f.family() == Family::Normal ? 8.0 : 0.5;
    for (int i = 1; i < 50; ++i) {
      const double d = half * i / 50.0;
      EXPECT_NEAR(alse_density(f, mu + d), alse_density(f, mu - d), 1e-8) << f.describe();
    }
  }
}

TEST(Alse, VanishesAtBoundaries) {
  for (const auto& f : {ConditionalDensity::beta(2, 3), ConditionalDensity::gamma(2.5, 1),
                        ConditionalDensity::beta(0.5, 0.5)}) {
    const auto curve = alse_transform(f);
    EXPECT_NEAR(curve.values.front(), 0.0, 1e-8) << f.describe();
    EXPECT_NEAR(curve.values.back(), 0.0, 1e-8) << f.describe();
    const Interval s = f.support();
    EXPECT_LT(alse_density(f, s.lo + 1e-12), 1e-5) << f.describe();
  }
}

TEST(Alse, RejectsInfiniteVariance) {
  EXPECT_THROW(alse_transform(ConditionalDensity::beta_prime(1, 2)), UnsupportedDistributionError);
}

TEST(Alse, AsymmetricLaplaceIsDensity) {
  const auto f = ConditionalDensity::asymmetric_laplace(0.3, 0.5, 1.0);
  const auto curve = alse_transform(f);
  EXPECT_NEAR(curve.trapezoid(), 1.0, 1e-6);
  for (double v : curve.values) EXPECT_GE(v, 0.0);
}

TEST(Alse, EmpiricalFromKernelSmoother) {
  Rng rng(3);
  const auto truth = ConditionalDensity::gamma(3, 1);
  std::vector<double> xs(5000);
  for (double& x : xs) x = truth.sample(rng);
  const auto f = ConditionalDensity::kernel_smoothed(xs);
  EXPECT_NEAR(f.expect([](double) { return 1.0; }), 1.0, 1e-10);
  EXPECT_NEAR(f.mean(), f.expect([](double x) { return x; }), 1e-9);
  const auto curve = alse_transform(f);
  EXPECT_NEAR(curve.trapezoid(), 1.0, 1e-6);
  EXPECT_NEAR(f.quantile(f.cdf(2.0)), 2.0, 1e-10);
  const auto tm = f.truncated_means(2.0);
  const double below = f.expect([](double x) { return x <= 2.0 ? x : 0.0; }) / f.cdf(2.0);
  EXPECT_NEAR(tm.lower, below, 1e-6);
}

TEST(Cumulant, NormalFixedPoint) {
  const auto f = ConditionalDensity::normal(1.0, 2.0);
  const auto k = f.cumulant_function();
  for (double t : {-3.0, -0.5, 0.25, 2.0}) EXPECT_NEAR(cumulant_transform(k, t), k.value(t), 1e-12);
}

TEST(Cumulant, GammaShiftsShape) {
  const auto f = ConditionalDensity::gamma(2.0, 1.5);
  for (double t : {-2.0, 0.3, 1.2})
    EXPECT_NEAR(cumulant_transform(f, t), -3.0 * std::log1p(-t / 1.5), 1e-12);
  EXPECT_THROW(cumulant_transform(f, 1.5), DomainError);
  EXPECT_DOUBLE_EQ(cumulant_transform(f, 0.0), 0.0);
}

TEST(Cumulant, GammaAgreesWithTabulatedIntervention) {
  const auto f = ConditionalDensity::gamma(2.0, 1.0);
  const double t = 0.5;
  const auto curve = alse_transform(f);
  double mgf = 0.0;
  for (std::size_t i = 0; i + 1 < curve.grid.size(); ++i) {
    const double a = curve.grid[i], b = curve.grid[i + 1];
    mgf += 0.5 * (std::exp(t * a) * curve.values[i] + std::exp(t * b) * curve.values[i + 1]) * (b - a);
  }
  EXPECT_NEAR(cumulant_transform(f, t), std::log(mgf), 1e-4);
}

TEST(Cumulant, NumericFamiliesMatchClosedForm) {
  // Beta(2,3) -> Beta(3,4) and BetaPrime(2,5) -> BetaPrime(3,3); compare with
  // a direct log-MGF of the mapped density.
  for (const auto& [f, t] : std::vector<std::pair<ConditionalDensity, double>>{
           {ConditionalDensity::beta(2, 3), 1.7},
           {ConditionalDensity::beta(2, 3), -2.0},
           {ConditionalDensity::beta_prime(2, 5), -0.8}}) {
    const auto g = closed_form_alse(f);
    const Interval s = g.support();
    const double direct = std::log(ref_expect(g, [t = t](double x) { return std::exp(t * x); }, s.lo, s.hi));
    EXPECT_NEAR(cumulant_transform(f, t), direct, 1e-8) << f.describe();
  }
  EXPECT_THROW(cumulant_transform(ConditionalDensity::beta_prime(2, 5), 0.1), DomainError);
}

TEST(Cumulant, AsymmetricLaplaceDomain) {
  const auto f = ConditionalDensity::asymmetric_laplace(0.3, 0.5, 1.0);
  const auto k = f.cumulant_function();
  const double t = 0.4;
  const double direct = std::log(f.expect([t](double x) { return std::exp(t * x); }));
  EXPECT_NEAR(k.value(t), direct, 1e-9);
  EXPECT_THROW(cumulant_transform(k, 1.5), DomainError);
}

TEST(Curve, CsvHeader) {
  DensityCurve c{{0.0, 1.0}, {1.0, 1.0}};
  std::ostringstream os;
  c.write_csv(os);
  EXPECT_EQ(os.str().substr(0, 10), "x,density\n");
  EXPECT_DOUBLE_EQ(c.trapezoid(), 1.0);
}
