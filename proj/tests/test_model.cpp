#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "ceff/error.hpp"
#include "ceff/model.hpp"

using namespace ceff;

TEST(VFunction, Evaluates) {
  EXPECT_EQ(v_eval(VFunction::identity(), 2.0), 2.0);
  EXPECT_EQ(v_eval(VFunction::reciprocal(), 4.0), 0.25);
  EXPECT_EQ(v_eval(VFunction::threshold(3.0), 2.5), 0.0);
  EXPECT_EQ(v_eval(VFunction::threshold(3.0), 3.5), 1.0);
  EXPECT_EQ(v_eval(VFunction::threshold(3.0), 3.0), 0.0);
  EXPECT_THROW(v_eval(VFunction::reciprocal(), 0.0), DomainError);
  EXPECT_THROW(VFunction::threshold(NAN), DomainError);
}

TEST(VFunction, Parses) {
  EXPECT_EQ(parse_vfunction("identity").kind, VKind::Identity);
  EXPECT_EQ(parse_vfunction("reciprocal").kind, VKind::Reciprocal);
  const auto t = parse_vfunction("threshold:2.5");
  EXPECT_EQ(t.kind, VKind::Threshold);
  EXPECT_EQ(t.x0, 2.5);
  EXPECT_THROW(parse_vfunction("square"), ConfigError);
}

TEST(Model, ExpitStable) {
  EXPECT_EQ(expit(0.0), 0.5);
  EXPECT_NEAR(expit(-800.0), 0.0, 1e-300);
  EXPECT_EQ(expit(800.0), 1.0);
  EXPECT_TRUE(std::isfinite(expit(-745.0)));
  EXPECT_NEAR(expit(3.0) + expit(-3.0), 1.0, 1e-15);
}

TEST(Model, ResponseAnchors) {
  EXPECT_DOUBLE_EQ(m_true({1, 1}, 2.5, 0.0), 0.5);
  EXPECT_DOUBLE_EQ(m_true({2, 1}, 3.0, 0.0), 3.0);
  const double h = 1e-6;
  const double fd = (m_true({2, 1}, 3.0 + h, 0.0) - m_true({2, 1}, 3.0 - h, 0.0)) / (2 * h);
  EXPECT_NEAR(m_prime_true({2, 1}, 3.0, 0.0), 0.0, 1e-12);
  EXPECT_NEAR(fd, 0.0, 1e-6);
  EXPECT_DOUBLE_EQ(m_prime_true({3, 1}, 3.0, 1.5), 0.2);
  EXPECT_DOUBLE_EQ(m_true({3, 2}, 2.0, 1.5), m_true({2, 2}, 2.0, 1.5) + 0.4);
}

TEST(Model, DerivativeMatchesFiniteDifference) {
  for (int o = 1; o <= 3; ++o) {
    const ScenarioSpec s{o, 1};
    for (double z : {-1.3, 0.0, 0.7, 1.6}) {
      for (double x = -1.0; x <= 8.0; x += 0.173) {
        const double h = 1e-5;
        const double fd = (m_true(s, x + h, z) - m_true(s, x - h, z)) / (2 * h);
        const double an = m_prime_true(s, x, z);
        EXPECT_LE(std::abs(fd - an), 1e-5 * std::max(1.0, std::abs(an))) << o << " " << x << " " << z;
      }
    }
  }
}

TEST(Model, ScenarioValidation) {
  EXPECT_THROW((ScenarioSpec{4, 1}.validate()), ConfigError);
  EXPECT_THROW((ScenarioSpec{1, 3}.validate()), ConfigError);
  EXPECT_NO_THROW((ScenarioSpec{3, 2}.validate()));
  EXPECT_EQ((ScenarioSpec{2, 1}.label()), "(Y2,X1)");
}

TEST(Simulate, SupportAndBinaryOutcome) {
  const auto d = simulate_scenario({1, 2}, 5000, 17);
  EXPECT_EQ(d.n(), 5000);
  EXPECT_EQ(d.d(), 1);
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    EXPECT_GT(d.x[i], 0.0);
    EXPECT_TRUE(d.y[i] == 0.0 || d.y[i] == 1.0);
  }
}

TEST(Simulate, Deterministic) {
  const auto a = simulate_scenario({2, 1}, 1000, 7);
  const auto b = simulate_scenario({2, 1}, 1000, 7);
  const auto c = simulate_scenario({2, 1}, 1000, 8);
  EXPECT_TRUE((a.y.array() == b.y.array()).all());
  EXPECT_TRUE((a.x.array() == b.x.array()).all());
  EXPECT_TRUE((a.z.array() == b.z.array()).all());
  EXPECT_FALSE((a.x.array() == c.x.array()).all());
}

TEST(Simulate, OutcomeDoesNotPerturbExposure) {
  const auto a = simulate_scenario({1, 1}, 500, 99);
  const auto b = simulate_scenario({3, 1}, 500, 99);
  EXPECT_TRUE((a.x.array() == b.x.array()).all());
  EXPECT_TRUE((a.z.array() == b.z.array()).all());
  const auto c = simulate_scenario({2, 1}, 500, 99);
  for (Eigen::Index i = 0; i < c.n(); ++i)
    EXPECT_NEAR(b.y[i] - c.y[i], c.z(i, 0) > 1.0 ? 0.2 * c.x[i] : 0.0, 1e-12);
}

TEST(Simulate, LawOfLargeNumbers) {
  const std::size_t n = 1000000;
  const auto d1 = simulate_scenario({2, 1}, n, 2024);
  // E{4 + 0.2(Z + Z^2)} = 4.2; Var X = 1 + 0.04 Var(Z + Z^2) = 1.12.
  EXPECT_NEAR(d1.x.mean(), 4.2, 0.01);
  EXPECT_NEAR(d1.x.mean(), 4.2, 3 * std::sqrt(1.12 / n));
  EXPECT_NEAR(d1.z.col(0).mean(), 0.0, 3 * std::sqrt(1.0 / n));

  // Exposure 2: E(X) = E{2/(1 + Z^2)}, E(X^2) = E{30 / (6.25 (1+Z^2)^2)}.
  auto ez = [](auto g) {
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        [&](double z) { return g(z) * std::exp(-0.5 * z * z) / std::sqrt(2 * std::numbers::pi); },
        -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(), 15, 1e-12);
  };
  const double m1 = ez([](double z) { return 2.0 / (1 + z * z); });
  const double m2 = ez([](double z) { return 30.0 / (6.25 * (1 + z * z) * (1 + z * z)); });
  const auto d2 = simulate_scenario({2, 2}, n, 2025);
  EXPECT_NEAR(d2.x.mean(), m1, 3 * std::sqrt((m2 - m1 * m1) / n));
}

TEST(DatasetCsv, RoundTrip) {
  const auto d = simulate_scenario({2, 2}, 50, 5);
  std::stringstream ss;
  write_dataset_csv(d, ss);
  EXPECT_EQ(ss.str().substr(0, 7), "y,x,z1\n");
  const auto e = read_dataset_csv(ss);
  EXPECT_TRUE((d.y.array() == e.y.array()).all());
  EXPECT_TRUE((d.x.array() == e.x.array()).all());
  EXPECT_TRUE((d.z.array() == e.z.array()).all());
}

TEST(DatasetCsv, RejectsBadInput) {
  std::stringstream bad_header("a,b\n1,2\n");
  EXPECT_THROW(read_dataset_csv(bad_header), ValidationError);
  std::stringstream bad_cell("y,x,z1\n1,2,3\n1,oops,3\n");
  try {
    read_dataset_csv(bad_cell);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  std::stringstream ragged("y,x,z1\n1,2\n");
  EXPECT_THROW(read_dataset_csv(ragged), ValidationError);
  std::stringstream empty("y,x,z1\n");
  EXPECT_THROW(read_dataset_csv(empty), ValidationError);
}
