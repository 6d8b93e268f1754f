#pragma once

// Data containers, v-functions and the two-exposure / three-outcome
// simulation design with its analytic response surfaces.

#include <cstdint>
#include <iosfwd>
#include <string>

#include <Eigen/Dense>

#include "ceff/density.hpp"

namespace ceff {

struct Dataset {
  Eigen::VectorXd y;
  Eigen::VectorXd x;
  Eigen::MatrixXd z;  // n x d

  Eigen::Index n() const { return y.size(); }
  Eigen::Index d() const { return z.cols(); }
  // Throws ValidationError on row-count mismatch, n < 1 or non-finite entries.
  void validate() const;
};

// CSV with header y,x,z1,...,zd. Errors name the offending line.
Dataset read_dataset_csv(std::istream& in);
Dataset read_dataset_csv(const std::string& path);
void write_dataset_csv(const Dataset& data, std::ostream& out);
void write_dataset_csv(const Dataset& data, const std::string& path);

enum class VKind { Identity, Reciprocal, Threshold };

struct VFunction {
  VKind kind = VKind::Identity;
  double x0 = 0.0;  // threshold location, Threshold only

  static VFunction identity() { return {VKind::Identity, 0.0}; }
  static VFunction reciprocal() { return {VKind::Reciprocal, 0.0}; }
  static VFunction threshold(double x0);

  std::string name() const;
};

// "identity", "reciprocal", "threshold:<x0>" (x0 may also be given separately).
VFunction parse_vfunction(const std::string& text);

// x, 1/x or 1{x > x0}. Reciprocal at x = 0 throws DomainError.
double v_eval(const VFunction& v, double x);

enum class WeightScheme { Unitary, CovarianceWeighted };

struct ScenarioSpec {
  int outcome_id = 1;   // 1..3
  int exposure_id = 1;  // 1..2

  void validate() const;
  std::string label() const;  // "(Y2,X1)"
};

// Numerically stable logistic function.
double expit(double t);

double m_true(const ScenarioSpec& spec, double x, double z);
double m_prime_true(const ScenarioSpec& spec, double x, double z);

// Law of X given Z = z:
//   exposure 1: Normal(4 + 0.2(z + z^2), 1)
//   exposure 2: Gamma(shape 5, rate 2.5(1 + z^2))
ConditionalDensity exposure_density(int exposure_id, double z);

// Z ~ N(0,1); X | Z from exposure_density; Y = m(X, Z) + noise, with
// Bernoulli noise for outcome 1 and N(0,1) noise for outcomes 2 and 3.
// Z, X and Y use separate substreams of `seed`, and outcomes 2 and 3 share
// their noise draws.
Dataset simulate_scenario(const ScenarioSpec& spec, std::size_t n, std::uint64_t seed);

}  // namespace ceff
