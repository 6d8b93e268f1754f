#pragma once

// Cross-fitted closed-form estimators of Lambda and LambdaBar with plug-in
// influence values.

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ceff/model.hpp"
#include "ceff/nuisance.hpp"
#include "ceff/oracle.hpp"

namespace ceff {

struct EstimateDiagnostics {
  int folds = 0;
  std::string learner;
  std::size_t beta_clipped = 0;
  bool binary_nuisances = false;
  double mean_influence = 0.0;
};

struct EstimateReport {
  EstimandId estimand;
  double point = 0.0;
  double std_error = 0.0;
  double level = 0.95;
  std::pair<double, double> ci{0.0, 0.0};
  std::size_t n = 0;
  Eigen::VectorXd influence_values;
  EstimateDiagnostics diagnostics;
};

inline constexpr int kReportSchemaVersion = 1;

// sum {v - rho}{y - m} / sum {v - rho}{x - pi}, with influence values
// {v - rho}[y - m - point (x - pi)] / mean[{v - rho}{x - pi}].
EstimateReport estimate_lambda_bar(const Dataset& data, const CrossFit& fits, double level = 0.95);
// Same with v(x_i) supplied directly; fits.rho must be the matching regression.
EstimateReport estimate_lambda_bar(const Eigen::VectorXd& v_values, const Dataset& data,
                                   const CrossFit& fits, double level = 0.95);

// mean of {v - rho}/beta [y - m - lambda (x - pi)] + lambda; the influence
// values are the summands minus the point. ConfigError without beta/lambda.
EstimateReport estimate_lambda(const Dataset& data, const CrossFit& fits, double level = 0.95);

// point -/+ z_{(1+level)/2} std_error. ConfigError unless 0 < level < 1.
std::pair<double, double> confidence_interval(const EstimateReport& report, double level);

// n^{-1} sum {x - pi(z)}{y - m(z)}.
double gcm_numerator(const Dataset& data, const CrossFit& fits);

// {"schema_version": 1, "estimates": [{"estimand", "v", "point", "std_error",
//   "ci": {"level", "lower", "upper"}, "n", "diagnostics": {...}}]}
void write_report_json(const std::vector<EstimateReport>& reports, std::ostream& out);

// Single column "influence" with one row per observation.
void write_influence_csv(const EstimateReport& report, std::ostream& out);

}  // namespace ceff
