#include "ceff/estimate.hpp"

#include <cmath>
#include <ostream>

#include <boost/math/distributions/normal.hpp>
#include <json.hpp>

#include "ceff/error.hpp"

namespace ceff {

namespace {

Eigen::VectorXd v_of(const Dataset& data, const VFunction& v) {
  Eigen::VectorXd out(data.n());
  for (Eigen::Index i = 0; i < data.n(); ++i) out[i] = v_eval(v, data.x[i]);
  return out;
}

void check_fits(const Dataset& data, const CrossFit& fits) {
  if (fits.m.size() != data.n() || fits.pi.size() != data.n() || fits.rho.size() != data.n())
    throw ConfigError("nuisance fits do not match the dataset");
  if (!fits.out_of_fold()) throw FoldError("nuisance fits were trained on the rows they score");
}

double sample_sd(const Eigen::VectorXd& v) {
  const auto n = v.size();
  if (n < 2) return 0.0;
  return std::sqrt((v.array() - v.mean()).square().sum() / static_cast<double>(n - 1));
}

void finish(EstimateReport& r, const CrossFit& fits, double level) {
  r.n = static_cast<std::size_t>(r.influence_values.size());
  r.std_error = sample_sd(r.influence_values) / std::sqrt(static_cast<double>(r.n));
  r.diagnostics.folds = fits.plan.K;
  r.diagnostics.learner = fits.learner;
  r.diagnostics.beta_clipped = fits.beta_clipped;
  r.diagnostics.binary_nuisances = fits.binary;
  r.diagnostics.mean_influence = r.influence_values.mean();
  r.level = level;
  r.ci = confidence_interval(r, level);
}

}  // namespace

EstimateReport estimate_lambda_bar(const Dataset& data, const CrossFit& fits, double level) {
  return estimate_lambda_bar(v_of(data, fits.v), data, fits, level);
}

EstimateReport estimate_lambda_bar(const Eigen::VectorXd& v_values, const Dataset& data,
                                   const CrossFit& fits, double level) {
  check_fits(data, fits);
  if (v_values.size() != data.n()) throw ConfigError("v values do not match the dataset");
  const Eigen::ArrayXd rv = v_values - fits.rho;
  const Eigen::ArrayXd rx = data.x - fits.pi;
  const Eigen::ArrayXd ry = data.y - fits.m;
  const double den = (rv * rx).mean();
  if (!(std::abs(den) > 1e-10))
    throw DegenerateError("sum of {v(x) - rho(z)}{x - pi(z)} is numerically zero");
  EstimateReport r;
  r.estimand = {EstimandKind::LambdaBar, fits.v};
  r.point = (rv * ry).mean() / den;
  r.influence_values = (rv * (ry - r.point * rx) / den).matrix();
  finish(r, fits, level);
  return r;
}

EstimateReport estimate_lambda(const Dataset& data, const CrossFit& fits, double level) {
  check_fits(data, fits);
  if (!fits.has_lambda() || fits.beta.size() != data.n())
    throw ConfigError("the Lambda estimator needs beta(z) and lambda(z) fits");
  const Eigen::ArrayXd rv = v_of(data, fits.v) - fits.rho;
  const Eigen::ArrayXd rx = data.x - fits.pi;
  const Eigen::ArrayXd ry = data.y - fits.m;
  const Eigen::ArrayXd lam = fits.lambda.array();
  const Eigen::ArrayXd terms = rv / fits.beta.array() * (ry - lam * rx) + lam;
  EstimateReport r;
  r.estimand = {EstimandKind::Lambda, fits.v};
  r.point = terms.mean();
  r.influence_values = (terms - r.point).matrix();
  finish(r, fits, level);
  return r;
}

std::pair<double, double> confidence_interval(const EstimateReport& report, double level) {
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
  const double q = boost::math::quantile(boost::math::normal_distribution<>(0.0, 1.0), 0.5 * (1.0 + level));
  return {report.point - q * report.std_error, report.point + q * report.std_error};
}

double gcm_numerator(const Dataset& data, const CrossFit& fits) {
  check_fits(data, fits);
  return ((data.x - fits.pi).array() * (data.y - fits.m).array()).mean();
}

void write_report_json(const std::vector<EstimateReport>& reports, std::ostream& out) {
  nlohmann::ordered_json doc;
  doc["schema_version"] = kReportSchemaVersion;
  doc["estimates"] = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json e;
    e["estimand"] = r.estimand.label();
    e["v"] = r.estimand.v.name();
    e["point"] = r.point;
    e["std_error"] = r.std_error;
    e["ci"] = {{"level", r.level}, {"lower", r.ci.first}, {"upper", r.ci.second}};
    e["n"] = r.n;
    e["diagnostics"] = {{"folds", r.diagnostics.folds},
                        {"learner", r.diagnostics.learner},
                        {"beta_clipped", r.diagnostics.beta_clipped},
                        {"binary_nuisances", r.diagnostics.binary_nuisances},
                        {"mean_influence", r.diagnostics.mean_influence}};
    doc["estimates"].push_back(std::move(e));
  }
  out << doc.dump(2) << '\n';
}

void write_influence_csv(const EstimateReport& report, std::ostream& out) {
  out << "influence\n";
  const auto old = out.precision(17);
  for (Eigen::Index i = 0; i < report.influence_values.size(); ++i) out << report.influence_values[i] << '\n';
  out.precision(old);
}

}  // namespace ceff
