#pragma once

// Exposure density families and the average-least-squares (ALSE) intervention
// transform.
//
// A ConditionalDensity is the law of X given one fixed confounder value; the
// dependence on z lives in whoever builds it (see model.hpp).

#include <cstddef>
#include <functional>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ceff/quadrature.hpp"
#include "ceff/random.hpp"

namespace ceff {

enum class Family { Normal, Gamma, ChiSquared, Beta, BetaPrime, AsymmetricLaplace, Empirical };

std::string to_string(Family f);

struct Interval {
  double lo;
  double hi;
};

struct TruncatedMeans {
  double lower;  // E[X | X <= x]
  double upper;  // E[X | X > x]
};

// K(t) = log E exp(tX) with its derivative and first two cumulants.
struct CumulantFunction {
  std::function<double(double)> value;
  std::function<double(double)> derivative;
  double kappa1 = 0.0;
  double kappa2 = 0.0;
  Interval domain{0.0, 0.0};
  bool closed_upper = false;  // domain includes its upper end point

  bool contains(double t) const;
};

namespace family {
struct Normal {
  double mean, sd;
};
struct Gamma {
  double shape, rate;
};
struct ChiSquared {
  double dof;
};
struct Beta {
  double a, b;
};
struct BetaPrime {
  double a, b;
};
// Density p(1-p)/sigma * exp(-(x - x0)(1{x > x0} - p)/sigma).
struct AsymmetricLaplace {
  double p, sigma, x0;
};
// Density tabulated on an ascending grid: the pdf is the piecewise linear
// interpolant of the (normalised) values and the cdf is its integral, a
// monotone piecewise-quadratic cubic-Hermite curve.
struct EmpiricalTable {
  std::vector<double> x, pdf, cdf, first_moment;
};
struct Empirical {
  std::shared_ptr<const EmpiricalTable> table;
};
}  // namespace family

class ConditionalDensity {
 public:
  using Params = std::variant<family::Normal, family::Gamma, family::ChiSquared, family::Beta,
                              family::BetaPrime, family::AsymmetricLaplace, family::Empirical>;

  static ConditionalDensity normal(double mean, double sd);
  static ConditionalDensity gamma(double shape, double rate);
  static ConditionalDensity chi_squared(double dof);
  static ConditionalDensity beta(double a, double b);
  static ConditionalDensity beta_prime(double a, double b);
  static ConditionalDensity asymmetric_laplace(double p, double sigma, double x0);
  static ConditionalDensity empirical(std::vector<double> grid, std::vector<double> values);
  // Gaussian kernel smoother (Silverman bandwidth) tabulated on `grid_size`
  // points spanning the sample +- 5 bandwidths.
  static ConditionalDensity kernel_smoothed(std::span<const double> samples,
                                            std::size_t grid_size = 1024);

  Family family() const;
  const Params& params() const { return params_; }
  std::string describe() const;

  Interval support() const;
  // Points where the pdf is not differentiable (asymmetric Laplace centre).
  std::vector<double> breakpoints() const;

  double pdf(double x) const;
  double log_pdf(double x) const;
  double cdf(double x) const;
  double sf(double x) const;
  double quantile(double p) const;
  double median() const { return quantile(0.5); }

  // +inf when the moment does not exist.
  double mean() const;
  double variance() const;

  // d/dx log f(x). Throws DomainError where the pdf is zero or not
  // differentiable.
  double score(double x) const;

  // Conditional means below and above x; x must lie in the open support.
  TruncatedMeans truncated_means(double x) const;

  CumulantFunction cumulant_function() const;

  double sample(Rng& rng) const;

  // E[g(X)] by adaptive quadrature over the support.
  double expect(const std::function<double(double)>& g, const quad::Options& opts = {}) const;

  // Split points used by expect(): quantiles plus breakpoints, with the
  // support ends (possibly infinite) first and last.
  std::vector<double> integration_points() const;
  double spread() const;

 private:
  explicit ConditionalDensity(Params p) : params_(std::move(p)) {}
  Params params_;
};

// Tabulated curve, e.g. an intervention density ready for plotting.
struct DensityCurve {
  std::vector<double> grid;
  std::vector<double> values;

  double trapezoid() const;
  void write_csv(std::ostream& os) const;
};

struct GridOptions {
  int initial_points = 129;
  double local_tol = 1e-11;  // mass error allowed per grid interval
  std::size_t max_points = 400000;
};

// Tabulates `eval` on [lo, hi], bisecting intervals whose trapezoid error
// estimate exceeds the local tolerance. `breakpoints` inside the range are
// always grid nodes. Positive ranges spanning several decades also receive
// log-spaced nodes.
DensityCurve tabulate(const std::function<double(double)>& eval, double lo, double hi,
                      std::span<const double> breakpoints = {}, const GridOptions& opts = {});

// Range outside of which an intervention density built from contrast `l`
// under `f` keeps less than `tail_mass` on either side.
Interval intervention_range(const ConditionalDensity& f, const std::function<double(double)>& l,
                            double tail_mass = 1e-11);

// F(x){1-F(x)}{E(X|X>x) - E(X|X<=x)}/Var(X), evaluated pointwise.
double alse_density(const ConditionalDensity& f, double x);

DensityCurve alse_transform(const ConditionalDensity& f, const GridOptions& opts = {});

ConditionalDensity closed_form_alse(const ConditionalDensity& f);

double cumulant_transform(const CumulantFunction& k, double t);
double cumulant_transform(const ConditionalDensity& f, double t);

}  // namespace ceff
