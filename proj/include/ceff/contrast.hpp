#pragma once

// Contrast functions l(x|z) at a fixed confounder value, their intervention
// densities f~(x) = -E{l(X) | X <= x} F(x), duality checks and the optimal
// heteroscedastic contrast.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ceff/density.hpp"
#include "ceff/model.hpp"

namespace ceff {

enum class ContrastKind { FromV, ADE, ADRD, Optimal, Custom };

std::string to_string(ContrastKind k);

struct ContrastFunction {
  ContrastKind kind = ContrastKind::Custom;
  std::function<double(double)> eval;
  // Points where l is discontinuous or singular (threshold, reciprocal pole).
  std::vector<double> breakpoints;
  // Set for kind == FromV.
  VFunction v;
  double rho = 0.0;   // E{v(X)|Z=z}
  double beta = 0.0;  // Cov{v(X),X|Z=z}

  double operator()(double x) const { return eval(x); }
};

// When X has mass on both sides of zero, E{h(X)/X} is taken as a principal
// value, provided the smaller side carries at most this much probability.
inline constexpr double kReciprocalStraddleMass = 1e-4;

// E{h(X)/X}; principal value across zero (see above), DomainError when the
// expectation does not exist.
double expect_over_x(const ConditionalDensity& f, const std::function<double(double)>& h);

struct VMoments {
  double rho;
  double beta;
};

// rho = E{v(X)} and beta = Cov{v(X), X}, closed form where available.
// Threshold with x0 outside the open support and Reciprocal with no defined
// E(1/X) raise DomainError.
VMoments v_moments(const VFunction& v, const ConditionalDensity& f);

// l(x) = {v(x) - rho}/beta. beta == 0 raises DegenerateError.
ContrastFunction contrast_from_v(const VFunction& v, double rho, double beta);
ContrastFunction contrast_from_v(const VFunction& v, const ConditionalDensity& f);

// -f'(x)/f(x).
double ade_contrast(const ConditionalDensity& f, double x);
ContrastFunction ade_contrast_function(const ConditionalDensity& f);

// -f_marg'(x)/f_cond(x).
double adrd_contrast(const ConditionalDensity& f_marg, const ConditionalDensity& f_cond, double x);
ContrastFunction adrd_contrast_function(const ConditionalDensity& f_marg,
                                        const ConditionalDensity& f_cond);

struct ConstraintResiduals {
  double mean;   // E{l(X)}
  double slope;  // E{l(X) X} - 1
  double worst() const;
};

ConstraintResiduals check_constraints(const ContrastFunction& l, const ConditionalDensity& f);

inline constexpr double kConstraintTolerance = 1e-6;
inline constexpr double kNegativitySlack = 1e-8;

// Pointwise evaluator of f~ built once per (l, f): cumulative integrals of
// l f on a base grid plus one Kronrod panel to reach x.
class InterventionDensity {
 public:
  InterventionDensity(const ContrastFunction& l, const ConditionalDensity& f);

  double operator()(double x) const;
  Interval range() const { return range_; }
  // Support ends, quantiles and breakpoints inside range(), ascending.
  const std::vector<double>& split_points() const { return split_; }

 private:
  ContrastFunction l_;
  ConditionalDensity f_;
  Interval support_;
  Interval range_;
  std::vector<double> nodes_;
  std::vector<double> lower_;  // -int_{support lo}^{node} l f
  std::vector<double> upper_;  // int_{node}^{support hi} l f
  std::vector<double> split_;
  double median_;
};

// Tabulated f~; NotADensityError when some value is below -1e-8 or the mass
// is far from one. DomainError when l misses the moment constraints.
DensityCurve intervention_from_contrast(const ContrastFunction& l, const ConditionalDensity& f,
                                        const GridOptions& opts = {.local_tol = 1e-10});

struct TestFunction {
  std::function<double(double)> g;
  std::function<double(double)> g_prime;
};

// |E_f{l g} - E_f~{g'}| for each test function.
std::vector<double> verify_duality(const ContrastFunction& l, const ConditionalDensity& f,
                                   std::span<const TestFunction> tests);
double verify_duality(const ContrastFunction& l, const ConditionalDensity& f,
                      const TestFunction& test);

struct MomentProfile {
  double a0, a1, a2;  // E{X^n / sigma^2(X)}
  double b1, b2;      // E{X^n}
  std::function<double(double)> sigma2;
};

MomentProfile moment_profile(const ConditionalDensity& f, std::function<double(double)> sigma2);
// Discrete exposure with support `x` and probabilities `p`.
MomentProfile moment_profile(std::span<const double> x, std::span<const double> p,
                             std::function<double(double)> sigma2);

struct OptimalContrast {
  ContrastFunction l;
  // Unnormalised subgroup weight 1/E{l^2 sigma^2} = (a0 a2 - a1^2)/a0.
  double weight;
};

// l(x) = (a1 - a0 x)/{(a1^2 - a0 a2) sigma^2(x)}.
OptimalContrast optimal_contrast(const MomentProfile& profile);

}  // namespace ceff
