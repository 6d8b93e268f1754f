#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "ceff/density.hpp"
#include "ceff/error.hpp"

namespace ceff {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double checked_variance(const ConditionalDensity& f) {
  const double var = f.variance();
  if (!std::isfinite(var) || !(var > 0.0))
    throw UnsupportedDistributionError("ALSE transform needs a finite, nonzero variance: " +
                                       f.describe());
  if (!std::isfinite(f.mean()))
    throw UnsupportedDistributionError("ALSE transform needs a finite mean: " + f.describe());
  return var;
}

// Intervention mass beyond x on one side, for f~(s) = int_s^b l f.
//   upper: int_x^b (u - x) l(u) f(u) du
//   lower: -int_a^x (x - u) l(u) f(u) du
double tail_mass_upper(const ConditionalDensity& f, const std::function<double(double)>& l,
                       double x, double b) {
  quad::Options o;
  o.abs_tol = 1e-15;
  o.rel_tol = 1e-8;
  o.tail_scale = f.spread();
  return quad::integrate(
             [&](double u) {
               const double d = f.pdf(u);
               return d > 0.0 ? (u - x) * l(u) * d : 0.0;
             },
             x, b, o)
      .value;
}

double tail_mass_lower(const ConditionalDensity& f, const std::function<double(double)>& l,
                       double a, double x) {
  quad::Options o;
  o.abs_tol = 1e-15;
  o.rel_tol = 1e-8;
  o.tail_scale = f.spread();
  return -quad::integrate(
              [&](double u) {
                const double d = f.pdf(u);
                return d > 0.0 ? (x - u) * l(u) * d : 0.0;
              },
              a, x, o)
              .value;
}

}  // namespace

double DensityCurve::trapezoid() const {
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i)
    total += 0.5 * (values[i] + values[i + 1]) * (grid[i + 1] - grid[i]);
  return total;
}

void DensityCurve::write_csv(std::ostream& os) const {
  const auto old = os.precision(17);
  os << "x,density\n";
  for (std::size_t i = 0; i < grid.size(); ++i) os << grid[i] << ',' << values[i] << '\n';
  os.precision(old);
}

DensityCurve tabulate(const std::function<double(double)>& eval, double lo, double hi,
                      std::span<const double> breakpoints, const GridOptions& opts) {
  if (!(std::isfinite(lo) && std::isfinite(hi) && lo < hi))
    throw DomainError("tabulate: need a finite range lo < hi");
  std::vector<double> nodes;
  const int n0 = std::max(opts.initial_points, 2);
  for (int i = 0; i < n0; ++i) nodes.push_back(lo + (hi - lo) * i / (n0 - 1));
  if (lo > 0.0 && hi / lo > 100.0) {
    const double llo = std::log(lo), lhi = std::log(hi);
    for (int i = 1; i + 1 < n0; ++i) nodes.push_back(std::exp(llo + (lhi - llo) * i / (n0 - 1)));
  } else if (lo >= 0.0 && hi > 100.0 * (hi - lo) / n0) {
    // Range starting at zero with a long tail: log-space the tail as well.
    const double first = (hi - lo) / (n0 - 1);
    const double llo = std::log(first), lhi = std::log(hi);
    for (int i = 0; i < n0; ++i) nodes.push_back(std::exp(llo + (lhi - llo) * i / (n0 - 1)));
  }
  for (double b : breakpoints)
    if (b > lo && b < hi) nodes.push_back(b);
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  nodes.front() = lo;
  nodes.back() = hi;

  std::vector<double> vals(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) vals[i] = eval(nodes[i]);

  DensityCurve out;
  out.grid.reserve(nodes.size() * 4);
  out.values.reserve(nodes.size() * 4);
  struct Task {
    double a, fa, b, fb;
  };
  std::vector<Task> stack;
  std::size_t budget = opts.max_points;
  for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
    out.grid.push_back(nodes[i]);
    out.values.push_back(vals[i]);
    stack.push_back({nodes[i], vals[i], nodes[i + 1], vals[i + 1]});
    // Depth-first refinement emits nodes in ascending order.
    while (!stack.empty()) {
      Task t = stack.back();
      stack.pop_back();
      const double m = 0.5 * (t.a + t.b);
      const bool splittable = m > t.a && m < t.b && out.grid.size() + stack.size() < budget;
      if (!splittable) {
        if (t.b != nodes[i + 1]) {
          out.grid.push_back(t.b);
          out.values.push_back(t.fb);
        }
        continue;
      }
      const double fm = eval(m);
      // |Simpson - trapezoid| on [a, b].
      const double err = (t.b - t.a) * (2.0 / 3.0) * std::abs(0.5 * (t.fa + t.fb) - fm);
      if (err <= opts.local_tol) {
        out.grid.push_back(m);
        out.values.push_back(fm);
        if (t.b != nodes[i + 1]) {
          out.grid.push_back(t.b);
          out.values.push_back(t.fb);
        }
        continue;
      }
      stack.push_back({m, fm, t.b, t.fb});
      stack.push_back({t.a, t.fa, m, fm});
    }
  }
  out.grid.push_back(nodes.back());
  out.values.push_back(vals.back());
  return out;
}

Interval intervention_range(const ConditionalDensity& f, const std::function<double(double)>& l,
                            double tail_mass) {
  const Interval s = f.support();
  Interval r = s;
  const double step0 = f.spread();
  if (std::isinf(s.hi)) {
    double x = f.quantile(1.0 - 1e-9);
    double step = step0;
    for (int it = 0; it < 200; ++it) {
      if (std::abs(tail_mass_upper(f, l, x, kInf)) <= tail_mass) break;
      x += step;
      step *= 1.5;
    }
    r.hi = x;
  }
  if (std::isinf(s.lo)) {
    double x = f.quantile(1e-9);
    double step = step0;
    for (int it = 0; it < 200; ++it) {
      if (std::abs(tail_mass_lower(f, l, -kInf, x)) <= tail_mass) break;
      x -= step;
      step *= 1.5;
    }
    r.lo = x;
  }
  return r;
}

double alse_density(const ConditionalDensity& f, double x) {
  const double var = checked_variance(f);
  const Interval s = f.support();
  if (!(x > s.lo && x < s.hi)) return 0.0;
  const double lower_mass = f.cdf(x), upper_mass = f.sf(x);
  if (!(lower_mass > 0.0) || !(upper_mass > 0.0)) return 0.0;
  const TruncatedMeans tm = f.truncated_means(x);
  return std::max(0.0, lower_mass * upper_mass * (tm.upper - tm.lower) / var);
}

DensityCurve alse_transform(const ConditionalDensity& f, const GridOptions& opts) {
  const double var = checked_variance(f);
  const double mu = f.mean();
  const Interval r = intervention_range(f, [=](double x) { return (x - mu) / var; });
  const auto bp = f.breakpoints();
  return tabulate([&](double x) { return alse_density(f, x); }, r.lo, r.hi, bp, opts);
}

ConditionalDensity closed_form_alse(const ConditionalDensity& f) {
  const auto& p = f.params();
  if (const auto* n = std::get_if<family::Normal>(&p)) return ConditionalDensity::normal(n->mean, n->sd);
  if (const auto* g = std::get_if<family::Gamma>(&p))
    return ConditionalDensity::gamma(g->shape + 1.0, g->rate);
  if (const auto* c = std::get_if<family::ChiSquared>(&p))
    return ConditionalDensity::chi_squared(c->dof + 2.0);
  if (const auto* b = std::get_if<family::Beta>(&p)) return ConditionalDensity::beta(b->a + 1.0, b->b + 1.0);
  if (const auto* bp = std::get_if<family::BetaPrime>(&p)) {
    if (!(bp->b > 2.0)) throw DomainError("beta prime ALSE transform needs b > 2");
    return ConditionalDensity::beta_prime(bp->a + 1.0, bp->b - 2.0);
  }
  throw NoClosedFormError("no closed-form ALSE transform for " + f.describe());
}

double cumulant_transform(const CumulantFunction& k, double t) {
  if (!k.contains(t) && t != 0.0)
    throw DomainError("cumulant transform: t outside the convergence region");
  if (!(k.kappa2 > 0.0) || !std::isfinite(k.kappa2))
    throw UnsupportedDistributionError("cumulant transform needs a finite, nonzero variance");
  const double base = k.value(t);
  if (t == 0.0) return base;
  const double ratio = (k.derivative(t) - k.kappa1) / (t * k.kappa2);
  if (!(ratio > 0.0) || !std::isfinite(ratio) || !std::isfinite(base))
    throw DomainError("cumulant transform: not finite at t");
  return base + std::log(ratio);
}

double cumulant_transform(const ConditionalDensity& f, double t) {
  return cumulant_transform(f.cumulant_function(), t);
}

}  // namespace ceff
