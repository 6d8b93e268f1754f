#include "ceff/contrast.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

#include <boost/math/quadrature/tanh_sinh.hpp>

#include "ceff/error.hpp"

namespace ceff {

namespace {

// Panels ending at a finite support end, where l f may be singular
// (reciprocal contrast with a density positive or slowly vanishing at 0).
template <class F>
double edge_integral(const F& g, double a, double b) {
  if (!(b > a)) return 0.0;
  thread_local boost::math::quadrature::tanh_sinh<double> ts(12);
  return ts.integrate(g, a, b, 1e-13);
}

constexpr double kInf = std::numeric_limits<double>::infinity();

quad::Options tight(const ConditionalDensity& f) {
  quad::Options o;
  o.abs_tol = 1e-15;
  o.rel_tol = 1e-12;
  o.max_intervals = 2000;
  o.tail_scale = f.spread();
  return o;
}

std::vector<double> merge_points(std::vector<double> pts, const std::vector<double>& extra, double lo,
                                 double hi) {
  for (double e : extra)
    if (e > lo && e < hi) pts.push_back(e);
  pts.erase(std::remove_if(pts.begin(), pts.end(), [&](double p) { return p < lo || p > hi; }),
            pts.end());
  pts.push_back(lo);
  pts.push_back(hi);
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  return pts;
}

// Vector integral of out(x) * f(x) over consecutive pieces.
template <class G>
void integrate_weighted(const ConditionalDensity& f, G&& g, std::size_t dim,
                        const std::vector<double>& pts, std::span<double> out,
                        const quad::Options& o) {
  std::fill(out.begin(), out.end(), 0.0);
  std::vector<double> v(dim), e(dim), buf(dim);
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    quad::integrate_vector(
        [&](double x, std::span<double> r) {
          const double d = f.pdf(x);
          if (!(d > 0.0)) {
            std::fill(r.begin(), r.end(), 0.0);
            return;
          }
          g(x, r);
          for (double& ri : r) ri *= d;
        },
        dim, pts[i], pts[i + 1], v, e, o);
    for (std::size_t k = 0; k < dim; ++k) out[k] += v[k];
  }
}

double positive_side_over_x(const ConditionalDensity& f, const std::function<double(double)>& h,
                            double sign) {
  // Integral of h(x) f(x)/x over the side of zero selected by `sign`.
  const Interval s = f.support();
  const double at_zero = f.pdf(0.0);
  if ((sign > 0 && s.lo == 0.0) || (sign < 0 && s.hi == 0.0)) {
    if (!(at_zero == 0.0)) throw DomainError("E(1/X) does not exist: density is positive at zero");
  }
  auto pts = f.integration_points();
  if (sign > 0) {
    pts = merge_points(pts, {}, std::max(0.0, s.lo), s.hi);
  } else {
    pts = merge_points(pts, {}, s.lo, std::min(0.0, s.hi));
  }
  double total = 0.0;
  const quad::Options o = tight(f);
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    total += quad::integrate(
                 [&](double x) {
                   const double d = f.pdf(x);
                   return d > 0.0 ? h(x) * d / x : 0.0;
                 },
                 pts[i], pts[i + 1], o)
                 .value;
  }
  return total;
}

}  // namespace

std::string to_string(ContrastKind k) {
  switch (k) {
    case ContrastKind::FromV: return "from_v";
    case ContrastKind::ADE: return "ade";
    case ContrastKind::ADRD: return "adrd";
    case ContrastKind::Optimal: return "optimal";
    case ContrastKind::Custom: return "custom";
  }
  return "unknown";
}

double expect_over_x(const ConditionalDensity& f, const std::function<double(double)>& h) {
  const Interval s = f.support();
  if (s.lo >= 0.0) return positive_side_over_x(f, h, 1.0);
  if (s.hi <= 0.0) return positive_side_over_x(f, h, -1.0);
  const double below = f.cdf(0.0), above = f.sf(0.0);
  if (std::min(below, above) > kReciprocalStraddleMass) {
    std::ostringstream os;
    os << "E(1/X) is undefined: " << f.describe() << " puts mass " << std::min(below, above)
       << " on the minority side of zero";
    throw DomainError(os.str());
  }
  // Principal value: fold the negative half onto the positive half.
  std::vector<double> pts;
  for (double p : f.integration_points())
    if (std::isfinite(p)) pts.push_back(std::abs(p));
  const double reach = std::max(std::abs(s.lo), std::abs(s.hi));
  pts = merge_points(pts, {}, 0.0, reach);
  double total = 0.0;
  const quad::Options o = tight(f);
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    total += quad::integrate(
                 [&](double x) {
                   const double dp = f.pdf(x), dm = f.pdf(-x);
                   const double up = dp > 0.0 ? h(x) * dp : 0.0;
                   const double um = dm > 0.0 ? h(-x) * dm : 0.0;
                   return (up - um) / x;
                 },
                 pts[i], pts[i + 1], o)
                 .value;
  }
  return total;
}

VMoments v_moments(const VFunction& v, const ConditionalDensity& f) {
  switch (v.kind) {
    case VKind::Identity: {
      const double var = f.variance();
      if (!std::isfinite(var)) throw DomainError("identity v needs a finite variance");
      return {f.mean(), var};
    }
    case VKind::Threshold: {
      const Interval s = f.support();
      if (!(v.x0 > s.lo && v.x0 < s.hi))
        throw DomainError("threshold x0 lies outside the open support of X");
      const double upper = f.sf(v.x0), lower = f.cdf(v.x0);
      if (!(upper > 0.0) || !(lower > 0.0))
        throw DomainError("threshold x0 leaves no mass on one side");
      const TruncatedMeans tm = f.truncated_means(v.x0);
      return {upper, lower * upper * (tm.upper - tm.lower)};
    }
    case VKind::Reciprocal: {
      const double mu = f.mean();
      if (!std::isfinite(mu)) throw DomainError("reciprocal v needs a finite mean");
      double inv = 0.0;
      const auto& p = f.params();
      if (const auto* g = std::get_if<family::Gamma>(&p); g && g->shape > 1.0) {
        inv = g->rate / (g->shape - 1.0);
      } else if (const auto* c = std::get_if<family::ChiSquared>(&p); c && c->dof > 2.0) {
        inv = 1.0 / (c->dof - 2.0);
      } else if (const auto* b = std::get_if<family::Beta>(&p); b && b->a > 1.0) {
        inv = (b->a + b->b - 1.0) / (b->a - 1.0);
      } else if (const auto* bp = std::get_if<family::BetaPrime>(&p); bp && bp->a > 1.0) {
        inv = bp->b / (bp->a - 1.0);
      } else {
        inv = expect_over_x(f, [](double) { return 1.0; });
      }
      return {inv, 1.0 - mu * inv};
    }
  }
  throw DomainError("unknown v-function");
}

ContrastFunction contrast_from_v(const VFunction& v, double rho, double beta) {
  if (!std::isfinite(rho) || !std::isfinite(beta))
    throw DegenerateError("contrast moments must be finite");
  if (beta == 0.0) throw DegenerateError("Cov{v(X),X|Z} is zero; the contrast is undefined");
  ContrastFunction l;
  l.kind = ContrastKind::FromV;
  l.v = v;
  l.rho = rho;
  l.beta = beta;
  l.eval = [v, rho, beta](double x) { return (v_eval(v, x) - rho) / beta; };
  if (v.kind == VKind::Threshold) l.breakpoints = {v.x0};
  if (v.kind == VKind::Reciprocal) l.breakpoints = {0.0};
  return l;
}

ContrastFunction contrast_from_v(const VFunction& v, const ConditionalDensity& f) {
  const VMoments m = v_moments(v, f);
  return contrast_from_v(v, m.rho, m.beta);
}

double ade_contrast(const ConditionalDensity& f, double x) {
  if (!(f.pdf(x) > 0.0)) throw DomainError("ADE contrast: density is zero at x");
  return -f.score(x);
}

ContrastFunction ade_contrast_function(const ConditionalDensity& f) {
  ContrastFunction l;
  l.kind = ContrastKind::ADE;
  l.eval = [f](double x) { return ade_contrast(f, x); };
  l.breakpoints = f.breakpoints();
  return l;
}

double adrd_contrast(const ConditionalDensity& f_marg, const ConditionalDensity& f_cond, double x) {
  const double dm = f_marg.pdf(x), dc = f_cond.pdf(x);
  if (!(dm > 0.0)) return 0.0;
  if (!(dc > 0.0)) throw DomainError("ADRD contrast: positivity fails (f(x) > 0 but f(x|z) = 0)");
  return -f_marg.score(x) * dm / dc;
}

ContrastFunction adrd_contrast_function(const ConditionalDensity& f_marg,
                                        const ConditionalDensity& f_cond) {
  ContrastFunction l;
  l.kind = ContrastKind::ADRD;
  l.eval = [f_marg, f_cond](double x) { return adrd_contrast(f_marg, f_cond, x); };
  l.breakpoints = f_marg.breakpoints();
  return l;
}

double ConstraintResiduals::worst() const { return std::max(std::abs(mean), std::abs(slope)); }

ConstraintResiduals check_constraints(const ContrastFunction& l, const ConditionalDensity& f) {
  const Interval s = f.support();
  const auto pts = merge_points(f.integration_points(), l.breakpoints, s.lo, s.hi);
  std::array<double, 2> out{};
  integrate_weighted(
      f,
      [&](double x, std::span<double> r) {
        const double v = l(x);
        r[0] = v;
        r[1] = v * x;
      },
      2, pts, out, tight(f));
  return {out[0], out[1] - 1.0};
}

InterventionDensity::InterventionDensity(const ContrastFunction& l, const ConditionalDensity& f)
    : l_(l), f_(f), support_(f.support()), range_(intervention_range(f, l.eval)), median_(f.median()) {
  const quad::Options o = tight(f_);
  auto lf = [this](double x) {
    const double d = f_.pdf(x);
    return d > 0.0 ? l_(x) * d : 0.0;
  };

  std::vector<double> base;
  constexpr int kBase = 512;
  for (int i = 0; i <= kBase; ++i) base.push_back(range_.lo + (range_.hi - range_.lo) * i / kBase);
  if (range_.lo >= 0.0 && range_.hi > 50.0 * (range_.hi - range_.lo) / kBase) {
    const double first = std::max(range_.lo, (range_.hi - range_.lo) / kBase * 1e-3);
    const double a = std::log(first), b = std::log(range_.hi);
    for (int i = 0; i <= kBase; ++i) base.push_back(std::exp(a + (b - a) * i / kBase));
  }
  split_ = merge_points(f_.integration_points(), l_.breakpoints, range_.lo, range_.hi);
  nodes_ = merge_points(base, split_, range_.lo, range_.hi);

  const std::size_t n = nodes_.size();
  std::vector<double> seg(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) seg[k] = quad::integrate(lf, nodes_[k], nodes_[k + 1], o).value;
  if (nodes_.front() == support_.lo) seg.front() = edge_integral(lf, nodes_[0], nodes_[1]);
  if (nodes_.back() == support_.hi) seg.back() = edge_integral(lf, nodes_[n - 2], nodes_[n - 1]);
  lower_.assign(n, 0.0);
  upper_.assign(n, 0.0);
  lower_[0] = range_.lo > support_.lo ? -quad::integrate(lf, support_.lo, range_.lo, o).value : 0.0;
  upper_[n - 1] = range_.hi < support_.hi ? quad::integrate(lf, range_.hi, support_.hi, o).value : 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k) lower_[k + 1] = lower_[k] - seg[k];
  for (std::size_t k = n - 1; k > 0; --k) upper_[k - 1] = upper_[k] + seg[k - 1];
}

double InterventionDensity::operator()(double x) const {
  if (!(x > support_.lo && x < support_.hi)) return 0.0;
  auto lf = [this](double u) {
    const double d = f_.pdf(u);
    return d > 0.0 ? l_(u) * d : 0.0;
  };
  if (x < range_.lo || x > range_.hi) {
    const quad::Options o = tight(f_);
    if (x < range_.lo) return -quad::integrate(lf, support_.lo, x, o).value;
    return quad::integrate(lf, x, support_.hi, o).value;
  }
  auto it = std::upper_bound(nodes_.begin(), nodes_.end(), x);
  std::size_t k = static_cast<std::size_t>(std::distance(nodes_.begin(), it));
  k = std::clamp<std::size_t>(k == 0 ? 0 : k - 1, 0, nodes_.size() - 2);
  if (x <= median_) {
    if (k == 0 && nodes_[0] == support_.lo) return -edge_integral(lf, support_.lo, x);
    return lower_[k] - quad::gk21_panel(lf, nodes_[k], x);
  }
  if (k + 2 == nodes_.size() && nodes_.back() == support_.hi) return edge_integral(lf, x, support_.hi);
  return upper_[k + 1] + quad::gk21_panel(lf, x, nodes_[k + 1]);
}

DensityCurve intervention_from_contrast(const ContrastFunction& l, const ConditionalDensity& f,
                                        const GridOptions& opts) {
  const ConstraintResiduals r = check_constraints(l, f);
  if (r.worst() > kConstraintTolerance) {
    std::ostringstream os;
    os << "contrast misses the moment constraints under " << f.describe() << ": E l = " << r.mean
       << ", E lX - 1 = " << r.slope;
    throw DomainError(os.str());
  }
  const InterventionDensity ft(l, f);
  const Interval range = ft.range();
  DensityCurve curve = tabulate(ft, range.lo, range.hi, ft.split_points(), opts);
  const auto lowest = std::min_element(curve.values.begin(), curve.values.end());
  if (*lowest < -kNegativitySlack) {
    std::ostringstream os;
    os << "intervention function is negative (" << *lowest << ") at x = "
       << curve.grid[static_cast<std::size_t>(lowest - curve.values.begin())];
    throw NotADensityError(os.str());
  }
  const double mass = curve.trapezoid();
  if (std::abs(mass - 1.0) > 1e-4) {
    std::ostringstream os;
    os << "intervention function has mass " << mass;
    throw NotADensityError(os.str());
  }
  return curve;
}

std::vector<double> verify_duality(const ContrastFunction& l, const ConditionalDensity& f,
                                   std::span<const TestFunction> tests) {
  const std::size_t dim = tests.size();
  std::vector<double> lhs(dim, 0.0), rhs(dim, 0.0);
  const Interval s = f.support();
  integrate_weighted(
      f,
      [&](double x, std::span<double> r) {
        const double lv = l(x);
        for (std::size_t j = 0; j < dim; ++j) r[j] = lv * tests[j].g(x);
      },
      dim, merge_points(f.integration_points(), l.breakpoints, s.lo, s.hi), lhs, tight(f));

  const InterventionDensity ft(l, f);
  // Tails beyond the tabulation range carry little mass but large |g'|.
  const auto pts = merge_points(ft.split_points(), {}, s.lo, s.hi);
  quad::Options o;
  o.tail_scale = f.spread();
  o.abs_tol = 1e-12;
  o.rel_tol = 1e-10;
  o.max_intervals = 1000;
  std::vector<double> v(dim), e(dim);
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    quad::integrate_vector(
        [&](double x, std::span<double> r) {
          const double w = ft(x);
          for (std::size_t j = 0; j < dim; ++j) r[j] = w * tests[j].g_prime(x);
        },
        dim, pts[i], pts[i + 1], v, e, o);
    for (std::size_t j = 0; j < dim; ++j) rhs[j] += v[j];
  }
  std::vector<double> out(dim);
  for (std::size_t j = 0; j < dim; ++j) out[j] = std::abs(lhs[j] - rhs[j]);
  return out;
}

double verify_duality(const ContrastFunction& l, const ConditionalDensity& f,
                      const TestFunction& test) {
  return verify_duality(l, f, std::span<const TestFunction>(&test, 1)).front();
}

MomentProfile moment_profile(const ConditionalDensity& f, std::function<double(double)> sigma2) {
  const Interval s = f.support();
  std::array<double, 5> m{};
  integrate_weighted(
      f,
      [&](double x, std::span<double> r) {
        const double w = 1.0 / sigma2(x);
        r[0] = w;
        r[1] = x * w;
        r[2] = x * x * w;
        r[3] = x;
        r[4] = x * x;
      },
      5, merge_points(f.integration_points(), {}, s.lo, s.hi), m, tight(f));
  return {m[0], m[1], m[2], m[3], m[4], std::move(sigma2)};
}

MomentProfile moment_profile(std::span<const double> x, std::span<const double> p,
                             std::function<double(double)> sigma2) {
  if (x.size() != p.size() || x.empty()) throw ConfigError("moment profile: x and p differ in size");
  MomentProfile m{0, 0, 0, 0, 0, std::move(sigma2)};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = p[i] / m.sigma2(x[i]);
    m.a0 += w;
    m.a1 += w * x[i];
    m.a2 += w * x[i] * x[i];
    m.b1 += p[i] * x[i];
    m.b2 += p[i] * x[i] * x[i];
  }
  return m;
}

OptimalContrast optimal_contrast(const MomentProfile& m) {
  const double d = m.a1 * m.a1 - m.a0 * m.a2;
  if (!(m.a0 > 0.0) || !std::isfinite(d) ||
      std::abs(d) <= 1e-12 * (m.a1 * m.a1 + std::abs(m.a0 * m.a2)))
    throw DegenerateError("optimal contrast: degenerate moment profile (a1^2 = a0 a2)");
  OptimalContrast out;
  out.l.kind = ContrastKind::Optimal;
  const double a0 = m.a0, a1 = m.a1;
  const auto sigma2 = m.sigma2;
  out.l.eval = [a0, a1, d, sigma2](double x) { return (a1 - a0 * x) / (d * sigma2(x)); };
  out.weight = -d / m.a0;
  return out;
}

}  // namespace ceff
