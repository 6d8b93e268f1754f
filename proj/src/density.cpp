#include "ceff/density.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/random/gamma_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include "ceff/error.hpp"

namespace ceff {

namespace {

namespace bm = boost::math;
using Policy = bm::policies::policy<bm::policies::overflow_error<bm::policies::ignore_error>,
                                    bm::policies::promote_double<false>>;

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kLogSqrt2Pi = 0.91893853320467274;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require(bool ok, const std::string& msg) {
  if (!ok) throw DomainError(msg);
}

bool positive_finite(double v) { return std::isfinite(v) && v > 0.0; }

double std_normal_cdf(double a) { return 0.5 * bm::erfc(-a / kSqrt2, Policy()); }
double std_normal_sf(double a) { return 0.5 * bm::erfc(a / kSqrt2, Policy()); }
double std_normal_pdf(double a) { return std::exp(-0.5 * a * a - kLogSqrt2Pi); }

// phi(a)/Phi(a), stable for very negative a.
double normal_lower_hazard(double a) {
  const double cdf = std_normal_cdf(a);
  if (cdf > 1e-280) return std_normal_pdf(a) / cdf;
  const double r = 1.0 / (a * a);
  return -a / (1.0 - r + 3.0 * r * r - 15.0 * r * r * r);
}

double lbeta(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

// Beta-prime cdf/sf through the Beta(a, b) variable u = x/(1+x).
double beta_prime_cdf(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  return bm::ibeta(a, b, x / (1.0 + x), Policy());
}
double beta_prime_sf(double a, double b, double x) {
  if (x <= 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  return bm::ibeta(b, a, 1.0 / (1.0 + x), Policy());
}

double gamma_log_pdf(double shape, double rate, double x) {
  if (x < 0.0) return -kInf;
  if (x == 0.0) {
    if (shape < 1.0) return kInf;
    if (shape == 1.0) return std::log(rate);
    return -kInf;
  }
  return shape * std::log(rate) + (shape - 1.0) * std::log(x) - rate * x - std::lgamma(shape);
}

const family::EmpiricalTable& table_of(const family::Empirical& e) { return *e.table; }

std::size_t segment_of(const family::EmpiricalTable& t, double x) {
  auto it = std::upper_bound(t.x.begin(), t.x.end(), x);
  std::size_t i = static_cast<std::size_t>(std::distance(t.x.begin(), it));
  if (i == 0) return 0;
  return std::min(i - 1, t.x.size() - 2);
}

double empirical_pdf(const family::EmpiricalTable& t, double x) {
  if (x < t.x.front() || x > t.x.back()) return 0.0;
  const std::size_t i = segment_of(t, x);
  const double h = t.x[i + 1] - t.x[i];
  const double s = (x - t.x[i]) / h;
  return t.pdf[i] + s * (t.pdf[i + 1] - t.pdf[i]);
}

double empirical_cdf(const family::EmpiricalTable& t, double x) {
  if (x <= t.x.front()) return 0.0;
  if (x >= t.x.back()) return 1.0;
  const std::size_t i = segment_of(t, x);
  return t.cdf[i] + 0.5 * (x - t.x[i]) * (t.pdf[i] + empirical_pdf(t, x));
}

// Integral of x^power * pdf(x) over [lo, hi] inside one segment; the
// integrand is a polynomial of degree <= 3, so two Gauss points are exact.
double empirical_segment_moment(const family::EmpiricalTable& t, double lo, double hi, int power) {
  const double c = 0.5 * (lo + hi), h = 0.5 * (hi - lo);
  const double d = h / std::sqrt(3.0);
  double total = 0.0;
  for (double x : {c - d, c + d}) total += std::pow(x, power) * empirical_pdf(t, x);
  return total * h;
}

double empirical_quantile(const family::EmpiricalTable& t, double p) {
  if (p <= 0.0) return t.x.front();
  if (p >= 1.0) return t.x.back();
  auto it = std::upper_bound(t.cdf.begin(), t.cdf.end(), p);
  std::size_t i = static_cast<std::size_t>(std::distance(t.cdf.begin(), it));
  i = std::clamp<std::size_t>(i == 0 ? 0 : i - 1, 0, t.x.size() - 2);
  const double h = t.x[i + 1] - t.x[i];
  const double slope = (t.pdf[i + 1] - t.pdf[i]) / h;
  const double target = p - t.cdf[i];
  // Solve pdf_i s + slope s^2 / 2 = target for s in [0, h].
  double s;
  if (std::abs(slope) < 1e-300) {
    s = t.pdf[i] > 0.0 ? target / t.pdf[i] : 0.0;
  } else {
    const double disc = std::max(0.0, t.pdf[i] * t.pdf[i] + 2.0 * slope * target);
    s = 2.0 * target / (t.pdf[i] + std::sqrt(disc));
  }
  return t.x[i] + std::clamp(s, 0.0, h);
}

}  // namespace

std::string to_string(Family f) {
  switch (f) {
    case Family::Normal: return "normal";
    case Family::Gamma: return "gamma";
    case Family::ChiSquared: return "chisquared";
    case Family::Beta: return "beta";
    case Family::BetaPrime: return "betaprime";
    case Family::AsymmetricLaplace: return "asymmetric_laplace";
    case Family::Empirical: return "empirical";
  }
  return "unknown";
}

bool CumulantFunction::contains(double t) const {
  if (!std::isfinite(t)) return false;
  if (t <= domain.lo) return false;
  return closed_upper ? t <= domain.hi : t < domain.hi;
}

// ---------------------------------------------------------------------------
// Construction

ConditionalDensity ConditionalDensity::normal(double mean, double sd) {
  require(std::isfinite(mean) && positive_finite(sd), "normal: need finite mean and sd > 0");
  return ConditionalDensity(family::Normal{mean, sd});
}

ConditionalDensity ConditionalDensity::gamma(double shape, double rate) {
  require(positive_finite(shape) && positive_finite(rate), "gamma: need shape > 0 and rate > 0");
  return ConditionalDensity(family::Gamma{shape, rate});
}

ConditionalDensity ConditionalDensity::chi_squared(double dof) {
  require(positive_finite(dof), "chi-squared: need k > 0");
  return ConditionalDensity(family::ChiSquared{dof});
}

ConditionalDensity ConditionalDensity::beta(double a, double b) {
  require(positive_finite(a) && positive_finite(b), "beta: need shapes > 0");
  return ConditionalDensity(family::Beta{a, b});
}

ConditionalDensity ConditionalDensity::beta_prime(double a, double b) {
  require(positive_finite(a) && positive_finite(b), "beta prime: need shapes > 0");
  return ConditionalDensity(family::BetaPrime{a, b});
}

ConditionalDensity ConditionalDensity::asymmetric_laplace(double p, double sigma, double x0) {
  require(p > 0.0 && p < 1.0 && positive_finite(sigma) && std::isfinite(x0),
          "asymmetric Laplace: need p in (0,1), sigma > 0, finite x0");
  return ConditionalDensity(family::AsymmetricLaplace{p, sigma, x0});
}

ConditionalDensity ConditionalDensity::empirical(std::vector<double> grid, std::vector<double> values) {
  require(grid.size() >= 2 && grid.size() == values.size(), "empirical: need >= 2 grid points");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    require(std::isfinite(grid[i]) && std::isfinite(values[i]) && values[i] >= 0.0,
            "empirical: grid and values must be finite, values >= 0");
    if (i > 0) require(grid[i] > grid[i - 1], "empirical: grid must be strictly ascending");
  }
  double mass = 0.0;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i)
    mass += 0.5 * (values[i] + values[i + 1]) * (grid[i + 1] - grid[i]);
  require(mass > 0.0, "empirical: density has zero mass");

  auto t = std::make_shared<family::EmpiricalTable>();
  t->x = std::move(grid);
  t->pdf = std::move(values);
  for (double& v : t->pdf) v /= mass;
  const std::size_t n = t->x.size();
  t->cdf.assign(n, 0.0);
  t->first_moment.assign(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    t->cdf[i + 1] = t->cdf[i] + 0.5 * (t->pdf[i] + t->pdf[i + 1]) * (t->x[i + 1] - t->x[i]);
    t->first_moment[i + 1] =
        t->first_moment[i] + empirical_segment_moment(*t, t->x[i], t->x[i + 1], 1);
  }
  // Pin the last node to exactly one; the trapezoid sum differs by round-off.
  t->cdf.back() = 1.0;
  return ConditionalDensity(family::Empirical{std::move(t)});
}

ConditionalDensity ConditionalDensity::kernel_smoothed(std::span<const double> samples,
                                                       std::size_t grid_size) {
  require(samples.size() >= 2, "kernel smoother: need >= 2 samples");
  require(grid_size >= 16, "kernel smoother: grid too small");
  std::vector<double> s(samples.begin(), samples.end());
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  const double mean = std::accumulate(s.begin(), s.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : s) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  auto at = [&](double q) {
    const double pos = q * (n - 1.0);
    const auto i = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i);
    return i + 1 < s.size() ? s[i] * (1.0 - frac) + s[i + 1] * frac : s.back();
  };
  const double iqr = at(0.75) - at(0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = sd;
  require(spread > 0.0, "kernel smoother: samples have zero spread");
  const double bw = 0.9 * spread * std::pow(n, -0.2);

  const double lo = s.front() - 5.0 * bw, hi = s.back() + 5.0 * bw;
  std::vector<double> grid(grid_size), values(grid_size, 0.0);
  for (std::size_t g = 0; g < grid_size; ++g) {
    grid[g] = lo + (hi - lo) * static_cast<double>(g) / static_cast<double>(grid_size - 1);
    // Only samples within 8 bandwidths contribute measurably.
    auto first = std::lower_bound(s.begin(), s.end(), grid[g] - 8.0 * bw);
    auto last = std::upper_bound(s.begin(), s.end(), grid[g] + 8.0 * bw);
    double acc = 0.0;
    for (auto it = first; it != last; ++it) acc += std_normal_pdf((grid[g] - *it) / bw);
    values[g] = acc / (n * bw);
  }
  return empirical(std::move(grid), std::move(values));
}

// ---------------------------------------------------------------------------
// Evaluation

Family ConditionalDensity::family() const {
  return std::visit(Overloaded{
                        [](const family::Normal&) { return Family::Normal; },
                        [](const family::Gamma&) { return Family::Gamma; },
                        [](const family::ChiSquared&) { return Family::ChiSquared; },
                        [](const family::Beta&) { return Family::Beta; },
                        [](const family::BetaPrime&) { return Family::BetaPrime; },
                        [](const family::AsymmetricLaplace&) { return Family::AsymmetricLaplace; },
                        [](const family::Empirical&) { return Family::Empirical; },
                    },
                    params_);
}

std::string ConditionalDensity::describe() const {
  std::ostringstream os;
  os.precision(6);
  std::visit(Overloaded{
                 [&](const family::Normal& p) { os << "Normal(" << p.mean << ", " << p.sd << ")"; },
                 [&](const family::Gamma& p) { os << "Gamma(" << p.shape << ", " << p.rate << ")"; },
                 [&](const family::ChiSquared& p) { os << "ChiSquared(" << p.dof << ")"; },
                 [&](const family::Beta& p) { os << "Beta(" << p.a << ", " << p.b << ")"; },
                 [&](const family::BetaPrime& p) { os << "BetaPrime(" << p.a << ", " << p.b << ")"; },
                 [&](const family::AsymmetricLaplace& p) {
                   os << "AsymmetricLaplace(" << p.p << ", " << p.sigma << ", " << p.x0 << ")";
                 },
                 [&](const family::Empirical& p) {
                   os << "Empirical(" << p.table->x.size() << " points)";
                 },
             },
             params_);
  return os.str();
}

Interval ConditionalDensity::support() const {
  return std::visit(Overloaded{
                        [](const family::Normal&) { return Interval{-kInf, kInf}; },
                        [](const family::Gamma&) { return Interval{0.0, kInf}; },
                        [](const family::ChiSquared&) { return Interval{0.0, kInf}; },
                        [](const family::Beta&) { return Interval{0.0, 1.0}; },
                        [](const family::BetaPrime&) { return Interval{0.0, kInf}; },
                        [](const family::AsymmetricLaplace&) { return Interval{-kInf, kInf}; },
                        [](const family::Empirical& p) {
                          return Interval{p.table->x.front(), p.table->x.back()};
                        },
                    },
                    params_);
}

std::vector<double> ConditionalDensity::breakpoints() const {
  if (const auto* p = std::get_if<family::AsymmetricLaplace>(&params_)) return {p->x0};
  return {};
}

double ConditionalDensity::log_pdf(double x) const {
  return std::visit(
      Overloaded{
          [&](const family::Normal& p) {
            const double a = (x - p.mean) / p.sd;
            return -0.5 * a * a - kLogSqrt2Pi - std::log(p.sd);
          },
          [&](const family::Gamma& p) { return gamma_log_pdf(p.shape, p.rate, x); },
          [&](const family::ChiSquared& p) { return gamma_log_pdf(0.5 * p.dof, 0.5, x); },
          [&](const family::Beta& p) {
            if (x < 0.0 || x > 1.0) return -kInf;
            if (x == 0.0) return p.a < 1.0 ? kInf : (p.a == 1.0 ? -lbeta(p.a, p.b) : -kInf);
            if (x == 1.0) return p.b < 1.0 ? kInf : (p.b == 1.0 ? -lbeta(p.a, p.b) : -kInf);
            return (p.a - 1.0) * std::log(x) + (p.b - 1.0) * std::log1p(-x) - lbeta(p.a, p.b);
          },
          [&](const family::BetaPrime& p) {
            if (x < 0.0) return -kInf;
            if (x == 0.0) return p.a < 1.0 ? kInf : (p.a == 1.0 ? -lbeta(p.a, p.b) : -kInf);
            return (p.a - 1.0) * std::log(x) - (p.a + p.b) * std::log1p(x) - lbeta(p.a, p.b);
          },
          [&](const family::AsymmetricLaplace& p) {
            const double u = x - p.x0;
            const double step = u > 0.0 ? 1.0 : 0.0;
            return std::log(p.p * (1.0 - p.p) / p.sigma) - u * (step - p.p) / p.sigma;
          },
          [&](const family::Empirical& p) {
            const double v = empirical_pdf(table_of(p), x);
            return v > 0.0 ? std::log(v) : -kInf;
          },
      },
      params_);
}

double ConditionalDensity::pdf(double x) const {
  if (const auto* e = std::get_if<family::Empirical>(&params_)) return empirical_pdf(*e->table, x);
  return std::exp(log_pdf(x));
}

double ConditionalDensity::cdf(double x) const {
  return std::visit(
      Overloaded{
          [&](const family::Normal& p) { return std_normal_cdf((x - p.mean) / p.sd); },
          [&](const family::Gamma& p) {
            return x <= 0.0 ? 0.0 : bm::gamma_p(p.shape, p.rate * x, Policy());
          },
          [&](const family::ChiSquared& p) {
            return x <= 0.0 ? 0.0 : bm::gamma_p(0.5 * p.dof, 0.5 * x, Policy());
          },
          [&](const family::Beta& p) {
            if (x <= 0.0) return 0.0;
            if (x >= 1.0) return 1.0;
            return bm::ibeta(p.a, p.b, x, Policy());
          },
          [&](const family::BetaPrime& p) { return beta_prime_cdf(p.a, p.b, x); },
          [&](const family::AsymmetricLaplace& p) {
            const double u = x - p.x0;
            if (u <= 0.0) return (1.0 - p.p) * std::exp(p.p * u / p.sigma);
            return 1.0 - p.p * std::exp(-(1.0 - p.p) * u / p.sigma);
          },
          [&](const family::Empirical& p) { return empirical_cdf(table_of(p), x); },
      },
      params_);
}

double ConditionalDensity::sf(double x) const {
  return std::visit(
      Overloaded{
          [&](const family::Normal& p) { return std_normal_sf((x - p.mean) / p.sd); },
          [&](const family::Gamma& p) {
            return x <= 0.0 ? 1.0 : bm::gamma_q(p.shape, p.rate * x, Policy());
          },
          [&](const family::ChiSquared& p) {
            return x <= 0.0 ? 1.0 : bm::gamma_q(0.5 * p.dof, 0.5 * x, Policy());
          },
          [&](const family::Beta& p) {
            if (x <= 0.0) return 1.0;
            if (x >= 1.0) return 0.0;
            return bm::ibetac(p.a, p.b, x, Policy());
          },
          [&](const family::BetaPrime& p) { return beta_prime_sf(p.a, p.b, x); },
          [&](const family::AsymmetricLaplace& p) {
            const double u = x - p.x0;
            if (u <= 0.0) return 1.0 - (1.0 - p.p) * std::exp(p.p * u / p.sigma);
            return p.p * std::exp(-(1.0 - p.p) * u / p.sigma);
          },
          [&](const family::Empirical& p) { return 1.0 - empirical_cdf(table_of(p), x); },
      },
      params_);
}

double ConditionalDensity::quantile(double q) const {
  require(q >= 0.0 && q <= 1.0, "quantile: probability outside [0, 1]");
  const Interval s = support();
  if (q == 0.0) return s.lo;
  if (q == 1.0) return s.hi;
  return std::visit(
      Overloaded{
          [&](const family::Normal& p) {
            return p.mean - kSqrt2 * p.sd * bm::erfc_inv(2.0 * q, Policy());
          },
          [&](const family::Gamma& p) {
            return q < 0.5 ? bm::gamma_p_inv(p.shape, q, Policy()) / p.rate
                           : bm::gamma_q_inv(p.shape, 1.0 - q, Policy()) / p.rate;
          },
          [&](const family::ChiSquared& p) {
            return q < 0.5 ? 2.0 * bm::gamma_p_inv(0.5 * p.dof, q, Policy())
                           : 2.0 * bm::gamma_q_inv(0.5 * p.dof, 1.0 - q, Policy());
          },
          [&](const family::Beta& p) {
            return q < 0.5 ? bm::ibeta_inv(p.a, p.b, q, Policy())
                           : 1.0 - bm::ibeta_inv(p.b, p.a, 1.0 - q, Policy());
          },
          [&](const family::BetaPrime& p) {
            if (q < 0.5) {
              const double u = bm::ibeta_inv(p.a, p.b, q, Policy());
              return u / (1.0 - u);
            }
            // 1/(1+X) ~ Beta(b, a)
            const double w = bm::ibeta_inv(p.b, p.a, 1.0 - q, Policy());
            return w > 0.0 ? 1.0 / w - 1.0 : kInf;
          },
          [&](const family::AsymmetricLaplace& p) {
            if (q <= 1.0 - p.p) return p.x0 + p.sigma / p.p * std::log(q / (1.0 - p.p));
            return p.x0 - p.sigma / (1.0 - p.p) * std::log((1.0 - q) / p.p);
          },
          [&](const family::Empirical& p) { return empirical_quantile(table_of(p), q); },
      },
      params_);
}

double ConditionalDensity::mean() const {
  return std::visit(
      Overloaded{
          [](const family::Normal& p) { return p.mean; },
          [](const family::Gamma& p) { return p.shape / p.rate; },
          [](const family::ChiSquared& p) { return p.dof; },
          [](const family::Beta& p) { return p.a / (p.a + p.b); },
          [](const family::BetaPrime& p) { return p.b > 1.0 ? p.a / (p.b - 1.0) : kInf; },
          [](const family::AsymmetricLaplace& p) {
            return p.x0 + p.sigma * (2.0 * p.p - 1.0) / (p.p * (1.0 - p.p));
          },
          [](const family::Empirical& p) { return p.table->first_moment.back(); },
      },
      params_);
}

double ConditionalDensity::variance() const {
  return std::visit(
      Overloaded{
          [](const family::Normal& p) { return p.sd * p.sd; },
          [](const family::Gamma& p) { return p.shape / (p.rate * p.rate); },
          [](const family::ChiSquared& p) { return 2.0 * p.dof; },
          [](const family::Beta& p) {
            const double s = p.a + p.b;
            return p.a * p.b / (s * s * (s + 1.0));
          },
          [](const family::BetaPrime& p) {
            if (p.b <= 2.0) return kInf;
            return p.a * (p.a + p.b - 1.0) / ((p.b - 2.0) * (p.b - 1.0) * (p.b - 1.0));
          },
          [](const family::AsymmetricLaplace& p) {
            const double lo = p.sigma / p.p, hi = p.sigma / (1.0 - p.p);
            return (1.0 - p.p) * lo * lo + p.p * hi * hi + p.p * (1.0 - p.p) * (lo + hi) * (lo + hi);
          },
          [](const family::Empirical& p) {
            const auto& t = *p.table;
            double m2 = 0.0;
            for (std::size_t i = 0; i + 1 < t.x.size(); ++i)
              m2 += empirical_segment_moment(t, t.x[i], t.x[i + 1], 2);
            const double m1 = t.first_moment.back();
            return std::max(0.0, m2 - m1 * m1);
          },
      },
      params_);
}

double ConditionalDensity::score(double x) const {
  const Interval s = support();
  if (!(x > s.lo && x < s.hi)) throw DomainError("score: x outside the open support");
  return std::visit(
      Overloaded{
          [&](const family::Normal& p) { return -(x - p.mean) / (p.sd * p.sd); },
          [&](const family::Gamma& p) { return (p.shape - 1.0) / x - p.rate; },
          [&](const family::ChiSquared& p) { return (0.5 * p.dof - 1.0) / x - 0.5; },
          [&](const family::Beta& p) { return (p.a - 1.0) / x - (p.b - 1.0) / (1.0 - x); },
          [&](const family::BetaPrime& p) { return (p.a - 1.0) / x - (p.a + p.b) / (1.0 + x); },
          [&](const family::AsymmetricLaplace& p) {
            if (x == p.x0) throw DomainError("score: asymmetric Laplace not differentiable at x0");
            return -((x > p.x0 ? 1.0 : 0.0) - p.p) / p.sigma;
          },
          [&](const family::Empirical& p) {
            const auto& t = *p.table;
            const double v = empirical_pdf(t, x);
            if (!(v > 0.0)) throw DomainError("score: density is zero at x");
            const std::size_t i = segment_of(t, x);
            return (t.pdf[i + 1] - t.pdf[i]) / (t.x[i + 1] - t.x[i]) / v;
          },
      },
      params_);
}

TruncatedMeans ConditionalDensity::truncated_means(double x) const {
  const Interval s = support();
  if (!(x > s.lo && x < s.hi)) throw DomainError("truncated_means: x outside the open support");

  auto gamma_means = [&](double shape, double rate) {
    const double y = rate * x;
    const double mu = shape / rate;
    const double p0 = bm::gamma_p(shape, y, Policy());
    double lower = p0 > 0.0 ? mu * bm::gamma_p(shape + 1.0, y, Policy()) / p0
                            : x * shape / (shape + 1.0);
    const double q0 = bm::gamma_q(shape, y, Policy());
    double upper;
    if (q0 > 1e-290) {
      upper = mu * bm::gamma_q(shape + 1.0, y, Policy()) / q0;
    } else {
      // Q(a+1, y) = Q(a, y) + y^a e^-y / Gamma(a+1); deep tail: x + 1/rate.
      upper = x + 1.0 / rate;
    }
    return TruncatedMeans{lower, upper};
  };

  return std::visit(
      Overloaded{
          [&](const family::Normal& p) {
            const double a = (x - p.mean) / p.sd;
            return TruncatedMeans{p.mean - p.sd * normal_lower_hazard(a),
                                  p.mean + p.sd * normal_lower_hazard(-a)};
          },
          [&](const family::Gamma& p) { return gamma_means(p.shape, p.rate); },
          [&](const family::ChiSquared& p) { return gamma_means(0.5 * p.dof, 0.5); },
          [&](const family::Beta& p) {
            const double mu = p.a / (p.a + p.b);
            const double lo = bm::ibeta(p.a + 1.0, p.b, x, Policy()) / bm::ibeta(p.a, p.b, x, Policy());
            const double hi =
                bm::ibetac(p.a + 1.0, p.b, x, Policy()) / bm::ibetac(p.a, p.b, x, Policy());
            return TruncatedMeans{mu * lo, mu * hi};
          },
          [&](const family::BetaPrime& p) {
            if (p.b <= 1.0) throw DomainError("truncated_means: beta prime needs b > 1 for a mean");
            // x f(x|a,b) = mu f(x|a+1,b-1)
            const double mu = p.a / (p.b - 1.0);
            const double lo = beta_prime_cdf(p.a + 1.0, p.b - 1.0, x) / beta_prime_cdf(p.a, p.b, x);
            const double hi = beta_prime_sf(p.a + 1.0, p.b - 1.0, x) / beta_prime_sf(p.a, p.b, x);
            return TruncatedMeans{mu * lo, mu * hi};
          },
          [&](const family::AsymmetricLaplace& p) {
            const double mu = mean();
            if (x <= p.x0) {
              const double lower = x - p.sigma / p.p;  // exponential left tail
              const double f = cdf(x);
              return TruncatedMeans{lower, (mu - f * lower) / (1.0 - f)};
            }
            const double upper = x + p.sigma / (1.0 - p.p);
            const double sv = sf(x);
            return TruncatedMeans{(mu - sv * upper) / (1.0 - sv), upper};
          },
          [&](const family::Empirical& p) {
            const auto& t = *p.table;
            const std::size_t i = segment_of(t, x);
            const double partial = t.first_moment[i] + empirical_segment_moment(t, t.x[i], x, 1);
            const double f = empirical_cdf(t, x);
            const double mu = t.first_moment.back();
            return TruncatedMeans{partial / f, (mu - partial) / (1.0 - f)};
          },
      },
      params_);
}

double ConditionalDensity::spread() const {
  const double v = variance();
  if (std::isfinite(v) && v > 0.0) return std::sqrt(v);
  const double iqr = quantile(0.75) - quantile(0.25);
  return iqr > 0.0 ? iqr : 1.0;
}

std::vector<double> ConditionalDensity::integration_points() const {
  const Interval s = support();
  std::vector<double> pts{s.lo, s.hi};
  if (const auto* e = std::get_if<family::Empirical>(&params_)) {
    pts = e->table->x;
    return pts;
  }
  for (double q : {1e-3, 0.5, 1.0 - 1e-3}) pts.push_back(quantile(q));
  for (double b : breakpoints()) pts.push_back(b);
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  return pts;
}

double ConditionalDensity::expect(const std::function<double(double)>& g,
                                  const quad::Options& opts) const {
  quad::Options o = opts;
  o.tail_scale = spread();
  const auto pts = integration_points();
  return quad::integrate_pieces([&](double x) {
           const double d = pdf(x);
           return d > 0.0 ? g(x) * d : 0.0;
         },
                                pts, o)
      .value;
}

CumulantFunction ConditionalDensity::cumulant_function() const {
  CumulantFunction k;
  k.kappa1 = mean();
  k.kappa2 = variance();
  if (const auto* p = std::get_if<family::Normal>(&params_)) {
    const double mu = p->mean, s2 = p->sd * p->sd;
    k.value = [=](double t) { return mu * t + 0.5 * s2 * t * t; };
    k.derivative = [=](double t) { return mu + s2 * t; };
    k.domain = {-kInf, kInf};
    return k;
  }
  auto gamma_like = [&](double shape, double rate) {
    k.value = [=](double t) { return -shape * std::log1p(-t / rate); };
    k.derivative = [=](double t) { return shape / (rate - t); };
    k.domain = {-kInf, rate};
  };
  if (const auto* p = std::get_if<family::Gamma>(&params_)) {
    gamma_like(p->shape, p->rate);
    return k;
  }
  if (const auto* p = std::get_if<family::ChiSquared>(&params_)) {
    gamma_like(0.5 * p->dof, 0.5);
    return k;
  }
  if (const auto* p = std::get_if<family::AsymmetricLaplace>(&params_)) {
    const double a = p->p / p->sigma, b = (1.0 - p->p) / p->sigma, pp = p->p, x0 = p->x0;
    k.value = [=](double t) {
      const double m = (1.0 - pp) * a / (a + t) + pp * b / (b - t);
      return t * x0 + std::log(m);
    };
    k.derivative = [=](double t) {
      const double m = (1.0 - pp) * a / (a + t) + pp * b / (b - t);
      const double dm = -(1.0 - pp) * a / ((a + t) * (a + t)) + pp * b / ((b - t) * (b - t));
      return x0 + dm / m;
    };
    k.domain = {-a, b};
    return k;
  }

  // Numerical route: K(t) = t mu + log E exp(t (X - mu)).
  const ConditionalDensity self = *this;
  const double mu = k.kappa1;
  auto moments = [self, mu](double t) {
    const auto pts = self.integration_points();
    quad::Options o;
    o.abs_tol = 1e-14;
    o.rel_tol = 1e-12;
    o.tail_scale = self.spread();
    double m0 = 0.0, m1 = 0.0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      std::array<double, 2> v{}, e{};
      quad::integrate_vector(
          [&](double x, std::span<double> out) {
            const double d = self.pdf(x);
            const double w = d > 0.0 ? std::exp(t * (x - mu)) * d : 0.0;
            out[0] = w;
            out[1] = (x - mu) * w;
          },
          2, pts[i], pts[i + 1], v, e, o);
      m0 += v[0];
      m1 += v[1];
    }
    return std::pair{m0, m1};
  };
  k.value = [=](double t) { return t * mu + std::log(moments(t).first); };
  k.derivative = [=](double t) {
    const auto [m0, m1] = moments(t);
    return mu + m1 / m0;
  };
  if (std::holds_alternative<family::BetaPrime>(params_)) {
    k.domain = {-kInf, 0.0};
    k.closed_upper = true;
  } else {
    k.domain = {-kInf, kInf};
  }
  return k;
}

double ConditionalDensity::sample(Rng& rng) const {
  return std::visit(
      Overloaded{
          [&](const family::Normal& p) {
            return boost::random::normal_distribution<double>(p.mean, p.sd)(rng);
          },
          [&](const family::Gamma& p) {
            return boost::random::gamma_distribution<double>(p.shape, 1.0 / p.rate)(rng);
          },
          [&](const family::ChiSquared& p) {
            return boost::random::gamma_distribution<double>(0.5 * p.dof, 2.0)(rng);
          },
          [&](const family::Beta& p) {
            const double g1 = boost::random::gamma_distribution<double>(p.a, 1.0)(rng);
            const double g2 = boost::random::gamma_distribution<double>(p.b, 1.0)(rng);
            return g1 / (g1 + g2);
          },
          [&](const family::BetaPrime& p) {
            const double g1 = boost::random::gamma_distribution<double>(p.a, 1.0)(rng);
            const double g2 = boost::random::gamma_distribution<double>(p.b, 1.0)(rng);
            return g1 / g2;
          },
          [&](const family::AsymmetricLaplace&) {
            return quantile(boost::random::uniform_01<double>()(rng));
          },
          [&](const family::Empirical&) {
            return quantile(boost::random::uniform_01<double>()(rng));
          },
      },
      params_);
}

}  // namespace ceff
