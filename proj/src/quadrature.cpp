#include "ceff/quadrature.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace ceff::quad {

namespace detail {

const Gk21& gk21() {
  static const Gk21 rule = [] {
    Gk21 r{};
    const auto& kx = boost::math::quadrature::gauss_kronrod<double, 21>::abscissa();
    const auto& kw = boost::math::quadrature::gauss_kronrod<double, 21>::weights();
    const auto& gw = boost::math::quadrature::gauss<double, 10>::weights();
    for (std::size_t i = 0; i < 11; ++i) {
      r.nodes[i] = kx[i];
      r.kronrod_weights[i] = kw[i];
    }
    for (std::size_t i = 0; i < 5; ++i) r.gauss_weights[i] = gw[i];
    return r;
  }();
  return rule;
}

}  // namespace detail

Result integrate(const std::function<double(double)>& f, double a, double b, const Options& opts) {
  double value = 0.0, error = 0.0;
  const bool ok = integrate_vector([&](double x, std::span<double> out) { out[0] = f(x); }, 1, a, b,
                                   std::span<double>(&value, 1), std::span<double>(&error, 1), opts);
  return {value, error, ok};
}

Result integrate_pieces(const std::function<double(double)>& f, std::span<const double> points,
                        const Options& opts) {
  Result total;
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    const Result r = integrate(f, points[i], points[i + 1], opts);
    total.value += r.value;
    total.error += r.error;
    total.converged = total.converged && r.converged;
  }
  return total;
}

}  // namespace ceff::quad
