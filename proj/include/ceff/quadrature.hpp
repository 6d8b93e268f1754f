#pragma once

// Adaptive 21-point Gauss-Kronrod quadrature for vector-valued integrands.
//
// All components share the abscissae, so an integrand that produces many
// moments of the same density (E[1], E[X], E[X m(X)], ...) costs a single
// density evaluation per node. Infinite endpoints are mapped onto finite
// intervals with the usual rational substitutions.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <queue>
#include <span>
#include <vector>

namespace ceff::quad {

struct Options {
  double abs_tol = 1e-10;
  double rel_tol = 1e-10;
  int max_intervals = 4000;
  // Length scale of the substitution used on infinite ranges; set it to the
  // spread of the integrand so the mapped tail is resolved early.
  double tail_scale = 1.0;
  // Equal panels the range is cut into before adaptive bisection starts.
  int initial_panels = 4;
};

struct Result {
  double value = 0.0;
  double error = 0.0;
  bool converged = true;
};

namespace detail {

// Kronrod abscissae (non-negative half) and weights; gauss_weights are the
// 10-point Gauss weights attached to the odd-indexed Kronrod nodes.
struct Gk21 {
  std::array<double, 11> nodes;
  std::array<double, 11> kronrod_weights;
  std::array<double, 5> gauss_weights;
};

const Gk21& gk21();

// Maps t in a finite reference interval to x and returns dx/dt.
struct Mapping {
  enum class Kind { Finite, UpperInfinite, LowerInfinite, BothInfinite };
  Kind kind = Kind::Finite;
  double anchor = 0.0;
  double scale = 1.0;

  double operator()(double t, double& jac) const {
    switch (kind) {
      case Kind::Finite:
        jac = 1.0;
        return t;
      case Kind::UpperInfinite: {  // [a, inf): x = a + s t/(1-t)
        const double u = 1.0 - t;
        jac = scale / (u * u);
        return anchor + scale * t / u;
      }
      case Kind::LowerInfinite: {  // (-inf, b]: x = b - s(1-t)/t
        jac = scale / (t * t);
        return anchor - scale * (1.0 - t) / t;
      }
      case Kind::BothInfinite: {  // x = s t/(1-t^2), t in (-1, 1)
        const double u = 1.0 - t * t;
        jac = scale * (1.0 + t * t) / (u * u);
        return scale * t / u;
      }
    }
    jac = 1.0;
    return t;
  }
};

}  // namespace detail

// Integrates `f(x, out)` (writing `dim` values into `out`) over [a, b].
// Either endpoint may be infinite. On return `values[k]` holds the integral
// of component k and `errors[k]` its error estimate. Returns false if the
// interval budget ran out before every component met its tolerance.
template <class F>
bool integrate_vector(F&& f, std::size_t dim, double a, double b,
                      std::span<double> values, std::span<double> errors,
                      const Options& opts = {}) {
  std::fill(values.begin(), values.end(), 0.0);
  std::fill(errors.begin(), errors.end(), 0.0);
  if (a == b) return true;
  double sign = 1.0;
  if (a > b) {
    std::swap(a, b);
    sign = -1.0;
  }

  detail::Mapping map;
  map.scale = opts.tail_scale;
  double ta = a, tb = b;
  const bool inf_a = std::isinf(a), inf_b = std::isinf(b);
  if (inf_a && inf_b) {
    map.kind = detail::Mapping::Kind::BothInfinite;
    ta = -1.0;
    tb = 1.0;
  } else if (inf_b) {
    map.kind = detail::Mapping::Kind::UpperInfinite;
    map.anchor = a;
    ta = 0.0;
    tb = 1.0;
  } else if (inf_a) {
    map.kind = detail::Mapping::Kind::LowerInfinite;
    map.anchor = b;
    ta = 0.0;
    tb = 1.0;
  }

  const auto& rule = detail::gk21();
  std::vector<double> buf(dim), kron(dim), gauss(dim), absk(dim);

  struct Piece {
    double lo, hi, worst;
    std::size_t slot;
  };
  // Per-interval estimates live in flat arrays indexed by slot.
  std::vector<double> piece_k, piece_e, piece_abs;

  auto eval_piece = [&](double lo, double hi) {
    const double c = 0.5 * (lo + hi), h = 0.5 * (hi - lo);
    std::fill(kron.begin(), kron.end(), 0.0);
    std::fill(gauss.begin(), gauss.end(), 0.0);
    std::fill(absk.begin(), absk.end(), 0.0);
    auto add = [&](double t, double wk, double wg) {
      double jac = 0.0;
      const double x = map(t, jac);
      f(x, std::span<double>(buf));
      for (std::size_t k = 0; k < dim; ++k) {
        const double v = buf[k] * jac;
        if (!std::isfinite(v)) continue;
        kron[k] += wk * v;
        gauss[k] += wg * v;
        absk[k] += wk * std::abs(v);
      }
    };
    add(c, rule.kronrod_weights[0], 0.0);
    for (std::size_t i = 1; i < 11; ++i) {
      const double wg = (i % 2 == 1) ? rule.gauss_weights[i / 2] : 0.0;
      add(c - h * rule.nodes[i], rule.kronrod_weights[i], wg);
      add(c + h * rule.nodes[i], rule.kronrod_weights[i], wg);
    }
    const std::size_t slot = piece_k.size() / dim;
    double worst = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      const double ik = kron[k] * h;
      const double ek = std::abs((kron[k] - gauss[k]) * h);
      piece_k.push_back(ik);
      piece_e.push_back(ek);
      piece_abs.push_back(absk[k] * std::abs(h));
      worst = std::max(worst, ek);
    }
    return Piece{lo, hi, worst, slot};
  };

  auto cmp = [](const Piece& x, const Piece& y) { return x.worst < y.worst; };
  std::priority_queue<Piece, std::vector<Piece>, decltype(cmp)> heap(cmp);
  std::vector<double> total(dim, 0.0), total_err(dim, 0.0), total_abs(dim, 0.0);

  auto account = [&](const Piece& p, double s) {
    for (std::size_t k = 0; k < dim; ++k) {
      total[k] += s * piece_k[p.slot * dim + k];
      total_err[k] += s * piece_e[p.slot * dim + k];
      total_abs[k] += s * piece_abs[p.slot * dim + k];
    }
  };

  // Several starting panels: a single panel misses features away from the
  // centre too easily on mapped infinite ranges.
  const int kInitial = std::max(1, opts.initial_panels);
  for (int i = 0; i < kInitial; ++i) {
    const double lo = ta + (tb - ta) * i / kInitial;
    const double hi = ta + (tb - ta) * (i + 1) / kInitial;
    Piece p = eval_piece(lo, hi);
    account(p, 1.0);
    heap.push(p);
  }

  constexpr double eps = std::numeric_limits<double>::epsilon();
  auto satisfied = [&]() {
    for (std::size_t k = 0; k < dim; ++k) {
      const double tol = std::max({opts.abs_tol, opts.rel_tol * std::abs(total[k]),
                                   50.0 * eps * total_abs[k]});
      if (total_err[k] > tol) return false;
    }
    return true;
  };

  int count = kInitial;
  bool ok = true;
  while (!satisfied()) {
    if (count >= opts.max_intervals || heap.empty()) {
      ok = false;
      break;
    }
    Piece p = heap.top();
    heap.pop();
    const double mid = 0.5 * (p.lo + p.hi);
    if (!(mid > p.lo && mid < p.hi)) {  // interval can no longer be split
      ok = false;
      break;
    }
    account(p, -1.0);
    Piece left = eval_piece(p.lo, mid);
    Piece right = eval_piece(mid, p.hi);
    account(left, 1.0);
    account(right, 1.0);
    heap.push(left);
    heap.push(right);
    count += 1;
  }

  // Re-sum from the surviving pieces to shed the add/subtract round-off.
  std::fill(total.begin(), total.end(), 0.0);
  std::fill(total_err.begin(), total_err.end(), 0.0);
  while (!heap.empty()) {
    const Piece p = heap.top();
    heap.pop();
    for (std::size_t k = 0; k < dim; ++k) {
      total[k] += piece_k[p.slot * dim + k];
      total_err[k] += piece_e[p.slot * dim + k];
    }
  }
  for (std::size_t k = 0; k < dim; ++k) {
    values[k] = sign * total[k];
    errors[k] = total_err[k];
  }
  return ok;
}

// Single non-adaptive 21-point Kronrod panel on a finite [a, b].
template <class F>
double gk21_panel(F&& f, double a, double b) {
  const auto& rule = detail::gk21();
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  double sum = rule.kronrod_weights[0] * f(c);
  for (std::size_t i = 1; i < 11; ++i)
    sum += rule.kronrod_weights[i] * (f(c - h * rule.nodes[i]) + f(c + h * rule.nodes[i]));
  return sum * h;
}

// Scalar convenience wrapper.
Result integrate(const std::function<double(double)>& f, double a, double b,
                 const Options& opts = {});

// Integrates over consecutive pieces [p0,p1], [p1,p2], ... of `points`.
Result integrate_pieces(const std::function<double(double)>& f, std::span<const double> points,
                        const Options& opts = {});

}  // namespace ceff::quad
