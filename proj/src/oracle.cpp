#include "ceff/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include <boost/random/normal_distribution.hpp>

#include "ceff/contrast.hpp"
#include "ceff/error.hpp"
#include "ceff/parallel.hpp"
#include "ceff/quadrature.hpp"
#include "ceff/random.hpp"

namespace ceff {

std::string EstimandId::label() const {
  switch (kind) {
    case EstimandKind::ADE: return "ade";
    case EstimandKind::Lambda: return "lambda[" + v.name() + "]";
    case EstimandKind::LambdaBar: return "lambdabar[" + v.name() + "]";
  }
  return "unknown";
}

EstimandId parse_estimand(const std::string& kind, const std::string& v) {
  std::string k = kind, vname = v;
  const auto open = kind.find('[');
  if (open != std::string::npos) {
    if (kind.back() != ']') throw ConfigError("malformed estimand '" + kind + "'");
    k = kind.substr(0, open);
    vname = kind.substr(open + 1, kind.size() - open - 2);
  }
  if (k == "ade") return {EstimandKind::ADE, VFunction::identity()};
  if (k == "lambda") return {EstimandKind::Lambda, parse_vfunction(vname)};
  if (k == "lambdabar") return {EstimandKind::LambdaBar, parse_vfunction(vname)};
  throw ConfigError("unknown estimand '" + kind + "' (ade, lambda, lambdabar)");
}

OracleProblem scenario_problem(int exposure_id) {
  ScenarioSpec{1, exposure_id}.validate();
  OracleProblem p;
  p.exposure = [exposure_id](double z) { return exposure_density(exposure_id, z); };
  for (int o = 1; o <= 3; ++o) {
    const ScenarioSpec s{o, exposure_id};
    p.outcomes.push_back({[s](double x, double z) { return m_true(s, x, z); },
                          [s](double x, double z) { return m_prime_true(s, x, z); }});
  }
  p.vs = {VFunction::identity(), VFunction::reciprocal(), VFunction::threshold(3.0)};
  return p;
}

namespace {

struct Side {
  double mass = 0.0, xc = 0.0;
  std::vector<double> m;
};

}  // namespace

ConditionalEffects conditional_effects(const OracleProblem& problem, double z) {
  const ConditionalDensity f = problem.exposure(z);
  const std::size_t n_out = problem.outcomes.size(), n_v = problem.vs.size();
  const Interval s = f.support();

  bool recip = false, needs_mean = false;
  std::vector<double> thresholds;
  for (const auto& v : problem.vs) {
    if (v.kind == VKind::Reciprocal) recip = true;
    if (v.kind != VKind::Threshold) needs_mean = true;
    if (v.kind == VKind::Threshold) {
      if (!(v.x0 > s.lo && v.x0 < s.hi))
        throw DomainError("threshold x0 lies outside the open support of X");
      thresholds.push_back(v.x0);
    }
  }
  double mu = f.mean();
  if (!std::isfinite(mu)) {
    if (needs_mean) throw DomainError(f.describe() + " has no finite mean");
    mu = 0.0;
  }
  const bool straddle = s.lo < 0.0 && s.hi > 0.0;
  if (recip) {
    if (straddle && std::min(f.cdf(0.0), f.sf(0.0)) > kReciprocalStraddleMass)
      throw DomainError("E(1/X) is undefined: " + f.describe() + " has mass on both sides of zero");
    if ((s.lo == 0.0 || s.hi == 0.0) && f.pdf(0.0) > 0.0)
      throw DomainError("E(1/X) is undefined: density is positive at zero");
  }

  std::vector<double> pts;
  for (double p : f.integration_points())
    if (p >= s.lo && p <= s.hi) pts.push_back(p);
  for (double t : thresholds) pts.push_back(t);
  pts.push_back(s.lo);
  pts.push_back(s.hi);
  // Principal value window [-a, a] around zero, handled by folding.
  double a = 0.0;
  if (recip && straddle) {
    double closest = std::numeric_limits<double>::infinity();
    for (double p : pts)
      if (std::isfinite(p) && p != 0.0) closest = std::min(closest, std::abs(p));
    a = 0.5 * std::min(closest, std::min(-s.lo, s.hi));
    pts.insert(pts.end(), {-a, 0.0, a});
  }
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());

  // Components: 1, x-mu, (x-mu)^2, then per outcome m, (x-mu) m, m', then
  // optionally 1/x and m/x per outcome.
  const std::size_t base = 3, rbase = 3 + 3 * n_out;
  const std::size_t dim = rbase + (recip ? 1 + n_out : 0);
  std::vector<double> total(dim, 0.0), piece(dim), err(dim);
  std::vector<Side> lower(thresholds.size()), upper(thresholds.size());
  for (auto* sides : {&lower, &upper})
    for (auto& sd : *sides) sd.m.assign(n_out, 0.0);

  quad::Options o;
  o.abs_tol = 0.0;
  o.rel_tol = 1e-9;
  o.max_intervals = 400;
  o.tail_scale = f.spread();
  o.initial_panels = 2;

  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double lo = pts[i], hi = pts[i + 1];
    const bool in_window = recip && straddle && lo >= -a && hi <= a;
    quad::integrate_vector(
        [&](double x, std::span<double> r) {
          const double d = f.pdf(x);
          if (!(d > 0.0)) {
            std::fill(r.begin(), r.end(), 0.0);
            return;
          }
          const double c = x - mu;
          r[0] = d;
          r[1] = c * d;
          r[2] = c * c * d;
          for (std::size_t k = 0; k < n_out; ++k) {
            const double m = problem.outcomes[k].m(x, z) * d;
            r[base + 3 * k] = m;
            r[base + 3 * k + 1] = c * m;
            r[base + 3 * k + 2] = problem.outcomes[k].m_prime(x, z) * d;
            if (recip) r[rbase + 1 + k] = in_window ? 0.0 : m / x;
          }
          if (recip) r[rbase] = in_window ? 0.0 : d / x;
        },
        dim, lo, hi, piece, err, o);
    for (std::size_t k = 0; k < dim; ++k) total[k] += piece[k];
    for (std::size_t j = 0; j < thresholds.size(); ++j) {
      Side& sd = hi <= thresholds[j] ? lower[j] : upper[j];
      sd.mass += piece[0];
      sd.xc += piece[1];
      for (std::size_t k = 0; k < n_out; ++k) sd.m[k] += piece[base + 3 * k];
    }
  }
  if (recip && straddle) {
    std::vector<double> fold(1 + n_out), ferr(1 + n_out);
    quad::integrate_vector(
        [&](double x, std::span<double> r) {
          const double dp = f.pdf(x), dm = f.pdf(-x);
          r[0] = (dp - dm) / x;
          for (std::size_t k = 0; k < n_out; ++k) {
            const double up = dp > 0.0 ? problem.outcomes[k].m(x, z) * dp : 0.0;
            const double um = dm > 0.0 ? problem.outcomes[k].m(-x, z) * dm : 0.0;
            r[1 + k] = (up - um) / x;
          }
        },
        1 + n_out, 0.0, a, fold, ferr, o);
    for (std::size_t k = 0; k <= n_out; ++k) total[rbase + k] += fold[k];
  }

  const double mass = total[0];
  if (!(mass > 0.0)) throw DegenerateError("exposure density has no mass at z = " + std::to_string(z));
  auto e = [&](std::size_t k) { return total[k] / mass; };

  ConditionalEffects out;
  out.ade.resize(n_out);
  out.den.resize(n_v);
  out.num.resize(n_v * n_out);
  out.lambda.resize(n_v * n_out);
  for (std::size_t k = 0; k < n_out; ++k) out.ade[k] = e(base + 3 * k + 2);

  std::size_t tj = 0;
  for (std::size_t vi = 0; vi < n_v; ++vi) {
    const VFunction& v = problem.vs[vi];
    double den = 0.0;
    if (v.kind == VKind::Identity) {
      den = e(2) - e(1) * e(1);
      for (std::size_t k = 0; k < n_out; ++k)
        out.num[vi * n_out + k] = e(base + 3 * k + 1) - e(1) * e(base + 3 * k);
    } else if (v.kind == VKind::Reciprocal) {
      const double inv = e(rbase);
      den = 1.0 - (mu + e(1)) * inv;
      for (std::size_t k = 0; k < n_out; ++k)
        out.num[vi * n_out + k] = e(rbase + 1 + k) - inv * e(base + 3 * k);
    } else {
      const Side& lo = lower[tj];
      const Side& up = upper[tj];
      ++tj;
      if (!(lo.mass > 0.0) || !(up.mass > 0.0))
        throw DegenerateError("threshold " + v.name() + " leaves no mass on one side at z = " +
                              std::to_string(z));
      const double fs = (lo.mass / mass) * (up.mass / mass);
      const double gap = up.xc / up.mass - lo.xc / lo.mass;
      if (!(gap > 0.0))
        throw DegenerateError("Cov{v(X),X|Z} vanishes for " + v.name() + " at z = " + std::to_string(z));
      den = fs * gap;
      for (std::size_t k = 0; k < n_out; ++k) {
        const double diff = up.m[k] / up.mass - lo.m[k] / lo.mass;
        out.num[vi * n_out + k] = fs * diff;
        // The tail probabilities cancel; forming the ratio this way keeps it
        // accurate when one side carries almost no mass.
        out.lambda[vi * n_out + k] = diff / gap;
      }
      out.den[vi] = den;
      continue;
    }
    if (!std::isfinite(den) || den == 0.0)
      throw DegenerateError("Cov{v(X),X|Z} vanishes for " + v.name() + " at z = " + std::to_string(z));
    out.den[vi] = den;
    for (std::size_t k = 0; k < n_out; ++k) out.lambda[vi * n_out + k] = out.num[vi * n_out + k] / den;
  }
  return out;
}

ConditionalLambda conditional_lambda(const ScenarioSpec& spec, const VFunction& v, double z) {
  spec.validate();
  OracleProblem p = scenario_problem(spec.exposure_id);
  p.outcomes = {p.outcomes[static_cast<std::size_t>(spec.outcome_id - 1)]};
  p.vs = {v};
  const ConditionalEffects e = conditional_effects(p, z);
  return {e.num[0], e.den[0], e.lambda[0]};
}

namespace {

// Running sums for one problem over a block of Z draws.
struct Sums {
  std::size_t n_out = 0, n_v = 0;
  double count = 0.0;
  std::vector<double> ade, ade2, lam, lam2, num, num2, numden, den, den2;

  Sums(std::size_t o, std::size_t v)
      : n_out(o), n_v(v), ade(o), ade2(o), lam(o * v), lam2(o * v), num(o * v), num2(o * v),
        numden(o * v), den(v), den2(v) {}

  void add(const ConditionalEffects& e) {
    count += 1.0;
    for (std::size_t k = 0; k < n_out; ++k) {
      ade[k] += e.ade[k];
      ade2[k] += e.ade[k] * e.ade[k];
    }
    for (std::size_t v = 0; v < n_v; ++v) {
      den[v] += e.den[v];
      den2[v] += e.den[v] * e.den[v];
      for (std::size_t k = 0; k < n_out; ++k) {
        const std::size_t i = v * n_out + k;
        lam[i] += e.lambda[i];
        lam2[i] += e.lambda[i] * e.lambda[i];
        num[i] += e.num[i];
        num2[i] += e.num[i] * e.num[i];
        numden[i] += e.num[i] * e.den[v];
      }
    }
  }

  void merge(const Sums& b) {
    count += b.count;
    auto acc = [](std::vector<double>& x, const std::vector<double>& y) {
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
    };
    acc(ade, b.ade);
    acc(ade2, b.ade2);
    acc(lam, b.lam);
    acc(lam2, b.lam2);
    acc(num, b.num);
    acc(num2, b.num2);
    acc(numden, b.numden);
    acc(den, b.den);
    acc(den2, b.den2);
  }
};

TrueValue mean_value(double s1, double s2, double n) {
  const double mean = s1 / n;
  const double var = n > 1.0 ? std::max(0.0, (s2 - n * mean * mean) / (n - 1.0)) : 0.0;
  return {mean, std::sqrt(var / n), static_cast<std::size_t>(n)};
}

TrueValue ratio_value(double sn, double sn2, double snd, double sd, double sd2, double n) {
  const double r = sn / sd;
  // Delta method: residual num_i - r den_i has mean zero by construction.
  const double rss = sn2 - 2.0 * r * snd + r * r * sd2;
  const double var = n > 1.0 ? std::max(0.0, rss / (n - 1.0)) : 0.0;
  return {r, std::sqrt(var / n) / std::abs(sd / n), static_cast<std::size_t>(n)};
}

}  // namespace

TrueValue OracleTable::get(std::size_t outcome, const EstimandId& id) const {
  if (outcome >= outcomes) throw ConfigError("outcome index out of range");
  if (id.kind == EstimandKind::ADE) return ade[outcome];
  for (std::size_t v = 0; v < vs.size(); ++v) {
    if (vs[v].kind == id.v.kind && (id.v.kind != VKind::Threshold || vs[v].x0 == id.v.x0)) {
      const auto& src = id.kind == EstimandKind::Lambda ? lambda : lambda_bar;
      return src[v * outcomes + outcome];
    }
  }
  throw ConfigError("estimand " + id.label() + " is not part of this table");
}

std::vector<OracleTable> run_oracle(const std::vector<OracleProblem>& problems,
                                    const OracleOptions& opts) {
  if (opts.n_z < 2) throw ConfigError("the oracle needs at least two confounder draws");
  if (opts.block_size < 1) throw ConfigError("block size must be positive");
  const std::size_t n_blocks = (opts.n_z + opts.block_size - 1) / opts.block_size;
  std::vector<std::vector<Sums>> blocks(n_blocks);

  parallel_for(n_blocks, opts.threads, [&](std::size_t b) {
    std::vector<Sums> sums;
    for (const auto& p : problems) sums.emplace_back(p.outcomes.size(), p.vs.size());
    Rng rng = block_substream(opts.seed, streams::kOracleZ, b);
    boost::random::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t count = std::min(opts.block_size, opts.n_z - b * opts.block_size);
    for (std::size_t i = 0; i < count; ++i) {
      const double z = normal(rng);
      for (std::size_t p = 0; p < problems.size(); ++p) sums[p].add(conditional_effects(problems[p], z));
    }
    blocks[b] = std::move(sums);
  });

  std::vector<OracleTable> tables;
  for (std::size_t p = 0; p < problems.size(); ++p) {
    const std::size_t n_out = problems[p].outcomes.size(), n_v = problems[p].vs.size();
    Sums total(n_out, n_v);
    for (const auto& b : blocks) total.merge(b[p]);
    const double n = total.count;
    OracleTable t;
    t.outcomes = n_out;
    t.vs = problems[p].vs;
    for (std::size_t k = 0; k < n_out; ++k) t.ade.push_back(mean_value(total.ade[k], total.ade2[k], n));
    for (std::size_t v = 0; v < n_v; ++v) {
      for (std::size_t k = 0; k < n_out; ++k) {
        const std::size_t i = v * n_out + k;
        t.lambda.push_back(mean_value(total.lam[i], total.lam2[i], n));
        t.lambda_bar.push_back(
            ratio_value(total.num[i], total.num2[i], total.numden[i], total.den[v], total.den2[v], n));
      }
    }
    tables.push_back(std::move(t));
  }
  return tables;
}

TrueValue true_estimand(const ScenarioSpec& spec, const EstimandId& id, const OracleOptions& opts) {
  spec.validate();
  OracleProblem p = scenario_problem(spec.exposure_id);
  p.outcomes = {p.outcomes[static_cast<std::size_t>(spec.outcome_id - 1)]};
  p.vs.clear();
  if (id.kind != EstimandKind::ADE) p.vs = {id.v};
  return run_oracle({p}, opts).front().get(0, id);
}

std::vector<EstimandId> table_estimands() {
  std::vector<EstimandId> ids{{EstimandKind::ADE, VFunction::identity()}};
  const std::vector<VFunction> vs{VFunction::identity(), VFunction::reciprocal(),
                                  VFunction::threshold(3.0)};
  for (auto kind : {EstimandKind::Lambda, EstimandKind::LambdaBar})
    for (const auto& v : vs) ids.push_back({kind, v});
  return ids;
}

std::vector<ScenarioRow> scenario_table(const OracleOptions& opts) {
  const auto tables = run_oracle({scenario_problem(1), scenario_problem(2)}, opts);
  const auto ids = table_estimands();
  std::vector<ScenarioRow> rows;
  for (int o = 1; o <= 3; ++o) {
    for (int e = 1; e <= 2; ++e) {
      ScenarioRow r{{o, e}, {}};
      for (const auto& id : ids)
        r.values.push_back(tables[static_cast<std::size_t>(e - 1)].get(static_cast<std::size_t>(o - 1), id));
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

void write_oracle_csv(const std::vector<ScenarioRow>& rows, std::ostream& out) {
  const auto ids = table_estimands();
  out << "outcome,exposure,estimand,value,mc_se,n_z\n";
  const auto old = out.precision(10);
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < r.values.size() && j < ids.size(); ++j) {
      out << r.spec.outcome_id << ',' << r.spec.exposure_id << ",\"" << ids[j].label() << "\","
          << r.values[j].value << ',' << r.values[j].mc_standard_error << ',' << r.values[j].n_z_draws
          << '\n';
    }
  }
  out.precision(old);
}

DensityPair density_pair(const ConditionalDensity& f, const GridOptions& opts) {
  const DensityCurve c = alse_transform(f, opts);
  DensityPair p;
  p.grid = c.grid;
  p.intervention = c.values;
  p.truth.reserve(c.grid.size());
  for (double x : c.grid) p.truth.push_back(f.pdf(x));
  p.median = f.median();
  return p;
}

void write_density_pair_csv(const DensityPair& pair, std::ostream& out) {
  out << "x,true_density,intervention_density\n";
  const auto old = out.precision(17);
  for (std::size_t i = 0; i < pair.grid.size(); ++i)
    out << pair.grid[i] << ',' << pair.truth[i] << ',' << pair.intervention[i] << '\n';
  out << "# median=" << pair.median << '\n';
  out.precision(old);
}

}  // namespace ceff
