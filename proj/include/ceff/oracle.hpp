#pragma once

// Ground-truth estimands for known data-generating laws: quadrature over X at
// each confounder value, Monte Carlo over Z.

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "ceff/density.hpp"
#include "ceff/model.hpp"

namespace ceff {

enum class EstimandKind { ADE, Lambda, LambdaBar };

struct EstimandId {
  EstimandKind kind = EstimandKind::ADE;
  VFunction v;  // ignored for ADE

  // "ade", "lambda[identity]", "lambdabar[threshold:3]", ...
  std::string label() const;
};

// Accepts the labels produced by EstimandId::label() plus "lambda" and
// "lambdabar" paired with a separate v name.
EstimandId parse_estimand(const std::string& kind, const std::string& v = "identity");

struct TrueValue {
  double value = 0.0;
  double mc_standard_error = 0.0;
  std::size_t n_z_draws = 0;
};

struct OutcomeModel {
  std::function<double(double x, double z)> m;
  std::function<double(double x, double z)> m_prime;
};

// A data-generating law: X | Z = z has density exposure(z), Z ~ N(0, 1).
struct OracleProblem {
  std::function<ConditionalDensity(double z)> exposure;
  std::vector<OutcomeModel> outcomes;
  std::vector<VFunction> vs;
};

// Exposure `exposure_id` with the three simulation outcomes and the v-set
// {identity, reciprocal, threshold(3)}.
OracleProblem scenario_problem(int exposure_id);

// Per-confounder quantities. num and lambda are indexed [v * outcomes + o].
struct ConditionalEffects {
  std::vector<double> ade;     // E{m'(X,z) | z}
  std::vector<double> den;     // Cov{v(X), X | z}
  std::vector<double> num;     // Cov{v(X), m(X,z) | z}
  std::vector<double> lambda;  // num / den
};

// DomainError when some v has no defined moments under exposure(z);
// DegenerateError when Cov{v(X), X | z} vanishes.
ConditionalEffects conditional_effects(const OracleProblem& problem, double z);

struct ConditionalLambda {
  double num;
  double den;
  double lambda;
};

ConditionalLambda conditional_lambda(const ScenarioSpec& spec, const VFunction& v, double z);

struct OracleOptions {
  std::size_t n_z = 2'000'000;
  std::uint64_t seed = 20240521;
  unsigned threads = 1;
  std::size_t block_size = 4096;
};

struct OracleTable {
  std::size_t outcomes = 0;
  std::vector<VFunction> vs;
  std::vector<TrueValue> ade;         // [o]
  std::vector<TrueValue> lambda;      // [v * outcomes + o]
  std::vector<TrueValue> lambda_bar;  // [v * outcomes + o]

  // ConfigError when the estimand's v is not part of the table.
  TrueValue get(std::size_t outcome, const EstimandId& id) const;
};

// One pass over common Z draws for every problem. Z for block b is drawn
// from its own substream, and block sums are combined in block order, so the
// result does not depend on the thread count.
std::vector<OracleTable> run_oracle(const std::vector<OracleProblem>& problems,
                                    const OracleOptions& opts);

TrueValue true_estimand(const ScenarioSpec& spec, const EstimandId& id, const OracleOptions& opts);

// Column order of the simulation table: ADE, Lambda over (identity,
// reciprocal, threshold:3), then LambdaBar over the same.
std::vector<EstimandId> table_estimands();

struct ScenarioRow {
  ScenarioSpec spec;
  std::vector<TrueValue> values;  // aligned with table_estimands()
};

// All six scenarios, outcome-major: (Y1,X1), (Y1,X2), (Y2,X1), ...
std::vector<ScenarioRow> scenario_table(const OracleOptions& opts);

// outcome,exposure,estimand,value,mc_se,n_z
void write_oracle_csv(const std::vector<ScenarioRow>& rows, std::ostream& out);

struct DensityPair {
  std::vector<double> grid;
  std::vector<double> truth;
  std::vector<double> intervention;
  double median = 0.0;
};

// A conditional density and its least-squares intervention density on one
// shared grid.
DensityPair density_pair(const ConditionalDensity& f, const GridOptions& opts = {});

// x,true_density,intervention_density rows followed by "# median=<value>".
void write_density_pair_csv(const DensityPair& pair, std::ostream& out);

}  // namespace ceff
