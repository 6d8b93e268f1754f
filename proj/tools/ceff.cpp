// Command-line front end: simulate, oracle, transform, estimate.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "ceff/density.hpp"
#include "ceff/error.hpp"
#include "ceff/estimate.hpp"
#include "ceff/model.hpp"
#include "ceff/nuisance.hpp"
#include "ceff/oracle.hpp"
#include "ceff/parallel.hpp"

using namespace ceff;

namespace {

enum Exit { kOk = 0, kUsage = 2, kValidation = 3, kNumerical = 4 };

constexpr std::size_t kMinDraws = 10000;

ScenarioSpec parse_scenario(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw ConfigError("--scenario expects <outcome>,<exposure>, e.g. 2,1");
  ScenarioSpec s{};
  try {
    std::size_t a = 0, b = 0;
    s.outcome_id = std::stoi(text.substr(0, comma), &a);
    s.exposure_id = std::stoi(text.substr(comma + 1), &b);
    if (a != comma || b != text.size() - comma - 1) throw std::invalid_argument(text);
  } catch (const std::exception&) {
    throw ConfigError("--scenario expects <outcome>,<exposure>, got '" + text + "'");
  }
  s.validate();
  return s;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("cannot parse '" + item + "' as a number");
    }
  }
  return out;
}

std::string sig6(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

// Opens `path` for writing, or returns stdout for "" and "-".
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty() && path != "-") {
      file_.open(path);
      if (!file_) throw ConfigError("cannot write " + path);
      to_file_ = true;
    }
  }
  std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }
  bool to_file() const { return to_file_; }
  void close(const std::string& path) {
    if (file_.is_open()) {
      file_.close();
      if (!file_) throw ConfigError("write failed for " + path);
    }
  }

 private:
  std::ofstream file_;
  bool to_file_ = false;
};

struct SimulateArgs {
  std::string scenario, out;
  std::size_t n = 2000;
  std::uint64_t seed = 1;
};

int cmd_simulate(const SimulateArgs& a) {
  const ScenarioSpec spec = parse_scenario(a.scenario);
  if (a.n < 1) throw ConfigError("--n must be at least 1");
  const Dataset d = simulate_scenario(spec, a.n, a.seed);
  write_dataset_csv(d, a.out);
  std::cout << "wrote " << d.n() << " rows for " << spec.label() << " to " << a.out << '\n';
  return kOk;
}

struct OracleArgs {
  std::vector<std::string> scenarios, estimands, vs;
  std::size_t draws = 2'000'000;
  std::uint64_t seed = 20240521;
  unsigned threads = default_threads();
  std::string out;
};

int cmd_oracle(const OracleArgs& a) {
  std::vector<ScenarioSpec> specs;
  if (a.scenarios.empty()) {
    for (int o = 1; o <= 3; ++o)
      for (int e = 1; e <= 2; ++e) specs.push_back({o, e});
  } else {
    for (const auto& s : a.scenarios) specs.push_back(parse_scenario(s));
  }
  std::vector<VFunction> vs;
  for (const auto& v : a.vs) vs.push_back(parse_vfunction(v));
  if (vs.empty()) vs = {VFunction::identity(), VFunction::reciprocal(), VFunction::threshold(3.0)};
  std::vector<EstimandId> ids;
  if (a.estimands.empty()) {
    ids.push_back({EstimandKind::ADE, {}});
    for (auto kind : {EstimandKind::Lambda, EstimandKind::LambdaBar})
      for (const auto& v : vs) ids.push_back({kind, v});
  } else {
    for (const auto& e : a.estimands) {
      if (e.find('[') != std::string::npos || e == "ade") {
        ids.push_back(parse_estimand(e));
      } else {
        for (const auto& v : vs) ids.push_back(parse_estimand(e, v.name()));
      }
    }
  }

  OracleOptions opts;
  opts.n_z = a.draws;
  opts.seed = a.seed;
  opts.threads = a.threads;
  if (opts.n_z < kMinDraws) {
    std::cerr << "warning: --draws " << opts.n_z << " is below the smoke-test floor of " << kMinDraws
              << "; using " << kMinDraws << '\n';
    opts.n_z = kMinDraws;
  }

  // One problem per exposure carrying every outcome and every needed v.
  std::vector<VFunction> need;
  for (const auto& id : ids) {
    if (id.kind == EstimandKind::ADE) continue;
    bool seen = false;
    for (const auto& v : need) seen = seen || (v.kind == id.v.kind && v.x0 == id.v.x0);
    if (!seen) need.push_back(id.v);
  }
  std::vector<OracleProblem> problems;
  std::vector<int> exposures;
  for (int e = 1; e <= 2; ++e) {
    bool used = false;
    for (const auto& s : specs) used = used || s.exposure_id == e;
    if (!used) continue;
    OracleProblem p = scenario_problem(e);
    p.vs = need;
    problems.push_back(std::move(p));
    exposures.push_back(e);
  }
  const auto tables = run_oracle(problems, opts);

  Output out(a.out);
  auto& os = out.stream();
  os << "outcome,exposure,estimand,value,mc_se,n_z\n";
  const auto old = os.precision(out.to_file() ? 17 : 6);
  for (const auto& s : specs) {
    const std::size_t t = static_cast<std::size_t>(
        std::find(exposures.begin(), exposures.end(), s.exposure_id) - exposures.begin());
    for (const auto& id : ids) {
      const TrueValue tv = tables[t].get(static_cast<std::size_t>(s.outcome_id - 1), id);
      os << s.outcome_id << ',' << s.exposure_id << ",\"" << id.label() << "\"," << tv.value << ','
         << tv.mc_standard_error << ',' << tv.n_z_draws << '\n';
      if (out.to_file())
        std::cout << s.label() << ' ' << id.label() << " = " << sig6(tv.value) << " (MC se "
                  << sig6(tv.mc_standard_error) << ")\n";
    }
  }
  os.precision(old);
  out.close(a.out);
  return kOk;
}

struct TransformArgs {
  std::string family, params, out;
};

ConditionalDensity make_family(const std::string& family, const std::vector<double>& p) {
  auto need = [&](std::size_t k) {
    if (p.size() != k)
      throw ConfigError("family " + family + " takes " + std::to_string(k) + " parameter(s), got " +
                        std::to_string(p.size()));
  };
  if (family == "normal") return need(2), ConditionalDensity::normal(p[0], p[1]);
  if (family == "gamma") return need(2), ConditionalDensity::gamma(p[0], p[1]);
  if (family == "chisq") return need(1), ConditionalDensity::chi_squared(p[0]);
  if (family == "beta") return need(2), ConditionalDensity::beta(p[0], p[1]);
  if (family == "betaprime") return need(2), ConditionalDensity::beta_prime(p[0], p[1]);
  throw ConfigError("unsupported family '" + family + "' (normal, gamma, chisq, beta, betaprime)");
}

int cmd_transform(const TransformArgs& a) {
  const ConditionalDensity f = make_family(a.family, parse_list(a.params));
  // Validates the family against its closed-form row (e.g. beta prime needs b > 2).
  const ConditionalDensity g = closed_form_alse(f);
  const DensityPair pair = density_pair(f);
  Output out(a.out);
  write_density_pair_csv(pair, out.stream());
  out.close(a.out);
  if (out.to_file())
    std::cout << f.describe() << " -> " << g.describe() << ": " << pair.grid.size()
              << " grid points, median " << sig6(pair.median) << '\n';
  return kOk;
}

struct EstimateArgs {
  std::string in, out, influence, estimand = "both", v = "identity", learner = "ridge", binary = "auto";
  int folds = 5;
  std::uint64_t seed = 1;
  double level = 0.95;
  unsigned threads = default_threads();
};

std::string influence_path(const std::string& base, const std::string& tag, bool several) {
  if (!several) return base;
  const std::filesystem::path p(base);
  return (p.parent_path() / (p.stem().string() + "." + tag + p.extension().string())).string();
}

int cmd_estimate(const EstimateArgs& a) {
  const Dataset d = read_dataset_csv(a.in);
  const VFunction v = parse_vfunction(a.v);
  const LearnerSpec learner = parse_learner(a.learner);
  if (a.estimand != "both" && a.estimand != "lambda" && a.estimand != "lambdabar")
    throw ConfigError("--estimand must be lambda, lambdabar or both");
  if (a.binary != "auto" && a.binary != "on" && a.binary != "off")
    throw ConfigError("--binary must be auto, on or off");
  const bool want_lambda = a.estimand != "lambdabar";
  const bool binary = a.binary == "on" || (a.binary == "auto" && is_binary_exposure(d.x));
  const FoldPlan plan = FoldPlan::make(static_cast<std::size_t>(d.n()), a.folds, a.seed);
  const CrossFit fits = binary ? fit_binary_nuisances(d, v, plan, learner, a.threads)
                               : fit_nuisances(d, v, plan, learner, want_lambda, a.threads);
  std::vector<EstimateReport> reports;
  if (want_lambda) reports.push_back(estimate_lambda(d, fits, a.level));
  if (a.estimand != "lambda") reports.push_back(estimate_lambda_bar(d, fits, a.level));

  Output out(a.out);
  write_report_json(reports, out.stream());
  out.close(a.out);
  if (!a.influence.empty()) {
    for (const auto& r : reports) {
      const std::string tag = r.estimand.kind == EstimandKind::Lambda ? "lambda" : "lambdabar";
      const std::string path = influence_path(a.influence, tag, reports.size() > 1);
      std::ofstream f(path);
      if (!f) throw ConfigError("cannot write " + path);
      write_influence_csv(r, f);
    }
  }
  if (out.to_file()) {
    for (const auto& r : reports) {
      std::cout << r.estimand.label() << " = " << sig6(r.point) << " (se " << sig6(r.std_error) << ", "
                << sig6(100 * r.level) << "% CI " << sig6(r.ci.first) << " to " << sig6(r.ci.second)
                << ", n " << r.n << ")";
      if (r.diagnostics.beta_clipped) std::cout << " [" << r.diagnostics.beta_clipped << " beta values clipped]";
      std::cout << '\n';
    }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrast effects for continuous exposures: simulation, ground truth, density transforms "
               "and cross-fitted estimation."};
  app.set_config("--config", "", "TOML/INI file with default flag values; command-line flags take precedence");
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Draw a dataset from a simulation scenario");
  s->add_option("--scenario", sim.scenario, "Outcome and exposure ids, e.g. 2,1")->required();
  s->add_option("--n", sim.n, "Number of rows")->capture_default_str();
  s->add_option("--seed", sim.seed, "Master seed")->capture_default_str();
  s->add_option("--out", sim.out, "Output CSV (y,x,z1)")->required();

  OracleArgs ora;
  auto* o = app.add_subcommand("oracle", "True estimand values by quadrature over X and Monte Carlo over Z");
  o->add_option("--scenario", ora.scenarios, "Outcome,exposure pair; repeatable (default: all six)");
  o->add_option("--estimand", ora.estimands,
                "ade, lambda, lambdabar or a label such as lambda[threshold:3]; repeatable (default: all)");
  o->add_option("--v", ora.vs, "identity, reciprocal or threshold:<x0>; repeatable (default: all three)");
  o->add_option("--draws", ora.draws, "Monte Carlo draws of Z (values below 10000 are raised to 10000)")
      ->capture_default_str();
  o->add_option("--seed", ora.seed, "Seed for the Z draws")->capture_default_str();
  o->add_option("--threads", ora.threads, "Maximum worker threads")->check(CLI::PositiveNumber);
  o->add_option("--out", ora.out, "Output CSV (default: standard output)");

  TransformArgs tr;
  auto* t = app.add_subcommand("transform", "Least-squares intervention density of a parametric family");
  t->add_option("--family", tr.family, "normal, gamma, chisq, beta or betaprime")->required();
  t->add_option("--params", tr.params,
                "Comma-separated parameters: normal mean,sd; gamma shape,rate; chisq k; beta a,b; betaprime a,b")
      ->required();
  t->add_option("--out", tr.out, "Output CSV (default: standard output)");

  EstimateArgs est;
  auto* e = app.add_subcommand("estimate", "Cross-fitted estimates of Lambda and LambdaBar from a CSV file");
  e->add_option("--in", est.in, "Input CSV with header y,x,z1,...,zd")->required();
  e->add_option("--estimand", est.estimand, "lambda, lambdabar or both")->capture_default_str();
  e->add_option("--v", est.v, "identity, reciprocal or threshold:<x0>")->capture_default_str();
  e->add_option("--folds", est.folds, "Cross-fitting folds K")->capture_default_str();
  e->add_option("--learner", est.learner, "ridge[:degree[:penalty|gcv]] or knn[:k]")->capture_default_str();
  e->add_option("--binary", est.binary,
                "Binary-exposure nuisances (arm-wise outcome regressions): auto, on or off")
      ->capture_default_str();
  e->add_option("--seed", est.seed, "Seed for the fold assignment")->capture_default_str();
  e->add_option("--level", est.level, "Confidence level")->capture_default_str();
  e->add_option("--threads", est.threads, "Maximum worker threads")->check(CLI::PositiveNumber);
  e->add_option("--out", est.out, "Report file, JSON (default: standard output)");
  e->add_option("--influence", est.influence,
                "CSV of influence values; with both estimands, .lambda/.lambdabar is added to the stem");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& h) {
    return app.exit(h);
  } catch (const CLI::CallForAllHelp& h) {
    return app.exit(h);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kUsage;
  }

  try {
    if (s->parsed()) return cmd_simulate(sim);
    if (o->parsed()) return cmd_oracle(ora);
    if (t->parsed()) return cmd_transform(tr);
    if (e->parsed()) return cmd_estimate(est);
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kUsage;
  } catch (const ValidationError& err) {
    std::cerr << "invalid data: " << err.what() << '\n';
    return kValidation;
  } catch (const DomainError& err) {
    std::cerr << "invalid input: " << err.what() << '\n';
    return kValidation;
  } catch (const Error& err) {
    std::cerr << "numerical failure: " << err.what() << '\n';
    return kNumerical;
  }
  return kUsage;
}
