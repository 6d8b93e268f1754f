#include "ceff/model.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include "ceff/error.hpp"

namespace ceff {

namespace {

double parse_double(std::string_view s, std::size_t line) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw ValidationError("line " + std::to_string(line) + ": cannot parse '" + std::string(s) +
                          "' as a number");
  if (!std::isfinite(v))
    throw ValidationError("line " + std::to_string(line) + ": non-finite value");
  return v;
}

std::vector<std::string_view> split(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(',', start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  while (!s.empty() && s.front() == ' ') s.erase(s.begin());
  return s;
}

}  // namespace

void Dataset::validate() const {
  if (y.size() < 1) throw ValidationError("dataset has no rows");
  if (x.size() != y.size() || z.rows() != y.size())
    throw ValidationError("dataset columns have different lengths");
  for (Eigen::Index i = 0; i < n(); ++i) {
    if (!std::isfinite(y[i]) || !std::isfinite(x[i]) || !z.row(i).allFinite())
      throw ValidationError("row " + std::to_string(i + 1) + " has a non-finite entry");
  }
}

Dataset read_dataset_csv(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw ValidationError("empty input: missing header");
  const auto names = split(trim(header));
  if (names.size() < 2 || trim(std::string(names[0])) != "y" || trim(std::string(names[1])) != "x")
    throw ValidationError("header must be y,x,z1,...,zd");
  for (std::size_t j = 2; j < names.size(); ++j) {
    if (trim(std::string(names[j])) != "z" + std::to_string(j - 1))
      throw ValidationError("header column " + std::to_string(j + 1) + " must be z" +
                            std::to_string(j - 1));
  }
  const std::size_t width = names.size();
  std::vector<double> cells;
  std::string row;
  std::size_t line = 1, rows = 0;
  while (std::getline(in, row)) {
    ++line;
    row = trim(row);
    if (row.empty()) continue;
    const auto parts = split(row);
    if (parts.size() != width)
      throw ValidationError("line " + std::to_string(line) + ": expected " + std::to_string(width) +
                            " fields, found " + std::to_string(parts.size()));
    for (auto p : parts) cells.push_back(parse_double(p, line));
    ++rows;
  }
  Dataset d;
  const auto n = static_cast<Eigen::Index>(rows);
  d.y.resize(n);
  d.x.resize(n);
  d.z.resize(n, static_cast<Eigen::Index>(width - 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double* r = &cells[static_cast<std::size_t>(i) * width];
    d.y[i] = r[0];
    d.x[i] = r[1];
    for (std::size_t j = 2; j < width; ++j) d.z(i, static_cast<Eigen::Index>(j - 2)) = r[j];
  }
  d.validate();
  return d;
}

Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  return read_dataset_csv(in);
}

void write_dataset_csv(const Dataset& data, std::ostream& out) {
  out << "y,x";
  for (Eigen::Index j = 0; j < data.d(); ++j) out << ",z" << (j + 1);
  out << '\n';
  const auto old = out.precision(17);
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    out << data.y[i] << ',' << data.x[i];
    for (Eigen::Index j = 0; j < data.d(); ++j) out << ',' << data.z(i, j);
    out << '\n';
  }
  out.precision(old);
}

void write_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  write_dataset_csv(data, out);
  if (!out) throw ConfigError("write failed for " + path);
}

VFunction VFunction::threshold(double x0) {
  if (!std::isfinite(x0)) throw DomainError("threshold v needs a finite x0");
  return {VKind::Threshold, x0};
}

std::string VFunction::name() const {
  switch (kind) {
    case VKind::Identity: return "identity";
    case VKind::Reciprocal: return "reciprocal";
    case VKind::Threshold: {
      std::ostringstream os;
      os << "threshold:" << x0;
      return os.str();
    }
  }
  return "unknown";
}

VFunction parse_vfunction(const std::string& text) {
  if (text == "identity") return VFunction::identity();
  if (text == "reciprocal") return VFunction::reciprocal();
  if (text.rfind("threshold", 0) == 0) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) return VFunction::threshold(3.0);
    return VFunction::threshold(parse_double(std::string_view(text).substr(colon + 1), 0));
  }
  throw ConfigError("unknown v-function '" + text + "' (identity, reciprocal, threshold:<x0>)");
}

double v_eval(const VFunction& v, double x) {
  switch (v.kind) {
    case VKind::Identity: return x;
    case VKind::Reciprocal:
      if (x == 0.0) throw DomainError("reciprocal v is undefined at x = 0");
      return 1.0 / x;
    case VKind::Threshold: return x > v.x0 ? 1.0 : 0.0;
  }
  return x;
}

void ScenarioSpec::validate() const {
  if (outcome_id < 1 || outcome_id > 3) throw ConfigError("outcome id must be 1, 2 or 3");
  if (exposure_id < 1 || exposure_id > 2) throw ConfigError("exposure id must be 1 or 2");
}

std::string ScenarioSpec::label() const {
  return "(Y" + std::to_string(outcome_id) + ",X" + std::to_string(exposure_id) + ")";
}

double expit(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

namespace {

double bump(double x) { return std::exp(-0.5 * (x - 3.0) * (x - 3.0)); }

double m2(double x) { return x - 2.0 * (x - 2.5) * (x - 3.0) * bump(x); }

double m2_prime(double x) {
  const double d = x - 3.0;
  return 1.0 - 2.0 * bump(x) * ((2.0 * x - 5.5) - (x - 2.5) * d * d);
}

}  // namespace

double m_true(const ScenarioSpec& spec, double x, double z) {
  switch (spec.outcome_id) {
    case 1: return expit(x - 2.5);
    case 2: return m2(x);
    case 3: return m2(x) + (z > 1.0 ? 0.2 * x : 0.0);
  }
  throw ConfigError("outcome id must be 1, 2 or 3");
}

double m_prime_true(const ScenarioSpec& spec, double x, double z) {
  switch (spec.outcome_id) {
    case 1: {
      const double p = expit(x - 2.5);
      return p * (1.0 - p);
    }
    case 2: return m2_prime(x);
    case 3: return m2_prime(x) + (z > 1.0 ? 0.2 : 0.0);
  }
  throw ConfigError("outcome id must be 1, 2 or 3");
}

ConditionalDensity exposure_density(int exposure_id, double z) {
  switch (exposure_id) {
    case 1: return ConditionalDensity::normal(4.0 + 0.2 * (z + z * z), 1.0);
    case 2: return ConditionalDensity::gamma(5.0, 2.5 * (1.0 + z * z));
  }
  throw ConfigError("exposure id must be 1 or 2");
}

Dataset simulate_scenario(const ScenarioSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  if (n < 1) throw ConfigError("n must be at least 1");
  Rng rz = substream(seed, streams::kConfounder);
  Rng rx = substream(seed, streams::kExposure);
  Rng ry = substream(seed, streams::kOutcome);
  boost::random::normal_distribution<double> std_normal(0.0, 1.0);
  boost::random::uniform_01<double> unif;

  Dataset d;
  const auto rows = static_cast<Eigen::Index>(n);
  d.y.resize(rows);
  d.x.resize(rows);
  d.z.resize(rows, 1);
  for (Eigen::Index i = 0; i < rows; ++i) d.z(i, 0) = std_normal(rz);
  for (Eigen::Index i = 0; i < rows; ++i) d.x[i] = exposure_density(spec.exposure_id, d.z(i, 0)).sample(rx);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double m = m_true(spec, d.x[i], d.z(i, 0));
    if (spec.outcome_id == 1) {
      d.y[i] = unif(ry) < m ? 1.0 : 0.0;
    } else {
      d.y[i] = m + std_normal(ry);
    }
  }
  return d;
}

}  // namespace ceff
