#include "ceff/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/random/uniform_int_distribution.hpp>

#include "ceff/error.hpp"
#include "ceff/parallel.hpp"
#include "ceff/random.hpp"

namespace ceff {

std::string LearnerSpec::describe() const {
  std::ostringstream os;
  if (kind == LearnerKind::KNearest) {
    os << "knn:" << k;
  } else {
    os << "ridge:" << degree;
    if (penalty) os << ':' << *penalty;
    else os << ":gcv";
  }
  return os.str();
}

LearnerSpec parse_learner(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  if (parts.empty()) throw ConfigError("empty learner spec");
  auto number = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("bad number '" + s + "' in learner spec '" + text + "'");
    }
  };
  LearnerSpec l;
  if (parts[0] == "ridge") {
    if (parts.size() > 3) throw ConfigError("learner spec: ridge[:degree[:penalty|gcv]]");
    if (parts.size() >= 2) {
      const double d = number(parts[1]);
      if (d < 0 || d > 8 || d != std::floor(d)) throw ConfigError("ridge degree must be an integer in [0, 8]");
      l.degree = static_cast<int>(d);
    }
    if (parts.size() == 3 && parts[2] != "gcv") {
      const double p = number(parts[2]);
      if (p < 0) throw ConfigError("ridge penalty must be non-negative");
      l.penalty = p;
    }
    return l;
  }
  if (parts[0] == "knn") {
    l.kind = LearnerKind::KNearest;
    if (parts.size() > 2) throw ConfigError("learner spec: knn[:k]");
    if (parts.size() == 2) {
      const double k = number(parts[1]);
      if (k < 1 || k != std::floor(k)) throw ConfigError("knn k must be a positive integer");
      l.k = static_cast<int>(k);
    }
    return l;
  }
  throw ConfigError("unknown learner '" + parts[0] + "' (ridge, knn)");
}

Predictor::Predictor(std::shared_ptr<const Model> model, std::string learner, double penalty)
    : model_(std::move(model)), learner_(std::move(learner)), penalty_(penalty) {}

double Predictor::predict(std::span<const double> z) const {
  if (!model_) throw ConfigError("predictor has not been fitted");
  return model_->predict(z);
}

Eigen::VectorXd Predictor::predict(const Eigen::MatrixXd& z) const {
  Eigen::VectorXd out(z.rows());
  std::vector<double> row(static_cast<std::size_t>(z.cols()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = 0; j < z.cols(); ++j) row[static_cast<std::size_t>(j)] = z(i, j);
    out[i] = predict(row);
  }
  return out;
}

namespace {

struct Standardizer {
  Eigen::VectorXd mean, scale;

  static Standardizer from(const Eigen::MatrixXd& z) {
    Standardizer s;
    s.mean = z.colwise().mean().transpose();
    s.scale.resize(z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const double sd = std::sqrt((z.col(j).array() - s.mean[j]).square().sum() /
                                  std::max<Eigen::Index>(1, z.rows() - 1));
      s.scale[j] = sd > 0.0 ? sd : 1.0;
    }
    return s;
  }
};

// Monomials of total degree 1..D in d variables, as exponent vectors.
std::vector<std::vector<int>> monomials(int d, int degree) {
  std::vector<std::vector<int>> out;
  std::vector<int> e(static_cast<std::size_t>(d), 0);
  for (int total = 1; total <= degree; ++total) {
    // Enumerate exponent vectors summing to `total` in lexicographic order.
    std::function<void(int, int)> rec = [&](int pos, int left) {
      if (pos == d - 1) {
        e[static_cast<std::size_t>(pos)] = left;
        out.push_back(e);
        return;
      }
      for (int k = left; k >= 0; --k) {
        e[static_cast<std::size_t>(pos)] = k;
        rec(pos + 1, left - k);
      }
    };
    if (d > 0) rec(0, total);
  }
  return out;
}

class RidgeModel final : public Predictor::Model {
 public:
  Standardizer std_;
  std::vector<std::vector<int>> terms_;
  Eigen::VectorXd coef_;
  double intercept_ = 0.0;

  Eigen::RowVectorXd basis_row(std::span<const double> z) const {
    Eigen::RowVectorXd out(static_cast<Eigen::Index>(terms_.size()));
    for (std::size_t t = 0; t < terms_.size(); ++t) {
      double v = 1.0;
      for (std::size_t j = 0; j < terms_[t].size(); ++j) {
        const double s = (z[j] - std_.mean[static_cast<Eigen::Index>(j)]) / std_.scale[static_cast<Eigen::Index>(j)];
        for (int p = 0; p < terms_[t][j]; ++p) v *= s;
      }
      out[static_cast<Eigen::Index>(t)] = v;
    }
    return out;
  }

  double predict(std::span<const double> z) const override {
    if (z.size() != static_cast<std::size_t>(std_.mean.size()))
      throw ValidationError("predictor expects " + std::to_string(std_.mean.size()) + " confounders");
    return intercept_ + (terms_.empty() ? 0.0 : basis_row(z).dot(coef_));
  }
};

Predictor fit_ridge(const LearnerSpec& l, const Eigen::MatrixXd& z, const Eigen::VectorXd& y) {
  auto model = std::make_shared<RidgeModel>();
  model->std_ = Standardizer::from(z);
  model->terms_ = monomials(static_cast<int>(z.cols()), l.degree);
  const auto n = z.rows();
  const auto p = static_cast<Eigen::Index>(model->terms_.size());
  if (n < p + 1)
    throw SingularFitError("ridge of degree " + std::to_string(l.degree) + " needs at least " +
                           std::to_string(p + 1) + " rows, got " + std::to_string(n));
  const double ybar = y.mean();
  double penalty = l.penalty.value_or(0.0);
  if (p == 0) {
    model->intercept_ = ybar;
    return Predictor(model, l.describe(), penalty);
  }
  Eigen::MatrixXd B(n, p);
  std::vector<double> row(static_cast<std::size_t>(z.cols()));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < z.cols(); ++j) row[static_cast<std::size_t>(j)] = z(i, j);
    B.row(i) = model->basis_row(row);
  }
  const Eigen::RowVectorXd bbar = B.colwise().mean();
  B.rowwise() -= bbar;
  const Eigen::VectorXd yc = y.array() - ybar;

  Eigen::BDCSVD<Eigen::MatrixXd> svd(B, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd d = svd.singularValues();
  const Eigen::VectorXd c = svd.matrixU().transpose() * yc;
  const double dmax = d.size() ? d[0] : 0.0;
  const double rank_tol = 1e-10 * std::max(1.0, dmax);

  if (!l.penalty) {
    // Generalized cross-validation over a fixed log grid, relative to n.
    const double ycn = yc.squaredNorm(), cn = c.squaredNorm();
    double best = std::numeric_limits<double>::infinity();
    for (int k = -16; k <= 4; ++k) {
      const double lam = static_cast<double>(n) * std::pow(10.0, 0.5 * k);
      double rss = ycn - cn, df = 1.0;
      for (Eigen::Index i = 0; i < d.size(); ++i) {
        const double s = d[i] * d[i];
        const double shrink = lam / (s + lam);
        rss += shrink * shrink * c[i] * c[i];
        df += s / (s + lam);
      }
      const double denom = 1.0 - df / static_cast<double>(n);
      if (!(denom > 0.0)) continue;
      const double gcv = std::max(rss, 0.0) / (denom * denom);
      if (gcv < best) {
        best = gcv;
        penalty = lam;
      }
    }
  } else if (penalty == 0.0 && (d.size() < p || d[d.size() - 1] <= rank_tol)) {
    throw SingularFitError("unpenalized polynomial basis is rank deficient; set a ridge penalty");
  }

  Eigen::VectorXd scaled(d.size());
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    const double s = d[i] * d[i] + penalty;
    scaled[i] = s > 0.0 ? d[i] * c[i] / s : 0.0;
  }
  model->coef_ = svd.matrixV() * scaled;
  model->intercept_ = ybar - bbar.dot(model->coef_);
  return Predictor(model, l.describe(), penalty);
}

class KnnModel final : public Predictor::Model {
 public:
  Standardizer std_;
  Eigen::MatrixXd points_;  // standardized, one row per training point
  Eigen::VectorXd target_;
  int k_ = 1;

  double predict(std::span<const double> z) const override {
    const auto d = points_.cols();
    if (z.size() != static_cast<std::size_t>(d))
      throw ValidationError("predictor expects " + std::to_string(d) + " confounders");
    Eigen::RowVectorXd q(d);
    for (Eigen::Index j = 0; j < d; ++j) q[j] = (z[static_cast<std::size_t>(j)] - std_.mean[j]) / std_.scale[j];
    std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(points_.rows()));
    for (Eigen::Index i = 0; i < points_.rows(); ++i)
      dist[static_cast<std::size_t>(i)] = {(points_.row(i) - q).squaredNorm(), i};
    const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k_), dist.size());
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk - 1), dist.end());
    std::sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk));
    double s = 0.0;
    for (std::size_t i = 0; i < kk; ++i) s += target_[dist[i].second];
    return s / static_cast<double>(kk);
  }
};

Predictor fit_knn(const LearnerSpec& l, const Eigen::MatrixXd& z, const Eigen::VectorXd& y) {
  if (l.k < 1) throw ConfigError("knn k must be positive");
  auto model = std::make_shared<KnnModel>();
  model->std_ = Standardizer::from(z);
  model->points_ = z;
  for (Eigen::Index j = 0; j < z.cols(); ++j)
    model->points_.col(j) = (z.col(j).array() - model->std_.mean[j]) / model->std_.scale[j];
  model->target_ = y;
  model->k_ = l.k;
  return Predictor(model, l.describe());
}

}  // namespace

Predictor fit_conditional_mean(const LearnerSpec& learner, const Eigen::MatrixXd& z,
                               const Eigen::VectorXd& target) {
  if (z.rows() != target.size()) throw ValidationError("confounder rows and target length differ");
  if (z.rows() < 1) throw SingularFitError("cannot fit a regression on zero rows");
  if (!target.allFinite() || !z.allFinite()) throw ValidationError("regression inputs must be finite");
  return learner.kind == LearnerKind::KNearest ? fit_knn(learner, z, target) : fit_ridge(learner, z, target);
}

FoldPlan FoldPlan::make(std::size_t n, int K, std::uint64_t seed) {
  if (K < 2) throw ConfigError("cross-fitting needs at least 2 folds");
  if (n < static_cast<std::size_t>(K)) throw FoldError("fewer observations than folds");
  FoldPlan p;
  p.K = K;
  p.seed = seed;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = substream(seed, streams::kFolds);
  for (std::size_t i = n - 1; i > 0; --i) {
    boost::random::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(perm[i], perm[pick(rng)]);
  }
  p.assignment.assign(n, 0);
  for (std::size_t r = 0; r < n; ++r) p.assignment[perm[r]] = static_cast<int>(r % static_cast<std::size_t>(K));
  return p;
}

std::vector<std::size_t> FoldPlan::held_out(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] == fold) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldPlan::training(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] != fold) out.push_back(i);
  return out;
}

bool CrossFit::out_of_fold() const {
  if (folds.empty()) return true;  // externally supplied nuisances
  if (folds.size() != static_cast<std::size_t>(plan.K)) return false;
  for (const auto& f : folds) {
    for (std::size_t i : f.training_rows)
      if (plan.assignment[i] == f.fold) return false;
  }
  return true;
}

void check_v_admissible(const VFunction& v, const Eigen::VectorXd& x) {
  if (v.kind != VKind::Reciprocal) return;
  std::vector<Eigen::Index> zeros, pos, neg;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x[i] == 0.0) zeros.push_back(i);
    else (x[i] > 0.0 ? pos : neg).push_back(i);
  }
  auto list = [](const std::vector<Eigen::Index>& rows) {
    std::ostringstream os;
    for (std::size_t k = 0; k < rows.size() && k < 10; ++k) os << (k ? ", " : "") << rows[k] + 1;
    if (rows.size() > 10) os << ", ... (" << rows.size() << " rows)";
    return os.str();
  };
  if (!zeros.empty())
    throw ValidationError("reciprocal v is undefined at x = 0 (data rows " + list(zeros) + ")");
  if (!pos.empty() && !neg.empty())
    throw ValidationError("reciprocal v needs x of one sign; minority-sign data rows: " +
                          list(pos.size() < neg.size() ? pos : neg));
}

namespace {

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

Eigen::VectorXd take(const Eigen::VectorXd& v, const std::vector<std::size_t>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) out[static_cast<Eigen::Index>(r)] = v[static_cast<Eigen::Index>(rows[r])];
  return out;
}

double sample_cov(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double n = static_cast<double>(a.size());
  return ((a.array() - a.mean()) * (b.array() - b.mean())).sum() / std::max(1.0, n - 1.0);
}

template <class F>
auto fit_on_fold(F&& f, const char* what, int fold) {
  try {
    return f();
  } catch (const SingularFitError& e) {
    throw FoldError(std::string("fold ") + std::to_string(fold + 1) + ": cannot fit " + what + ": " + e.what());
  }
}

void check_plan(const Dataset& data, const FoldPlan& plan) {
  data.validate();
  if (plan.n() != static_cast<std::size_t>(data.n()))
    throw ConfigError("fold plan covers " + std::to_string(plan.n()) + " rows, dataset has " +
                      std::to_string(data.n()));
}

}  // namespace

CrossFit fit_nuisances(const Dataset& data, const VFunction& v, const FoldPlan& plan,
                       const LearnerSpec& learner, bool need_lambda, unsigned threads) {
  check_plan(data, plan);
  check_v_admissible(v, data.x);
  const auto n = data.n();
  Eigen::VectorXd vx(n);
  for (Eigen::Index i = 0; i < n; ++i) vx[i] = v_eval(v, data.x[i]);
  if (vx.maxCoeff() == vx.minCoeff())
    throw DegenerateError("v(x) is constant on the data; Cov{v(X),X} cannot be estimated");

  CrossFit cf;
  cf.plan = plan;
  cf.v = v;
  cf.learner = learner.describe();
  cf.folds.resize(static_cast<std::size_t>(plan.K));
  cf.m.resize(n);
  cf.pi.resize(n);
  cf.rho.resize(n);
  if (need_lambda) {
    cf.beta.resize(n);
    cf.lambda.resize(n);
  }
  std::vector<std::size_t> clipped(static_cast<std::size_t>(plan.K), 0);

  parallel_for(static_cast<std::size_t>(plan.K), threads, [&](std::size_t kf) {
    const int k = static_cast<int>(kf);
    NuisanceFits f;
    f.fold = k;
    f.training_rows = plan.training(k);
    const auto test = plan.held_out(k);
    if (f.training_rows.empty() || test.empty()) throw FoldError("fold " + std::to_string(k + 1) + " is empty");
    const Eigen::MatrixXd zt = take_rows(data.z, f.training_rows);
    const Eigen::VectorXd yt = take(data.y, f.training_rows), xt = take(data.x, f.training_rows),
                          vt = take(vx, f.training_rows);
    f.m = fit_on_fold([&] { return fit_conditional_mean(learner, zt, yt); }, "m(z)", k);
    f.pi = fit_on_fold([&] { return fit_conditional_mean(learner, zt, xt); }, "pi(z)", k);
    f.rho = fit_on_fold([&] { return fit_conditional_mean(learner, zt, vt); }, "rho(z)", k);
    f.m.fold = f.pi.fold = f.rho.fold = k;
    if (need_lambda) {
      // Residual products use in-sample nuisance predictions on the training rows.
      const Eigen::VectorXd rv = vt - f.rho.predict(zt);
      const Eigen::VectorXd bt = rv.array() * (xt - f.pi.predict(zt)).array();
      const Eigen::VectorXd nt = rv.array() * (yt - f.m.predict(zt)).array();
      f.beta = fit_on_fold([&] { return fit_conditional_mean(learner, zt, bt); }, "beta(z)", k);
      f.lambda_num = fit_on_fold([&] { return fit_conditional_mean(learner, zt, nt); }, "lambda(z)", k);
      f.beta->fold = f.lambda_num->fold = k;
      const double cov = sample_cov(vt, xt);
      f.beta_floor = 1e-3 * std::abs(cov);
      f.beta_sign = cov < 0.0 ? -1.0 : 1.0;
      if (!(f.beta_floor > 0.0))
        throw DegenerateError("fold " + std::to_string(k + 1) + ": sample Cov{v(x), x} is zero");
    }
    const Eigen::MatrixXd zs = take_rows(data.z, test);
    const Eigen::VectorXd m = f.m.predict(zs), pi = f.pi.predict(zs), rho = f.rho.predict(zs);
    Eigen::VectorXd beta, num;
    if (need_lambda) {
      beta = f.beta->predict(zs);
      num = f.lambda_num->predict(zs);
    }
    for (std::size_t r = 0; r < test.size(); ++r) {
      const auto i = static_cast<Eigen::Index>(test[r]);
      const auto ri = static_cast<Eigen::Index>(r);
      cf.m[i] = m[ri];
      cf.pi[i] = pi[ri];
      cf.rho[i] = rho[ri];
      if (need_lambda) {
        double b = beta[ri];
        // Clip toward the sign of the sample covariance.
        if (!(f.beta_sign * b >= f.beta_floor)) {
          b = f.beta_sign * f.beta_floor;
          ++clipped[kf];
        }
        cf.beta[i] = b;
        cf.lambda[i] = num[ri] / b;
      }
    }
    cf.folds[kf] = std::move(f);
  });
  for (auto c : clipped) cf.beta_clipped += c;
  return cf;
}

bool is_binary_exposure(const Eigen::VectorXd& x) {
  bool zero = false, one = false;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x[i] == 0.0) zero = true;
    else if (x[i] == 1.0) one = true;
    else return false;
  }
  return zero && one;
}

CrossFit fit_binary_nuisances(const Dataset& data, const VFunction& v, const FoldPlan& plan,
                              const LearnerSpec& learner, unsigned threads) {
  check_plan(data, plan);
  if (!is_binary_exposure(data.x)) throw ValidationError("binary nuisances need a 0/1 exposure with both values present");
  const bool maps01 = v.kind == VKind::Identity || (v.kind == VKind::Threshold && v.x0 >= 0.0 && v.x0 < 1.0);
  if (!maps01)
    throw ValidationError("with a 0/1 exposure v must be identity or a threshold in [0, 1); got " + v.name());

  const auto n = data.n();
  CrossFit cf;
  cf.plan = plan;
  cf.v = v;
  cf.learner = learner.describe();
  cf.binary = true;
  cf.folds.resize(static_cast<std::size_t>(plan.K));
  cf.m.resize(n);
  cf.pi.resize(n);
  cf.rho.resize(n);
  cf.beta.resize(n);
  cf.lambda.resize(n);

  parallel_for(static_cast<std::size_t>(plan.K), threads, [&](std::size_t kf) {
    const int k = static_cast<int>(kf);
    NuisanceFits f;
    f.fold = k;
    f.training_rows = plan.training(k);
    std::vector<std::size_t> arm0, arm1;
    for (std::size_t i : f.training_rows) (data.x[static_cast<Eigen::Index>(i)] == 1.0 ? arm1 : arm0).push_back(i);
    if (arm0.empty() || arm1.empty())
      throw FoldError("fold " + std::to_string(k + 1) + ": training rows miss one exposure arm");
    const Eigen::MatrixXd zt = take_rows(data.z, f.training_rows);
    f.pi = fit_on_fold([&] { return fit_conditional_mean(learner, zt, take(data.x, f.training_rows)); }, "pi(z)", k);
    f.mu0 = fit_on_fold([&] { return fit_conditional_mean(learner, take_rows(data.z, arm0), take(data.y, arm0)); },
                        "E(Y|X=0,Z)", k);
    f.mu1 = fit_on_fold([&] { return fit_conditional_mean(learner, take_rows(data.z, arm1), take(data.y, arm1)); },
                        "E(Y|X=1,Z)", k);
    f.pi.fold = f.mu0->fold = f.mu1->fold = k;
    f.rho = f.pi;
    const auto test = plan.held_out(k);
    const Eigen::MatrixXd zs = take_rows(data.z, test);
    const Eigen::VectorXd pi = f.pi.predict(zs), m0 = f.mu0->predict(zs), m1 = f.mu1->predict(zs);
    for (std::size_t r = 0; r < test.size(); ++r) {
      const auto i = static_cast<Eigen::Index>(test[r]);
      const auto ri = static_cast<Eigen::Index>(r);
      const double p = std::clamp(pi[ri], kPropensityClip, 1.0 - kPropensityClip);
      const double tau = m1[ri] - m0[ri];
      cf.pi[i] = p;
      cf.rho[i] = p;
      cf.m[i] = m0[ri] + p * tau;
      cf.beta[i] = p * (1.0 - p);
      cf.lambda[i] = tau;
    }
    cf.folds[kf] = std::move(f);
  });
  return cf;
}

}  // namespace ceff
