#pragma once

// Conditional-mean learners and cross-fitting of the nuisance functions
// m(z) = E(Y|Z), pi(z) = E(X|Z), rho(z) = E{v(X)|Z}, beta(z) = Cov{v(X),X|Z}
// and lambda(z).

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ceff/model.hpp"

namespace ceff {

enum class LearnerKind { PolynomialRidge, KNearest };

struct LearnerSpec {
  LearnerKind kind = LearnerKind::PolynomialRidge;
  int degree = 2;
  // Ridge penalty on standardized basis columns; unset selects it by
  // generalized cross-validation.
  std::optional<double> penalty;
  int k = 25;

  std::string describe() const;
};

// "ridge", "ridge:<degree>", "ridge:<degree>:<penalty>", "knn:<k>".
LearnerSpec parse_learner(const std::string& text);

class Predictor {
 public:
  struct Model {
    virtual ~Model() = default;
    virtual double predict(std::span<const double> z) const = 0;
  };

  Predictor() = default;
  Predictor(std::shared_ptr<const Model> model, std::string learner, double penalty = 0.0);

  double predict(std::span<const double> z) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& z) const;
  bool fitted() const { return model_ != nullptr; }

  const std::string& learner() const { return learner_; }
  double penalty() const { return penalty_; }
  int fold = -1;

 private:
  std::shared_ptr<const Model> model_;
  std::string learner_;
  double penalty_ = 0.0;
};

// SingularFitError when an unpenalized fit is rank deficient or there are
// fewer rows than the learner needs.
Predictor fit_conditional_mean(const LearnerSpec& learner, const Eigen::MatrixXd& z,
                               const Eigen::VectorXd& target);

struct FoldPlan {
  int K = 5;
  std::uint64_t seed = 0;
  std::vector<int> assignment;  // fold of each observation

  // Random permutation dealt round-robin, so fold sizes differ by at most one.
  static FoldPlan make(std::size_t n, int K, std::uint64_t seed);

  std::size_t n() const { return assignment.size(); }
  std::vector<std::size_t> held_out(int fold) const;
  std::vector<std::size_t> training(int fold) const;
};

// Fits used to score one fold; all trained on the other folds.
struct NuisanceFits {
  int fold = -1;
  std::vector<std::size_t> training_rows;
  Predictor m, pi, rho;
  std::optional<Predictor> beta, lambda_num;
  // For binary exposure: outcome regressions within each exposure arm.
  std::optional<Predictor> mu0, mu1;
  double beta_floor = 0.0;
  double beta_sign = 1.0;
};

struct CrossFit {
  FoldPlan plan;
  VFunction v;
  std::string learner;
  bool binary = false;
  std::vector<NuisanceFits> folds;

  // Out-of-fold predictions for each observation.
  Eigen::VectorXd m, pi, rho;
  Eigen::VectorXd beta;    // after clipping; empty unless lambda was requested
  Eigen::VectorXd lambda;  // empty unless lambda was requested
  std::size_t beta_clipped = 0;

  bool has_lambda() const { return lambda.size() > 0; }
  // True when no observation was scored by fits trained on it. Vacuously
  // true for externally supplied predictions (no folds recorded).
  bool out_of_fold() const;
};

// ValidationError naming rows when v cannot be evaluated on the observed x.
void check_v_admissible(const VFunction& v, const Eigen::VectorXd& x);

// beta(z) is the regression of {v(x) - rho(z)}{x - pi(z)} on z, clipped away
// from zero at 1e-3 |sample Cov{v(x), x}| of the training rows; lambda(z) is
// the regression of {v(x) - rho(z)}{y - m(z)} divided by the clipped beta.
CrossFit fit_nuisances(const Dataset& data, const VFunction& v, const FoldPlan& plan,
                       const LearnerSpec& learner, bool need_lambda, unsigned threads = 1);

inline constexpr double kPropensityClip = 1e-3;

bool is_binary_exposure(const Eigen::VectorXd& x);

// Binary 0/1 exposure: pi(z) from (z, x) clipped to [1e-3, 1 - 1e-3],
// arm-wise outcome regressions mu0 and mu1, then rho = pi,
// m = mu0 + pi (mu1 - mu0), beta = pi (1 - pi) and lambda = mu1 - mu0.
// v must map 0 to 0 and 1 to 1 (identity, or a threshold in [0, 1)).
CrossFit fit_binary_nuisances(const Dataset& data, const VFunction& v, const FoldPlan& plan,
                              const LearnerSpec& learner, unsigned threads = 1);

}  // namespace ceff
