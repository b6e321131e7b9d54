#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace dess {

struct BanditConfig {
  double lambda = 1.0;   // ridge regularization
  double gamma = 0.99;   // discount factor in (0, 1]; 1 recovers stationary LinUCB
  double sigma = 0.5;    // sub-gaussian constant; rewards must lie in [0, 2 sigma]
  double delta = 0.1;    // confidence level of the ellipsoid
  double param_bound = 1.0;              // S >= ||theta*||
  double context_bound = 1.4142135623730951;  // U >= ||x||
  int dim = 2;
  int arms = 2;

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;
};

/// Context shared by all arms. The norm bound is checked on construction.
class ContextVector {
 public:
  ContextVector(Eigen::VectorXd x, double norm_bound);

  const Eigen::VectorXd& values() const { return x_; }
  Eigen::Index dim() const { return x_.size(); }

 private:
  Eigen::VectorXd x_;
};

/// Discounted ridge state of one disjoint arm.
struct ArmState {
  Eigen::MatrixXd V;        // sum gamma^{l-s} x x^T + lambda I
  Eigen::MatrixXd V_tilde;  // sum gamma^{2(l-s)} x x^T + lambda I
  Eigen::VectorXd b;        // sum gamma^{l-s} r x
  Eigen::VectorXd theta;    // V^{-1} b

  static ArmState fresh(int dim, double lambda);
};

/// Confidence-ellipsoid width after `l` discounted updates.
double confidence_width(const BanditConfig& cfg, std::int64_t l);

/// x^T theta + beta * sqrt(x^T V^{-1} V_tilde V^{-1} x).
double ucb_score(const ArmState& arm, const Eigen::VectorXd& x, double beta);

/// Exploration bonus without the beta factor, always >= 0.
double ucb_bonus(const ArmState& arm, const Eigen::VectorXd& x);

/// Non-stationary disjoint-arm LinUCB with exponential discounting.
///
/// Single writer. Copies are cheap enough to snapshot for concurrent read-only scoring.
class DiscountedLinUCB {
 public:
  explicit DiscountedLinUCB(const BanditConfig& cfg);

  const BanditConfig& config() const { return cfg_; }
  const ArmState& arm(int a) const { return arms_.at(static_cast<std::size_t>(a)); }
  int arms() const { return cfg_.arms; }
  std::int64_t step() const { return step_; }

  double beta() const { return confidence_width(cfg_, step_); }

  /// argmax of the UCB score, ties to the lowest index.
  int select(const ContextVector& x) const { return select(x, beta()); }
  /// Same rule with an explicit width (beta = 0 gives pure exploitation).
  int select(const ContextVector& x, double beta) const;
  /// argmax of x^T theta, ties to the lowest index.
  int select_greedy(const ContextVector& x) const { return select(x, 0.0); }

  /// Applies the discounted ridge recursion to `arm` only. Rejects r outside [0, 2 sigma].
  void update(int arm, const ContextVector& x, double reward);

  void save(std::ostream& out) const;
  static DiscountedLinUCB load(std::istream& in);

  friend bool operator==(const DiscountedLinUCB&, const DiscountedLinUCB&);

 private:
  BanditConfig cfg_;
  std::vector<ArmState> arms_;
  std::int64_t step_ = 0;
};

struct BanditRecord {
  int arm;
  Eigen::VectorXd x;
  double reward;
};

/// Closed-form weighted ridge estimate of `arm` after the first `upto` records:
/// V^{-1} sum_s 1(a_s = arm) gamma^{k_s} x_s r_s with V built the same way, where
/// k_s is the number of later updates of `arm` (each arm discounts on its own pulls).
/// Independent of the online recursion; used as its oracle.
Eigen::VectorXd batch_solve(std::span<const BanditRecord> history, int dim, double gamma,
                            double lambda, int arm, std::size_t upto);

/// Discount factor balancing drift and estimation error for a variation budget `budget`
/// over `horizon` steps in dimension `dim`, clamped to [0.5, 1 - 1e-6].
double corollary_gamma(double budget, int dim, std::int64_t horizon);

}  // namespace dess
