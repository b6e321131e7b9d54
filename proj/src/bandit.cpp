#include "dess/bandit.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include <Eigen/Cholesky>

#include "dess/text_io.hpp"

namespace dess {

void BanditConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw std::invalid_argument("discount factor out of range (0, 1]: " + std::to_string(gamma));
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
  if (!(param_bound > 0.0)) throw std::invalid_argument("parameter bound S must be positive");
  if (!(context_bound > 0.0)) throw std::invalid_argument("context bound U must be positive");
  if (dim < 1) throw std::invalid_argument("context dimension must be >= 1");
  if (arms < 2) throw std::invalid_argument("need at least 2 arms");
}

ContextVector::ContextVector(Eigen::VectorXd x, double norm_bound) : x_(std::move(x)) {
  if (!x_.allFinite()) throw std::invalid_argument("context has non-finite entries");
  // relative slack for vectors built exactly on the bound
  if (x_.norm() > norm_bound * (1.0 + 1e-12))
    throw std::invalid_argument("context norm exceeds bound U");
}

ArmState ArmState::fresh(int dim, double lambda) {
  ArmState a;
  a.V = lambda * Eigen::MatrixXd::Identity(dim, dim);
  a.V_tilde = a.V;
  a.b = Eigen::VectorXd::Zero(dim);
  a.theta = Eigen::VectorXd::Zero(dim);
  return a;
}

double confidence_width(const BanditConfig& cfg, std::int64_t l) {
  const double d = cfg.dim;
  // sum_{s<l} gamma^{2s}, with its limit l at gamma = 1
  double weight_sum;
  if (cfg.gamma == 1.0) {
    weight_sum = static_cast<double>(l);
  } else {
    const double g2 = cfg.gamma * cfg.gamma;
    weight_sum = -std::expm1(static_cast<double>(l) * std::log(g2)) / (1.0 - g2);
  }
  const double U2 = cfg.context_bound * cfg.context_bound;
  const double log_term = d * std::log1p(U2 * weight_sum / (cfg.lambda * d));
  return std::sqrt(cfg.lambda) * cfg.param_bound +
         cfg.sigma * std::sqrt(2.0 * std::log(1.0 / cfg.delta) + log_term);
}

double ucb_bonus(const ArmState& arm, const Eigen::VectorXd& x) {
  const Eigen::VectorXd y = arm.V.ldlt().solve(x);
  const double q = y.dot(arm.V_tilde * y);
  return std::sqrt(std::max(q, 0.0));
}

double ucb_score(const ArmState& arm, const Eigen::VectorXd& x, double beta) {
  return x.dot(arm.theta) + beta * ucb_bonus(arm, x);
}

DiscountedLinUCB::DiscountedLinUCB(const BanditConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  arms_.assign(static_cast<std::size_t>(cfg_.arms), ArmState::fresh(cfg_.dim, cfg_.lambda));
}

int DiscountedLinUCB::select(const ContextVector& x, double beta) const {
  if (x.dim() != cfg_.dim) throw std::invalid_argument("context dimension mismatch");
  int best = 0;
  double best_score = ucb_score(arms_[0], x.values(), beta);
  for (int a = 1; a < cfg_.arms; ++a) {
    const double s = ucb_score(arms_[static_cast<std::size_t>(a)], x.values(), beta);
    if (s > best_score) {
      best = a;
      best_score = s;
    }
  }
  return best;
}

void DiscountedLinUCB::update(int arm, const ContextVector& x, double reward) {
  if (arm < 0 || arm >= cfg_.arms) throw std::out_of_range("arm index out of range");
  if (x.dim() != cfg_.dim) throw std::invalid_argument("context dimension mismatch");
  if (!(reward >= 0.0 && reward <= 2.0 * cfg_.sigma))
    throw std::invalid_argument("reward outside [0, 2 sigma]: " + std::to_string(reward));

  auto& s = arms_[static_cast<std::size_t>(arm)];
  const auto& xv = x.values();
  const double g = cfg_.gamma;
  const double g2 = g * g;
  const Eigen::MatrixXd outer = xv * xv.transpose();

  s.V = g * s.V + outer;
  s.V.diagonal().array() += (1.0 - g) * cfg_.lambda;
  s.V_tilde = g2 * s.V_tilde + outer;
  s.V_tilde.diagonal().array() += (1.0 - g2) * cfg_.lambda;
  s.b = g * s.b + reward * xv;
  s.theta = s.V.ldlt().solve(s.b);
  ++step_;
}

void DiscountedLinUCB::save(std::ostream& out) const {
  out << "dlinucb 1\n";
  text::write_field(out, "lambda", cfg_.lambda);
  text::write_field(out, "gamma", cfg_.gamma);
  text::write_field(out, "sigma", cfg_.sigma);
  text::write_field(out, "delta", cfg_.delta);
  text::write_field(out, "param_bound", cfg_.param_bound);
  text::write_field(out, "context_bound", cfg_.context_bound);
  text::write_field(out, "dim", std::int64_t{cfg_.dim});
  text::write_field(out, "arms", std::int64_t{cfg_.arms});
  text::write_field(out, "step", step_);
  for (const auto& a : arms_) {
    text::write_matrix(out, "V", a.V);
    text::write_matrix(out, "V_tilde", a.V_tilde);
    text::write_vector(out, "b", a.b);
    text::write_vector(out, "theta", a.theta);
  }
}

DiscountedLinUCB DiscountedLinUCB::load(std::istream& in) {
  const auto header = text::read_field(in, "dlinucb");
  if (header.size() != 1 || header[0] != "1") throw std::runtime_error("unsupported bandit checkpoint");
  BanditConfig cfg;
  cfg.lambda = text::read_double(in, "lambda");
  cfg.gamma = text::read_double(in, "gamma");
  cfg.sigma = text::read_double(in, "sigma");
  cfg.delta = text::read_double(in, "delta");
  cfg.param_bound = text::read_double(in, "param_bound");
  cfg.context_bound = text::read_double(in, "context_bound");
  cfg.dim = static_cast<int>(text::read_int(in, "dim"));
  cfg.arms = static_cast<int>(text::read_int(in, "arms"));
  DiscountedLinUCB bandit(cfg);
  bandit.step_ = text::read_int(in, "step");
  for (auto& a : bandit.arms_) {
    a.V = text::read_matrix(in, "V");
    a.V_tilde = text::read_matrix(in, "V_tilde");
    a.b = text::read_vector(in, "b");
    a.theta = text::read_vector(in, "theta");
    if (a.V.rows() != cfg.dim || a.V.cols() != cfg.dim || a.V_tilde.rows() != cfg.dim ||
        a.b.size() != cfg.dim || a.theta.size() != cfg.dim)
      throw std::runtime_error("bandit checkpoint: arm shape mismatch");
  }
  return bandit;
}

bool operator==(const DiscountedLinUCB& lhs, const DiscountedLinUCB& rhs) {
  const auto& a = lhs.cfg_;
  const auto& b = rhs.cfg_;
  if (a.lambda != b.lambda || a.gamma != b.gamma || a.sigma != b.sigma || a.delta != b.delta ||
      a.param_bound != b.param_bound || a.context_bound != b.context_bound || a.dim != b.dim ||
      a.arms != b.arms || lhs.step_ != rhs.step_)
    return false;
  for (std::size_t i = 0; i < lhs.arms_.size(); ++i) {
    const auto& x = lhs.arms_[i];
    const auto& y = rhs.arms_[i];
    if (x.V != y.V || x.V_tilde != y.V_tilde || x.b != y.b || x.theta != y.theta) return false;
  }
  return true;
}

Eigen::VectorXd batch_solve(std::span<const BanditRecord> history, int dim, double gamma,
                            double lambda, int arm, std::size_t upto) {
  if (upto > history.size()) throw std::out_of_range("batch_solve: upto beyond history");
  const Eigen::Index d = dim;
  Eigen::MatrixXd V = lambda * Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d);
  // the exponent counts later updates of this arm; other arms' updates leave it untouched
  std::size_t later = 0;
  for (std::size_t s = upto; s >= 1; --s) {
    const auto& rec = history[s - 1];
    if (rec.arm != arm) continue;
    const double w = std::pow(gamma, static_cast<double>(later++));
    V.noalias() += w * rec.x * rec.x.transpose();
    rhs += w * rec.reward * rec.x;
  }
  return V.ldlt().solve(rhs);
}

double corollary_gamma(double budget, int dim, std::int64_t horizon) {
  if (horizon < 1 || dim < 1) throw std::invalid_argument("corollary_gamma: need L >= 1, d >= 1");
  if (budget < 0.0) throw std::invalid_argument("corollary_gamma: budget must be >= 0");
  constexpr double gamma_min = 0.5;
  constexpr double gamma_max = 1.0 - 1e-6;
  const double raw =
      1.0 - std::pow(budget / (std::sqrt(static_cast<double>(dim)) * static_cast<double>(horizon)),
                     0.4);
  return std::max(gamma_min, std::min(gamma_max, raw));
}

}  // namespace dess
