#include "dess/synthetic_env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dess {

namespace {

constexpr double kQuarterTurn = std::numbers::pi / 4.0;

// Angle whose chord on a circle of radius r has length `chord`.
double chord_angle(double chord, double r) {
  if (chord > 2.0 * r) throw std::invalid_argument("drift step larger than the orbit diameter");
  return 2.0 * std::asin(chord / (2.0 * r));
}

}  // namespace

double DriftSpec::realized_budget() const {
  if (kind == DriftKind::abrupt) return static_cast<double>(changes) * magnitude;
  return static_cast<double>(horizon - 1) * rate;
}

void DriftSpec::validate() const {
  if (horizon < 1) throw std::invalid_argument("horizon must be positive");
  if (changes < 0) throw std::invalid_argument("change count must be non-negative");
  if (!(magnitude >= 0.0) || !(rate >= 0.0))
    throw std::invalid_argument("drift magnitudes must be non-negative");
  if (kind == DriftKind::abrupt && changes + 1 > horizon)
    throw std::invalid_argument("more change-points than steps");
  if (realized_budget() > budget * (1.0 + 1e-12) + 1e-15)
    throw std::invalid_argument("declared variation budget is smaller than the drift");
}

SyntheticEnv::SyntheticEnv(DriftSpec spec, EnvConfig cfg, std::uint64_t seed)
    : spec_(spec),
      cfg_(cfg),
      rng_(seed),
      context_(Eigen::VectorXd::Zero(std::max(cfg.dim, 1)), cfg.context_bound) {
  spec_.validate();
  const int d = cfg_.dim;
  if (d < 2) throw std::invalid_argument("synthetic environments need dim >= 2");
  if (cfg_.arms < 1) throw std::invalid_argument("synthetic environments need at least one arm");
  if (!(cfg_.param_bound > 0.0) || !(cfg_.context_bound > 0.0) || !(cfg_.noise >= 0.0))
    throw std::invalid_argument("bounds must be positive and the noise non-negative");

  // Mean rewards <x, theta> over the nonnegative orthant of the radius-U sphere
  // span [U min_i theta_i, U S]; both ends must keep noisy rewards inside [0, 2 sigma].
  const double S = cfg_.param_bound;
  const double U = cfg_.context_bound;
  const double nu = cfg_.noise;
  if (S * U > 2.0 * cfg_.sigma - nu)
    throw std::invalid_argument("infeasible environment: S * U exceeds 2 sigma - noise");
  const double rest = S / std::sqrt(static_cast<double>(d));
  const double r = S * std::sqrt(2.0 / static_cast<double>(d));
  if (d > 2 && rest < nu / U)
    throw std::invalid_argument("infeasible environment: off-plane components below noise / U");
  if (nu / (U * r) > 1.0) throw std::invalid_argument("infeasible environment: noise too large");
  const double lo = std::asin(nu / (U * r));
  const double hi = std::numbers::pi / 2.0 - lo;

  const double w = cfg_.separation;
  const bool abrupt = spec_.kind == DriftKind::abrupt;
  const double alpha = abrupt ? chord_angle(spec_.magnitude, r) : chord_angle(spec_.rate, r);
  if (kQuarterTurn - w / 2.0 < lo || kQuarterTurn + w / 2.0 > hi)
    throw std::invalid_argument("infeasible environment: arm separation leaves the reward box");
  if (abrupt && alpha > w + 1e-12)
    throw std::invalid_argument("infeasible environment: change magnitude exceeds arm separation");
  if (!abrupt && alpha > hi - lo)
    throw std::invalid_argument("infeasible environment: drift rate exceeds the feasible arc");

  auto point = [&](double angle) {
    Eigen::VectorXd v = Eigen::VectorXd::Constant(d, rest);
    v(0) = r * std::cos(angle);
    v(1) = r * std::sin(angle);
    return v;
  };

  std::vector<double> angle(cfg_.arms), dir(cfg_.arms);
  for (int a = 0; a < cfg_.arms; ++a) {
    angle[a] = a % 2 == 0 ? kQuarterTurn - w / 2.0 : kQuarterTurn + w / 2.0;
    dir[a] = a % 2 == 0 ? 1.0 : -1.0;
  }
  track_.assign(cfg_.arms, {});
  auto push = [&](std::int64_t start) {
    starts_.push_back(start);
    for (int a = 0; a < cfg_.arms; ++a) track_[a].push_back(point(angle[a]));
  };

  push(0);
  if (abrupt) {
    const auto m = static_cast<std::int64_t>(spec_.changes);
    for (std::int64_t j = 1; j <= m; ++j) {
      for (int a = 0; a < cfg_.arms; ++a) {
        angle[a] += dir[a] * alpha;
        dir[a] = -dir[a];
      }
      push(j * spec_.horizon / (m + 1));
    }
  } else if (spec_.rate > 0.0) {
    for (std::int64_t l = 1; l < spec_.horizon; ++l) {
      for (int a = 0; a < cfg_.arms; ++a) {
        const double next = angle[a] + dir[a] * alpha;
        if (next < lo || next > hi) dir[a] = -dir[a];
        angle[a] += dir[a] * alpha;
      }
      push(l);
    }
  }
  draw_context();
}

const Eigen::VectorXd& SyntheticEnv::theta(std::int64_t step, int arm) const {
  if (step < 0 || step >= spec_.horizon) throw std::out_of_range("step outside the horizon");
  const auto it = std::upper_bound(starts_.begin(), starts_.end(), step);
  return track_.at(static_cast<std::size_t>(arm))[static_cast<std::size_t>(it - starts_.begin() - 1)];
}

double SyntheticEnv::measured_budget() const {
  double total = 0.0;
  for (std::size_t k = 1; k < starts_.size(); ++k) {
    double worst = 0.0;
    for (const auto& arm : track_) worst = std::max(worst, (arm[k] - arm[k - 1]).norm());
    total += worst;
  }
  return total;
}

void SyntheticEnv::draw_context() {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd x(cfg_.dim);
  double norm = 0.0;
  while (norm < 1e-12) {
    for (int k = 0; k < cfg_.dim; ++k) x(k) = std::abs(normal(rng_));
    norm = x.norm();
  }
  x *= cfg_.context_bound / norm;
  context_ = ContextVector(std::move(x), cfg_.context_bound);
}

double SyntheticEnv::mean_reward(int arm) const {
  return context_.values().dot(track_.at(static_cast<std::size_t>(arm))[piece_]);
}

int SyntheticEnv::oracle_arm() const {
  int best = 0;
  double best_value = mean_reward(0);
  for (int a = 1; a < cfg_.arms; ++a) {
    const double v = mean_reward(a);
    if (v > best_value) {
      best = a;
      best_value = v;
    }
  }
  return best;
}

double SyntheticEnv::step(int arm) {
  if (done()) throw std::out_of_range("stepping past the horizon");
  if (arm < 0 || arm >= cfg_.arms) throw std::out_of_range("arm index out of range");
  std::uniform_real_distribution<double> noise(-cfg_.noise, cfg_.noise);
  const double r = std::clamp(mean_reward(arm) + noise(rng_), 0.0, 2.0 * cfg_.sigma);
  ++cursor_;
  if (piece_ + 1 < starts_.size() && starts_[piece_ + 1] == cursor_) ++piece_;
  if (!done()) draw_context();
  return r;
}

std::vector<std::int64_t> even_checkpoints(std::int64_t horizon, int count) {
  if (count < 1) throw std::invalid_argument("checkpoint count must be positive");
  std::vector<std::int64_t> out;
  for (int k = 1; k <= count; ++k) {
    const std::int64_t step = horizon * k / count;
    if (out.empty() || step > out.back()) out.push_back(step);
  }
  return out;
}

double loglog_slope(const RegretCurve& curve, std::int64_t from, std::int64_t to) {
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  int n = 0;
  for (std::size_t k = 0; k < curve.steps.size(); ++k) {
    if (curve.steps[k] < from || curve.steps[k] > to) continue;
    if (!(curve.regret[k] > 0.0)) throw std::domain_error("log-log slope needs positive regret");
    const double x = std::log(static_cast<double>(curve.steps[k]));
    const double y = std::log(curve.regret[k]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  if (n < 2) throw std::invalid_argument("log-log slope needs at least two checkpoints");
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

BanditConfig bandit_for(const EnvConfig& env, double gamma) {
  BanditConfig cfg;
  cfg.gamma = gamma;
  cfg.sigma = env.sigma;
  cfg.param_bound = env.param_bound;
  cfg.context_bound = env.context_bound;
  cfg.dim = env.dim;
  cfg.arms = env.arms;
  return cfg;
}

SweepResult horizon_sweep(const DriftSpec& base, const EnvConfig& env,
                          std::span<const std::int64_t> horizons, int seeds,
                          double fixed_gamma) {
  if (seeds < 1) throw std::invalid_argument("horizon_sweep needs at least one seed");
  SweepResult out;
  for (std::int64_t horizon : horizons) {
    DriftSpec spec = base;
    spec.horizon = horizon;
    spec.budget = spec.realized_budget();
    const double gamma =
        fixed_gamma > 0.0 ? fixed_gamma : corollary_gamma(spec.budget, env.dim, horizon);
    const std::int64_t checkpoint[] = {horizon};
    std::vector<double> finals;
    for (int seed = 0; seed < seeds; ++seed) {
      SyntheticEnv e(spec, env, static_cast<std::uint64_t>(seed));
      DiscountedLinUCB policy(bandit_for(env, gamma));
      finals.push_back(run_experiment(policy, e, checkpoint).regret.back());
    }
    double total = 0.0;
    for (double r : finals) total += r;
    out.horizons.push_back(horizon);
    out.gammas.push_back(gamma);
    out.mean.push_back(total / static_cast<double>(seeds));
    out.per_seed.push_back(std::move(finals));
  }
  return out;
}

}  // namespace dess
