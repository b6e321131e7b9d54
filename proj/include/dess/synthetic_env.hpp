#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "dess/bandit.hpp"

namespace dess {

enum class DriftKind { abrupt, smooth };

struct DriftSpec {
  DriftKind kind = DriftKind::abrupt;
  int changes = 0;         // abrupt: number of change-points m
  double magnitude = 0.0;  // abrupt: per-change step size of every arm
  double rate = 0.0;       // smooth: per-step step size
  std::int64_t horizon = 1000;
  double budget = 0.0;  // declared B_L; must dominate the realized budget

  double realized_budget() const;
  void validate() const;
};

struct EnvConfig {
  int dim = 2;
  int arms = 2;
  double param_bound = 0.9;    // S = ||theta*||
  double context_bound = 1.0;  // U = ||x||
  double sigma = 0.5;          // rewards lie in [0, 2 sigma]
  double noise = 0.05;         // uniform noise in [-noise, noise]
  double separation = 0.87;    // initial angle between neighbouring arms, radians
};

/// Non-stationary disjoint-arm linear bandit with a fully materialized oracle
/// track. Drift rotates every arm within the (e_0, e_1) plane, so norms are
/// preserved and each step's movement is exact.
class SyntheticEnv {
 public:
  SyntheticEnv(DriftSpec spec, EnvConfig cfg, std::uint64_t seed);

  const DriftSpec& spec() const { return spec_; }
  const EnvConfig& config() const { return cfg_; }
  std::int64_t horizon() const { return spec_.horizon; }
  std::int64_t cursor() const { return cursor_; }
  bool done() const { return cursor_ >= spec_.horizon; }

  /// theta*_{l,a} for 0-based step l.
  const Eigen::VectorXd& theta(std::int64_t step, int arm) const;
  /// sum_l max_a ||theta*_{l+1,a} - theta*_{l,a}||, measured on the track.
  double measured_budget() const;

  /// Context offered at the current step (identical for every arm).
  const ContextVector& context() const { return context_; }
  double mean_reward(int arm) const;
  /// Argmax of the mean reward at the current step, ties to the lowest index.
  int oracle_arm() const;
  /// Realized reward of `arm` at the current step; advances the cursor.
  double step(int arm);

 private:
  void draw_context();

  DriftSpec spec_;
  EnvConfig cfg_;
  std::vector<std::vector<Eigen::VectorXd>> track_;  // [arm][segment of constant theta]
  std::vector<std::int64_t> starts_;                 // first step of each track entry
  std::mt19937_64 rng_;
  std::int64_t cursor_ = 0;
  std::size_t piece_ = 0;
  ContextVector context_;
};

struct RegretCurve {
  std::vector<std::int64_t> steps;  // checkpoints, 1-based counts of steps played
  std::vector<double> regret;       // cumulative pseudo-regret at each checkpoint
};

/// Plays `policy` (select / update) against `env` until the horizon, recording
/// the cumulative mean-reward regret at each checkpoint.
template <typename Policy>
RegretCurve run_experiment(Policy& policy, SyntheticEnv& env,
                           std::span<const std::int64_t> checkpoints) {
  RegretCurve curve;
  double total = 0.0;
  std::size_t next = 0;
  while (!env.done()) {
    const ContextVector x = env.context();
    const int arm = policy.select(x);
    total += env.mean_reward(env.oracle_arm()) - env.mean_reward(arm);
    const double r = env.step(arm);
    policy.update(arm, x, r);
    while (next < checkpoints.size() && checkpoints[next] == env.cursor()) {
      curve.steps.push_back(env.cursor());
      curve.regret.push_back(total);
      ++next;
    }
  }
  return curve;
}

/// Bandit settings matched to an environment's S, U and sigma.
BanditConfig bandit_for(const EnvConfig& env, double gamma);

struct SweepResult {
  std::vector<std::int64_t> horizons;
  std::vector<double> gammas;
  std::vector<std::vector<double>> per_seed;  // [horizon][seed] final regret
  std::vector<double> mean;                   // [horizon]
};

/// Final regret of separate experiments whose horizon is each entry of
/// `horizons`; `base` supplies the drift kind and per-change (or per-step)
/// magnitude, the declared budget is the realized one, and gamma is
/// corollary_gamma(B, d, L) per horizon, or `fixed_gamma` when positive.
SweepResult horizon_sweep(const DriftSpec& base, const EnvConfig& env,
                          std::span<const std::int64_t> horizons, int seeds,
                          double fixed_gamma = 0.0);

/// `count` evenly spaced checkpoints ending at `horizon`.
std::vector<std::int64_t> even_checkpoints(std::int64_t horizon, int count);

/// Least-squares slope of log(regret) against log(step) over checkpoints in [from, to].
double loglog_slope(const RegretCurve& curve, std::int64_t from, std::int64_t to);

}  // namespace dess
