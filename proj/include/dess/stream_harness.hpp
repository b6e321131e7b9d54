#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "dess/adaptive_model.hpp"
#include "dess/bandit.hpp"
#include "dess/indicators.hpp"
#include "dess/types.hpp"

namespace dess {

struct Interaction {
  Id user = 0;
  Id item = 0;
  double rating = 0.0;
  std::int64_t timestamp = 0;
  double label = 0.0;  // 1 iff rating > 3.5
  int cls = 0;         // round(rating) clamped to [1, 5], minus one

  Example example() const { return {user, item, label, cls}; }
};

/// Fills label and cls from the rating.
Interaction make_interaction(Id user, Id item, double rating, std::int64_t timestamp);

struct Segment {
  int index = 0;  // 1-based
  std::vector<Interaction> train;
  std::vector<Interaction> test;
};

/// Consecutive equal-length segments, remainder dropped; the chronologically
/// first ceil(train_frac * length) interactions of each form its train part.
std::vector<Segment> segment_stream(std::span<const Interaction> stream,
                                    std::size_t segment_length, double train_frac);

struct RewardConfig {
  double threshold = 0.0;
  bool continuous = false;
};

/// Binary: 1 if old - new > threshold, else 0. Continuous: clamp(old - new, 0, 2 sigma).
double reward(double old_loss, double new_loss, const RewardConfig& cfg, double sigma);

double step_regret(double chosen_reward, double counterfactual_reward);

struct SegmentMetrics {
  int t = 0;
  double accuracy = 0.0;
  double loss = 0.0;
  double regret_user = 0.0;
  double regret_item = 0.0;
  std::int64_t emb_params = 0;
  double train_ms = 0.0;
  double infer_ms = 0.0;
};

enum class PolicyKind {
  bandit,       // discounted LinUCB decides
  always_keep,  // the policy pass runs, but every decision is "keep"
  none,         // no policy pass at all (fixed-size baselines)
};

struct HarnessConfig {
  BanditConfig bandit;
  IndicatorConfig indicators;
  RewardConfig reward;
  PolicyKind policy = PolicyKind::bandit;
  bool record_timing = false;  // otherwise train_ms / infer_ms are reported as 0
};

/// Per-segment bookkeeping that is not part of the metrics CSV.
struct SegmentTrace {
  int t = 0;
  std::int64_t expansions = 0;
  std::array<std::int64_t, 2> decisions{};  // bandit updates by the policy pass on D_{t-1}
  std::uint64_t pre_eval_checksum = 0;      // model digest right before evaluation
  double train_ms = 0.0;
  double infer_ms = 0.0;
};

/// Segment loop: validate the size policy on D_{t-1}, then apply permanent
/// size changes, train on D^tr_t and evaluate on D^te_t.
class StreamHarness {
 public:
  /// `features` may be null (frequency-only contexts) and must outlive the harness.
  StreamHarness(AdaptiveModel model, const ItemFeatureStore* features, HarnessConfig cfg);

  void policy_update_pass(const Segment& previous);
  SegmentMetrics model_update_pass(const Segment& segment);
  std::vector<SegmentMetrics> run(std::span<const Segment> segments);

  const AdaptiveModel& model() const { return model_; }
  const DiscountedLinUCB& bandit(Side side) const { return bandits_[index_of(side)]; }
  const IndicatorTracker& indicators() const { return tracker_; }
  double regret(Side side) const { return regret_[index_of(side)]; }
  std::int64_t decisions(Side side) const { return decisions_[index_of(side)]; }
  const std::vector<SegmentTrace>& traces() const { return traces_; }
  /// Every reward passed to a bandit update, in order.
  const std::vector<double>& rewards() const { return rewards_; }

 private:
  AdaptiveModel model_;
  HarnessConfig cfg_;
  IndicatorTracker tracker_;
  std::array<DiscountedLinUCB, 2> bandits_;
  std::array<double, 2> regret_{};
  std::array<std::int64_t, 2> decisions_{};
  std::vector<SegmentTrace> traces_;
  std::vector<double> rewards_;
  int segments_seen_ = 0;
};

}  // namespace dess
