#pragma once

#include <cstdint>
#include <deque>
#include <set>
#include <unordered_map>

#include <Eigen/Core>

#include "dess/bandit.hpp"
#include "dess/types.hpp"

namespace dess {

/// Raw item feature vectors F_i (e.g. a genre multi-hot), all of one dimension.
class ItemFeatureStore {
 public:
  void add(Id item, Eigen::VectorXd features);

  /// nullptr when the item has no features.
  const Eigen::VectorXd* find(Id item) const;
  int dim() const { return dim_; }
  std::size_t size() const { return features_.size(); }
  bool empty() const { return features_.empty(); }

 private:
  std::unordered_map<Id, Eigen::VectorXd> features_;
  int dim_ = 0;
};

struct IndicatorConfig {
  std::size_t window = 256;  // 0 means unbounded history
  double fre_cap = 1000.0;
  double ind_cap = 0.0;  // <= 0 selects sqrt(f)
  double pod_cap = 0.0;  // <= 0 selects sqrt(f)

  void validate() const;
};

/// Streaming frequency and diversity indicators feeding the size policies.
///
/// The user centroid Q^u is the mean over the user's whole history; distances
/// in IND and POD are averaged over the last `window` events of the id.
class IndicatorTracker {
 public:
  IndicatorTracker(const ItemFeatureStore* features, IndicatorConfig cfg);

  void record(Id user, Id item);

  std::int64_t frequency(Side side, Id id) const;
  double ind(Id user) const;
  double pod(Id item) const;
  /// Q^u; zero vector for unseen users.
  Eigen::VectorXd user_mean(Id user) const;

  /// (f, g) in [0, 1]^2, with f the log-compressed frequency and g the capped diversity.
  ContextVector context(Side side, Id id) const;

  /// Items recorded without a feature vector (a zero vector was substituted).
  const std::set<Id>& missing_feature_items() const { return missing_; }

  static constexpr double context_bound = 1.4142135623730951;

 private:
  struct UserProfile {
    std::int64_t count = 0;
    std::deque<Id> recent_items;
    Eigen::VectorXd feature_sum;
  };
  struct ItemProfile {
    std::int64_t count = 0;
    std::deque<Id> recent_raters;
  };

  Eigen::VectorXd features_of(Id item) const;
  double diversity_cap(double configured) const;

  const ItemFeatureStore* features_;
  IndicatorConfig cfg_;
  int feature_dim_;
  std::unordered_map<Id, UserProfile> users_;
  std::unordered_map<Id, ItemProfile> items_;
  std::set<Id> missing_;
};

}  // namespace dess
