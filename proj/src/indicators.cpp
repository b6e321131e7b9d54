#include "dess/indicators.hpp"

#include <cmath>
#include <stdexcept>

namespace dess {

void ItemFeatureStore::add(Id item, Eigen::VectorXd features) {
  if (features.size() < 1) throw std::invalid_argument("item feature vector must be non-empty");
  if (dim_ != 0 && features.size() != dim_)
    throw std::invalid_argument("inconsistent item feature dimension for item " +
                                std::to_string(item) + ": " + std::to_string(features.size()) +
                                " vs " + std::to_string(dim_));
  dim_ = static_cast<int>(features.size());
  features_[item] = std::move(features);
}

const Eigen::VectorXd* ItemFeatureStore::find(Id item) const {
  auto it = features_.find(item);
  return it == features_.end() ? nullptr : &it->second;
}

void IndicatorConfig::validate() const {
  if (!(fre_cap > 0.0)) throw std::invalid_argument("fre_cap must be positive");
}

IndicatorTracker::IndicatorTracker(const ItemFeatureStore* features, IndicatorConfig cfg)
    : features_(features), cfg_(cfg), feature_dim_(features ? features->dim() : 0) {
  cfg_.validate();
}

Eigen::VectorXd IndicatorTracker::features_of(Id item) const {
  if (features_ != nullptr) {
    if (const auto* f = features_->find(item)) return *f;
  }
  return Eigen::VectorXd::Zero(feature_dim_);
}

void IndicatorTracker::record(Id user, Id item) {
  if (features_ == nullptr || features_->find(item) == nullptr) missing_.insert(item);

  auto& u = users_[user];
  if (u.count == 0) u.feature_sum = Eigen::VectorXd::Zero(feature_dim_);
  ++u.count;
  u.feature_sum += features_of(item);
  u.recent_items.push_back(item);
  if (cfg_.window != 0 && u.recent_items.size() > cfg_.window) u.recent_items.pop_front();

  auto& i = items_[item];
  ++i.count;
  i.recent_raters.push_back(user);
  if (cfg_.window != 0 && i.recent_raters.size() > cfg_.window) i.recent_raters.pop_front();
}

std::int64_t IndicatorTracker::frequency(Side side, Id id) const {
  if (side == Side::user) {
    auto it = users_.find(id);
    return it == users_.end() ? 0 : it->second.count;
  }
  auto it = items_.find(id);
  return it == items_.end() ? 0 : it->second.count;
}

Eigen::VectorXd IndicatorTracker::user_mean(Id user) const {
  auto it = users_.find(user);
  if (it == users_.end() || it->second.count == 0) return Eigen::VectorXd::Zero(feature_dim_);
  return it->second.feature_sum / static_cast<double>(it->second.count);
}

double IndicatorTracker::ind(Id user) const {
  auto it = users_.find(user);
  if (it == users_.end() || it->second.count < 2) return 0.0;
  const auto& u = it->second;
  const Eigen::VectorXd centroid = u.feature_sum / static_cast<double>(u.count);
  double total = 0.0;
  for (Id item : u.recent_items) total += (features_of(item) - centroid).norm();
  return total / static_cast<double>(u.recent_items.size());
}

double IndicatorTracker::pod(Id item) const {
  auto it = items_.find(item);
  if (it == items_.end() || it->second.count < 2) return 0.0;
  const auto& raters = it->second.recent_raters;
  std::vector<Eigen::VectorXd> means;
  means.reserve(raters.size());
  Eigen::VectorXd centroid = Eigen::VectorXd::Zero(feature_dim_);
  for (Id u : raters) {
    means.push_back(user_mean(u));
    centroid += means.back();
  }
  centroid /= static_cast<double>(means.size());
  double total = 0.0;
  for (const auto& q : means) total += (q - centroid).norm();
  return total / static_cast<double>(means.size());
}

double IndicatorTracker::diversity_cap(double configured) const {
  return configured > 0.0 ? configured : std::sqrt(static_cast<double>(feature_dim_));
}

ContextVector IndicatorTracker::context(Side side, Id id) const {
  const double fre = static_cast<double>(frequency(side, id));
  const double f = std::min(1.0, std::log1p(fre) / std::log1p(cfg_.fre_cap));
  const double diversity = side == Side::user ? ind(id) : pod(id);
  const double cap = diversity_cap(side == Side::user ? cfg_.ind_cap : cfg_.pod_cap);
  const double g = cap > 0.0 ? std::min(1.0, diversity / cap) : 0.0;
  Eigen::VectorXd x(2);
  x << f, g;
  return ContextVector(std::move(x), context_bound);
}

}  // namespace dess
