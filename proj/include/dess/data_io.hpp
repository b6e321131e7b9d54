#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dess/indicators.hpp"
#include "dess/stream_harness.hpp"

namespace dess {

/// "user_id,item_id,rating,timestamp" per line; a first line whose first field
/// is not an integer is treated as a header. Stable-sorted by timestamp.
std::vector<Interaction> parse_ratings(const std::filesystem::path& path);
std::vector<Interaction> parse_ratings(std::istream& in, std::string_view source);
void write_ratings(std::ostream& out, std::span<const Interaction> stream);

/// "item_id<TAB>v0,v1,..." per line.
ItemFeatureStore parse_item_features(const std::filesystem::path& path);
ItemFeatureStore parse_item_features(std::istream& in, std::string_view source);

inline constexpr std::string_view kMetricsHeader =
    "t,acc,loss,regret_user,regret_item,emb_params,train_ms,infer_ms";

void write_metrics_csv(std::ostream& out, std::span<const SegmentMetrics> rows);
std::vector<SegmentMetrics> read_metrics_csv(std::istream& in);
std::vector<SegmentMetrics> read_metrics_csv(const std::filesystem::path& path);

/// Long format: "series,seed,step,regret", with seed "mean" for the seed average.
struct RegretSeries {
  std::string name;
  std::vector<std::int64_t> steps;
  std::vector<std::vector<double>> per_seed;  // [seed][checkpoint]
};
void write_regret_csv(std::ostream& out, std::span<const RegretSeries> series);

}  // namespace dess
