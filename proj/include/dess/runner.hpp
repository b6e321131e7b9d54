#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "dess/adaptive_model.hpp"
#include "dess/bandit.hpp"
#include "dess/data_io.hpp"
#include "dess/indicators.hpp"
#include "dess/stream_harness.hpp"
#include "dess/synthetic_env.hpp"

namespace dess {

enum class RunMode { dess_cv, dess_fre, fixed, stationary_ablation, synthetic };

std::string_view to_string(RunMode mode);
RunMode parse_mode(std::string_view name);

struct SyntheticConfig {
  DriftKind kind = DriftKind::abrupt;
  int changes = 2;
  double magnitude = 0.0;  // <= 0: the chord that swaps the two arm positions
  double rate = 0.0;
  std::int64_t horizon = 50000;
  int seeds = 10;
  int checkpoints = 100;
  std::vector<std::int64_t> sweep{25000, 30000, 35000, 40000, 45000, 50000};
  double gamma = 0.0;  // <= 0: corollary_gamma
  EnvConfig env;

  /// The drift spec actually run, with the magnitude and budget resolved.
  DriftSpec drift(std::int64_t horizon_override = 0) const;
};

struct RunConfig {
  RunMode mode = RunMode::dess_cv;
  std::filesystem::path ratings;
  std::filesystem::path item_features;
  std::filesystem::path out_dir = "dess_out";
  std::uint64_t seed = 0;
  std::size_t segment_length = 5000;
  double train_frac = 0.8;
  std::int64_t max_interactions = 0;  // 0 keeps the whole stream
  int fixed_size = 2;                 // fixed mode runs on the ladder [fixed_size, fixed_size]
  bool record_timing = false;
  BanditConfig bandit;
  ModelConfig model;
  IndicatorConfig indicators;
  RewardConfig reward;
  SyntheticConfig synthetic;

  /// Throws std::invalid_argument on the first missing or inconsistent setting.
  void validate() const;
};

/// Applies one "key = value" setting; unknown keys throw.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);

/// Flat key-value text: one "key = value" per line, '#' starts a comment.
/// Relative paths are resolved against `base_dir`.
RunConfig parse_config(std::istream& in, std::string_view source,
                       const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// Every setting as "key = value" lines in a fixed order; parse_config reads it back.
std::string describe(const RunConfig& cfg);

struct RunOutput {
  std::vector<SegmentMetrics> metrics;    // stream modes
  std::vector<RegretSeries> regret;       // synthetic mode
  std::filesystem::path metrics_csv;
  std::filesystem::path summary_json;
  std::filesystem::path regret_csv;
};

/// Runs the configured experiment and writes metrics.csv (stream modes) or
/// regret.csv (synthetic) plus summary.json into cfg.out_dir.
RunOutput run(const RunConfig& cfg, std::ostream& log);

/// The harness configuration a stream mode uses.
HarnessConfig harness_config(const RunConfig& cfg);
/// The model configuration a stream mode uses (fixed mode swaps in [s, s]).
ModelConfig model_config(const RunConfig& cfg);

}  // namespace dess
