#pragma once

#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "dess/stream_harness.hpp"

namespace dess {

/// Deterministic MovieLens-shaped ratings stream: heavy-tailed user activity
/// and item popularity, genre multi-hot item features, half-star ratings from
/// a latent-factor model whose user tastes drift slowly over time.
struct GeneratorConfig {
  int users = 700;
  int items = 9000;
  int genres = 18;
  int latent = 8;
  std::int64_t interactions = 100000;
  double user_skew = 0.7;   // Zipf exponent of user activity
  double item_skew = 0.75;  // Zipf exponent of item popularity
  double drift = 0.3;       // total movement of each user's taste over the stream
  std::int64_t start_time = 964982703;
  std::uint64_t seed = 7;
};

struct GeneratedData {
  std::vector<Interaction> stream;  // timestamp order
  std::vector<std::pair<Id, Eigen::VectorXd>> item_features;
};

GeneratedData generate_stream(const GeneratorConfig& cfg);

void write_item_features(std::ostream& out,
                         const std::vector<std::pair<Id, Eigen::VectorXd>>& features);

}  // namespace dess
