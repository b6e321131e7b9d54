#include "dess/stream_generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

#include "dess/text_io.hpp"

namespace dess {

namespace {

std::vector<double> zipf_weights(int n, double exponent, std::mt19937_64& rng) {
  std::vector<int> rank(n);
  std::iota(rank.begin(), rank.end(), 1);
  std::shuffle(rank.begin(), rank.end(), rng);
  std::vector<double> w(n);
  for (int k = 0; k < n; ++k) w[k] = std::pow(static_cast<double>(rank[k]), -exponent);
  return w;
}

Eigen::VectorXd gaussian(int n, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, scale);
  Eigen::VectorXd v(n);
  for (int k = 0; k < n; ++k) v(k) = normal(rng);
  return v;
}

}  // namespace

GeneratedData generate_stream(const GeneratorConfig& cfg) {
  if (cfg.users < 1 || cfg.items < 1 || cfg.genres < 1 || cfg.latent < 1 || cfg.interactions < 1)
    throw std::invalid_argument("generator sizes must be positive");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double latent_scale = 1.0 / std::sqrt(static_cast<double>(cfg.latent));

  std::vector<Eigen::VectorXd> genre_factor;
  for (int g = 0; g < cfg.genres; ++g) genre_factor.push_back(gaussian(cfg.latent, latent_scale, rng));
  std::vector<double> genre_weight(cfg.genres);
  for (int g = 0; g < cfg.genres; ++g) genre_weight[g] = std::pow(g + 1.0, -0.7);
  std::discrete_distribution<int> pick_genre(genre_weight.begin(), genre_weight.end());

  GeneratedData data;
  std::vector<Eigen::VectorXd> item_factor(cfg.items);
  std::vector<double> item_bias(cfg.items);
  std::normal_distribution<double> item_bias_dist(0.0, 0.35);
  for (int i = 0; i < cfg.items; ++i) {
    const double u = unit(rng);
    const int count = u < 0.5 ? 1 : (u < 0.85 ? 2 : 3);
    Eigen::VectorXd hot = Eigen::VectorXd::Zero(cfg.genres);
    for (int c = 0; c < count; ++c) hot(pick_genre(rng)) = 1.0;
    Eigen::VectorXd factor = gaussian(cfg.latent, 0.5 * latent_scale, rng);
    for (int g = 0; g < cfg.genres; ++g)
      if (hot(g) > 0.0) factor += genre_factor[g] / hot.sum();
    item_factor[i] = std::move(factor);
    item_bias[i] = item_bias_dist(rng);
    data.item_features.emplace_back(static_cast<Id>(i + 1), std::move(hot));
  }

  std::vector<Eigen::VectorXd> taste_start(cfg.users), taste_shift(cfg.users);
  std::vector<double> user_bias(cfg.users);
  std::normal_distribution<double> user_bias_dist(0.0, 0.4);
  for (int u = 0; u < cfg.users; ++u) {
    taste_start[u] = gaussian(cfg.latent, 1.5 * latent_scale, rng);
    Eigen::VectorXd dir = gaussian(cfg.latent, 1.0, rng);
    taste_shift[u] = cfg.drift * dir / std::max(dir.norm(), 1e-12);
    user_bias[u] = user_bias_dist(rng);
  }

  const auto user_w = zipf_weights(cfg.users, cfg.user_skew, rng);
  const auto item_w = zipf_weights(cfg.items, cfg.item_skew, rng);
  std::discrete_distribution<int> pick_user(user_w.begin(), user_w.end());
  std::discrete_distribution<int> pick_item(item_w.begin(), item_w.end());
  std::normal_distribution<double> noise(0.0, 0.6);
  std::uniform_int_distribution<int> gap(0, 40);

  std::int64_t clock = cfg.start_time;
  data.stream.reserve(static_cast<std::size_t>(cfg.interactions));
  for (std::int64_t n = 0; n < cfg.interactions; ++n) {
    const double progress = static_cast<double>(n) / static_cast<double>(cfg.interactions);
    const int u = pick_user(rng);
    const Eigen::VectorXd taste = taste_start[u] + progress * taste_shift[u];
    // popularity proposal, accepted by taste match
    int item = pick_item(rng);
    for (int attempt = 0; attempt < 4; ++attempt) {
      const double match = taste.dot(item_factor[item]);
      if (unit(rng) < 1.0 / (1.0 + std::exp(-3.0 * match))) break;
      item = pick_item(rng);
    }
    const double score = 3.45 + user_bias[u] + item_bias[item] +
                         1.5 * taste.dot(item_factor[item]) + noise(rng);
    const double rating = std::clamp(std::round(score * 2.0) / 2.0, 0.5, 5.0);
    clock += gap(rng);
    data.stream.push_back(make_interaction(u + 1, item + 1, rating, clock));
  }
  return data;
}

void write_item_features(std::ostream& out,
                         const std::vector<std::pair<Id, Eigen::VectorXd>>& features) {
  for (const auto& [id, f] : features) {
    out << id << '\t';
    for (Eigen::Index k = 0; k < f.size(); ++k)
      out << (k > 0 ? "," : "") << text::format_double(f(k));
    out << '\n';
  }
}

}  // namespace dess
