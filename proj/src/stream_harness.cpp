#include "dess/stream_harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace dess {

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since)
      .count();
}

std::vector<Example> examples_of(std::span<const Interaction> part) {
  std::vector<Example> out;
  out.reserve(part.size());
  for (const auto& x : part) out.push_back(x.example());
  return out;
}

}  // namespace

Interaction make_interaction(Id user, Id item, double rating, std::int64_t timestamp) {
  Interaction x;
  x.user = user;
  x.item = item;
  x.rating = rating;
  x.timestamp = timestamp;
  x.label = rating > 3.5 ? 1.0 : 0.0;
  x.cls = static_cast<int>(std::clamp(std::round(rating), 1.0, 5.0)) - 1;
  return x;
}

std::vector<Segment> segment_stream(std::span<const Interaction> stream,
                                    std::size_t segment_length, double train_frac) {
  if (stream.empty()) throw std::invalid_argument("segment_stream: empty stream");
  if (segment_length < 2) throw std::invalid_argument("segment_length must be at least 2");
  if (!(train_frac > 0.0 && train_frac < 1.0))
    throw std::invalid_argument("train_frac must lie in (0, 1)");

  const auto n_train = static_cast<std::size_t>(
      std::ceil(train_frac * static_cast<double>(segment_length) - 1e-9));
  std::vector<Segment> out;
  for (std::size_t start = 0; start + segment_length <= stream.size(); start += segment_length) {
    Segment s;
    s.index = static_cast<int>(out.size()) + 1;
    const auto part = stream.subspan(start, segment_length);
    s.train.assign(part.begin(), part.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.test.assign(part.begin() + static_cast<std::ptrdiff_t>(n_train), part.end());
    out.push_back(std::move(s));
  }
  return out;
}

double reward(double old_loss, double new_loss, const RewardConfig& cfg, double sigma) {
  if (!std::isfinite(old_loss) || !std::isfinite(new_loss))
    throw std::invalid_argument("reward: non-finite loss");
  const double gain = old_loss - new_loss;
  if (cfg.continuous) return std::clamp(gain, 0.0, 2.0 * sigma);
  return gain > cfg.threshold ? 1.0 : 0.0;
}

double step_regret(double chosen_reward, double counterfactual_reward) {
  return std::max(counterfactual_reward - chosen_reward, 0.0);
}

StreamHarness::StreamHarness(AdaptiveModel model, const ItemFeatureStore* features,
                             HarnessConfig cfg)
    : model_(std::move(model)),
      cfg_(cfg),
      tracker_(features, cfg.indicators),
      bandits_{DiscountedLinUCB(cfg.bandit), DiscountedLinUCB(cfg.bandit)} {
  if (cfg_.bandit.dim != 2 || cfg_.bandit.arms != 2)
    throw std::invalid_argument("size policy bandits must be 2-dimensional with 2 arms");
}

void StreamHarness::policy_update_pass(const Segment& previous) {
  if (cfg_.policy == PolicyKind::none) return;
  std::vector<const Interaction*> events;
  events.reserve(previous.train.size() + previous.test.size());
  for (const auto& x : previous.train) events.push_back(&x);
  for (const auto& x : previous.test) events.push_back(&x);

  const int top = model_.ladder().top();
  const double sigma = cfg_.bandit.sigma;
  for (const Interaction* x : events) {
    tracker_.record(x->user, x->item);

    std::array<bool, 2> active{};
    active[0] = !model_.contains(Side::user, x->user) || model_.rung(Side::user, x->user) < top;
    active[1] = !model_.contains(Side::item, x->item) || model_.rung(Side::item, x->item) < top;
    if (!active[0] && !active[1]) continue;

    const TempOutcome losses = model_.temp_evaluate_both(x->example());
    const std::array<double, 2> grown{losses.new_loss_user, losses.new_loss_item};
    for (int s = 0; s < 2; ++s) {
      if (!active[s]) continue;
      const Side side = static_cast<Side>(s);
      const ContextVector ctx = tracker_.context(side, s == 0 ? x->user : x->item);
      auto& bandit = bandits_[s];
      const int arm = cfg_.policy == PolicyKind::always_keep ? 0 : bandit.select(ctx);
      const double keep = reward(losses.old_loss, losses.old_loss, cfg_.reward, sigma);
      const double grow = reward(losses.old_loss, grown[s], cfg_.reward, sigma);
      const double chosen = arm == 0 ? keep : grow;
      const double other = arm == 0 ? grow : keep;
      bandit.update(arm, ctx, chosen);
      rewards_.push_back(chosen);
      regret_[s] += step_regret(chosen, other);
      ++decisions_[s];
    }
  }
}

SegmentMetrics StreamHarness::model_update_pass(const Segment& segment) {
  SegmentTrace trace;
  trace.t = segment.index;
  const auto started = std::chrono::steady_clock::now();

  // Permanent size decisions, once per unique id, with the frozen greedy policy.
  const bool decide = segments_seen_ > 0 && cfg_.policy == PolicyKind::bandit;
  std::array<std::unordered_set<Id>, 2> seen;
  const int top = model_.ladder().top();
  for (const auto& x : segment.train) {
    for (int s = 0; s < 2; ++s) {
      const Side side = static_cast<Side>(s);
      const Id id = s == 0 ? x.user : x.item;
      if (!seen[s].insert(id).second) continue;
      model_.ensure(side, id);
      if (!decide || model_.rung(side, id) >= top) continue;
      if (bandits_[s].select_greedy(tracker_.context(side, id)) == 1) {
        model_.expand(side, id);
        ++trace.expansions;
      }
    }
  }

  const auto train = examples_of(segment.train);
  const std::size_t batch = static_cast<std::size_t>(model_.config().batch);
  for (int epoch = 0; epoch < model_.config().epochs; ++epoch)
    for (std::size_t start = 0; start < train.size(); start += batch)
      model_.train_step(std::span<const Example>(train).subspan(
          start, std::min(batch, train.size() - start)));
  trace.train_ms = elapsed_ms(started);

  trace.pre_eval_checksum = model_.checksum();
  const auto eval_started = std::chrono::steady_clock::now();
  const auto test = examples_of(segment.test);
  const EvalResult eval = model_.evaluate(test);
  trace.infer_ms = elapsed_ms(eval_started);

  // policy-pass updates made since the previous segment's trace
  trace.decisions = decisions_;
  for (const auto& earlier : traces_)
    for (int s = 0; s < 2; ++s) trace.decisions[s] -= earlier.decisions[s];
  ++segments_seen_;

  SegmentMetrics m;
  m.t = segment.index;
  m.accuracy = eval.accuracy;
  m.loss = eval.loss;
  m.regret_user = regret_[0];
  m.regret_item = regret_[1];
  m.emb_params = model_.param_count().embedding;
  if (cfg_.record_timing) {
    m.train_ms = trace.train_ms;
    m.infer_ms = trace.infer_ms;
  }
  traces_.push_back(trace);
  return m;
}

std::vector<SegmentMetrics> StreamHarness::run(std::span<const Segment> segments) {
  std::vector<SegmentMetrics> out;
  out.reserve(segments.size());
  for (std::size_t k = 0; k < segments.size(); ++k) {
    if (k > 0) policy_update_pass(segments[k - 1]);
    out.push_back(model_update_pass(segments[k]));
  }
  return out;
}

}  // namespace dess
