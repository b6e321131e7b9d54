#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <vector>

#include "doctest.h"
#include "dess/stream_harness.hpp"

using namespace dess;

namespace {

std::vector<Interaction> random_stream(std::uint64_t seed, int n, int users = 25, int items = 40) {
  std::mt19937_64 rng(seed);
  std::vector<Interaction> out;
  for (int k = 0; k < n; ++k) {
    const double rating = 0.5 * static_cast<double>(1 + rng() % 10);
    out.push_back(make_interaction(static_cast<Id>(rng() % users), static_cast<Id>(rng() % items), rating,
                                   1000 + k));
  }
  return out;
}

ModelConfig small_model(std::vector<int> sizes = {2, 4, 8}) {
  ModelConfig cfg;
  cfg.ladder = SizeLadder(std::move(sizes));
  cfg.hidden = 8;
  cfg.batch = 16;
  cfg.seed = 5;
  return cfg;
}

ItemFeatureStore genre_store(int items, int genres) {
  ItemFeatureStore store;
  for (int i = 0; i < items; ++i) {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(genres);
    f(i % genres) = 1.0;
    f((i * 7 + 3) % genres) = 1.0;
    store.add(i, f);
  }
  return store;
}

using Rungs = std::map<std::pair<int, Id>, int>;

Rungs rungs_of(const AdaptiveModel& m, std::span<const Interaction> stream) {
  Rungs out;
  for (const auto& x : stream) {
    if (m.contains(Side::user, x.user)) out[{0, x.user}] = m.rung(Side::user, x.user);
    if (m.contains(Side::item, x.item)) out[{1, x.item}] = m.rung(Side::item, x.item);
  }
  return out;
}

}  // namespace

TEST_CASE("labels from ratings") {
  CHECK(make_interaction(1, 2, 4.5, 0).label == 1.0);
  CHECK(make_interaction(1, 2, 3.5, 0).label == 0.0);
  CHECK(make_interaction(1, 2, 3.0, 0).label == 0.0);
  CHECK(make_interaction(1, 2, 4.5, 0).cls == 4);
  CHECK(make_interaction(1, 2, 0.5, 0).cls == 0);
  CHECK(make_interaction(1, 2, 2.5, 0).cls == 2);
}

TEST_CASE("segmenting a stream") {
  const auto ten = random_stream(1, 10);
  const auto segs = segment_stream(ten, 5, 0.8);
  REQUIRE(segs.size() == 2);
  for (const auto& s : segs) {
    CHECK(s.train.size() == 4);
    CHECK(s.test.size() == 1);
  }
  CHECK(segs[0].index == 1);
  CHECK(segs[1].index == 2);
  CHECK(segs[1].train.front().timestamp == ten[5].timestamp);
  CHECK(segs[0].test.back().timestamp == ten[4].timestamp);

  const auto eleven = random_stream(1, 11);
  CHECK(segment_stream(eleven, 5, 0.8).size() == 2);

  CHECK_THROWS(segment_stream(ten, 5, 1.0));
  CHECK_THROWS(segment_stream(ten, 5, 0.0));
  CHECK_THROWS(segment_stream(ten, 1, 0.5));
  CHECK_THROWS(segment_stream({}, 5, 0.8));
}

TEST_CASE("rewards and regret increments") {
  const RewardConfig binary;
  CHECK(reward(0.5, 0.3, binary, 0.5) == 1.0);
  CHECK(reward(0.3, 0.5, binary, 0.5) == 0.0);
  CHECK(reward(0.4, 0.4, binary, 0.5) == 0.0);
  RewardConfig raised;
  raised.threshold = 0.1;
  CHECK(reward(0.5, 0.45, raised, 0.5) == 0.0);
  RewardConfig cont;
  cont.continuous = true;
  CHECK(reward(0.5, 0.3, cont, 0.5) == doctest::Approx(0.2));
  CHECK(reward(3.0, 0.0, cont, 0.5) == 1.0);
  CHECK(reward(0.3, 0.5, cont, 0.5) == 0.0);
  CHECK_THROWS(reward(std::numeric_limits<double>::quiet_NaN(), 0.1, binary, 0.5));
  CHECK_THROWS(reward(0.1, std::numeric_limits<double>::infinity(), binary, 0.5));

  CHECK(step_regret(1, 0) == 0.0);
  CHECK(step_regret(0, 1) == 1.0);
  CHECK(step_regret(0, 0) == 0.0);
}

TEST_CASE("empty segment leaves the bandits untouched") {
  StreamHarness h(AdaptiveModel(small_model()), nullptr, {});
  Segment empty;
  empty.index = 1;
  h.policy_update_pass(empty);
  CHECK(h.bandit(Side::user).step() == 0);
  CHECK(h.bandit(Side::item).step() == 0);
}

TEST_CASE("ids at the top rung are masked") {
  const auto stream = random_stream(2, 40);
  AdaptiveModel model(small_model());
  for (const auto& x : stream) {
    model.set_embedding(Side::user, x.user, 2, Eigen::VectorXd::Ones(8));
    model.set_embedding(Side::item, x.item, 2, Eigen::VectorXd::Ones(8));
  }
  StreamHarness h(std::move(model), nullptr, {});
  const auto segs = segment_stream(stream, 20, 0.8);
  h.run(segs);
  CHECK(h.bandit(Side::user).step() == 0);
  CHECK(h.bandit(Side::item).step() == 0);
  CHECK(h.decisions(Side::user) == 0);
  CHECK(h.traces().back().expansions == 0);
}

TEST_CASE("first segment makes no size changes") {
  const auto stream = random_stream(3, 50);
  StreamHarness h(AdaptiveModel(small_model()), nullptr, {});
  const auto segs = segment_stream(stream, 50, 0.8);
  h.model_update_pass(segs[0]);
  CHECK(h.traces()[0].expansions == 0);
  for (const auto& [key, rung] : rungs_of(h.model(), stream)) CHECK(rung == 0);
  CHECK(h.model().param_count().embedding ==
        2 * static_cast<std::int64_t>(h.model().id_count(Side::user) + h.model().id_count(Side::item)));
}

TEST_CASE("streaming run properties") {
  const auto features = genre_store(40, 6);
  for (bool with_features : {true, false}) {
    const auto stream = random_stream(4, 600);
    const auto segs = segment_stream(stream, 60, 0.8);
    HarnessConfig cfg;
    cfg.bandit.gamma = 0.95;
    StreamHarness h(AdaptiveModel(small_model()), with_features ? &features : nullptr, cfg);

    std::int64_t last_params = 0;
    double last_regret[2] = {0, 0};
    Rungs previous;
    std::vector<SegmentMetrics> rows;
    for (std::size_t k = 0; k < segs.size(); ++k) {
      if (k > 0) h.policy_update_pass(segs[k - 1]);
      rows.push_back(h.model_update_pass(segs[k]));
      const auto& m = rows.back();
      CHECK(m.t == static_cast<int>(k) + 1);
      CHECK(m.emb_params >= last_params);
      CHECK(m.regret_user >= last_regret[0]);
      CHECK(m.regret_item >= last_regret[1]);
      CHECK(m.regret_user <= static_cast<double>(h.decisions(Side::user)));
      CHECK(m.regret_item <= static_cast<double>(h.decisions(Side::item)));
      CHECK(m.train_ms == 0.0);
      last_params = m.emb_params;
      last_regret[0] = m.regret_user;
      last_regret[1] = m.regret_item;

      const auto now = rungs_of(h.model(), stream);
      for (const auto& [key, rung] : previous) CHECK(now.at(key) >= rung);
      previous = now;
    }
    CHECK(rows.size() == segs.size());
    for (double r : h.rewards()) CHECK((r == 0.0 || r == 1.0));
    CHECK(h.rewards().size() ==
          static_cast<std::size_t>(h.decisions(Side::user) + h.decisions(Side::item)));

    std::int64_t per_segment = 0;
    for (const auto& t : h.traces()) per_segment += t.decisions[0];
    CHECK(per_segment == h.decisions(Side::user));
    CHECK(h.decisions(Side::user) > 0);
  }
}

TEST_CASE("ids absent from a segment's train part keep their size") {
  auto stream = random_stream(6, 200, 10, 10);
  // user 99 only appears in the first segment
  stream[0].user = 99;
  const auto segs = segment_stream(stream, 50, 0.8);
  HarnessConfig cfg;
  StreamHarness h(AdaptiveModel(small_model()), nullptr, cfg);
  h.run(segs);
  CHECK(h.model().rung(Side::user, 99) == 0);
}

TEST_CASE("test interactions of segment t never reach segment t's predictions") {
  const auto base = random_stream(7, 400);
  auto altered = base;
  const auto segs_a = segment_stream(base, 100, 0.8);
  // replace the test part of segment 3 with unrelated interactions
  for (std::size_t k = 0; k < 20; ++k) {
    auto& x = altered[200 + 80 + k];
    x = make_interaction(static_cast<Id>(500 + k), static_cast<Id>(700 + k), 5.0, x.timestamp);
  }
  const auto segs_b = segment_stream(altered, 100, 0.8);
  REQUIRE(segs_a[2].test.size() == 20);

  StreamHarness a(AdaptiveModel(small_model()), nullptr, {});
  StreamHarness b(AdaptiveModel(small_model()), nullptr, {});
  const auto ma = a.run(segs_a);
  const auto mb = b.run(segs_b);
  for (int t = 0; t < 3; ++t) CHECK(a.traces()[t].pre_eval_checksum == b.traces()[t].pre_eval_checksum);
  for (int t = 0; t < 2; ++t) CHECK(ma[t].accuracy == mb[t].accuracy);
  // the altered interactions do reach the policy, in the pass before t = 4
  CHECK_FALSE(a.bandit(Side::user) == b.bandit(Side::user));
}

TEST_CASE("always-keep policy on a fixed ladder reproduces the fixed baseline") {
  const auto stream = random_stream(8, 500);
  const auto segs = segment_stream(stream, 100, 0.8);
  const auto features = genre_store(40, 6);
  HarnessConfig keep;
  keep.policy = PolicyKind::always_keep;
  HarnessConfig fixed;
  fixed.policy = PolicyKind::none;
  StreamHarness a(AdaptiveModel(small_model({4, 4})), &features, keep);
  StreamHarness b(AdaptiveModel(small_model({4, 4})), &features, fixed);
  const auto ma = a.run(segs);
  const auto mb = b.run(segs);
  REQUIRE(ma.size() == mb.size());
  for (std::size_t k = 0; k < ma.size(); ++k) {
    CHECK(ma[k].accuracy == mb[k].accuracy);
    CHECK(ma[k].loss == mb[k].loss);
    CHECK(ma[k].emb_params == mb[k].emb_params);
    CHECK(a.traces()[k].pre_eval_checksum == b.traces()[k].pre_eval_checksum);
  }
  CHECK(a.model().checksum() == b.model().checksum());
  CHECK(a.decisions(Side::user) > 0);
  CHECK(b.decisions(Side::user) == 0);
}

TEST_CASE("harness rejects a bandit of the wrong shape") {
  HarnessConfig cfg;
  cfg.bandit.arms = 3;
  CHECK_THROWS_AS(StreamHarness(AdaptiveModel(small_model()), nullptr, cfg), std::invalid_argument);
}

TEST_CASE("runs are deterministic") {
  const auto stream = random_stream(9, 300);
  const auto segs = segment_stream(stream, 100, 0.8);
  StreamHarness a(AdaptiveModel(small_model()), nullptr, {});
  StreamHarness b(AdaptiveModel(small_model()), nullptr, {});
  const auto ma = a.run(segs);
  const auto mb = b.run(segs);
  for (std::size_t k = 0; k < ma.size(); ++k) {
    CHECK(ma[k].accuracy == mb[k].accuracy);
    CHECK(ma[k].loss == mb[k].loss);
    CHECK(ma[k].regret_user == mb[k].regret_user);
  }
  CHECK(a.model().checksum() == b.model().checksum());
  CHECK(a.bandit(Side::item) == b.bandit(Side::item));
}
