#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "doctest.h"
#include "dess/indicators.hpp"
#include "oracles.hpp"

using namespace dess;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out(k++) = x;
  return out;
}

IndicatorConfig unbounded() {
  IndicatorConfig cfg;
  cfg.window = 0;
  return cfg;
}

}  // namespace

TEST_CASE("frequency counts") {
  ItemFeatureStore store;
  store.add(1, vec({1, 0}));
  store.add(2, vec({0, 1}));
  IndicatorTracker t(&store, {});
  t.record(10, 1);
  CHECK(t.frequency(Side::user, 10) == 1);
  CHECK(t.frequency(Side::item, 1) == 1);
  t.record(10, 1);
  CHECK(t.frequency(Side::user, 10) == 2);
  t.record(10, 2);
  CHECK(t.user_mean(10).isApprox(vec({2.0 / 3.0, 1.0 / 3.0})));
  CHECK(t.frequency(Side::user, 99) == 0);
}

TEST_CASE("two-point user mean") {
  ItemFeatureStore store;
  store.add(1, vec({1, 3}));
  store.add(2, vec({5, -1}));
  IndicatorTracker t(&store, {});
  t.record(7, 1);
  t.record(7, 2);
  CHECK(t.user_mean(7).isApprox(vec({3, 1})));
}

TEST_CASE("interest diversity worked values") {
  ItemFeatureStore store;
  store.add(1, vec({0, 0}));
  store.add(2, vec({2, 0}));
  store.add(3, vec({0, 3}));
  {
    IndicatorTracker t(&store, unbounded());
    t.record(1, 1);
    CHECK(t.ind(1) == 0.0);
    t.record(1, 2);
    CHECK(t.ind(1) == doctest::Approx(1.0));
  }
  {
    IndicatorTracker t(&store, unbounded());
    t.record(1, 1);
    t.record(1, 1);
    t.record(1, 3);
    CHECK(t.ind(1) == doctest::Approx(4.0 / 3.0));
  }
}

TEST_CASE("property diversity worked values") {
  // item 0 has the zero feature, so a rater's mean is set by the other item they rated
  ItemFeatureStore store;
  store.add(0, vec({0, 0}));
  store.add(4, vec({4, 0}));
  store.add(8, vec({8, 0}));
  {
    IndicatorTracker t(&store, unbounded());
    t.record(1, 0);
    CHECK(t.pod(0) == 0.0);  // one rater
    t.record(2, 0);
    t.record(2, 8);
    CHECK(t.user_mean(1).isApprox(vec({0, 0})));
    CHECK(t.user_mean(2).isApprox(vec({4, 0})));
    CHECK(t.pod(0) == doctest::Approx(2.0));
  }
  {
    IndicatorTracker t(&store, unbounded());
    t.record(1, 0);
    t.record(2, 0);
    t.record(2, 4);
    t.record(3, 0);
    t.record(3, 8);
    CHECK(t.user_mean(2).isApprox(vec({2, 0})));
    CHECK(t.pod(0) == doctest::Approx(4.0 / 3.0));
  }
}

TEST_CASE("property diversity reads the raters' current means") {
  ItemFeatureStore store;
  store.add(0, vec({0, 0}));
  store.add(8, vec({8, 0}));
  IndicatorTracker t(&store, unbounded());
  t.record(1, 0);
  t.record(2, 0);
  CHECK(t.pod(0) == 0.0);
  t.record(2, 8);  // moves user 2 after they rated item 0
  CHECK(t.pod(0) == doctest::Approx(2.0));
}

TEST_CASE("contexts are normalized and bounded") {
  ItemFeatureStore store;
  store.add(1, vec({1, 0, 0}));
  store.add(2, vec({0, 1, 0}));
  IndicatorConfig cfg;
  cfg.fre_cap = 3.0;
  IndicatorTracker t(&store, cfg);
  auto unseen = t.context(Side::user, 42).values();
  CHECK(unseen(0) == 0.0);
  CHECK(unseen(1) == 0.0);

  t.record(1, 1);
  t.record(1, 2);
  t.record(1, 1);
  const auto x = t.context(Side::user, 1).values();
  CHECK(x(0) == doctest::Approx(1.0));  // FRE = cap
  CHECK(x(1) == doctest::Approx(std::min(1.0, t.ind(1) / std::sqrt(3.0))));
  t.record(1, 2);
  CHECK(t.context(Side::user, 1).values()(0) == 1.0);

  IndicatorConfig tight;
  tight.fre_cap = 2.0;
  tight.ind_cap = 1e-3;
  tight.pod_cap = 1e-3;
  IndicatorTracker s(&store, tight);
  s.record(5, 1);
  s.record(5, 2);
  const auto sat = s.context(Side::user, 5).values();
  CHECK(sat(0) == 1.0);
  CHECK(sat(1) == 1.0);
  CHECK(sat.norm() == doctest::Approx(std::sqrt(2.0)));

  IndicatorConfig capped;
  capped.fre_cap = 1000.0;
  IndicatorTracker c(&store, capped);
  for (int k = 0; k < 1000; ++k) c.record(3, 1);
  CHECK(c.context(Side::user, 3).values()(0) == 1.0);
}

TEST_CASE("frequency-only contexts without a feature store") {
  IndicatorTracker t(nullptr, {});
  t.record(1, 2);
  t.record(1, 3);
  t.record(4, 2);
  const auto x = t.context(Side::user, 1).values();
  CHECK(x(0) > 0.0);
  CHECK(x(1) == 0.0);
  CHECK(t.context(Side::item, 2).values()(1) == 0.0);
  CHECK(t.missing_feature_items().size() == 2);
}

TEST_CASE("feature store rejects mixed dimensions") {
  ItemFeatureStore store;
  store.add(1, vec({1, 0, 0}));
  CHECK_THROWS_AS(store.add(2, vec({1, 0})), std::invalid_argument);
  CHECK(store.dim() == 3);
}

TEST_CASE("windowed diversity equals a from-scratch recomputation") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t windows[] = {4, 64, 0};
    CHECK(oracle::indicator_stream_error(rng, windows[trial % 3]) < 1e-9);
  }
}

TEST_CASE("indicators stay within their bounds") {
  std::mt19937_64 rng(22);
  ItemFeatureStore store;
  for (int i = 0; i < 12; ++i) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(4);
    v(i % 4) = 1.0;
    if (i % 3 == 0) v((i + 1) % 4) = 1.0;
    store.add(i, v);
  }
  const double diameter = std::sqrt(4.0);
  IndicatorTracker t(&store, {});
  std::int64_t last = 0;
  for (int e = 0; e < 500; ++e) {
    const Id u = static_cast<Id>(rng() % 6);
    const Id i = static_cast<Id>(rng() % 12);
    t.record(u, i);
    CHECK(t.frequency(Side::user, 0) >= last);
    last = t.frequency(Side::user, 0);
    CHECK(t.ind(u) >= 0.0);
    CHECK(t.ind(u) <= diameter + 1e-12);
    CHECK(t.pod(i) >= 0.0);
    CHECK(t.pod(i) <= diameter + 1e-12);
    CHECK(t.context(Side::user, u).values().norm() <= IndicatorTracker::context_bound + 1e-12);
    CHECK(t.context(Side::item, i).values().norm() <= IndicatorTracker::context_bound + 1e-12);
  }
}

TEST_CASE("diversity only depends on the last W events of the id") {
  ItemFeatureStore store;
  for (int i = 0; i < 6; ++i) store.add(i, vec({static_cast<double>(i % 2), static_cast<double>(i / 3)}));
  IndicatorConfig cfg;
  cfg.window = 3;
  // Same multiset of history (so the same centroid), same last three items, different early order.
  IndicatorTracker a(&store, cfg), b(&store, cfg);
  for (Id i : {0, 1, 2, 3, 4, 5}) a.record(1, i);
  for (Id i : {2, 0, 1, 3, 4, 5}) b.record(1, i);
  CHECK(a.ind(1) == doctest::Approx(b.ind(1)).epsilon(1e-15));
}
