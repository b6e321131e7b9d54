#include <cmath>
#include <random>
#include <sstream>
#include <utility>
#include <vector>

#include "doctest.h"
#include "dess/adaptive_model.hpp"
#include "oracles.hpp"

using namespace dess;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out(k++) = x;
  return out;
}

ParamView view(AdaptiveModel& m, const std::string& name) {
  for (auto& p : m.parameters())
    if (p.name == name) return p;
  FAIL("missing parameter " << name);
  return {};
}

ModelConfig plain_mf(std::vector<int> sizes) {
  ModelConfig cfg;
  cfg.ladder = SizeLadder(std::move(sizes));
  cfg.head = Head::mf;
  cfg.embedding_norm = false;
  cfg.chain_noise = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("ladder validation") {
  CHECK(SizeLadder().sizes() == std::vector<int>{2, 4, 8, 16, 64, 128});
  CHECK_THROWS(SizeLadder({4, 2}));
  CHECK_THROWS(SizeLadder({4}));
  CHECK_THROWS(SizeLadder({0, 2}));
  CHECK_NOTHROW(SizeLadder::fixed(8));
  ModelConfig bad;
  bad.eta = 0.0;
  CHECK_THROWS(AdaptiveModel(bad));
}

TEST_CASE("dot-product head on padded embeddings") {
  AdaptiveModel m(plain_mf({2, 4}));
  m.set_embedding(Side::user, 1, 1, vec({1, 0, 0, 0}));
  m.set_embedding(Side::item, 1, 1, vec({2, 0, 0, 0}));
  const Example ex{1, 1, 1.0, 0};
  CHECK(m.forward({&ex, 1}, Mode::eval)(0, 0) == doctest::Approx(2.0));
  // the identity-padded chain carries a rung-0 vector to the same top vector
  m.set_embedding(Side::user, 1, 0, vec({1, 0}));
  CHECK(m.forward({&ex, 1}, Mode::eval)(0, 0) == doctest::Approx(2.0));

  m.set_embedding(Side::user, 1, 1, Eigen::VectorXd::Zero(4));
  m.set_embedding(Side::item, 1, 1, Eigen::VectorXd::Zero(4));
  CHECK(m.forward({&ex, 1}, Mode::eval)(0, 0) == 0.0);
}

TEST_CASE("chain lifts by hand") {
  AdaptiveModel m(plain_mf({1, 2}));
  auto w = view(m, "chain_W0").value;
  REQUIRE(w.size() == 2);
  w[0] = 1.0;
  w[1] = 1.0;
  m.set_embedding(Side::user, 5, 0, vec({3}));
  m.expand(Side::user, 5);
  CHECK(m.rung(Side::user, 5) == 1);
  CHECK(m.embedding(Side::user, 5).isApprox(vec({3, 3})));
}

TEST_CASE("warm initialization by hand") {
  AdaptiveModel m(plain_mf({2, 3}));
  m.set_embedding(Side::item, 9, 0, vec({1, 2}));
  m.expand(Side::item, 9);
  CHECK(m.embedding(Side::item, 9) == vec({1, 2, 0}));

  auto b = view(m, "chain_b0").value;
  b[2] = 5.0;
  m.set_embedding(Side::item, 9, 0, vec({1, 2}));
  m.expand(Side::item, 9);
  CHECK(m.embedding(Side::item, 9) == vec({1, 2, 5}));
  CHECK_THROWS_AS(m.expand(Side::item, 9), std::logic_error);
}

TEST_CASE("task losses") {
  ModelConfig cfg = plain_mf({2, 4});
  AdaptiveModel m(cfg);
  m.set_embedding(Side::item, 1, 1, vec({1, 0, 0, 0}));
  m.set_embedding(Side::user, 1, 1, vec({-60, 0, 0, 0}));
  const Example neg{1, 1, 0.0, 0};
  CHECK(m.loss({&neg, 1}, Mode::eval) == doctest::Approx(0.0));
  m.set_embedding(Side::user, 1, 1, vec({60, 0, 0, 0}));
  CHECK(m.loss({&neg, 1}, Mode::eval) == doctest::Approx(1.0));

  cfg.task = Task::multiclass;
  AdaptiveModel mc(cfg);
  for (auto& p : mc.parameters())
    if (p.name == "mf_w" || p.name == "mf_c") std::fill(p.value.begin(), p.value.end(), 0.0);
  const Example ex{1, 1, 0.0, 3};
  mc.ensure(Side::user, 1);
  mc.ensure(Side::item, 1);
  CHECK(mc.loss({&ex, 1}, Mode::eval) == doctest::Approx(std::log(5.0)));
}

TEST_CASE("parameter counts") {
  AdaptiveModel m{ModelConfig{}};
  CHECK(m.param_count().embedding == 0);
  m.set_embedding(Side::user, 1, 0, Eigen::VectorXd::Zero(2));
  m.set_embedding(Side::user, 2, 1, Eigen::VectorXd::Zero(4));
  CHECK(m.param_count().embedding == 6);
  m.expand(Side::user, 1);
  CHECK(m.param_count().embedding == 8);
  CHECK(m.param_count().total > m.param_count().embedding);
}

TEST_CASE("analytic gradients match central differences") {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 20; ++trial)
    for (const auto& rep : oracle::gradient_trial(trial, rng)) {
      INFO("trial " << trial << " " << rep.where << " analytic " << rep.analytic << " numeric " << rep.numeric);
      CHECK(rep.worst < 1e-4);
      CHECK(rep.checked > 0);
    }
}

TEST_CASE("warm initialization preserves eval predictions") {
  ModelConfig cfg;
  cfg.ladder = SizeLadder({2, 4, 8});
  cfg.hidden = 16;
  cfg.batch = 32;
  AdaptiveModel m(cfg);
  std::mt19937_64 rng(5);
  for (int k = 0; k < 20; ++k) m.train_step(oracle::random_examples(rng, 32, 100, 40));
  int checked = 0;
  for (Id u = 0; u < 100; ++u) {
    if (!m.contains(Side::user, u)) m.ensure(Side::user, u);
    const Example ex{u, static_cast<Id>(u % 40), 1.0, 0};
    m.ensure(Side::item, ex.item);
    const double before = m.forward({&ex, 1}, Mode::eval)(0, 0);
    m.expand(Side::user, u);
    const double after = m.forward({&ex, 1}, Mode::eval)(0, 0);
    CHECK(std::abs(before - after) < 1e-6);
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("random initialization on expand changes predictions") {
  ModelConfig cfg;
  cfg.ladder = SizeLadder({2, 4, 8});
  cfg.hidden = 16;
  cfg.cold_init = true;
  AdaptiveModel m(cfg);
  std::mt19937_64 rng(5);
  for (int k = 0; k < 20; ++k) m.train_step(oracle::random_examples(rng, 32, 100, 40));
  int changed = 0;
  for (Id u = 0; u < 100; ++u) {
    m.ensure(Side::user, u);
    const Example ex{u, static_cast<Id>(u % 40), 1.0, 0};
    m.ensure(Side::item, ex.item);
    const double before = m.forward({&ex, 1}, Mode::eval)(0, 0);
    m.expand(Side::user, u);
    changed += std::abs(before - m.forward({&ex, 1}, Mode::eval)(0, 0)) > 1e-3;
  }
  CHECK(changed >= 90);
}

TEST_CASE("temporary evaluation is pure") {
  ModelConfig cfg;
  cfg.ladder = SizeLadder({2, 4, 8});
  cfg.hidden = 8;
  AdaptiveModel m(cfg);
  std::mt19937_64 rng(9);
  for (int k = 0; k < 5; ++k) m.train_step(oracle::random_examples(rng, 16, 10, 10));
  const Example ex{3, 4, 1.0, 0};
  m.ensure(Side::user, 3);
  m.ensure(Side::item, 4);
  const auto sum = m.checksum();
  const double pred = m.forward({&ex, 1}, Mode::eval)(0, 0);

  const auto same = m.temp_evaluate(ex, false, Side::user);
  CHECK(same.old_loss == same.new_loss);
  const auto a = m.temp_evaluate(ex, true, Side::user);
  const auto b = m.temp_evaluate(ex, true, Side::user);
  CHECK(a.old_loss == b.old_loss);
  CHECK(a.new_loss == b.new_loss);
  CHECK(a.old_loss == same.old_loss);
  const auto both = m.temp_evaluate_both(ex);
  CHECK(both.old_loss == a.old_loss);
  CHECK(both.new_loss_user == a.new_loss);
  CHECK(both.new_loss_item == m.temp_evaluate(ex, true, Side::item).new_loss);
  CHECK(m.checksum() == sum);
  CHECK(m.forward({&ex, 1}, Mode::eval)(0, 0) == pred);

  m.expand(Side::user, 3);
  m.expand(Side::user, 3);
  const auto top = m.temp_evaluate(ex, true, Side::user);
  CHECK(top.new_loss == top.old_loss);
  CHECK(m.temp_evaluate_both(ex).new_loss_user == top.old_loss);
}

TEST_CASE("batch norm outputs are standardized in train mode") {
  ModelConfig cfg;
  cfg.ladder = SizeLadder({2, 4, 8});
  cfg.hidden = 16;
  AdaptiveModel m(cfg);
  std::mt19937_64 rng(17);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto batch = oracle::random_examples(rng, 64, 200, 200);
  for (const auto& ex : batch)
    for (auto [side, id] : {std::pair{Side::user, ex.user}, std::pair{Side::item, ex.item}}) {
      if (m.contains(side, id)) continue;
      Eigen::VectorXd v(8);
      for (auto& x : v) x = normal(rng);
      m.set_embedding(side, id, 2, v);
    }
  const auto tr = m.trace(batch, Mode::train);
  int layer = 0;
  for (const Eigen::MatrixXd* hat : {&tr.user_hat, &tr.item_hat, &tr.h1_hat, &tr.h2_hat}) {
    REQUIRE(hat->cols() == 64);
    ++layer;
    for (Eigen::Index r = 0; r < hat->rows(); ++r) {
      INFO("layer " << layer << " channel " << r);
      const double mean = hat->row(r).mean();
      const double var = (hat->row(r).array() - mean).square().mean();
      CHECK(std::abs(mean) < 1e-6);
      CHECK(std::abs(var - 1.0) < 1e-4);
    }
  }
}

TEST_CASE("batch norm on lifted embeddings follows v / (v + eps)") {
  ModelConfig cfg;
  cfg.ladder = SizeLadder({2, 4, 8});
  cfg.hidden = 8;
  cfg.head = Head::mf;
  AdaptiveModel m(cfg);
  std::mt19937_64 rng(17);
  oracle::randomize_chain(m, rng);
  const auto batch = oracle::random_examples(rng, 40, 200, 200);
  for (const auto& ex : batch) {
    m.ensure(Side::user, ex.user);
    m.ensure(Side::item, ex.item);
    if (ex.user % 3 == 0 && m.rung(Side::user, ex.user) == 0) m.expand(Side::user, ex.user);
  }
  // lift every user vector to the top size by hand
  Eigen::MatrixXd top(8, static_cast<Eigen::Index>(batch.size()));
  for (std::size_t c = 0; c < batch.size(); ++c) {
    Eigen::VectorXd e = m.embedding(Side::user, batch[c].user);
    for (int k = m.rung(Side::user, batch[c].user); k < m.ladder().top(); ++k) {
      const auto w = view(m, "chain_W" + std::to_string(k)).value;
      const auto b = view(m, "chain_b" + std::to_string(k)).value;
      const auto rows = m.ladder().size(k + 1);
      e = Eigen::Map<const Eigen::MatrixXd>(w.data(), rows, e.size()) * e +
          Eigen::Map<const Eigen::VectorXd>(b.data(), rows);
    }
    top.col(static_cast<Eigen::Index>(c)) = e;
  }
  const auto tr = m.trace(batch, Mode::train);
  for (Eigen::Index r = 0; r < 8; ++r) {
    const double mu = top.row(r).mean();
    const double v = (top.row(r).array() - mu).square().mean();
    const double hat_mean = tr.user_hat.row(r).mean();
    const double hat_var = (tr.user_hat.row(r).array() - hat_mean).square().mean();
    CHECK(std::abs(hat_mean) < 1e-9);
    CHECK(hat_var == doctest::Approx(v / (v + cfg.eps_bn)).epsilon(1e-9));
  }
}

TEST_CASE("training is deterministic and memory only grows") {
  ModelConfig cfg;
  cfg.ladder = SizeLadder({2, 4, 8});
  cfg.hidden = 16;
  cfg.seed = 3;
  auto run = [&](std::vector<double>& losses) {
    AdaptiveModel m(cfg);
    std::mt19937_64 rng(11);
    std::int64_t last = 0;
    for (int k = 0; k < 30; ++k) {
      const auto batch = oracle::random_examples(rng, 20, 30, 30);
      losses.push_back(m.train_step(batch));
      if (k % 7 == 0 && m.rung(Side::user, batch[0].user) < m.ladder().top())
        m.expand(Side::user, batch[0].user);
      CHECK(m.param_count().embedding >= last);
      last = m.param_count().embedding;
    }
    return m.checksum();
  };
  std::vector<double> a, b;
  const auto ca = run(a);
  const auto cb = run(b);
  CHECK(a == b);
  CHECK(ca == cb);
}

TEST_CASE("repeated steps on one batch reduce its loss") {
  for (Task task : {Task::binary, Task::multiclass}) {
    ModelConfig cfg;
    cfg.ladder = SizeLadder({2, 4, 8});
    cfg.hidden = 16;
    cfg.task = task;
    cfg.eta = 0.01;
    AdaptiveModel m(cfg);
    std::mt19937_64 rng(13);
    const auto batch = oracle::random_examples(rng, 32, 10, 10);
    const double first = m.train_step(batch);
    double last = first;
    for (int k = 0; k < 100; ++k) last = m.train_step(batch);
    CHECK(last < 0.8 * first);
  }
}

TEST_CASE("evaluation reports accuracy and loss") {
  ModelConfig cfg;
  cfg.ladder = SizeLadder({2, 4});
  cfg.hidden = 8;
  cfg.task = Task::multiclass;
  AdaptiveModel m(cfg);
  std::mt19937_64 rng(2);
  const auto data = oracle::random_examples(rng, 50, 5, 5);
  const auto r = m.evaluate(data);
  CHECK(r.accuracy >= 0.0);
  CHECK(r.accuracy <= 1.0);
  CHECK(r.loss > 0.0);
  CHECK(m.evaluate({}).loss == 0.0);
}

TEST_CASE("checkpoint round trip") {
  for (Head head : {Head::mlp, Head::mf}) {
    ModelConfig cfg;
    cfg.ladder = SizeLadder({2, 4, 8});
    cfg.hidden = 8;
    cfg.head = head;
    cfg.task = head == Head::mf ? Task::multiclass : Task::binary;
    AdaptiveModel m(cfg);
    std::mt19937_64 rng(4);
    for (int k = 0; k < 5; ++k) m.train_step(oracle::random_examples(rng, 10, 8, 8));
    m.expand(Side::item, 0);
    std::stringstream a;
    m.save(a);
    auto loaded = AdaptiveModel::load(a);
    std::stringstream b;
    loaded.save(b);
    CHECK(a.str() == b.str());
    const auto probe = oracle::random_examples(rng, 10, 8, 8);
    CHECK(loaded.forward(probe, Mode::eval) == m.forward(probe, Mode::eval));
    CHECK(loaded.param_count().total == m.param_count().total);
    CHECK(loaded.rung(Side::item, 0) == 1);
  }
  std::stringstream junk("not a model\n");
  CHECK_THROWS(AdaptiveModel::load(junk));
}
