#include "dess/adaptive_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

#include "dess/text_io.hpp"

namespace dess {

namespace {

// head parameter offsets from head_begin_
enum MlpParam { kBn1Gamma = 0, kBn1Beta, kW1, kC1, kBn2Gamma, kBn2Beta, kW2, kC2, kMlpCount };
enum MfParam { kMfW = 0, kMfC, kMfCount };

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

struct Fnv {
  std::uint64_t h = 1469598103934665603ull;
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 1099511628211ull;
    }
  }
  template <typename T>
  void value(const T& v) { bytes(&v, sizeof(T)); }
  template <typename Derived>
  void dense(const Eigen::DenseBase<Derived>& m) {
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) value(static_cast<double>(m(r, c)));
  }
};

// Training mode normalizes with the batch statistics, evaluation with the running ones.
void bn_forward(const Eigen::MatrixXd& x, Mode mode, const Eigen::VectorXd& running_mean,
                const Eigen::VectorXd& running_var, double eps, Eigen::MatrixXd& hat,
                Eigen::VectorXd& inv_std, Eigen::VectorXd& batch_mean,
                Eigen::VectorXd& batch_var) {
  if (mode == Mode::train) {
    batch_mean = x.rowwise().mean();
    hat = x.colwise() - batch_mean;
    batch_var = hat.array().square().rowwise().mean();
    inv_std = (batch_var.array() + eps).rsqrt();
  } else {
    inv_std = (running_var.array() + eps).rsqrt();
    hat = x.colwise() - running_mean;
  }
  hat.array().colwise() *= inv_std.array();
}

Eigen::MatrixXd bn_backward(const Eigen::MatrixXd& d_hat, const Eigen::MatrixXd& hat,
                            const Eigen::VectorXd& inv_std, Mode mode) {
  Eigen::MatrixXd dx;
  if (mode == Mode::train) {
    const double n = static_cast<double>(d_hat.cols());
    const Eigen::VectorXd sum_d = d_hat.rowwise().sum();
    const Eigen::VectorXd sum_dh = d_hat.cwiseProduct(hat).rowwise().sum();
    dx = n * d_hat;
    dx.colwise() -= sum_d;
    dx.array() -= hat.array().colwise() * sum_dh.array();
    dx.array().colwise() *= (inv_std / n).array();
  } else {
    dx = d_hat;
    dx.array().colwise() *= inv_std.array();
  }
  return dx;
}

void blend_stats(Eigen::VectorXd& running_mean, Eigen::VectorXd& running_var,
                 const Eigen::VectorXd& mean, const Eigen::VectorXd& var, int n, double momentum) {
  running_mean = (1.0 - momentum) * running_mean + momentum * mean;
  if (n > 1) {
    const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
    running_var = (1.0 - momentum) * running_var + momentum * unbias * var;
  }
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Eigen::MatrixXd uniform_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                               double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = dist(rng);
  return m;
}

std::string_view head_name(Head h) { return h == Head::mlp ? "mlp" : "mf"; }
std::string_view task_name(Task t) { return t == Task::binary ? "binary" : "multiclass"; }

}  // namespace

SizeLadder::SizeLadder() : sizes_{2, 4, 8, 16, 64, 128} {}

SizeLadder::SizeLadder(std::vector<int> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw std::invalid_argument("size ladder needs at least two rungs");
  for (int s : sizes_)
    if (s < 1) throw std::invalid_argument("embedding sizes must be positive");
  const bool increasing = std::adjacent_find(sizes_.begin(), sizes_.end(),
                                             std::greater_equal<>()) == sizes_.end();
  const bool fixed = sizes_.size() == 2 && sizes_[0] == sizes_[1];
  if (!increasing && !fixed)
    throw std::invalid_argument("size ladder must be strictly increasing (or [s, s] for fixed)");
}

void ModelConfig::validate() const {
  if (hidden < 1) throw std::invalid_argument("hidden width must be positive");
  if (!(eta > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(l2 >= 0.0)) throw std::invalid_argument("weight decay must be non-negative");
  if (batch < 1) throw std::invalid_argument("batch size must be positive");
  if (epochs < 1) throw std::invalid_argument("epochs must be positive");
  if (!(eps_bn > 0.0)) throw std::invalid_argument("batch-norm epsilon must be positive");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0))
    throw std::invalid_argument("batch-norm momentum must lie in (0, 1]");
  if (!(chain_noise >= 0.0)) throw std::invalid_argument("chain noise must be non-negative");
}

AdaptiveModel::AdaptiveModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(splitmix64(cfg_.seed ^ 0xC4A1'0000'0000'0001ull));
  const auto& ladder = cfg_.ladder;
  const int top = ladder.top_size();

  auto add = [this](std::string name, Eigen::MatrixXd value) {
    Dense p;
    p.name = std::move(name);
    p.grad = Eigen::MatrixXd::Zero(value.rows(), value.cols());
    p.m = p.grad;
    p.v = p.grad;
    p.value = std::move(value);
    params_.push_back(std::move(p));
  };

  for (int k = 0; k < ladder.top(); ++k) {
    const int in = ladder.size(k);
    const int out = ladder.size(k + 1);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(out, in);
    w.topRows(in) = Eigen::MatrixXd::Identity(in, in) + uniform_matrix(rng, in, in, cfg_.chain_noise);
    add("chain_W" + std::to_string(k), std::move(w));
    add("chain_b" + std::to_string(k), Eigen::MatrixXd::Zero(out, 1));
  }

  head_begin_ = static_cast<int>(params_.size());
  const int out = outputs();
  if (cfg_.head == Head::mlp) {
    const int width = 2 * top;
    add("bn1_gamma", Eigen::MatrixXd::Ones(width, 1));
    add("bn1_beta", Eigen::MatrixXd::Zero(width, 1));
    const double b1 = 1.0 / std::sqrt(static_cast<double>(width));
    add("W1", uniform_matrix(rng, cfg_.hidden, width, b1));
    add("c1", uniform_matrix(rng, cfg_.hidden, 1, b1));
    add("bn2_gamma", Eigen::MatrixXd::Ones(cfg_.hidden, 1));
    add("bn2_beta", Eigen::MatrixXd::Zero(cfg_.hidden, 1));
    const double b2 = 1.0 / std::sqrt(static_cast<double>(cfg_.hidden));
    add("W2", uniform_matrix(rng, out, cfg_.hidden, b2));
    add("c2", uniform_matrix(rng, out, 1, b2));
    bn1_ = {Eigen::VectorXd::Zero(width), Eigen::VectorXd::Ones(width)};
    bn2_ = {Eigen::VectorXd::Zero(cfg_.hidden), Eigen::VectorXd::Ones(cfg_.hidden)};
  } else if (cfg_.task == Task::multiclass) {
    // the dot product is a single score; five class logits come from a 1 -> 5 affine map
    add("mf_w", uniform_matrix(rng, out, 1, 1.0));
    add("mf_c", uniform_matrix(rng, out, 1, 1.0));
  }
  for (auto& s : emb_bn_) s = {Eigen::VectorXd::Zero(top), Eigen::VectorXd::Ones(top)};
}

int AdaptiveModel::head_index(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return static_cast<int>(i);
  throw std::out_of_range("no parameter named " + name);
}

// ---------------------------------------------------------------------------
// embedding table

Eigen::VectorXd AdaptiveModel::initial_vector(Side side, Id id, int rung) const {
  std::uint64_t key = splitmix64(cfg_.seed);
  key = splitmix64(key ^ static_cast<std::uint64_t>(index_of(side) + 1));
  key = splitmix64(key ^ static_cast<std::uint64_t>(id));
  key = splitmix64(key ^ static_cast<std::uint64_t>(rung));
  std::mt19937_64 rng(key);
  const int size = cfg_.ladder.size(rung);
  return uniform_matrix(rng, size, 1, 1.0 / std::sqrt(static_cast<double>(size)));
}

Eigen::VectorXd AdaptiveModel::lifted(Side side, Id id, int rung,
                                      const Eigen::VectorXd& value) const {
  if (rung >= cfg_.ladder.top()) throw std::logic_error("cannot expand an id at the top rung");
  if (cfg_.cold_init) return initial_vector(side, id, rung + 1);
  return params_[chain_w(rung)].value * value + params_[chain_b(rung)].value.col(0);
}

bool AdaptiveModel::contains(Side side, Id id) const {
  return table_[index_of(side)].contains(id);
}

void AdaptiveModel::ensure(Side side, Id id) {
  auto& t = table_[index_of(side)];
  if (t.contains(id)) return;
  Slot s;
  s.rung = 0;
  s.value = initial_vector(side, id, 0);
  s.grad = Eigen::VectorXd::Zero(s.value.size());
  s.m = s.grad;
  s.v = s.grad;
  t.emplace(id, std::move(s));
}

int AdaptiveModel::rung(Side side, Id id) const {
  return table_[index_of(side)].at(id).rung;
}

const Eigen::VectorXd& AdaptiveModel::embedding(Side side, Id id) const {
  return table_[index_of(side)].at(id).value;
}

void AdaptiveModel::set_embedding(Side side, Id id, int rung, Eigen::VectorXd value) {
  if (rung < 0 || rung > cfg_.ladder.top() || value.size() != cfg_.ladder.size(rung))
    throw std::invalid_argument("set_embedding: rung/size mismatch");
  ensure(side, id);
  auto& s = table_[index_of(side)].at(id);
  s.rung = rung;
  s.value = std::move(value);
  s.grad = Eigen::VectorXd::Zero(s.value.size());
  s.m = s.grad;
  s.v = s.grad;
  s.steps = 0;
}

void AdaptiveModel::expand(Side side, Id id) {
  auto& s = table_[index_of(side)].at(id);
  s.value = lifted(side, id, s.rung, s.value);
  ++s.rung;
  s.grad = Eigen::VectorXd::Zero(s.value.size());
  s.m = s.grad;
  s.v = s.grad;
  s.steps = 0;
}

ParamCount AdaptiveModel::param_count() const {
  ParamCount c;
  for (const auto& t : table_)
    for (const auto& [id, s] : t) c.embedding += s.value.size();
  c.total = c.embedding;
  for (const auto& p : params_) c.total += p.value.size();
  return c;
}

AdaptiveModel::Resolved AdaptiveModel::resolve(std::span<const Example> batch,
                                               std::vector<Eigen::VectorXd>& transient) const {
  Resolved r;
  transient.clear();
  transient.reserve(2 * batch.size());
  for (int s = 0; s < 2; ++s) {
    r.rung[s].resize(batch.size());
    r.vec[s].resize(batch.size());
  }
  for (std::size_t j = 0; j < batch.size(); ++j) {
    for (int s = 0; s < 2; ++s) {
      const Id id = s == 0 ? batch[j].user : batch[j].item;
      const auto& t = table_[s];
      if (auto it = t.find(id); it != t.end()) {
        r.rung[s][j] = it->second.rung;
        r.vec[s][j] = &it->second.value;
      } else {
        transient.push_back(initial_vector(static_cast<Side>(s), id, 0));
        r.rung[s][j] = 0;
        r.vec[s][j] = &transient.back();
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// forward / backward

Eigen::MatrixXd AdaptiveModel::forward_side(Side side, const Resolved& in, Mode mode,
                                            SideCache& c) const {
  const int si = index_of(side);
  const auto& rungs = in.rung[si];
  const auto& vecs = in.vec[si];
  const int n = static_cast<int>(rungs.size());
  const int top = cfg_.ladder.top();

  c.order.resize(n);
  std::iota(c.order.begin(), c.order.end(), 0);
  std::stable_sort(c.order.begin(), c.order.end(),
                   [&](int a, int b) { return rungs[a] < rungs[b]; });
  c.min_rung = rungs[c.order[0]];
  c.levels.assign(top - c.min_rung + 1, Eigen::MatrixXd());
  c.carried.assign(top - c.min_rung + 1, 0);

  // Sorted by rung, the columns of Z_k are a prefix of `order`: the first
  // `carried` columns are lifted from Z_{k-1}, the rest are rung-k embeddings.
  int next = 0;
  for (int k = c.min_rung; k <= top; ++k) {
    const int level = k - c.min_rung;
    const int carried = level == 0 ? 0 : static_cast<int>(c.levels[level - 1].cols());
    int fresh = 0;
    while (next + fresh < n && rungs[c.order[next + fresh]] == k) ++fresh;
    Eigen::MatrixXd z(cfg_.ladder.size(k), carried + fresh);
    if (carried > 0) {
      z.leftCols(carried).noalias() = params_[chain_w(k - 1)].value * c.levels[level - 1];
      z.leftCols(carried).colwise() += params_[chain_b(k - 1)].value.col(0);
    }
    for (int j = 0; j < fresh; ++j) {
      const auto* v = vecs[c.order[next + j]];
      if (v->size() != z.rows()) throw std::logic_error("embedding length does not match its rung");
      z.col(carried + j) = *v;
    }
    next += fresh;
    c.carried[level] = carried;
    c.levels[level] = std::move(z);
  }

  Eigen::MatrixXd pre(cfg_.ladder.top_size(), n);
  const auto& last = c.levels.back();
  for (int j = 0; j < n; ++j) pre.col(c.order[j]) = last.col(j);

  if (!cfg_.embedding_norm) {
    c.out = pre;
    return c.out;
  }
  bn_forward(pre, mode, emb_bn_[si].mean, emb_bn_[si].var, cfg_.eps_bn, c.hat, c.inv_std,
             c.batch_mean, c.batch_var);
  c.out = c.hat.array().tanh().matrix();
  return c.out;
}

Eigen::MatrixXd AdaptiveModel::run_forward(const Resolved& in, Mode mode, Cache& cache) const {
  cache.mode = mode;
  const Eigen::MatrixXd& u = forward_side(Side::user, in, mode, cache.side[0]);
  const Eigen::MatrixXd& i = forward_side(Side::item, in, mode, cache.side[1]);
  const Eigen::Index n = u.cols();

  if (cfg_.head == Head::mf) {
    cache.score = u.cwiseProduct(i).colwise().sum();
    if (cfg_.task == Task::binary) return cache.score;
    const auto& w = params_[head_begin_ + kMfW].value;
    const auto& b = params_[head_begin_ + kMfC].value;
    Eigen::MatrixXd y = w * cache.score;
    y.colwise() += b.col(0);
    return y;
  }

  const auto& p = params_;
  const int h = head_begin_;
  Eigen::MatrixXd x(u.rows() + i.rows(), n);
  x.topRows(u.rows()) = u;
  x.bottomRows(i.rows()) = i;
  bn_forward(x, mode, bn1_.mean, bn1_.var, cfg_.eps_bn, cache.h1_hat, cache.inv1, cache.mean1,
             cache.var1);
  cache.h1 = cache.h1_hat;
  cache.h1.array().colwise() *= p[h + kBn1Gamma].value.col(0).array();
  cache.h1.colwise() += p[h + kBn1Beta].value.col(0);

  Eigen::MatrixXd a2 = p[h + kW1].value * cache.h1;
  a2.colwise() += p[h + kC1].value.col(0);
  bn_forward(a2, mode, bn2_.mean, bn2_.var, cfg_.eps_bn, cache.h2_hat, cache.inv2, cache.mean2,
             cache.var2);
  Eigen::MatrixXd h2 = cache.h2_hat;
  h2.array().colwise() *= p[h + kBn2Gamma].value.col(0).array();
  h2.colwise() += p[h + kBn2Beta].value.col(0);
  cache.t2 = h2.array().tanh().matrix();

  Eigen::MatrixXd y = p[h + kW2].value * cache.t2;
  y.colwise() += p[h + kC2].value.col(0);
  return y;
}

void AdaptiveModel::backward_side(const SideCache& c, Mode mode, const Eigen::MatrixXd& d_out,
                                  std::vector<Eigen::MatrixXd>* dense_grads,
                                  std::vector<Eigen::VectorXd>& d_emb) const {
  Eigen::MatrixXd d_pre;
  if (cfg_.embedding_norm) {
    const Eigen::MatrixXd d_hat = d_out.cwiseProduct((1.0 - c.out.array().square()).matrix());
    d_pre = bn_backward(d_hat, c.hat, c.inv_std, mode);
  } else {
    d_pre = d_out;
  }

  const int n = static_cast<int>(c.order.size());
  d_emb.assign(n, Eigen::VectorXd());
  Eigen::MatrixXd dz(d_pre.rows(), n);
  for (int j = 0; j < n; ++j) dz.col(j) = d_pre.col(c.order[j]);

  for (int level = static_cast<int>(c.levels.size()) - 1; level >= 0; --level) {
    const int carried = c.carried[level];
    for (Eigen::Index j = carried; j < dz.cols(); ++j) d_emb[c.order[j]] = dz.col(j);
    if (level == 0) break;
    const int k = c.min_rung + level;  // Z_k = W_{k-1} Z_{k-1} + b_{k-1}
    const auto left = dz.leftCols(carried);
    if (dense_grads != nullptr) {
      (*dense_grads)[chain_w(k - 1)].noalias() += left * c.levels[level - 1].transpose();
      (*dense_grads)[chain_b(k - 1)] += left.rowwise().sum();
    }
    Eigen::MatrixXd next = params_[chain_w(k - 1)].value.transpose() * left;
    dz = std::move(next);
  }
}

void AdaptiveModel::run_backward(const Cache& cache, const Eigen::MatrixXd& dy,
                                 std::vector<Eigen::MatrixXd>* dense_grads,
                                 EmbeddingGrads& d_emb) const {
  const auto& u = cache.side[0].out;
  const auto& i = cache.side[1].out;
  Eigen::MatrixXd du, di;

  if (cfg_.head == Head::mf) {
    Eigen::RowVectorXd d_score;
    if (cfg_.task == Task::binary) {
      d_score = dy;
    } else {
      const auto& w = params_[head_begin_ + kMfW].value;
      if (dense_grads != nullptr) {
        (*dense_grads)[head_begin_ + kMfW] += dy * cache.score.transpose();
        (*dense_grads)[head_begin_ + kMfC] += dy.rowwise().sum();
      }
      d_score = w.transpose() * dy;
    }
    du = i.array().rowwise() * d_score.array();
    di = u.array().rowwise() * d_score.array();
  } else {
    const auto& p = params_;
    const int h = head_begin_;
    const Mode mode = cache.mode;
    if (dense_grads != nullptr) {
      (*dense_grads)[h + kW2].noalias() += dy * cache.t2.transpose();
      (*dense_grads)[h + kC2] += dy.rowwise().sum();
    }
    Eigen::MatrixXd d_h2 = p[h + kW2].value.transpose() * dy;
    d_h2.array() *= 1.0 - cache.t2.array().square();
    if (dense_grads != nullptr) {
      (*dense_grads)[h + kBn2Gamma] += d_h2.cwiseProduct(cache.h2_hat).rowwise().sum();
      (*dense_grads)[h + kBn2Beta] += d_h2.rowwise().sum();
    }
    d_h2.array().colwise() *= p[h + kBn2Gamma].value.col(0).array();
    const Eigen::MatrixXd d_a2 = bn_backward(d_h2, cache.h2_hat, cache.inv2, mode);
    if (dense_grads != nullptr) {
      (*dense_grads)[h + kW1].noalias() += d_a2 * cache.h1.transpose();
      (*dense_grads)[h + kC1] += d_a2.rowwise().sum();
    }
    Eigen::MatrixXd d_h1 = p[h + kW1].value.transpose() * d_a2;
    if (dense_grads != nullptr) {
      (*dense_grads)[h + kBn1Gamma] += d_h1.cwiseProduct(cache.h1_hat).rowwise().sum();
      (*dense_grads)[h + kBn1Beta] += d_h1.rowwise().sum();
    }
    d_h1.array().colwise() *= p[h + kBn1Gamma].value.col(0).array();
    const Eigen::MatrixXd d_x = bn_backward(d_h1, cache.h1_hat, cache.inv1, mode);
    du = d_x.topRows(u.rows());
    di = d_x.bottomRows(i.rows());
  }
  backward_side(cache.side[0], cache.mode, du, dense_grads, d_emb[0]);
  backward_side(cache.side[1], cache.mode, di, dense_grads, d_emb[1]);
}

double AdaptiveModel::task_loss(const Eigen::MatrixXd& y, std::span<const Example> batch,
                                Eigen::MatrixXd* dy) const {
  const Eigen::Index n = y.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  if (dy != nullptr) dy->resize(y.rows(), n);
  double total = 0.0;
  if (cfg_.task == Task::binary) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double p = sigmoid(y(0, j));
      const double err = p - batch[j].label;
      total += err * err;
      if (dy != nullptr) (*dy)(0, j) = 2.0 * err * p * (1.0 - p) * inv_n;
    }
  } else {
    for (Eigen::Index j = 0; j < n; ++j) {
      const Eigen::VectorXd z = y.col(j).array() - y.col(j).maxCoeff();
      const double log_sum = std::log(z.array().exp().sum());
      const int cls = batch[j].cls;
      if (cls < 0 || cls >= 5) throw std::invalid_argument("class label out of range");
      total += log_sum - z(cls);
      if (dy != nullptr) {
        dy->col(j) = (z.array() - log_sum).exp() * inv_n;
        (*dy)(cls, j) -= inv_n;
      }
    }
  }
  return total * inv_n;
}

void AdaptiveModel::update_running_stats(const Cache& cache, int batch_size) {
  const double mom = cfg_.bn_momentum;
  if (cfg_.embedding_norm) {
    for (int s = 0; s < 2; ++s)
      blend_stats(emb_bn_[s].mean, emb_bn_[s].var, cache.side[s].batch_mean,
                  cache.side[s].batch_var, batch_size, mom);
  }
  if (cfg_.head == Head::mlp) {
    blend_stats(bn1_.mean, bn1_.var, cache.mean1, cache.var1, batch_size, mom);
    blend_stats(bn2_.mean, bn2_.var, cache.mean2, cache.var2, batch_size, mom);
  }
}

void AdaptiveModel::adam(Eigen::Ref<Eigen::MatrixXd> value, const Eigen::MatrixXd& grad,
                         Eigen::MatrixXd& m, Eigen::MatrixXd& v, std::int64_t t) const {
  const Eigen::MatrixXd g = grad + cfg_.l2 * value;
  m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
  v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t));
  value.array() -= cfg_.eta * (m.array() / c1) / ((v.array() / c2).sqrt() + kAdamEps);
}

// ---------------------------------------------------------------------------
// public passes

Eigen::MatrixXd AdaptiveModel::forward(std::span<const Example> batch, Mode mode) const {
  if (batch.empty()) return Eigen::MatrixXd(outputs(), 0);
  std::vector<Eigen::VectorXd> transient;
  const Resolved in = resolve(batch, transient);
  Cache cache;
  return run_forward(in, mode, cache);
}

ForwardTrace AdaptiveModel::trace(std::span<const Example> batch, Mode mode) const {
  std::vector<Eigen::VectorXd> transient;
  const Resolved in = resolve(batch, transient);
  Cache cache;
  ForwardTrace t;
  t.output = run_forward(in, mode, cache);
  t.user_hat = cache.side[0].hat;
  t.item_hat = cache.side[1].hat;
  t.h1_hat = cache.h1_hat;
  t.h2_hat = cache.h2_hat;
  return t;
}

double AdaptiveModel::loss(std::span<const Example> batch, Mode mode) const {
  const Eigen::MatrixXd y = forward(batch, mode);
  return task_loss(y, batch, nullptr);
}

double AdaptiveModel::loss_and_gradients(std::span<const Example> batch, Mode mode) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  for (const auto& ex : batch)
    if (!contains(Side::user, ex.user) || !contains(Side::item, ex.item))
      throw std::invalid_argument("loss_and_gradients: ids must exist");
  std::vector<Eigen::VectorXd> transient;
  const Resolved in = resolve(batch, transient);
  Cache cache;
  const Eigen::MatrixXd y = run_forward(in, mode, cache);
  Eigen::MatrixXd dy;
  const double value = task_loss(y, batch, &dy);

  std::vector<Eigen::MatrixXd> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) grads.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
  EmbeddingGrads d_emb;
  run_backward(cache, dy, &grads, d_emb);

  for (std::size_t k = 0; k < params_.size(); ++k) params_[k].grad = std::move(grads[k]);
  for (auto& t : table_)
    for (auto& [id, s] : t) s.grad.setZero(s.value.size());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    table_[0].at(batch[j].user).grad += d_emb[0][j];
    table_[1].at(batch[j].item).grad += d_emb[1][j];
  }
  return value;
}

double AdaptiveModel::train_step(std::span<const Example> batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  for (const auto& ex : batch) {
    ensure(Side::user, ex.user);
    ensure(Side::item, ex.item);
  }
  std::vector<Eigen::VectorXd> transient;
  const Resolved in = resolve(batch, transient);
  Cache cache;
  const Eigen::MatrixXd y = run_forward(in, Mode::train, cache);
  Eigen::MatrixXd dy;
  const double value = task_loss(y, batch, &dy);

  std::vector<Eigen::MatrixXd> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) grads.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
  EmbeddingGrads d_emb;
  run_backward(cache, dy, &grads, d_emb);
  update_running_stats(cache, static_cast<int>(batch.size()));

  ++dense_steps_;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    p.grad = std::move(grads[k]);
    adam(p.value, p.grad, p.m, p.v, dense_steps_);
  }

  // Sparse update: each id present in the batch takes one step with its summed gradient.
  for (int s = 0; s < 2; ++s) {
    std::vector<Id> touched;
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const Id id = s == 0 ? batch[j].user : batch[j].item;
      auto& slot = table_[s].at(id);
      if (slot.steps >= 0) {
        slot.grad = d_emb[s][j];
        slot.steps = -slot.steps - 1;  // mark as touched, remembering the count
        touched.push_back(id);
      } else {
        slot.grad += d_emb[s][j];
      }
    }
    for (Id id : touched) {
      auto& slot = table_[s].at(id);
      slot.steps = -slot.steps;
      Eigen::Map<Eigen::MatrixXd> value(slot.value.data(), slot.value.size(), 1);
      Eigen::MatrixXd m = slot.m;
      Eigen::MatrixXd v = slot.v;
      adam(value, slot.grad, m, v, slot.steps);
      slot.m = m.col(0);
      slot.v = v.col(0);
    }
  }
  return value;
}

EvalResult AdaptiveModel::evaluate(std::span<const Example> examples) const {
  EvalResult r;
  if (examples.empty()) return r;
  double loss_sum = 0.0;
  std::int64_t correct = 0;
  const std::size_t chunk = static_cast<std::size_t>(cfg_.batch);
  for (std::size_t start = 0; start < examples.size(); start += chunk) {
    const auto part = examples.subspan(start, std::min(chunk, examples.size() - start));
    const Eigen::MatrixXd y = forward(part, Mode::eval);
    loss_sum += task_loss(y, part, nullptr) * static_cast<double>(part.size());
    for (std::size_t j = 0; j < part.size(); ++j) {
      if (cfg_.task == Task::binary) {
        const bool predicted = sigmoid(y(0, static_cast<Eigen::Index>(j))) >= 0.5;
        correct += predicted == (part[j].label >= 0.5);
      } else {
        Eigen::Index best = 0;
        y.col(static_cast<Eigen::Index>(j)).maxCoeff(&best);
        correct += best == part[j].cls;
      }
    }
  }
  r.loss = loss_sum / static_cast<double>(examples.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
  return r;
}

// ---------------------------------------------------------------------------
// temporary structure evaluation

double AdaptiveModel::single_step_loss(const Example& ex, std::array<int, 2> rungs,
                                       std::array<Eigen::VectorXd, 2> vecs) const {
  const std::span<const Example> batch(&ex, 1);
  Resolved in;
  for (int s = 0; s < 2; ++s) {
    in.rung[s] = {rungs[s]};
    in.vec[s] = {&vecs[s]};
  }
  Cache cache;
  const Eigen::MatrixXd y = run_forward(in, Mode::eval, cache);
  Eigen::MatrixXd dy;
  task_loss(y, batch, &dy);
  EmbeddingGrads d_emb;
  run_backward(cache, dy, nullptr, d_emb);
  for (int s = 0; s < 2; ++s) vecs[s] -= cfg_.eta * d_emb[s][0];
  const Eigen::MatrixXd y_after = run_forward(in, Mode::eval, cache);
  return task_loss(y_after, batch, nullptr);
}

LossPair AdaptiveModel::temp_evaluate(const Example& ex, bool proposed_increase, Side side) const {
  std::vector<Eigen::VectorXd> transient;
  const Resolved in = resolve(std::span<const Example>(&ex, 1), transient);
  const std::array<int, 2> rungs{in.rung[0][0], in.rung[1][0]};
  const std::array<Eigen::VectorXd, 2> vecs{*in.vec[0][0], *in.vec[1][0]};

  const double old_loss = single_step_loss(ex, rungs, vecs);
  const int s = index_of(side);
  if (!proposed_increase || rungs[s] >= cfg_.ladder.top()) return {old_loss, old_loss};

  auto grown_rungs = rungs;
  auto grown = vecs;
  const Id id = side == Side::user ? ex.user : ex.item;
  grown[s] = lifted(side, id, rungs[s], vecs[s]);
  ++grown_rungs[s];
  return {old_loss, single_step_loss(ex, grown_rungs, std::move(grown))};
}

TempOutcome AdaptiveModel::temp_evaluate_both(const Example& ex) const {
  std::vector<Eigen::VectorXd> transient;
  const Resolved in = resolve(std::span<const Example>(&ex, 1), transient);
  const std::array<int, 2> rungs{in.rung[0][0], in.rung[1][0]};
  const std::array<Eigen::VectorXd, 2> vecs{*in.vec[0][0], *in.vec[1][0]};

  TempOutcome out;
  out.old_loss = single_step_loss(ex, rungs, vecs);
  double* targets[2] = {&out.new_loss_user, &out.new_loss_item};
  for (int s = 0; s < 2; ++s) {
    if (rungs[s] >= cfg_.ladder.top()) {
      *targets[s] = out.old_loss;
      continue;
    }
    auto grown_rungs = rungs;
    auto grown = vecs;
    const Side side = static_cast<Side>(s);
    grown[s] = lifted(side, s == 0 ? ex.user : ex.item, rungs[s], vecs[s]);
    ++grown_rungs[s];
    *targets[s] = single_step_loss(ex, grown_rungs, std::move(grown));
  }
  return out;
}

// ---------------------------------------------------------------------------
// inspection and persistence

std::vector<ParamView> AdaptiveModel::parameters() {
  std::vector<ParamView> views;
  for (auto& p : params_)
    views.push_back({p.name, std::span<double>(p.value.data(), static_cast<std::size_t>(p.value.size())),
                     std::span<const double>(p.grad.data(), static_cast<std::size_t>(p.grad.size()))});
  for (int s = 0; s < 2; ++s) {
    std::vector<Id> ids;
    for (const auto& [id, slot] : table_[s]) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    for (Id id : ids) {
      auto& slot = table_[s].at(id);
      views.push_back({std::string(to_string(static_cast<Side>(s))) + "_emb_" + std::to_string(id),
                       std::span<double>(slot.value.data(), static_cast<std::size_t>(slot.value.size())),
                       std::span<const double>(slot.grad.data(), static_cast<std::size_t>(slot.grad.size()))});
    }
  }
  return views;
}

std::uint64_t AdaptiveModel::checksum() const {
  Fnv f;
  for (const auto& p : params_) {
    f.dense(p.value);
    f.dense(p.m);
    f.dense(p.v);
  }
  for (const auto& s : emb_bn_) {
    f.dense(s.mean);
    f.dense(s.var);
  }
  f.dense(bn1_.mean);
  f.dense(bn1_.var);
  f.dense(bn2_.mean);
  f.dense(bn2_.var);
  f.value(dense_steps_);
  for (int s = 0; s < 2; ++s) {
    std::vector<Id> ids;
    for (const auto& [id, slot] : table_[s]) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    for (Id id : ids) {
      const auto& slot = table_[s].at(id);
      f.value(id);
      f.value(slot.rung);
      f.value(slot.steps);
      f.dense(slot.value);
      f.dense(slot.m);
      f.dense(slot.v);
    }
  }
  return f.h;
}

void AdaptiveModel::save(std::ostream& out) const {
  out << "adaptive_model 1\n";
  out << "head " << head_name(cfg_.head) << '\n';
  out << "task " << task_name(cfg_.task) << '\n';
  out << "ladder " << cfg_.ladder.sizes().size();
  for (int s : cfg_.ladder.sizes()) out << ' ' << s;
  out << '\n';
  text::write_field(out, "hidden", std::int64_t{cfg_.hidden});
  text::write_field(out, "eta", cfg_.eta);
  text::write_field(out, "l2", cfg_.l2);
  text::write_field(out, "batch", std::int64_t{cfg_.batch});
  text::write_field(out, "epochs", std::int64_t{cfg_.epochs});
  text::write_field(out, "eps_bn", cfg_.eps_bn);
  text::write_field(out, "bn_momentum", cfg_.bn_momentum);
  text::write_field(out, "cold_init", std::int64_t{cfg_.cold_init});
  text::write_field(out, "embedding_norm", std::int64_t{cfg_.embedding_norm});
  text::write_field(out, "chain_noise", cfg_.chain_noise);
  out << "seed " << cfg_.seed << '\n';
  for (const auto& p : params_) text::write_matrix(out, p.name, p.value);
  text::write_vector(out, "bn_user_mean", emb_bn_[0].mean);
  text::write_vector(out, "bn_user_var", emb_bn_[0].var);
  text::write_vector(out, "bn_item_mean", emb_bn_[1].mean);
  text::write_vector(out, "bn_item_var", emb_bn_[1].var);
  if (cfg_.head == Head::mlp) {
    text::write_vector(out, "bn1_mean", bn1_.mean);
    text::write_vector(out, "bn1_var", bn1_.var);
    text::write_vector(out, "bn2_mean", bn2_.mean);
    text::write_vector(out, "bn2_var", bn2_.var);
  }
  for (int s = 0; s < 2; ++s) {
    std::vector<Id> ids;
    for (const auto& [id, slot] : table_[s]) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    out << "ids " << to_string(static_cast<Side>(s)) << ' ' << ids.size() << '\n';
    for (Id id : ids) {
      const auto& slot = table_[s].at(id);
      out << "emb " << id << ' ' << slot.rung << ' ' << slot.value.size();
      for (Eigen::Index k = 0; k < slot.value.size(); ++k)
        out << ' ' << text::format_double(slot.value(k));
      out << '\n';
    }
  }
}

AdaptiveModel AdaptiveModel::load(std::istream& in) {
  const auto header = text::read_field(in, "adaptive_model");
  if (header.size() != 1 || header[0] != "1") throw std::runtime_error("unsupported model checkpoint");
  ModelConfig cfg;
  const auto head = text::read_field(in, "head");
  const auto task = text::read_field(in, "task");
  if (head.size() != 1 || (head[0] != "mlp" && head[0] != "mf"))
    throw std::runtime_error("model checkpoint: bad head");
  if (task.size() != 1 || (task[0] != "binary" && task[0] != "multiclass"))
    throw std::runtime_error("model checkpoint: bad task");
  cfg.head = head[0] == "mlp" ? Head::mlp : Head::mf;
  cfg.task = task[0] == "binary" ? Task::binary : Task::multiclass;
  const auto ladder = text::read_field(in, "ladder");
  if (ladder.empty()) throw std::runtime_error("model checkpoint: bad ladder");
  std::vector<int> sizes;
  for (std::size_t k = 1; k < ladder.size(); ++k)
    sizes.push_back(static_cast<int>(text::parse_int(ladder[k])));
  if (sizes.size() != static_cast<std::size_t>(text::parse_int(ladder[0])))
    throw std::runtime_error("model checkpoint: ladder length mismatch");
  cfg.ladder = SizeLadder(std::move(sizes));
  cfg.hidden = static_cast<int>(text::read_int(in, "hidden"));
  cfg.eta = text::read_double(in, "eta");
  cfg.l2 = text::read_double(in, "l2");
  cfg.batch = static_cast<int>(text::read_int(in, "batch"));
  cfg.epochs = static_cast<int>(text::read_int(in, "epochs"));
  cfg.eps_bn = text::read_double(in, "eps_bn");
  cfg.bn_momentum = text::read_double(in, "bn_momentum");
  cfg.cold_init = text::read_int(in, "cold_init") != 0;
  cfg.embedding_norm = text::read_int(in, "embedding_norm") != 0;
  cfg.chain_noise = text::read_double(in, "chain_noise");
  const auto seed = text::read_field(in, "seed");
  if (seed.size() != 1) throw std::runtime_error("model checkpoint: bad seed");
  cfg.seed = std::stoull(seed[0]);

  AdaptiveModel model(cfg);
  for (auto& p : model.params_) {
    Eigen::MatrixXd v = text::read_matrix(in, p.name);
    if (v.rows() != p.value.rows() || v.cols() != p.value.cols())
      throw std::runtime_error("model checkpoint: shape mismatch for " + p.name);
    p.value = std::move(v);
  }
  model.emb_bn_[0].mean = text::read_vector(in, "bn_user_mean");
  model.emb_bn_[0].var = text::read_vector(in, "bn_user_var");
  model.emb_bn_[1].mean = text::read_vector(in, "bn_item_mean");
  model.emb_bn_[1].var = text::read_vector(in, "bn_item_var");
  if (cfg.head == Head::mlp) {
    model.bn1_.mean = text::read_vector(in, "bn1_mean");
    model.bn1_.var = text::read_vector(in, "bn1_var");
    model.bn2_.mean = text::read_vector(in, "bn2_mean");
    model.bn2_.var = text::read_vector(in, "bn2_var");
  }
  for (int s = 0; s < 2; ++s) {
    const auto ids = text::read_field(in, "ids");
    if (ids.size() != 2 || ids[0] != to_string(static_cast<Side>(s)))
      throw std::runtime_error("model checkpoint: bad id section");
    const auto count = text::parse_int(ids[1]);
    for (std::int64_t k = 0; k < count; ++k) {
      const auto tok = text::read_field(in, "emb");
      if (tok.size() < 3) throw std::runtime_error("model checkpoint: bad embedding row");
      const Id id = text::parse_int(tok[0]);
      const int r = static_cast<int>(text::parse_int(tok[1]));
      const auto len = text::parse_int(tok[2]);
      if (static_cast<std::size_t>(len) + 3 != tok.size())
        throw std::runtime_error("model checkpoint: embedding length mismatch");
      Eigen::VectorXd v(len);
      for (std::int64_t e = 0; e < len; ++e) v(e) = text::parse_double(tok[3 + e]);
      model.set_embedding(static_cast<Side>(s), id, r, std::move(v));
    }
  }
  return model;
}

}  // namespace dess
