#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "dess/types.hpp"

namespace dess {

enum class Head { mlp, mf };
enum class Task { binary, multiclass };
enum class Mode { train, eval };

/// Candidate embedding sizes s_0 < s_1 < ... < s_n. A two-rung ladder of equal
/// sizes [s, s] is also accepted and denotes a fixed-size model.
class SizeLadder {
 public:
  SizeLadder();  // {2, 4, 8, 16, 64, 128}
  explicit SizeLadder(std::vector<int> sizes);
  static SizeLadder fixed(int size) { return SizeLadder({size, size}); }

  int size(int rung) const { return sizes_.at(static_cast<std::size_t>(rung)); }
  int top() const { return static_cast<int>(sizes_.size()) - 1; }
  int top_size() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }

 private:
  std::vector<int> sizes_;
};

struct ModelConfig {
  SizeLadder ladder;
  Head head = Head::mlp;
  Task task = Task::binary;
  int hidden = 512;
  double eta = 0.001;
  double l2 = 0.001;
  int batch = 500;
  int epochs = 1;  // passes over each training segment
  double eps_bn = 1e-5;
  double bn_momentum = 0.1;
  bool cold_init = false;       // random instead of warm initialization on expand
  bool embedding_norm = true;   // batch norm + tanh after the chain
  double chain_noise = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Example {
  Id user;
  Id item;
  double label;  // binary target in {0, 1}
  int cls;       // multiclass target in [0, 5)
};

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

struct ParamCount {
  std::int64_t embedding = 0;
  std::int64_t total = 0;
};

struct LossPair {
  double old_loss;
  double new_loss;
};

/// Losses after one isolated embedding step for the current structure and for
/// each side's one-rung expansion.
struct TempOutcome {
  double old_loss;
  double new_loss_user;
  double new_loss_item;
};

/// Mutable view of one parameter block and its gradient, for gradient checking.
struct ParamView {
  std::string name;
  std::span<double> value;
  std::span<const double> grad;
};

/// Normalized (pre-tanh) activations of every batch-norm layer for one forward pass.
struct ForwardTrace {
  Eigen::MatrixXd user_hat;
  Eigen::MatrixXd item_hat;
  Eigen::MatrixXd h1_hat;  // empty for the mf head
  Eigen::MatrixXd h2_hat;  // empty for the mf head
  Eigen::MatrixXd output;
};

/// Recommendation model whose user and item embeddings each sit on one rung
/// of a size ladder. Rung-i embeddings are lifted to s_n by the shared chain
/// W_{i,i+1} E + b_i, ..., normalized with batch norm + tanh, and fed to an
/// MLP or dot-product head. Gradients are computed analytically.
class AdaptiveModel {
 public:
  explicit AdaptiveModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  const SizeLadder& ladder() const { return cfg_.ladder; }
  int outputs() const { return cfg_.task == Task::binary ? 1 : 5; }

  bool contains(Side side, Id id) const;
  /// Creates the id at rung 0 with a deterministic per-id random vector.
  void ensure(Side side, Id id);
  int rung(Side side, Id id) const;
  const Eigen::VectorXd& embedding(Side side, Id id) const;
  /// Test hook: overwrite an id's rung and vector.
  void set_embedding(Side side, Id id, int rung, Eigen::VectorXd value);
  std::size_t id_count(Side side) const { return table_[index_of(side)].size(); }

  /// Raw head outputs, one column per example (a logit or a 5-way logit vector).
  /// Unknown ids use a transient initial vector and are not stored.
  Eigen::MatrixXd forward(std::span<const Example> batch, Mode mode) const;
  ForwardTrace trace(std::span<const Example> batch, Mode mode) const;

  /// One Adam step on the mean task loss; returns the pre-update loss.
  double train_step(std::span<const Example> batch);
  EvalResult evaluate(std::span<const Example> examples) const;

  /// Warm (or, with cold_init, random) initialization into the next rung.
  void expand(Side side, Id id);

  /// Pure: clones the two embeddings, takes one plain gradient step (embeddings
  /// only, eval-mode statistics) for the current and, if requested, the
  /// expanded structure of `side`, and returns the post-step losses.
  LossPair temp_evaluate(const Example& ex, bool proposed_increase, Side side) const;
  /// Both sides' proposals with the shared old-structure step computed once.
  TempOutcome temp_evaluate_both(const Example& ex) const;

  ParamCount param_count() const;

  // gradient-check support
  double loss(std::span<const Example> batch, Mode mode) const;
  /// Fills the gradient of the mean loss for every parameter (ids must exist).
  double loss_and_gradients(std::span<const Example> batch, Mode mode);
  std::vector<ParamView> parameters();

  /// FNV-1a digest over all parameters, statistics and optimizer state.
  std::uint64_t checksum() const;

  void save(std::ostream& out) const;
  static AdaptiveModel load(std::istream& in);

 private:
  struct Slot {
    int rung = 0;
    Eigen::VectorXd value;
    Eigen::VectorXd grad;
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    std::int64_t steps = 0;
  };
  struct Dense {
    std::string name;
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    Eigen::MatrixXd m;
    Eigen::MatrixXd v;
  };
  struct BatchNormStats {
    Eigen::VectorXd mean;
    Eigen::VectorXd var;
  };
  struct Resolved {
    std::array<std::vector<int>, 2> rung;
    std::array<std::vector<const Eigen::VectorXd*>, 2> vec;
  };
  struct SideCache {
    std::vector<int> order;
    int min_rung = 0;
    std::vector<Eigen::MatrixXd> levels;  // Z_k for k = min_rung..n
    std::vector<int> carried;             // columns of Z_k coming from Z_{k-1}
    Eigen::MatrixXd hat;
    Eigen::VectorXd inv_std;
    Eigen::VectorXd batch_mean;
    Eigen::VectorXd batch_var;
    Eigen::MatrixXd out;
  };
  struct Cache {
    Mode mode = Mode::eval;
    std::array<SideCache, 2> side;
    Eigen::MatrixXd h1_hat, h1, h2_hat, t2;
    Eigen::VectorXd inv1, inv2, mean1, var1, mean2, var2;
    Eigen::RowVectorXd score;
  };
  using EmbeddingGrads = std::array<std::vector<Eigen::VectorXd>, 2>;

  Eigen::VectorXd initial_vector(Side side, Id id, int rung) const;
  Eigen::VectorXd lifted(Side side, Id id, int rung, const Eigen::VectorXd& value) const;
  Resolved resolve(std::span<const Example> batch, std::vector<Eigen::VectorXd>& transient) const;

  Eigen::MatrixXd forward_side(Side side, const Resolved& in, Mode mode, SideCache& c) const;
  Eigen::MatrixXd run_forward(const Resolved& in, Mode mode, Cache& cache) const;
  void backward_side(const SideCache& c, Mode mode, const Eigen::MatrixXd& d_out,
                     std::vector<Eigen::MatrixXd>* dense_grads,
                     std::vector<Eigen::VectorXd>& d_emb) const;
  void run_backward(const Cache& cache, const Eigen::MatrixXd& dy,
                    std::vector<Eigen::MatrixXd>* dense_grads, EmbeddingGrads& d_emb) const;
  double task_loss(const Eigen::MatrixXd& y, std::span<const Example> batch,
                   Eigen::MatrixXd* dy) const;
  double single_step_loss(const Example& ex, std::array<int, 2> rungs,
                          std::array<Eigen::VectorXd, 2> vecs) const;
  void update_running_stats(const Cache& cache, int batch_size);
  void adam(Eigen::Ref<Eigen::MatrixXd> value, const Eigen::MatrixXd& grad, Eigen::MatrixXd& m,
            Eigen::MatrixXd& v, std::int64_t t) const;

  int chain_w(int k) const { return 2 * k; }
  int chain_b(int k) const { return 2 * k + 1; }
  int head_index(const std::string& name) const;

  ModelConfig cfg_;
  std::vector<Dense> params_;
  int head_begin_ = 0;
  std::array<BatchNormStats, 2> emb_bn_;
  BatchNormStats bn1_, bn2_;
  std::array<std::unordered_map<Id, Slot>, 2> table_;
  std::int64_t dense_steps_ = 0;
};

}  // namespace dess
