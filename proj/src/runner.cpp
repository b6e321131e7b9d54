#include "dess/runner.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "dess/text_io.hpp"
#include "json.hpp"

namespace dess {

namespace {

using Setter = std::function<void(RunConfig&, std::string_view)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Setting {
  std::string key;
  Setter set;
  Getter get;
};

bool parse_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("not a boolean: '" + std::string(v) + "'");
}

std::string show(double v) { return text::format_double(v); }
std::string show(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string show_int(T v) { return std::to_string(v); }

std::vector<std::int64_t> parse_int_list(std::string_view v) {
  std::vector<std::int64_t> out;
  for (auto tok : text::split(v, ',')) out.push_back(text::parse_int(tok));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + std::to_string(v[k]);
  return s;
}

std::string show_head(Head h) { return h == Head::mlp ? "mlp" : "mf"; }
std::string show_task(Task t) { return t == Task::binary ? "binary" : "multiclass"; }
std::string show_kind(DriftKind k) { return k == DriftKind::abrupt ? "abrupt" : "smooth"; }

#define DESS_DOUBLE(name, field) \
  {name, [](RunConfig& c, std::string_view v) { c.field = text::parse_double(v); }, \
   [](const RunConfig& c) { return show(c.field); }}
#define DESS_INT(name, field, type) \
  {name, [](RunConfig& c, std::string_view v) { c.field = static_cast<type>(text::parse_int(v)); }, \
   [](const RunConfig& c) { return show_int(c.field); }}
#define DESS_BOOL(name, field) \
  {name, [](RunConfig& c, std::string_view v) { c.field = parse_bool(v); }, \
   [](const RunConfig& c) { return show(c.field); }}
#define DESS_PATH(name, field) \
  {name, [](RunConfig& c, std::string_view v) { c.field = std::filesystem::path(v); }, \
   [](const RunConfig& c) { return c.field.string(); }}

const std::vector<Setting>& settings() {
  static const std::vector<Setting> table = {
      {"mode", [](RunConfig& c, std::string_view v) { c.mode = parse_mode(v); },
       [](const RunConfig& c) { return std::string(to_string(c.mode)); }},
      DESS_PATH("ratings", ratings),
      DESS_PATH("item_features", item_features),
      DESS_PATH("out_dir", out_dir),
      DESS_INT("seed", seed, std::uint64_t),
      DESS_INT("segment_length", segment_length, std::size_t),
      DESS_DOUBLE("train_frac", train_frac),
      DESS_INT("max_interactions", max_interactions, std::int64_t),
      {"task",
       [](RunConfig& c, std::string_view v) {
         if (v == "binary") c.model.task = Task::binary;
         else if (v == "multiclass") c.model.task = Task::multiclass;
         else throw std::invalid_argument("task must be binary or multiclass");
       },
       [](const RunConfig& c) { return show_task(c.model.task); }},
      DESS_INT("fixed_size", fixed_size, int),
      DESS_BOOL("record_timing", record_timing),

      DESS_DOUBLE("bandit.lambda", bandit.lambda),
      DESS_DOUBLE("bandit.gamma", bandit.gamma),
      DESS_DOUBLE("bandit.sigma", bandit.sigma),
      DESS_DOUBLE("bandit.delta", bandit.delta),
      DESS_DOUBLE("bandit.param_bound", bandit.param_bound),
      DESS_DOUBLE("bandit.context_bound", bandit.context_bound),

      {"model.ladder",
       [](RunConfig& c, std::string_view v) {
         std::vector<int> sizes;
         for (auto s : parse_int_list(v)) sizes.push_back(static_cast<int>(s));
         c.model.ladder = SizeLadder(std::move(sizes));
       },
       [](const RunConfig& c) { return join(c.model.ladder.sizes()); }},
      {"model.head",
       [](RunConfig& c, std::string_view v) {
         if (v == "mlp") c.model.head = Head::mlp;
         else if (v == "mf") c.model.head = Head::mf;
         else throw std::invalid_argument("model.head must be mlp or mf");
       },
       [](const RunConfig& c) { return show_head(c.model.head); }},
      DESS_INT("model.hidden", model.hidden, int),
      DESS_DOUBLE("model.eta", model.eta),
      DESS_DOUBLE("model.l2", model.l2),
      DESS_INT("model.batch", model.batch, int),
      DESS_INT("model.epochs", model.epochs, int),
      DESS_DOUBLE("model.eps_bn", model.eps_bn),
      DESS_DOUBLE("model.bn_momentum", model.bn_momentum),
      DESS_BOOL("model.cold_init", model.cold_init),
      DESS_BOOL("model.embedding_norm", model.embedding_norm),
      DESS_DOUBLE("model.chain_noise", model.chain_noise),

      DESS_INT("indicators.window", indicators.window, std::size_t),
      DESS_DOUBLE("indicators.fre_cap", indicators.fre_cap),
      DESS_DOUBLE("indicators.ind_cap", indicators.ind_cap),
      DESS_DOUBLE("indicators.pod_cap", indicators.pod_cap),

      DESS_DOUBLE("reward.threshold", reward.threshold),
      DESS_BOOL("reward.continuous", reward.continuous),

      {"synthetic.kind",
       [](RunConfig& c, std::string_view v) {
         if (v == "abrupt") c.synthetic.kind = DriftKind::abrupt;
         else if (v == "smooth") c.synthetic.kind = DriftKind::smooth;
         else throw std::invalid_argument("synthetic.kind must be abrupt or smooth");
       },
       [](const RunConfig& c) { return show_kind(c.synthetic.kind); }},
      DESS_INT("synthetic.changes", synthetic.changes, int),
      DESS_DOUBLE("synthetic.magnitude", synthetic.magnitude),
      DESS_DOUBLE("synthetic.rate", synthetic.rate),
      DESS_INT("synthetic.horizon", synthetic.horizon, std::int64_t),
      DESS_INT("synthetic.seeds", synthetic.seeds, int),
      DESS_INT("synthetic.checkpoints", synthetic.checkpoints, int),
      {"synthetic.sweep",
       [](RunConfig& c, std::string_view v) { c.synthetic.sweep = parse_int_list(v); },
       [](const RunConfig& c) { return join(c.synthetic.sweep); }},
      DESS_DOUBLE("synthetic.gamma", synthetic.gamma),
      DESS_INT("synthetic.dim", synthetic.env.dim, int),
      DESS_INT("synthetic.arms", synthetic.env.arms, int),
      DESS_DOUBLE("synthetic.param_bound", synthetic.env.param_bound),
      DESS_DOUBLE("synthetic.context_bound", synthetic.env.context_bound),
      DESS_DOUBLE("synthetic.sigma", synthetic.env.sigma),
      DESS_DOUBLE("synthetic.noise", synthetic.env.noise),
      DESS_DOUBLE("synthetic.separation", synthetic.env.separation),
  };
  return table;
}

#undef DESS_DOUBLE
#undef DESS_INT
#undef DESS_BOOL
#undef DESS_PATH

void write_text(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << body;
}

nlohmann::ordered_json config_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  for (const auto& s : settings()) j[s.key] = s.get(cfg);
  return j;
}

std::vector<Segment> load_segments(const RunConfig& cfg, std::size_t& used) {
  auto stream = parse_ratings(cfg.ratings);
  if (cfg.max_interactions > 0 && static_cast<std::size_t>(cfg.max_interactions) < stream.size())
    stream.resize(static_cast<std::size_t>(cfg.max_interactions));
  used = stream.size();
  return segment_stream(stream, cfg.segment_length, cfg.train_frac);
}

RunOutput run_stream(const RunConfig& cfg, std::ostream& log) {
  RunOutput out;
  std::size_t used = 0;
  const auto segments = load_segments(cfg, used);
  log << "stream: " << used << " interactions, " << segments.size() << " segments\n";

  ItemFeatureStore features;
  const bool with_features = cfg.mode == RunMode::dess_cv ||
                             (cfg.mode == RunMode::stationary_ablation && !cfg.item_features.empty());
  if (with_features) features = parse_item_features(cfg.item_features);

  StreamHarness harness(AdaptiveModel(model_config(cfg)), with_features ? &features : nullptr,
                        harness_config(cfg));
  const auto started = std::chrono::steady_clock::now();
  for (std::size_t k = 0; k < segments.size(); ++k) {
    if (k > 0) harness.policy_update_pass(segments[k - 1]);
    out.metrics.push_back(harness.model_update_pass(segments[k]));
    const auto& m = out.metrics.back();
    log << "segment " << m.t << ": acc " << text::format_double(m.accuracy) << " emb_params "
        << m.emb_params << '\n';
  }
  const double wall_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  std::ostringstream csv;
  write_metrics_csv(csv, out.metrics);
  out.metrics_csv = cfg.out_dir / "metrics.csv";
  write_text(out.metrics_csv, csv.str());

  double acc = 0.0, train_ms = 0.0, infer_ms = 0.0;
  std::int64_t expansions = 0;
  for (const auto& m : out.metrics) acc += m.accuracy;
  for (const auto& t : harness.traces()) {
    train_ms += t.train_ms;
    infer_ms += t.infer_ms;
    expansions += t.expansions;
  }
  nlohmann::ordered_json summary;
  summary["mode"] = std::string(to_string(cfg.mode));
  summary["config"] = config_json(cfg);
  summary["interactions"] = used;
  summary["segments"] = out.metrics.size();
  summary["mean_accuracy"] = out.metrics.empty() ? 0.0 : acc / static_cast<double>(out.metrics.size());
  summary["final_loss"] = out.metrics.empty() ? 0.0 : out.metrics.back().loss;
  summary["final_emb_params"] = out.metrics.empty() ? 0 : out.metrics.back().emb_params;
  summary["total_params"] = harness.model().param_count().total;
  summary["regret_kind"] = "counterfactual_proxy";
  summary["regret_user"] = harness.regret(Side::user);
  summary["regret_item"] = harness.regret(Side::item);
  summary["bandit_decisions_user"] = harness.decisions(Side::user);
  summary["bandit_decisions_item"] = harness.decisions(Side::item);
  summary["expansions"] = expansions;
  summary["items_without_features"] = harness.indicators().missing_feature_items().size();
  summary["train_ms_total"] = train_ms;
  summary["infer_ms_total"] = infer_ms;
  summary["wall_seconds"] = wall_s;
  out.summary_json = cfg.out_dir / "summary.json";
  write_text(out.summary_json, summary.dump(2) + "\n");
  return out;
}

RegretSeries curves(const std::string& name, const SyntheticConfig& sc, double gamma) {
  const DriftSpec spec = sc.drift();
  RegretSeries series;
  series.name = name;
  series.steps = even_checkpoints(spec.horizon, sc.checkpoints);
  for (int seed = 0; seed < sc.seeds; ++seed) {
    SyntheticEnv env(spec, sc.env, static_cast<std::uint64_t>(seed));
    DiscountedLinUCB policy(bandit_for(sc.env, gamma));
    series.per_seed.push_back(run_experiment(policy, env, series.steps).regret);
  }
  return series;
}

double mean_slope(const RegretSeries& s, std::int64_t from, std::int64_t to) {
  RegretCurve mean;
  mean.steps = s.steps;
  mean.regret.assign(s.steps.size(), 0.0);
  for (const auto& run : s.per_seed)
    for (std::size_t k = 0; k < run.size(); ++k)
      mean.regret[k] += run[k] / static_cast<double>(s.per_seed.size());
  return loglog_slope(mean, from, to);
}

RunOutput run_synthetic(const RunConfig& cfg, std::ostream& log) {
  const auto& sc = cfg.synthetic;
  const DriftSpec spec = sc.drift();
  const double gamma =
      sc.gamma > 0.0 ? sc.gamma : corollary_gamma(spec.budget, sc.env.dim, spec.horizon);
  log << "synthetic: budget " << text::format_double(spec.budget) << " gamma "
      << text::format_double(gamma) << '\n';

  RunOutput out;
  out.regret.push_back(curves("dess", sc, gamma));
  out.regret.push_back(curves("stationary", sc, 1.0));

  DriftSpec base = spec;
  const SweepResult sweep = horizon_sweep(base, sc.env, sc.sweep, sc.seeds, sc.gamma);
  RegretSeries swept;
  swept.name = "sweep_dess";
  swept.steps = sweep.horizons;
  swept.per_seed.assign(static_cast<std::size_t>(sc.seeds), {});
  for (const auto& finals : sweep.per_seed)
    for (std::size_t s = 0; s < finals.size(); ++s) swept.per_seed[s].push_back(finals[s]);
  out.regret.push_back(swept);

  std::ostringstream csv;
  write_regret_csv(csv, out.regret);
  out.regret_csv = cfg.out_dir / "regret.csv";
  write_text(out.regret_csv, csv.str());

  auto final_mean = [](const RegretSeries& s) {
    double total = 0.0;
    for (const auto& run : s.per_seed) total += run.back();
    return total / static_cast<double>(s.per_seed.size());
  };
  nlohmann::ordered_json summary;
  summary["mode"] = "synthetic";
  summary["config"] = config_json(cfg);
  summary["declared_budget"] = spec.budget;
  summary["gamma"] = gamma;
  summary["final_regret_dess"] = final_mean(out.regret[0]);
  summary["final_regret_stationary"] = final_mean(out.regret[1]);
  summary["within_run_slope_dess"] = mean_slope(out.regret[0], spec.horizon / 2, spec.horizon);
  if (sc.sweep.size() >= 2)
    summary["horizon_sweep_slope_dess"] =
        mean_slope(swept, sc.sweep.front(), sc.sweep.back());
  out.summary_json = cfg.out_dir / "summary.json";
  write_text(out.summary_json, summary.dump(2) + "\n");
  return out;
}

}  // namespace

std::string_view to_string(RunMode mode) {
  switch (mode) {
    case RunMode::dess_cv: return "dess_cv";
    case RunMode::dess_fre: return "dess_fre";
    case RunMode::fixed: return "fixed";
    case RunMode::stationary_ablation: return "stationary_ablation";
    case RunMode::synthetic: return "synthetic";
  }
  return "?";
}

RunMode parse_mode(std::string_view name) {
  for (RunMode m : {RunMode::dess_cv, RunMode::dess_fre, RunMode::fixed,
                    RunMode::stationary_ablation, RunMode::synthetic})
    if (to_string(m) == name) return m;
  throw std::invalid_argument("unknown mode '" + std::string(name) + "'");
}

DriftSpec SyntheticConfig::drift(std::int64_t horizon_override) const {
  DriftSpec spec;
  spec.kind = kind;
  spec.changes = changes;
  spec.rate = rate;
  spec.horizon = horizon_override > 0 ? horizon_override : horizon;
  if (magnitude > 0.0) {
    spec.magnitude = magnitude;
  } else {
    const double r = env.param_bound * std::sqrt(2.0 / static_cast<double>(env.dim));
    spec.magnitude = 2.0 * r * std::sin(env.separation / 2.0);
  }
  spec.budget = spec.realized_budget();
  return spec;
}

void RunConfig::validate() const {
  if (mode == RunMode::synthetic) {
    if (synthetic.seeds < 1) throw std::invalid_argument("synthetic.seeds must be positive");
    if (synthetic.checkpoints < 1)
      throw std::invalid_argument("synthetic.checkpoints must be positive");
    SyntheticEnv probe(synthetic.drift(), synthetic.env, 0);
    for (auto h : synthetic.sweep) SyntheticEnv sweep_probe(synthetic.drift(h), synthetic.env, 0);
    return;
  }
  if (ratings.empty()) throw std::invalid_argument("ratings path is required");
  if (mode == RunMode::dess_cv && item_features.empty())
    throw std::invalid_argument("dess_cv mode requires item_features");
  if (segment_length < 2) throw std::invalid_argument("segment_length must be at least 2");
  if (!(train_frac > 0.0 && train_frac < 1.0))
    throw std::invalid_argument("train_frac must lie in (0, 1)");
  if (fixed_size < 1) throw std::invalid_argument("fixed_size must be positive");
  bandit.validate();
  model.validate();
  indicators.validate();
}

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& s : settings()) {
    if (s.key != key) continue;
    s.set(cfg, value);
    return;
  }
  throw std::invalid_argument("unknown setting '" + std::string(key) + "'");
}

RunConfig parse_config(std::istream& in, std::string_view source,
                       const std::filesystem::path& base_dir) {
  RunConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view body = line;
    if (auto hash = body.find('#'); hash != std::string_view::npos) body = body.substr(0, hash);
    body = text::trim(body);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos)
      throw std::invalid_argument(std::string(source) + ":" + std::to_string(line_no) +
                                  ": expected key = value");
    try {
      apply_setting(cfg, text::trim(body.substr(0, eq)), text::trim(body.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(std::string(source) + ":" + std::to_string(line_no) + ": " +
                                  e.what());
    }
  }
  if (!base_dir.empty()) {
    for (auto* p : {&cfg.ratings, &cfg.item_features, &cfg.out_dir})
      if (!p->empty() && p->is_relative()) *p = base_dir / *p;
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config not found: " + path.string());
  return parse_config(in, path.string(), path.parent_path());
}

std::string describe(const RunConfig& cfg) {
  std::string out;
  for (const auto& s : settings()) out += s.key + " = " + s.get(cfg) + "\n";
  return out;
}

ModelConfig model_config(const RunConfig& cfg) {
  ModelConfig m = cfg.model;
  m.seed = cfg.seed;
  if (cfg.mode == RunMode::fixed) m.ladder = SizeLadder::fixed(cfg.fixed_size);
  return m;
}

HarnessConfig harness_config(const RunConfig& cfg) {
  HarnessConfig h;
  h.bandit = cfg.bandit;
  h.bandit.dim = 2;
  h.bandit.arms = 2;
  if (cfg.mode == RunMode::stationary_ablation) h.bandit.gamma = 1.0;
  h.indicators = cfg.indicators;
  h.reward = cfg.reward;
  h.policy = cfg.mode == RunMode::fixed ? PolicyKind::none : PolicyKind::bandit;
  h.record_timing = cfg.record_timing;
  return h;
}

RunOutput run(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  if (cfg.mode != RunMode::synthetic && !std::filesystem::exists(cfg.ratings))
    throw std::runtime_error("dataset not found: " + cfg.ratings.string());
  if (cfg.mode == RunMode::dess_cv && !std::filesystem::exists(cfg.item_features))
    throw std::runtime_error("item features not found: " + cfg.item_features.string());
  std::filesystem::create_directories(cfg.out_dir);
  log << "resolved config:\n" << describe(cfg);
  if (cfg.mode == RunMode::synthetic) return run_synthetic(cfg, log);
  return run_stream(cfg, log);
}

}  // namespace dess
