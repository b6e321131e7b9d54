#include <exception>
#include <iostream>

#include "CLI11.hpp"
#include "dess/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Dynamic embedding size search over a streaming recommender"};
  std::string config_path;
  std::string mode;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool dry_run = false;
  app.add_option("--config", config_path, "flat key = value config file")->required();
  app.add_option("--mode", mode, "dess_cv | dess_fre | fixed | stationary_ablation | synthetic");
  auto* seed_opt = app.add_option("--seed", seed, "random seed");
  app.add_option("--out", out_dir, "output directory");
  app.add_flag("--dry-run", dry_run, "print the resolved config and exit");
  CLI11_PARSE(app, argc, argv);

  try {
    dess::RunConfig cfg = dess::load_config(config_path);
    if (!mode.empty()) cfg.mode = dess::parse_mode(mode);
    if (*seed_opt) cfg.seed = seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (dry_run) {
      cfg.validate();
      std::cout << dess::describe(cfg);
      return 0;
    }
    const auto out = dess::run(cfg, std::cout);
    for (const auto& p : {out.metrics_csv, out.regret_csv, out.summary_json})
      if (!p.empty()) std::cout << "wrote " << p.string() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
