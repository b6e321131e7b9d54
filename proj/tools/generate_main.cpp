#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "dess/data_io.hpp"
#include "dess/stream_generator.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write a MovieLens-format ratings stream and item genre features"};
  dess::GeneratorConfig cfg;
  std::string out_dir = ".";
  app.add_option("--out", out_dir, "directory for ratings.csv and item_features.tsv");
  app.add_option("--users", cfg.users);
  app.add_option("--items", cfg.items);
  app.add_option("--genres", cfg.genres);
  app.add_option("--interactions", cfg.interactions);
  app.add_option("--drift", cfg.drift);
  app.add_option("--seed", cfg.seed);
  CLI11_PARSE(app, argc, argv);

  try {
    const auto data = dess::generate_stream(cfg);
    std::filesystem::create_directories(out_dir);
    std::ofstream ratings(std::filesystem::path(out_dir) / "ratings.csv");
    dess::write_ratings(ratings, data.stream);
    std::ofstream features(std::filesystem::path(out_dir) / "item_features.tsv");
    dess::write_item_features(features, data.item_features);
    std::cout << data.stream.size() << " interactions, " << data.item_features.size()
              << " items written to " << out_dir << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
