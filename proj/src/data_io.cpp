#include "dess/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "dess/text_io.hpp"

namespace dess {

namespace {

std::ifstream open_input(const std::filesystem::path& path, std::string_view what) {
  if (!std::filesystem::exists(path))
    throw std::runtime_error(std::string(what) + " not found: " + path.string());
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

[[noreturn]] void fail_at(std::string_view source, std::size_t line_no, const std::string& why) {
  throw std::runtime_error(std::string(source) + ":" + std::to_string(line_no) + ": " + why);
}

bool is_integer(std::string_view token) {
  try {
    text::parse_int(token);
    return true;
  } catch (const std::invalid_argument&) {
    return false;
  }
}

}  // namespace

std::vector<Interaction> parse_ratings(const std::filesystem::path& path) {
  auto in = open_input(path, "dataset");
  return parse_ratings(in, path.string());
}

std::vector<Interaction> parse_ratings(std::istream& in, std::string_view source) {
  std::vector<Interaction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = text::trim(line);
    if (body.empty()) continue;
    const auto fields = text::split(body, ',');
    if (line_no == 1 && !is_integer(fields[0])) continue;  // header
    if (fields.size() != 4)
      fail_at(source, line_no, "expected 4 comma-separated fields, got " +
                                   std::to_string(fields.size()));
    try {
      const Id user = text::parse_int(fields[0]);
      const Id item = text::parse_int(fields[1]);
      const double rating = text::parse_double(fields[2]);
      if (!std::isfinite(rating)) throw std::invalid_argument("rating is not finite");
      const std::int64_t ts = text::parse_int(fields[3]);
      out.push_back(make_interaction(user, item, rating, ts));
    } catch (const std::invalid_argument& e) {
      fail_at(source, line_no, e.what());
    }
  }
  if (out.empty()) throw std::runtime_error(std::string(source) + ": no interactions");
  std::stable_sort(out.begin(), out.end(), [](const Interaction& a, const Interaction& b) {
    return a.timestamp < b.timestamp;
  });
  return out;
}

void write_ratings(std::ostream& out, std::span<const Interaction> stream) {
  out << "userId,movieId,rating,timestamp\n";
  for (const auto& x : stream)
    out << x.user << ',' << x.item << ',' << text::format_double(x.rating) << ',' << x.timestamp
        << '\n';
}

ItemFeatureStore parse_item_features(const std::filesystem::path& path) {
  auto in = open_input(path, "item features");
  return parse_item_features(in, path.string());
}

ItemFeatureStore parse_item_features(std::istream& in, std::string_view source) {
  ItemFeatureStore store;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = text::trim(line);
    if (body.empty()) continue;
    const auto tab = body.find('\t');
    if (tab == std::string_view::npos) fail_at(source, line_no, "expected '<item>\\t<values>'");
    try {
      const Id item = text::parse_int(body.substr(0, tab));
      const auto values = text::split(body.substr(tab + 1), ',');
      Eigen::VectorXd f(static_cast<Eigen::Index>(values.size()));
      for (std::size_t k = 0; k < values.size(); ++k) f(k) = text::parse_double(values[k]);
      store.add(item, std::move(f));
    } catch (const std::invalid_argument& e) {
      fail_at(source, line_no, e.what());
    }
  }
  return store;
}

void write_metrics_csv(std::ostream& out, std::span<const SegmentMetrics> rows) {
  out << kMetricsHeader << '\n';
  for (const auto& m : rows) {
    out << m.t << ',' << text::format_double(m.accuracy) << ',' << text::format_double(m.loss)
        << ',' << text::format_double(m.regret_user) << ',' << text::format_double(m.regret_item)
        << ',' << m.emb_params << ',' << text::format_double(m.train_ms) << ','
        << text::format_double(m.infer_ms) << '\n';
  }
}

std::vector<SegmentMetrics> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != kMetricsHeader)
    throw std::runtime_error("metrics csv: unexpected header");
  std::vector<SegmentMetrics> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    const auto f = text::split(text::trim(line), ',');
    if (f.size() != 8) fail_at("metrics csv", line_no, "expected 8 fields");
    try {
      SegmentMetrics m;
      m.t = static_cast<int>(text::parse_int(f[0]));
      m.accuracy = text::parse_double(f[1]);
      m.loss = text::parse_double(f[2]);
      m.regret_user = text::parse_double(f[3]);
      m.regret_item = text::parse_double(f[4]);
      m.emb_params = text::parse_int(f[5]);
      m.train_ms = text::parse_double(f[6]);
      m.infer_ms = text::parse_double(f[7]);
      rows.push_back(m);
    } catch (const std::invalid_argument& e) {
      fail_at("metrics csv", line_no, e.what());
    }
  }
  return rows;
}

std::vector<SegmentMetrics> read_metrics_csv(const std::filesystem::path& path) {
  auto in = open_input(path, "metrics file");
  return read_metrics_csv(in);
}

void write_regret_csv(std::ostream& out, std::span<const RegretSeries> series) {
  out << "series,seed,step,regret\n";
  for (const auto& s : series) {
    for (std::size_t seed = 0; seed < s.per_seed.size(); ++seed)
      for (std::size_t k = 0; k < s.steps.size(); ++k)
        out << s.name << ',' << seed << ',' << s.steps[k] << ','
            << text::format_double(s.per_seed[seed].at(k)) << '\n';
    for (std::size_t k = 0; k < s.steps.size(); ++k) {
      double total = 0.0;
      for (const auto& run : s.per_seed) total += run.at(k);
      out << s.name << ",mean," << s.steps[k] << ','
          << text::format_double(total / static_cast<double>(s.per_seed.size())) << '\n';
    }
  }
}

}  // namespace dess
