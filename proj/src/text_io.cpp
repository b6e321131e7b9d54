#include "dess/text_io.hpp"

#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace dess::text {

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, ptr);
}

double parse_double(std::string_view token) {
  token = trim(token);
  double value = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  if (!token.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (token.empty() || ec != std::errc{} || ptr != last)
    throw std::invalid_argument("not a number: '" + std::string(token) + "'");
  return value;
}

std::int64_t parse_int(std::string_view token) {
  token = trim(token);
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (token.empty() || ec != std::errc{} || ptr != token.data() + token.size())
    throw std::invalid_argument("not an integer: '" + std::string(token) + "'");
  return value;
}

std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

void write_field(std::ostream& out, std::string_view name, double value) {
  out << name << ' ' << format_double(value) << '\n';
}

void write_field(std::ostream& out, std::string_view name, std::int64_t value) {
  out << name << ' ' << value << '\n';
}

void write_vector(std::ostream& out, std::string_view name, const Eigen::VectorXd& v) {
  out << name << ' ' << v.size();
  for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << format_double(v(i));
  out << '\n';
}

void write_matrix(std::ostream& out, std::string_view name, const Eigen::MatrixXd& m) {
  out << name << ' ' << m.rows() << ' ' << m.cols();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << ' ' << format_double(m(r, c));
  out << '\n';
}

std::vector<std::string> read_field(std::istream& in, std::string_view name) {
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("checkpoint truncated: expected field '" + std::string(name) + "'");
  std::istringstream ss(line);
  std::string key;
  ss >> key;
  if (key != name)
    throw std::runtime_error("checkpoint: expected field '" + std::string(name) + "', got '" + key +
                             "'");
  std::vector<std::string> tokens;
  for (std::string tok; ss >> tok;) tokens.push_back(tok);
  return tokens;
}

double read_double(std::istream& in, std::string_view name) {
  const auto tokens = read_field(in, name);
  if (tokens.size() != 1) throw std::runtime_error("checkpoint: bad scalar field " + std::string(name));
  return parse_double(tokens[0]);
}

std::int64_t read_int(std::istream& in, std::string_view name) {
  const auto tokens = read_field(in, name);
  if (tokens.size() != 1) throw std::runtime_error("checkpoint: bad integer field " + std::string(name));
  return parse_int(tokens[0]);
}

Eigen::VectorXd read_vector(std::istream& in, std::string_view name) {
  const auto tokens = read_field(in, name);
  if (tokens.empty()) throw std::runtime_error("checkpoint: bad vector field " + std::string(name));
  const auto n = parse_int(tokens[0]);
  if (n < 0 || static_cast<std::size_t>(n) + 1 != tokens.size())
    throw std::runtime_error("checkpoint: vector length mismatch in " + std::string(name));
  Eigen::VectorXd v(n);
  for (std::int64_t i = 0; i < n; ++i) v(i) = parse_double(tokens[i + 1]);
  return v;
}

Eigen::MatrixXd read_matrix(std::istream& in, std::string_view name) {
  const auto tokens = read_field(in, name);
  if (tokens.size() < 2) throw std::runtime_error("checkpoint: bad matrix field " + std::string(name));
  const auto rows = parse_int(tokens[0]);
  const auto cols = parse_int(tokens[1]);
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) + 2 != tokens.size())
    throw std::runtime_error("checkpoint: matrix size mismatch in " + std::string(name));
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 2;
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) m(r, c) = parse_double(tokens[k++]);
  return m;
}

}  // namespace dess::text
