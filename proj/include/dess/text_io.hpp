#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace dess::text {

/// Shortest decimal text that parses back to the identical double.
std::string format_double(double value);

/// Strict parses: the whole token must be consumed or std::invalid_argument is thrown.
double parse_double(std::string_view token);
std::int64_t parse_int(std::string_view token);

std::vector<std::string_view> split(std::string_view line, char delim);
std::string_view trim(std::string_view s);

// Field-per-line checkpoint helpers. Each field is written as
// "<name> <v0> <v1> ...", matrices row-major after their "rows cols" pair.
void write_field(std::ostream& out, std::string_view name, double value);
void write_field(std::ostream& out, std::string_view name, std::int64_t value);
void write_vector(std::ostream& out, std::string_view name, const Eigen::VectorXd& v);
void write_matrix(std::ostream& out, std::string_view name, const Eigen::MatrixXd& m);

/// Reads one line and checks that it starts with `name`; returns the remaining tokens.
std::vector<std::string> read_field(std::istream& in, std::string_view name);
double read_double(std::istream& in, std::string_view name);
std::int64_t read_int(std::istream& in, std::string_view name);
Eigen::VectorXd read_vector(std::istream& in, std::string_view name);
Eigen::MatrixXd read_matrix(std::istream& in, std::string_view name);

}  // namespace dess::text
