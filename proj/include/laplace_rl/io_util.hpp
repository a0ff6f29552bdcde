#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace laplace_rl {

/// FNV-1a over a string, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& data);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// Formats a double so that parsing recovers the exact same value.
std::string format_double(double v);

/// Minimal CSV assembly; fields containing separators are quoted.
std::string csv_row(const std::vector<std::string>& fields);

/// 8-bit grayscale PGM, values scaled from [lo, hi].
void write_pgm(const std::filesystem::path& path, const Eigen::MatrixXd& img,
               double lo, double hi);

/// Glob-lite: '*' wildcards only, anchored at both ends.
bool glob_match(const std::string& pattern, const std::string& name);

}  // namespace laplace_rl
