#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace advimmune::io {

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temp file and renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// Numeric CSV: one row per line, comma separated, `#` comments and blank lines
// skipped. Non-finite values and ragged rows are ParseErrors.
std::vector<std::vector<double>> parse_numeric_csv(std::string_view text);

// Shortest text that parses back to the same double.
std::string format_double(double x);

}  // namespace advimmune::io
