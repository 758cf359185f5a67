#include "advimmune/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "advimmune/error.hpp"

namespace advimmune::io {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ParseError("cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw ParseError("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::vector<std::vector<double>> parse_numeric_csv(std::string_view text) {
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::vector<double> row;
    while (true) {
      auto comma = line.find(',');
      auto cell = trim(line.substr(0, comma));
      double x = 0.0;
      auto res = std::from_chars(cell.data(), cell.data() + cell.size(), x);
      if (cell.empty() || res.ec != std::errc{} || res.ptr != cell.data() + cell.size()) {
        throw ParseError("non-numeric cell '" + std::string(cell) + "'", line_no);
      }
      if (!std::isfinite(x)) throw ParseError("non-finite cell '" + std::string(cell) + "'", line_no);
      row.push_back(x);
      if (comma == std::string_view::npos) break;
      line = line.substr(comma + 1);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError("ragged row: expected " + std::to_string(rows.front().size()) +
                           " columns, got " + std::to_string(row.size()),
                       line_no);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

}  // namespace advimmune::io
