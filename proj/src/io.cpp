#include "mvct/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>

#include <nlohmann/json.hpp>

namespace mvct::io {

void atomic_write(const fs::path& path, const std::string& content) {
  fs::path dir = path.parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), "cannot open for writing: " + tmp.string());
    out.write(content.data(), std::streamsize(content.size()));
    out.flush();
    require(out.good(), "write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  require(!ec, "rename failed: " + tmp.string() + " -> " + path.string() +
                   " (" + ec.message() + ")");
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json load_json(const fs::path& path) {
  std::string text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail("JSON parse error in " + path.string() + ": " + e.what());
  }
}

void save_json(const fs::path& path, const nlohmann::json& j, int indent) {
  atomic_write(path, j.dump(indent) + "\n");
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  require(res.ec == std::errc(), "double formatting failed");
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const std::string& what) {
  double v = 0;
  const char* b = s.data();
  const char* e = b + s.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc()) fail("bad number '" + s + "' in " + what);
  return v;
}

std::string format_matrix_csv(const Mat& m) {
  std::string out;
  out.reserve(std::size_t(m.size()) * 12);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += format_double(m(i, j));
    }
    out += '\n';
  }
  return out;
}

void write_matrix_csv(const fs::path& path, const Mat& m) {
  atomic_write(path, format_matrix_csv(m));
}

Mat read_matrix_csv(const fs::path& path) {
  std::string text = read_file(path);
  std::vector<std::vector<double>> rows;
  std::size_t pos = 0;
  int lineno = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string line = text.substr(pos, nl == std::string::npos ? nl : nl - pos);
    pos = (nl == std::string::npos) ? text.size() : nl + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t cpos = 0;
    while (cpos <= line.size()) {
      std::size_t comma = line.find(',', cpos);
      std::string cell =
          line.substr(cpos, comma == std::string::npos ? comma : comma - cpos);
      row.push_back(parse_double(
          cell, path.string() + " line " + std::to_string(lineno)));
      if (comma == std::string::npos) break;
      cpos = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      fail("ragged CSV row in " + path.string() + " line " +
           std::to_string(lineno));
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), "empty matrix file: " + path.string());
  Mat m(Eigen::Index(rows.size()), Eigen::Index(rows.front().size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      m(i, j) = rows[std::size_t(i)][std::size_t(j)];
  return m;
}

}  // namespace mvct::io
