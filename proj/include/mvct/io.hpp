#ifndef MVCT_IO_HPP
#define MVCT_IO_HPP

#include <filesystem>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "mvct/common.hpp"

namespace mvct::io {

namespace fs = std::filesystem;

// All writes go through a temp-file + rename so an interrupted run never leaves
// a half-written file behind.
void atomic_write(const fs::path& path, const std::string& content);

std::string read_file(const fs::path& path);

nlohmann::json load_json(const fs::path& path);
void save_json(const fs::path& path, const nlohmann::json& j, int indent = 2);

// Square-matrix CSV: one row per line, comma-separated. Values are printed with
// shortest exact decimal representation, so write -> read round-trips
// bit-for-bit.
std::string format_matrix_csv(const Mat& m);
void write_matrix_csv(const fs::path& path, const Mat& m);
Mat read_matrix_csv(const fs::path& path);

std::string format_double(double v);  // shortest exact decimal
double parse_double(const std::string& s, const std::string& what);

}  // namespace mvct::io

#endif
