#include "netequiv/io.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "netequiv/error.hpp"

namespace netequiv {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kTapSelection: return "tap-selection";
    case ErrorKind::kTraining: return "training";
    case ErrorKind::kDomain: return "domain";
    case ErrorKind::kSpec: return "spec";
    case ErrorKind::kNumericPsd: return "numeric-psd";
    case ErrorKind::kInsufficientPoints: return "insufficient-points";
    case ErrorKind::kDegenerateBandwidth: return "degenerate-bandwidth";
    case ErrorKind::kPropagation: return "propagation";
    case ErrorKind::kDegenerateKernel: return "degenerate-kernel";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kInsufficientDirections: return "insufficient-independent-directions";
    case ErrorKind::kState: return "state";
    case ErrorKind::kAlignment: return "alignment";
    case ErrorKind::kInsufficientProbe: return "insufficient-probe";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kConfig: return "config";
  }
  return "unknown";
}

namespace io {

std::string format_double(double value) {
  char buf[32];
  const int len = std::snprintf(buf, sizeof(buf), "%.17g", value);
  return std::string(buf, static_cast<std::size_t>(len));
}

void write_csv(const std::filesystem::path& path, const Eigen::MatrixXd& values,
               const std::vector<std::string>& header) {
  if (static_cast<Eigen::Index>(header.size()) != values.cols()) {
    throw Error(ErrorKind::kShape, "csv header has " + std::to_string(header.size()) +
                                       " names for " + std::to_string(values.cols()) + " columns");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  std::string line;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c) line += ',';
    line += header[c];
  }
  line += '\n';
  out << line;
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    line.clear();
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      if (c) line += ',';
      line += format_double(values(r, c));
    }
    line += '\n';
    out << line;
  }
  if (!out) throw Error(ErrorKind::kIo, "write failed: " + path.string());
}

void write_csv(const std::filesystem::path& path, const Eigen::MatrixXd& values,
               const std::string& column_prefix) {
  std::vector<std::string> header;
  header.reserve(static_cast<std::size_t>(values.cols()));
  for (Eigen::Index c = 0; c < values.cols(); ++c) header.push_back(column_prefix + std::to_string(c));
  write_csv(path, values, header);
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::kIo, path.string() + ": empty csv");
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (!cell.empty() && cell.back() == '\r') cell.pop_back();
      table.header.push_back(cell);
    }
  }
  const std::size_t cols = table.header.size();
  std::vector<double> flat;
  std::size_t rows = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t count = 0;
    const char* p = line.c_str();
    for (;;) {
      char* end = nullptr;
      errno = 0;
      const double v = std::strtod(p, &end);
      if (end == p) {
        throw Error(ErrorKind::kIo, path.string() + ":" + std::to_string(line_no) + ": not a number");
      }
      flat.push_back(v);
      ++count;
      p = end;
      while (*p == ' ') ++p;
      if (*p == ',') {
        ++p;
        continue;
      }
      if (*p == '\0') break;
      throw Error(ErrorKind::kIo, path.string() + ":" + std::to_string(line_no) + ": unexpected character");
    }
    if (count != cols) {
      throw Error(ErrorKind::kIo, path.string() + ":" + std::to_string(line_no) + ": expected " +
                                      std::to_string(cols) + " fields, got " + std::to_string(count));
    }
    ++rows;
  }
  table.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      table.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = flat[r * cols + c];
  return table;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kIo, path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  out << doc.dump(2) << '\n';
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error(ErrorKind::kIo, "matrix must be an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw Error(ErrorKind::kIo, "ragged matrix row " + std::to_string(r));
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error(ErrorKind::kIo, "vector must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace io
}  // namespace netequiv
