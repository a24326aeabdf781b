#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace netequiv::io {

// CSV convention shared by every artifact: comma separated, one header row,
// doubles printed with 17 significant digits so they round-trip exactly.
std::string format_double(double value);

void write_csv(const std::filesystem::path& path, const Eigen::MatrixXd& values,
               const std::vector<std::string>& header);

// Header defaults to prefix0, prefix1, ...
void write_csv(const std::filesystem::path& path, const Eigen::MatrixXd& values,
               const std::string& column_prefix = "c");

struct CsvTable {
  std::vector<std::string> header;
  Eigen::MatrixXd values;
};

CsvTable read_csv(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);
nlohmann::json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const nlohmann::json& j);

// 64-bit FNV-1a; stable across platforms, used for provenance hashes.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

}  // namespace netequiv::io
