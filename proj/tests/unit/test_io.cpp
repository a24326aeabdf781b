#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <limits>

#include "netequiv/error.hpp"
#include "netequiv/io.hpp"

using namespace netequiv;

namespace {
std::filesystem::path temp(const std::string& name) { return std::filesystem::path(testing::TempDir()) / name; }
}  // namespace

TEST(Io, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.123456789})
    EXPECT_EQ(std::stod(io::format_double(v)), v);
}

TEST(Io, CsvRoundTripIsExact) {
  Eigen::MatrixXd m(3, 2);
  m << 0.1, -1e-17, 1.0 / 3.0, 2.0, 1e300, -0.0;
  io::write_csv(temp("m.csv"), m, std::vector<std::string>{"a", "b"});
  const auto t = io::read_csv(temp("m.csv"));
  EXPECT_EQ(t.header, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(t.values, m);
}

TEST(Io, CsvDefaultHeader) {
  io::write_csv(temp("d.csv"), Eigen::MatrixXd::Zero(1, 3), "x");
  EXPECT_EQ(io::read_csv(temp("d.csv")).header, (std::vector<std::string>{"x0", "x1", "x2"}));
}

TEST(Io, CsvErrors) {
  EXPECT_THROW(io::write_csv(temp("bad.csv"), Eigen::MatrixXd::Zero(1, 2), std::vector<std::string>{"a"}), Error);
  {
    std::ofstream out(temp("ragged.csv"));
    out << "a,b\n1,2\n3\n";
  }
  try {
    io::read_csv(temp("ragged.csv"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos);
  }
  EXPECT_THROW(io::read_csv(temp("missing.csv")), Error);
}

TEST(Io, JsonMatrixRoundTrip) {
  Eigen::MatrixXd m(2, 3);
  m << 1, 2, 3, 4.5, -6, 1e-9;
  EXPECT_EQ(io::matrix_from_json(io::matrix_to_json(m)), m);
  const Eigen::VectorXd v = Eigen::Vector3d(0.1, 0.2, 0.3);
  EXPECT_EQ(io::vector_from_json(io::vector_to_json(v)), v);
  EXPECT_THROW(io::matrix_from_json(nlohmann::json::parse("[[1,2],[3]]")), Error);
}

TEST(Io, Fnv1a64KnownValues) {
  EXPECT_EQ(io::fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(io::fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(io::hex64(0xabcULL), "0000000000000abc");
}
