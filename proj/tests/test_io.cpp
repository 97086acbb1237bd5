#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>

#include <gtest/gtest.h>

#include "perfpred/io.hpp"

namespace io = perfpred::io;

TEST(Csv, QuotedFieldsAndEscapes) {
  const auto rows = io::parse_csv("a,b,c\n\"x,1\",\"say \"\"hi\"\"\",\r\n\n3,,4\n");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1], (io::CsvRow{"x,1", "say \"hi\"", ""}));
  EXPECT_EQ(rows[2], (io::CsvRow{"3", "", "4"}));
}

TEST(Csv, RoundTripThroughEscape) {
  const io::CsvRow row = {"plain", "has,comma", "has\"quote", "multi\nline", ""};
  const auto parsed = io::parse_csv(io::csv_line(row));
  ASSERT_EQ(parsed.size(), 1u);
  EXPECT_EQ(parsed[0], row);
}

TEST(Csv, UnterminatedQuoteIsParseError) {
  try {
    io::parse_csv("a,\"b\n");
    FAIL();
  } catch (const perfpred::Error& e) {
    EXPECT_EQ(e.kind(), perfpred::ErrorKind::kParse);
  }
}

TEST(FormatDouble, ShortestRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456789.125, -2.5, 0.0}) {
    EXPECT_EQ(std::strtod(io::format_double(v).c_str(), nullptr), v);
  }
  EXPECT_EQ(io::format_double(0.1), "0.1");
  EXPECT_EQ(io::format_double(2.0), "2");
}

TEST(Fnv1a, KnownValues) {
  EXPECT_EQ(io::fnv1a(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(io::fnv1a("a"), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(io::hex64(0xabcull), "0000000000000abc");
}

TEST(AtomicWrite, WritesAndLeavesNoTemp) {
  const auto dir = std::filesystem::temp_directory_path() / "perfpred_io_test";
  std::filesystem::remove_all(dir);
  const auto p = dir / "nested" / "f.txt";
  io::write_file_atomic(p, "hello");
  EXPECT_EQ(io::read_file(p), "hello");
  io::write_file_atomic(p, "again");
  EXPECT_EQ(io::read_file(p), "again");
  EXPECT_FALSE(std::filesystem::exists(dir / "nested" / "f.txt.tmp"));
  std::filesystem::remove_all(dir);
}

TEST(ReadFile, MissingIsIoError) {
  try {
    io::read_file("/nonexistent/definitely/not/here");
    FAIL();
  } catch (const perfpred::Error& e) {
    EXPECT_EQ(e.kind(), perfpred::ErrorKind::kIo);
  }
}
