#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "bop/error.hpp"
#include "bop/features.hpp"
#include "test_support.hpp"

namespace bop {
namespace {

using testing::TempDir;

void write_raw(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

TEST(FeatureMatrix, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(FeatureMatrix(RowMatrixF(0, 3)), ArgumentError);
  EXPECT_THROW(FeatureMatrix(RowMatrixF(3, 0)), ArgumentError);
  RowMatrixF bad = RowMatrixF::Zero(2, 2);
  bad(1, 0) = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(FeatureMatrix{bad}, ArgumentError);
  RowMatrixD huge = RowMatrixD::Zero(1, 1);
  huge(0, 0) = 1e300;
  EXPECT_THROW(FeatureMatrix::from_doubles(huge), ArgumentError);
}

TEST(FeatureMatrix, CopiesShareStorageAndSelectRows) {
  const FeatureMatrix m = testing::gaussian_features(5, 3, 1);
  const FeatureMatrix copy = m;
  EXPECT_EQ(&copy.values(), &m.values());
  const std::vector<std::size_t> idx{4, 0};
  const FeatureMatrix s = m.select_rows(idx);
  ASSERT_EQ(s.rows(), 2u);
  EXPECT_EQ(s.values().row(0), m.values().row(4));
  EXPECT_EQ(s.values().row(1), m.values().row(0));
  const std::vector<std::size_t> out_of_range{5};
  EXPECT_THROW(m.select_rows(out_of_range), ArgumentError);
}

TEST(FeatureIo, BinaryRoundTripIsBitwiseExact) {
  TempDir dir;
  const FeatureMatrix m = testing::gaussian_features(100, 64, 42);
  save_features(m, dir / "m.bopf", FeatureFormat::binary);
  const FeatureMatrix back = load_features(dir / "m.bopf", FeatureFormat::binary);
  ASSERT_EQ(back.rows(), 100u);
  ASSERT_EQ(back.dim(), 64u);
  EXPECT_EQ(std::memcmp(back.values().data(), m.values().data(), sizeof(float) * 6400), 0);
}

TEST(FeatureIo, CsvRoundTripIsExact) {
  TempDir dir;
  const FeatureMatrix m = testing::gaussian_features(30, 7, 3, 1e3);
  save_features(m, dir / "m.csv", FeatureFormat::csv);
  const FeatureMatrix back = load_features(dir / "m.csv", FeatureFormat::csv);
  ASSERT_EQ(back.rows(), 30u);
  ASSERT_EQ(back.dim(), 7u);
  EXPECT_EQ(back.values(), m.values());
}

TEST(FeatureIo, ThreeByTwoBinary) {
  TempDir dir;
  RowMatrixF v(3, 2);
  v << 1, 2, 3, 4, 5, 6;
  save_features(FeatureMatrix(v), dir / "a.bopf", FeatureFormat::binary);
  const FeatureMatrix back = load_features(dir / "a.bopf", FeatureFormat::binary);
  EXPECT_EQ(back.values(), v);
}

TEST(FeatureIo, MinimalFileSizes) {
  TempDir dir;
  const FeatureMatrix zero(RowMatrixF::Zero(1, 1));
  save_features(zero, dir / "z.bopf", FeatureFormat::binary);
  save_features(zero, dir / "z.csv", FeatureFormat::csv);
  // 4-byte magic, u32 version, u64 rows, u32 dim, one float.
  EXPECT_EQ(std::filesystem::file_size(dir / "z.bopf"), 24u);
  EXPECT_EQ(std::filesystem::file_size(dir / "z.csv"), 2u);
}

TEST(FeatureIo, CsvNanNamesRow) {
  TempDir dir;
  write_raw(dir / "bad.csv", "1,2\n3,NaN\n");
  try {
    load_features(dir / "bad.csv", FeatureFormat::csv);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
  }
}

TEST(FeatureIo, CsvRaggedAndGarbage) {
  TempDir dir;
  write_raw(dir / "ragged.csv", "1,2\n3\n");
  EXPECT_THROW(load_features(dir / "ragged.csv", FeatureFormat::csv), LoadError);
  write_raw(dir / "text.csv", "1,abc\n");
  EXPECT_THROW(load_features(dir / "text.csv", FeatureFormat::csv), LoadError);
  write_raw(dir / "empty.csv", "\n\n");
  EXPECT_THROW(load_features(dir / "empty.csv", FeatureFormat::csv), LoadError);
  EXPECT_THROW(load_features(dir / "missing.csv", FeatureFormat::csv), LoadError);
}

TEST(FeatureIo, BinaryMalformedHeaders) {
  TempDir dir;
  const FeatureMatrix m = testing::gaussian_features(4, 3, 9);
  save_features(m, dir / "m.bopf", FeatureFormat::binary);
  std::ifstream in(dir / "m.bopf", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  write_raw(dir / "short.bopf", bytes.substr(0, 10));
  EXPECT_THROW(load_features(dir / "short.bopf", FeatureFormat::binary), LoadError);
  write_raw(dir / "trunc.bopf", bytes.substr(0, bytes.size() - 1));
  EXPECT_THROW(load_features(dir / "trunc.bopf", FeatureFormat::binary), LoadError);
  std::string magic = bytes;
  magic[0] = 'X';
  write_raw(dir / "magic.bopf", magic);
  EXPECT_THROW(load_features(dir / "magic.bopf", FeatureFormat::binary), LoadError);
  std::string nan = bytes;
  const float bad = std::numeric_limits<float>::infinity();
  std::memcpy(nan.data() + 20, &bad, sizeof bad);
  write_raw(dir / "inf.bopf", nan);
  EXPECT_THROW(load_features(dir / "inf.bopf", FeatureFormat::binary), LoadError);
}

TEST(FeatureIo, WriteFailureIsWriteError) {
  const FeatureMatrix m = testing::gaussian_features(2, 2, 1);
  EXPECT_THROW(save_features(m, "/nonexistent-dir/x/y.bopf", FeatureFormat::binary), WriteError);
}

TEST(FeatureFormat, ParsingAndExtensions) {
  EXPECT_EQ(parse_feature_format("csv"), FeatureFormat::csv);
  EXPECT_EQ(parse_feature_format("binary"), FeatureFormat::binary);
  EXPECT_THROW(parse_feature_format("parquet"), ArgumentError);
  EXPECT_EQ(format_from_path("a/b.csv"), FeatureFormat::csv);
  EXPECT_EQ(format_from_path("a/b.bopf"), FeatureFormat::binary);
}

TEST(Subsample, CountsAndMembership) {
  const auto idx = subsample_indices(1000, 0.1, 5);
  EXPECT_EQ(idx.size(), 100u);
  const std::set<std::size_t> unique(idx.begin(), idx.end());
  EXPECT_EQ(unique.size(), 100u);
  EXPECT_LT(*unique.rbegin(), 1000u);
  EXPECT_EQ(subsample_indices(10, 0.01, 1).size(), 1u);
  EXPECT_EQ(subsample_indices(10, 0.25, 1).size(), 3u);  // round(2.5) = 3
}

TEST(Subsample, FullFractionIsPermutation) {
  auto idx = subsample_indices(50, 1.0, 3);
  std::sort(idx.begin(), idx.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(idx[i], i);
}

TEST(Subsample, DeterministicPerSeed) {
  EXPECT_EQ(subsample_indices(1000, 0.2, 11), subsample_indices(1000, 0.2, 11));
  auto a = subsample_indices(1000, 0.2, 11);
  auto b = subsample_indices(1000, 0.2, 12);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_NE(a, b);
}

TEST(Subsample, RejectsBadFraction) {
  EXPECT_THROW(subsample_indices(10, 0.0, 1), ArgumentError);
  EXPECT_THROW(subsample_indices(10, 1.5, 1), ArgumentError);
  EXPECT_THROW(subsample_indices(10, -0.1, 1), ArgumentError);
}

TEST(Subsample, MatrixRowsMatchIndices) {
  const FeatureMatrix m = testing::gaussian_features(40, 3, 2);
  const FeatureMatrix s = subsample(m, 0.25, 8);
  const auto idx = subsample_indices(40, 0.25, 8);
  ASSERT_EQ(s.rows(), idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    EXPECT_EQ(s.values().row(static_cast<Eigen::Index>(i)), m.values().row(static_cast<Eigen::Index>(idx[i])));
  }
}

TEST(DatasetRecord, Validation) {
  DatasetRecord ok{"a", testing::gaussian_features(2, 2, 1), 0.5, ""};
  EXPECT_NO_THROW(ok.validate());
  DatasetRecord no_id{"", testing::gaussian_features(2, 2, 1), std::nullopt, ""};
  EXPECT_THROW(no_id.validate(), ArgumentError);
  DatasetRecord bad_acc{"b", testing::gaussian_features(2, 2, 1), 1.5, ""};
  EXPECT_THROW(bad_acc.validate(), ArgumentError);
}

}  // namespace
}  // namespace bop
