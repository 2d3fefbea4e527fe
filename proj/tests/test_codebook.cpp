#include <gtest/gtest.h>

#include <fstream>
#include <limits>

#include "bop/codebook.hpp"
#include "bop/error.hpp"
#include "test_support.hpp"

namespace bop {
namespace {

using testing::TempDir;

// Exhaustive optimum of the k-means objective: every labelling with all K
// clusters non-empty, each scored with its centroid.
double exhaustive_optimum(const RowMatrixD& x, std::size_t k) {
  const std::size_t n = static_cast<std::size_t>(x.rows());
  std::vector<std::size_t> label(n, 0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    std::vector<std::size_t> count(k, 0);
    for (auto l : label) ++count[l];
    if (std::all_of(count.begin(), count.end(), [](std::size_t c) { return c > 0; })) {
      RowMatrixD mean = RowMatrixD::Zero(static_cast<Eigen::Index>(k), x.cols());
      for (std::size_t i = 0; i < n; ++i) mean.row(static_cast<Eigen::Index>(label[i])) += x.row(static_cast<Eigen::Index>(i));
      for (std::size_t c = 0; c < k; ++c) mean.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(count[c]);
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        total += (x.row(static_cast<Eigen::Index>(i)) - mean.row(static_cast<Eigen::Index>(label[i]))).squaredNorm();
      }
      best = std::min(best, total);
    }
    std::size_t pos = 0;
    while (pos < n && ++label[pos] == k) label[pos++] = 0;
    if (pos == n) break;
  }
  return best;
}

std::vector<std::uint32_t> brute_assign(const RowMatrixD& x, const RowMatrixD& c) {
  std::vector<std::uint32_t> out;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::uint32_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < c.rows(); ++j) {
      const double d = (x.row(i) - c.row(j)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<std::uint32_t>(j);
      }
    }
    out.push_back(best);
  }
  return out;
}

TEST(KMeans, MatchesExhaustiveOptimumOnSmallInstances) {
  Rng rng(2024);
  for (int t = 0; t < 30; ++t) {
    const std::size_t n = 4 + rng.index(5);
    const std::size_t k = 2 + rng.index(2);
    const std::size_t d = 1 + rng.index(2);
    const FeatureMatrix x = FeatureMatrix::from_doubles(testing::gaussian_matrix(n, d, rng));
    KMeansConfig config;
    config.k = k;
    config.n_restarts = 50;
    config.seed = static_cast<std::uint64_t>(t);
    const Codebook cb = kmeans_fit(x, config);
    const double optimum = exhaustive_optimum(x.to_double(), k);
    EXPECT_NEAR(cb.inertia(), optimum, 1e-9 * std::max(1.0, optimum)) << "instance " << t;
  }
}

TEST(KMeans, TwoSeparatedBlobs) {
  RowMatrixD x(6, 1);
  x << 0.0, 0.1, 0.2, 10.0, 10.1, 10.2;
  KMeansConfig config;
  config.k = 2;
  const KMeansResult r = kmeans_fit_detailed(FeatureMatrix::from_doubles(x), config);
  EXPECT_NEAR(r.codebook.inertia(), 4 * 0.01, 1e-6);
  EXPECT_EQ(r.assignment[0], r.assignment[2]);
  EXPECT_NE(r.assignment[0], r.assignment[3]);
  EXPECT_TRUE(r.converged);
}

TEST(KMeans, InertiaTraceIsNonIncreasing) {
  const FeatureMatrix x = testing::gaussian_features(400, 5, 77);
  KMeansConfig config;
  config.k = 12;
  config.n_restarts = 1;
  const KMeansResult r = kmeans_fit_detailed(x, config);
  for (std::size_t i = 1; i < r.inertia_trace.size(); ++i) {
    EXPECT_LE(r.inertia_trace[i], r.inertia_trace[i - 1] * (1 + 1e-12)) << i;
  }
}

TEST(KMeans, BestRestartHasLowestInertia) {
  const FeatureMatrix x = testing::gaussian_features(300, 3, 5);
  KMeansConfig config;
  config.k = 9;
  config.n_restarts = 5;
  const KMeansResult r = kmeans_fit_detailed(x, config);
  ASSERT_EQ(r.restart_inertias.size(), 5u);
  const double lowest = *std::min_element(r.restart_inertias.begin(), r.restart_inertias.end());
  EXPECT_EQ(r.codebook.inertia(), lowest);
  EXPECT_EQ(r.restart_inertias[r.best_restart], lowest);
}

TEST(KMeans, AssignmentMatchesEncodingAndInertia) {
  const FeatureMatrix x = testing::gaussian_features(250, 4, 6);
  KMeansConfig config;
  config.k = 7;
  const KMeansResult r = kmeans_fit_detailed(x, config);
  EXPECT_EQ(r.assignment, assign(x, r.codebook));
  EXPECT_NEAR(quantization_error(x, r.codebook), r.codebook.inertia(), 1e-9 * r.codebook.inertia());
}

TEST(KMeans, DeterministicGivenSeed) {
  const FeatureMatrix x = testing::gaussian_features(200, 4, 8);
  KMeansConfig config;
  config.k = 6;
  config.seed = 3;
  const Codebook a = kmeans_fit(x, config);
  const Codebook b = kmeans_fit(x, config);
  EXPECT_EQ(a.prototypes(), b.prototypes());
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
}

TEST(KMeans, KEqualsRowsGivesZeroInertia) {
  const FeatureMatrix x = testing::gaussian_features(5, 2, 1);
  KMeansConfig config;
  config.k = 5;
  EXPECT_NEAR(kmeans_fit(x, config).inertia(), 0.0, 1e-12);
}

TEST(KMeans, DuplicatePointsDoNotLeaveEmptyClusters) {
  RowMatrixD x = RowMatrixD::Zero(8, 2);
  x(7, 0) = 1.0;
  KMeansConfig config;
  config.k = 3;
  const KMeansResult r = kmeans_fit_detailed(FeatureMatrix::from_doubles(x), config);
  EXPECT_TRUE(r.codebook.prototypes().allFinite());
  EXPECT_NEAR(r.codebook.inertia(), 0.0, 1e-12);
}

TEST(KMeans, RejectsBadConfig) {
  const FeatureMatrix x = testing::gaussian_features(5, 2, 1);
  KMeansConfig config;
  config.k = 6;
  EXPECT_THROW(kmeans_fit(x, config), ArgumentError);
  config.k = 0;
  EXPECT_THROW(kmeans_fit(x, config), ArgumentError);
  config.k = 2;
  config.n_restarts = 0;
  EXPECT_THROW(kmeans_fit(x, config), ArgumentError);
}

TEST(Assign, MatchesExhaustiveScan) {
  Rng rng(99);
  const RowMatrixD centers = testing::gaussian_matrix(17, 6, rng);
  const FeatureMatrix x = FeatureMatrix::from_doubles(testing::gaussian_matrix(500, 6, rng));
  const Codebook cb(centers, "r", 0, 0.0);
  const RowMatrixD xd = x.to_double();
  EXPECT_EQ(assign(x, cb), brute_assign(xd, centers));
}

TEST(Assign, TiesGoToLowestIndex) {
  RowMatrixD centers(3, 1);
  centers << 1.0, -1.0, 1.0;
  RowMatrixD x(2, 1);
  x << 0.0, 1.0;
  const Codebook cb(centers, "r", 0, 0.0);
  const auto labels = assign(FeatureMatrix::from_doubles(x), cb);
  EXPECT_EQ(labels[0], 0u);
  EXPECT_EQ(labels[1], 0u);
}

TEST(Assign, DimensionMismatchThrows) {
  const Codebook cb(RowMatrixD::Zero(2, 3), "r", 0, 0.0);
  EXPECT_THROW(assign(testing::gaussian_features(4, 2, 1), cb), ArgumentError);
}

TEST(Assign, LargeOffsetsStayExact) {
  // Expanded-distance shortcuts lose precision far from the origin.
  RowMatrixD centers(2, 2);
  centers << 1e4, 1e4, 1e4 + 1e-2, 1e4;
  RowMatrixD x(1, 2);
  x << 1e4 + 6e-3, 1e4;
  const Codebook cb(centers, "r", 0, 0.0);
  EXPECT_EQ(assign(FeatureMatrix::from_doubles(x), cb)[0], 1u);
}

TEST(Codebook, FingerprintDependsOnOrderAndValues) {
  RowMatrixD a(2, 2);
  a << 0, 1, 2, 3;
  RowMatrixD b(2, 2);
  b << 2, 3, 0, 1;
  EXPECT_NE(Codebook::compute_fingerprint(a), Codebook::compute_fingerprint(b));
  EXPECT_EQ(Codebook(a, "x", 1, 0.5).fingerprint(), Codebook(a, "y", 2, 9.0).fingerprint());
  EXPECT_EQ(Codebook(a, "x", 1, 0.5).fingerprint_hex().size(), 64u);
}

TEST(CodebookIo, RoundTrip) {
  TempDir dir;
  const FeatureMatrix x = testing::gaussian_features(100, 3, 4);
  KMeansConfig config;
  config.k = 5;
  config.seed = 17;
  const Codebook cb = kmeans_fit(x, config, "ref-set");
  save_codebook(cb, dir / "cb.bopc");
  const Codebook back = load_codebook(dir / "cb.bopc");
  EXPECT_EQ(back.prototypes(), cb.prototypes());
  EXPECT_EQ(back.reference_id(), "ref-set");
  EXPECT_EQ(back.seed(), 17u);
  EXPECT_EQ(back.inertia(), cb.inertia());
  EXPECT_EQ(back.fingerprint(), cb.fingerprint());
}

TEST(CodebookIo, DetectsCorruptionAndTruncation) {
  TempDir dir;
  const Codebook cb(testing::gaussian_features(4, 3, 1).to_double(), "r", 0, 1.0);
  save_codebook(cb, dir / "cb.bopc");
  std::ifstream in(dir / "cb.bopc", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  const auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream out(dir / name, std::ios::binary);
    out << content;
    return dir / name;
  };
  EXPECT_THROW(load_codebook(write("trunc.bopc", bytes.substr(0, bytes.size() - 5))), IntegrityError);
  EXPECT_THROW(load_codebook(write("tiny.bopc", bytes.substr(0, 6))), IntegrityError);
  std::string flipped = bytes;
  flipped[bytes.size() - 40] ^= 0x10;  // inside the prototype payload
  EXPECT_THROW(load_codebook(write("flip.bopc", flipped)), IntegrityError);
  EXPECT_THROW(load_codebook(write("extra.bopc", bytes + "x")), IntegrityError);
  EXPECT_THROW(load_codebook(dir / "absent.bopc"), LoadError);
}

}  // namespace
}  // namespace bop
