#include <gtest/gtest.h>

#include <limits>

#include "bop/error.hpp"
#include "bop/rng.hpp"
#include "bop/synthbench.hpp"

namespace bop::synth {
namespace {

ShiftSpec small_spec(std::uint64_t seed = 0) {
  ShiftSpec spec;
  spec.n_classes = 4;
  spec.dim = 6;
  spec.samples_per_class = 100;
  spec.severities = {0.0, 2.0, 4.0};
  spec.sets_per_severity = 2;
  spec.seed = seed;
  return spec;
}

BenchConfig fast_config() {
  BenchConfig config;
  config.k = 10;
  config.kernel_rows = 100;
  config.train_predictor = false;
  return config;
}

TEST(ShiftSpec, Validation) {
  ShiftSpec spec = small_spec();
  EXPECT_NO_THROW(spec.validate());
  spec.class_separation = 0.0;
  spec.noise = 0.0;
  EXPECT_THROW(generate(spec), ArgumentError);
  spec = small_spec();
  spec.severities = {2.0, 1.0};
  EXPECT_THROW(generate(spec), ArgumentError);
  spec = small_spec();
  spec.severities = {-1.0};
  EXPECT_THROW(generate(spec), ArgumentError);
  spec = small_spec();
  spec.n_classes = 1;
  EXPECT_THROW(generate(spec), ArgumentError);
  EXPECT_THROW(parse_shift_kind("blur"), ArgumentError);
  EXPECT_EQ(parse_shift_kind("noise_inflation"), ShiftKind::noise_inflation);
}

TEST(Generate, DeterministicGivenSeed) {
  const SyntheticBenchmark a = generate(small_spec(3));
  const SyntheticBenchmark b = generate(small_spec(3));
  EXPECT_EQ(a.reference.features.values(), b.reference.features.values());
  ASSERT_EQ(a.shifted.size(), b.shifted.size());
  for (std::size_t i = 0; i < a.shifted.size(); ++i) {
    EXPECT_EQ(a.shifted[i].features.values(), b.shifted[i].features.values());
    EXPECT_EQ(a.shifted[i].labels, b.shifted[i].labels);
  }
  const SyntheticBenchmark c = generate(small_spec(4));
  EXPECT_NE(a.reference.features.values(), c.reference.features.values());
}

TEST(Generate, ShapesAndLayout) {
  const SyntheticBenchmark b = generate(small_spec());
  EXPECT_EQ(b.reference.features.rows(), 400u);
  EXPECT_EQ(b.reference.features.dim(), 6u);
  ASSERT_EQ(b.shifted.size(), 6u);
  EXPECT_EQ(b.shifted[3].level, 1u);
  EXPECT_EQ(b.shifted[3].replicate, 1u);
  EXPECT_NEAR(b.drift_direction.norm(), 1.0, 1e-12);
  for (std::size_t i = 1; i < b.shifted.size(); ++i) EXPECT_GE(b.shifted[i].severity, b.shifted[i - 1].severity);
}

TEST(Generate, ClassMeansRespectSeparation) {
  const ShiftSpec spec = small_spec();
  const SyntheticBenchmark b = generate(spec);
  double closest = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < b.class_means.rows(); ++i)
    for (Eigen::Index j = i + 1; j < b.class_means.rows(); ++j)
      closest = std::min(closest, (b.class_means.row(i) - b.class_means.row(j)).norm());
  EXPECT_GE(closest, spec.class_separation * (1 - 1e-12));
}

TEST(Generate, MeanDriftTranslatesEveryClass) {
  ShiftSpec spec = small_spec();
  spec.noise = 0.0;
  spec.severities = {0.0, 2.5};
  spec.sets_per_severity = 1;
  const SyntheticBenchmark b = generate(spec);
  const RowMatrixD x = b.shifted[1].features.to_double();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto c = static_cast<Eigen::Index>(b.shifted[1].labels[static_cast<std::size_t>(i)]);
    const Eigen::RowVectorXd expected = b.class_means.row(c) + 2.5 * b.drift_direction.transpose();
    EXPECT_LT((x.row(i) - expected).cwiseAbs().maxCoeff(), 1e-5);
  }
}

TEST(Generate, ClassImbalanceKeepsTotal) {
  ShiftSpec spec = small_spec();
  spec.shift_kind = ShiftKind::class_imbalance;
  const SyntheticBenchmark b = generate(spec);
  const auto& last = b.shifted.back();
  EXPECT_EQ(last.features.rows(), 400u);
  std::vector<std::size_t> counts(4, 0);
  for (auto l : last.labels) ++counts[l];
  EXPECT_GT(counts[0], counts[3]);
}

TEST(Generate, NoiseInflationWidensSpread) {
  ShiftSpec spec = small_spec();
  spec.shift_kind = ShiftKind::noise_inflation;
  const SyntheticBenchmark b = generate(spec);
  const auto spread = [&](const LabeledSet& s) {
    const RowMatrixD x = s.features.to_double();
    double total = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      total += (x.row(i) - b.class_means.row(s.labels[static_cast<std::size_t>(i)])).squaredNorm();
    }
    return total / static_cast<double>(x.rows());
  };
  EXPECT_GT(spread(b.shifted.back()), 4.0 * spread(b.shifted.front()));
}

TEST(OracleAccuracy, MatchesPerSampleArgmin) {
  ShiftSpec spec = small_spec();
  spec.class_separation = 2.0;  // enough confusion to make the check meaningful
  const SyntheticBenchmark b = generate(spec);
  const RowMatrixD means = estimate_class_means(b.reference, spec.n_classes);
  for (const auto& set : b.shifted) {
    const RowMatrixD x = set.features.to_double();
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      Eigen::Index best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (Eigen::Index c = 0; c < means.rows(); ++c) {
        const double d = (x.row(i) - means.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      correct += static_cast<std::uint32_t>(best) == set.labels[static_cast<std::size_t>(i)];
    }
    EXPECT_DOUBLE_EQ(oracle_accuracy(set, means), static_cast<double>(correct) / static_cast<double>(x.rows()));
  }
}

TEST(OracleAccuracy, WellSeparatedAndShuffled) {
  ShiftSpec spec;
  spec.severities = {0.0};
  spec.sets_per_severity = 1;
  const SyntheticBenchmark b = generate(spec);
  const RowMatrixD means = estimate_class_means(b.reference, spec.n_classes);
  EXPECT_GT(oracle_accuracy(b.shifted[0], means), 0.99);
  LabeledSet shuffled = b.shifted[0];
  Rng rng(1);
  for (std::size_t i = shuffled.labels.size() - 1; i > 0; --i) std::swap(shuffled.labels[i], shuffled.labels[rng.index(i + 1)]);
  EXPECT_NEAR(oracle_accuracy(shuffled, means), 1.0 / static_cast<double>(spec.n_classes), 0.03);
}

TEST(RunStudy, RowsCorrelationsAndBaseline) {
  const SyntheticBenchmark b = generate(small_spec());
  const BenchResult r = run_study(b, fast_config());
  ASSERT_EQ(r.rows.size(), b.shifted.size());
  ASSERT_EQ(r.correlations.size(), 4u);
  EXPECT_EQ(r.correlations[0].method_label, "js");
  EXPECT_EQ(r.correlation("kid").method_label, "kid");
  EXPECT_THROW(r.correlation("emd"), ArgumentError);
  // A severity-0 set has the smallest JS.
  std::size_t argmin = 0;
  for (std::size_t i = 0; i < r.rows.size(); ++i) if (r.rows[i].js < r.rows[argmin].js) argmin = i;
  EXPECT_EQ(r.rows[argmin].severity, 0.0);
  EXPECT_FALSE(r.predictor_rmse.has_value());
  EXPECT_EQ(r.to_json()["rows"].size(), r.rows.size());
  const std::string csv = r.to_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(r.rows.size() + 1));
}

TEST(RunStudy, Deterministic) {
  const BenchResult a = run_study(small_spec(5), fast_config());
  const BenchResult b = run_study(small_spec(5), fast_config());
  EXPECT_EQ(a.to_csv(), b.to_csv());
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
}

TEST(RunStudy, JsAndAccuracyMonotoneAcrossSeeds) {
  int js_monotone = 0;
  int acc_monotone = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ShiftSpec spec;
    spec.samples_per_class = 200;
    spec.severities = {0.0, 4.0, 8.0, 12.0, 16.0};
    spec.sets_per_severity = 1;
    spec.seed = seed;
    BenchConfig config = fast_config();
    config.k = 20;
    const BenchResult r = run_study(spec, config);
    bool js_ok = true;
    bool acc_ok = true;
    for (std::size_t i = 1; i < r.rows.size(); ++i) {
      js_ok = js_ok && r.rows[i].js >= r.rows[i - 1].js;
      acc_ok = acc_ok && r.rows[i].oracle_accuracy <= r.rows[i - 1].oracle_accuracy;
    }
    js_monotone += js_ok;
    acc_monotone += acc_ok;
  }
  EXPECT_GE(js_monotone, 9);
  EXPECT_GE(acc_monotone, 9);
}

TEST(KSweep, OneRowPerK) {
  const SyntheticBenchmark b = generate(small_spec());
  const auto rows = k_sweep(b, fast_config(), {4, 8, 16});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[2].k, 16u);
  EXPECT_GT(rows[0].inertia, rows[2].inertia);
  const std::string csv = k_sweep_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_THROW(k_sweep(b, fast_config(), {1}), ArgumentError);
}

}  // namespace
}  // namespace bop::synth
