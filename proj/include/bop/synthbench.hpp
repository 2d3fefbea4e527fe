#pragma once

// Desk-scale synthetic benchmark. A Gaussian-mixture reference set stands in
// for a training set, severity-graded shifted copies stand in for unlabeled
// test sets, and a nearest-class-mean classifier fitted on the labeled
// reference stands in for the trained model whose accuracy is predicted.
//
// Class labels exist only inside this module; every distance and histogram is
// computed from features alone.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bop/codebook.hpp"
#include "bop/features.hpp"
#include "bop/predictor.hpp"
#include "bop/stats.hpp"
#include "json.hpp"

namespace bop::synth {

enum class ShiftKind { mean_drift, noise_inflation, class_imbalance };

ShiftKind parse_shift_kind(std::string_view name);
std::string_view to_string(ShiftKind kind);

struct ShiftSpec {
  std::size_t n_classes = 10;
  std::size_t dim = 32;
  std::size_t samples_per_class = 500;
  // Minimum distance between any two class means.
  double class_separation = 6.0;
  // Per-class isotropic standard deviation.
  double noise = 1.0;
  // Severity levels, ascending. For mean_drift a severity is the drift length
  // in the same units as `noise`.
  std::vector<double> severities{3.0, 6.0, 9.0, 12.0, 15.0};
  // Datasets generated per severity level.
  std::size_t sets_per_severity = 4;
  // Replicates within a level are spread evenly over this fraction of the
  // smallest gap between levels, centred on the level (0 = all identical).
  double severity_spread = 1.0;
  ShiftKind shift_kind = ShiftKind::mean_drift;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

struct LabeledSet {
  FeatureMatrix features;
  std::vector<std::uint32_t> labels;
  double severity = 0.0;
  std::size_t level = 0;
  std::size_t replicate = 0;
};

struct SyntheticBenchmark {
  ShiftSpec spec;
  LabeledSet reference;
  std::vector<LabeledSet> shifted;  // level-major, replicate-minor
  RowMatrixD class_means;           // generating means
  Eigen::VectorXd drift_direction;  // unit vector
};

SyntheticBenchmark generate(const ShiftSpec& spec);

// Per-class means of a labeled set (the "trained" nearest-mean classifier).
RowMatrixD estimate_class_means(const LabeledSet& set, std::size_t n_classes);

// Fraction of rows whose nearest class mean (lowest index on ties) carries
// the row's hidden label.
double oracle_accuracy(const LabeledSet& set, const RowMatrixD& class_means);

struct BenchConfig {
  std::size_t k = 50;
  KMeansConfig kmeans{};  // its k is overridden by `k`
  // Rows per set fed to MMD/KID (seeded subsample); 0 uses every row.
  std::size_t kernel_rows = 500;
  bool train_predictor = true;
  // Severity level held out from predictor training.
  std::size_t holdout_level = 2;
  TrainConfig predictor{0.01, 1500, 32, 0, std::nullopt, 0.0};

  nlohmann::json to_json() const;
};

struct BenchRow {
  std::size_t index = 0;
  std::size_t level = 0;
  std::size_t replicate = 0;
  double severity = 0.0;
  double js = 0.0;
  double fd = 0.0;
  double mmd = 0.0;
  double kid = 0.0;
  double oracle_accuracy = 0.0;
  std::optional<double> predicted_accuracy;
};

struct BenchResult {
  std::size_t k = 0;
  std::string codebook_fingerprint;
  double codebook_inertia = 0.0;
  std::vector<BenchRow> rows;
  // js, fd, mmd, kid, in that order; x = distance, y = oracle accuracy.
  std::vector<CorrelationReport> correlations;
  // Root mean squared error on the held-out level, in accuracy points (x100).
  std::optional<double> predictor_rmse;
  std::optional<double> predictor_train_loss;

  const CorrelationReport& correlation(std::string_view method) const;
  nlohmann::json to_json() const;
  std::string to_csv() const;
};

BenchResult run_study(const SyntheticBenchmark& bench, const BenchConfig& config);
BenchResult run_study(const ShiftSpec& spec, const BenchConfig& config);

struct KSweepRow {
  std::size_t k = 0;
  double inertia = 0.0;
  CorrelationReport js;
};

// BoP + JS correlation against oracle accuracy for each codebook size.
std::vector<KSweepRow> k_sweep(const SyntheticBenchmark& bench, const BenchConfig& config,
                               const std::vector<std::size_t>& ks);

std::string k_sweep_csv(const std::vector<KSweepRow>& rows);

}  // namespace bop::synth
