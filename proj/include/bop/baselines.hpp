#pragma once

// Moment- and kernel-based dataset distances computed on raw features:
// Frechet distance, maximum mean discrepancy and kernel inception distance.

#include <Eigen/Core>

#include <cstddef>
#include <optional>
#include <string_view>

#include "bop/features.hpp"
#include "json.hpp"

namespace bop {

struct GaussianSummary {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  std::size_t n = 0;

  // Symmetric to 1e-9, eigenvalues >= -1e-8, n >= 2, matching sizes.
  void validate() const;
};

// Column means and unbiased (n - 1) covariance.
GaussianSummary summarize(const FeatureMatrix& features);

// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
//
// tr (S_a S_b)^{1/2} is evaluated as tr sqrt(S_a^{1/2} S_b S_a^{1/2}) with both
// square roots taken from symmetric eigendecompositions, negative eigenvalues
// clamped to zero.
double frechet_distance(const GaussianSummary& a, const GaussianSummary& b);
double frechet_distance(const FeatureMatrix& a, const FeatureMatrix& b);

enum class KernelKind { rbf, polynomial };

// k(x, y) = exp(-||x - y||^2 / (2 bandwidth^2))         (rbf)
// k(x, y) = (scale * x.y + coef)^degree                 (polynomial)
struct KernelConfig {
  KernelKind kind = KernelKind::rbf;
  // Empty selects the median heuristic over pooled pairwise distances.
  std::optional<double> bandwidth;
  int degree = 3;
  double coef = 1.0;
  // Empty means 1 / d.
  std::optional<double> scale;

  static KernelConfig rbf(std::optional<double> bandwidth = std::nullopt);
  static KernelConfig linear();
  // Cubic polynomial used by KID: (x.y / d + 1)^3.
  static KernelConfig kid();

  void validate() const;
  nlohmann::json to_json() const;
};

enum class MmdEstimator { biased, unbiased };

MmdEstimator parse_mmd_estimator(std::string_view name);

// Median Euclidean distance over all pairs of the pooled rows. Above 2000
// pooled rows an evenly strided subset of 2000 rows is used.
double median_heuristic_bandwidth(const FeatureMatrix& a, const FeatureMatrix& b);

// Squared MMD estimate. The biased V-statistic keeps the diagonal of the
// within-set Gram matrices; the unbiased U-statistic drops it.
double mmd(const FeatureMatrix& a, const FeatureMatrix& b, const KernelConfig& kernel = {},
           MmdEstimator estimator = MmdEstimator::unbiased);

double kid(const FeatureMatrix& a, const FeatureMatrix& b,
           MmdEstimator estimator = MmdEstimator::unbiased);

}  // namespace bop
