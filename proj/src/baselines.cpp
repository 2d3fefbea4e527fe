#include "bop/baselines.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <vector>

#include "bop/error.hpp"
#include "bop/parallel.hpp"

namespace bop {
namespace {

// Symmetric PSD square root via eigendecomposition, eigenvalues clamped at 0.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

struct KernelEval {
  KernelKind kind;
  double gamma = 0.0;  // rbf: 1 / (2 sigma^2)
  double scale = 1.0;
  double coef = 0.0;
  int degree = 1;
};

double ipow(double base, int exponent) {
  double out = 1.0;
  for (int i = 0; i < exponent; ++i) out *= base;
  return out;
}

// Sum of k(x_i, y_j) over all i, j, optionally skipping i == j (same-set
// Gram matrices only). Per-row sums are reduced in row order afterwards.
double gram_sum(const RowMatrixD& x, const RowMatrixD& y, const KernelEval& kernel,
                bool skip_diagonal) {
  const Eigen::Index nx = x.rows();
  std::vector<double> row_sums(static_cast<std::size_t>(nx), 0.0);
  const Eigen::VectorXd y_norms = y.rowwise().squaredNorm();
  constexpr Eigen::Index kBlock = 128;
  const std::size_t blocks = static_cast<std::size_t>((nx + kBlock - 1) / kBlock);
  parallel_for(blocks, 1, [&](std::size_t first, std::size_t last) {
    Eigen::MatrixXd dots;
    for (std::size_t b = first; b < last; ++b) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(b) * kBlock;
      const Eigen::Index rows = std::min(kBlock, nx - r0);
      dots.noalias() = x.middleRows(r0, rows) * y.transpose();
      for (Eigen::Index i = 0; i < rows; ++i) {
        const Eigen::Index row = r0 + i;
        const double x_norm = x.row(row).squaredNorm();
        double sum = 0.0;
        for (Eigen::Index j = 0; j < y.rows(); ++j) {
          if (skip_diagonal && j == row) continue;
          double value;
          if (kernel.kind == KernelKind::rbf) {
            const double sq = std::max(0.0, x_norm + y_norms(j) - 2.0 * dots(i, j));
            value = std::exp(-kernel.gamma * sq);
          } else {
            value = ipow(kernel.scale * dots(i, j) + kernel.coef, kernel.degree);
          }
          sum += value;
        }
        row_sums[static_cast<std::size_t>(row)] = sum;
      }
    }
  });
  double total = 0.0;
  for (const double s : row_sums) total += s;
  return total;
}

}  // namespace

void GaussianSummary::validate() const {
  const Eigen::Index d = mean.size();
  if (d < 1) throw ArgumentError("Gaussian summary has empty mean");
  if (covariance.rows() != d || covariance.cols() != d) {
    throw ArgumentError("Gaussian summary covariance shape does not match mean");
  }
  if (n < 2) throw ArgumentError("Gaussian summary needs n >= 2");
  if (!mean.allFinite() || !covariance.allFinite()) {
    throw ArgumentError("Gaussian summary contains non-finite values");
  }
  const double scale = std::max(1.0, covariance.cwiseAbs().maxCoeff());
  if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
    throw ArgumentError("covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(covariance, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() < -1e-8 * scale) {
    throw ArgumentError("covariance is not positive semidefinite");
  }
}

GaussianSummary summarize(const FeatureMatrix& features) {
  if (features.rows() < 2) {
    throw ArgumentError("summarize needs at least 2 rows, got " + std::to_string(features.rows()));
  }
  const RowMatrixD x = features.to_double();
  GaussianSummary out;
  out.n = features.rows();
  out.mean = x.colwise().mean().transpose();
  const RowMatrixD centered = x.rowwise() - out.mean.transpose();
  out.covariance = (centered.transpose() * centered) / static_cast<double>(out.n - 1);
  // Exact symmetry regardless of GEMM blocking.
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  return out;
}

double frechet_distance(const GaussianSummary& a, const GaussianSummary& b) {
  a.validate();
  b.validate();
  if (a.mean.size() != b.mean.size()) {
    throw ArgumentError("Frechet distance: dimensions differ (" + std::to_string(a.mean.size()) +
                        " vs " + std::to_string(b.mean.size()) + ")");
  }
  const double mean_term = (a.mean - b.mean).squaredNorm();
  const Eigen::MatrixXd root_a = psd_sqrt(a.covariance);
  Eigen::MatrixXd inner = root_a * b.covariance * root_a;
  inner = 0.5 * (inner + inner.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(inner, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw NumericalError("Frechet distance: eigensolver failed");
  const double trace_cross = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * trace_cross;
  if (!std::isfinite(value)) throw NumericalError("Frechet distance is not finite");
  const double scale = std::max(1.0, a.covariance.trace() + b.covariance.trace());
  if (value < -1e-6 * scale) {
    throw NumericalError("Frechet distance came out negative (" + std::to_string(value) + ")");
  }
  return std::max(0.0, value);
}

double frechet_distance(const FeatureMatrix& a, const FeatureMatrix& b) {
  return frechet_distance(summarize(a), summarize(b));
}

KernelConfig KernelConfig::rbf(std::optional<double> bandwidth) {
  KernelConfig config;
  config.kind = KernelKind::rbf;
  config.bandwidth = bandwidth;
  return config;
}

KernelConfig KernelConfig::linear() {
  KernelConfig config;
  config.kind = KernelKind::polynomial;
  config.degree = 1;
  config.coef = 0.0;
  config.scale = 1.0;
  return config;
}

KernelConfig KernelConfig::kid() {
  KernelConfig config;
  config.kind = KernelKind::polynomial;
  config.degree = 3;
  config.coef = 1.0;
  config.scale = std::nullopt;
  return config;
}

void KernelConfig::validate() const {
  if (kind == KernelKind::rbf && bandwidth && !(*bandwidth > 0.0)) {
    throw ArgumentError("rbf bandwidth must be > 0");
  }
  if (kind == KernelKind::polynomial && degree < 1) {
    throw ArgumentError("polynomial kernel degree must be >= 1");
  }
}

nlohmann::json KernelConfig::to_json() const {
  nlohmann::json j;
  if (kind == KernelKind::rbf) {
    j["kind"] = "rbf";
    j["bandwidth"] = bandwidth ? nlohmann::json(*bandwidth) : nlohmann::json("median-heuristic");
  } else {
    j["kind"] = "polynomial";
    j["degree"] = degree;
    j["coef"] = coef;
    j["scale"] = scale ? nlohmann::json(*scale) : nlohmann::json("1/d");
  }
  return j;
}

MmdEstimator parse_mmd_estimator(std::string_view name) {
  if (name == "unbiased") return MmdEstimator::unbiased;
  if (name == "biased") return MmdEstimator::biased;
  throw ArgumentError("unknown MMD estimator '" + std::string(name) + "'");
}

double median_heuristic_bandwidth(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.dim() != b.dim()) throw ArgumentError("median heuristic: dimensions differ");
  constexpr std::size_t kMaxPooled = 2000;
  const std::size_t pooled = a.rows() + b.rows();
  const std::size_t used = std::min(pooled, kMaxPooled);
  const std::size_t d = a.dim();
  RowMatrixD points(static_cast<Eigen::Index>(used), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < used; ++i) {
    const std::size_t src = used == pooled ? i : (i * pooled) / used;
    const auto row = src < a.rows() ? a.row(src) : b.row(src - a.rows());
    for (std::size_t c = 0; c < d; ++c) points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = row[c];
  }
  std::vector<double> distances;
  distances.reserve(used * (used - 1) / 2);
  for (std::size_t i = 0; i < used; ++i) {
    for (std::size_t j = i + 1; j < used; ++j) {
      distances.push_back((points.row(static_cast<Eigen::Index>(i)) -
                           points.row(static_cast<Eigen::Index>(j))).norm());
    }
  }
  if (distances.empty()) return 1.0;
  const std::size_t mid = distances.size() / 2;
  std::nth_element(distances.begin(), distances.begin() + static_cast<std::ptrdiff_t>(mid), distances.end());
  double median = distances[mid];
  if (distances.size() % 2 == 0) {
    const double lower = *std::max_element(distances.begin(), distances.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (median + lower);
  }
  // All pooled rows coincide: any bandwidth gives the same (zero) discrepancy.
  return median > 0.0 ? median : 1.0;
}

double mmd(const FeatureMatrix& a, const FeatureMatrix& b, const KernelConfig& kernel,
           MmdEstimator estimator) {
  kernel.validate();
  if (a.dim() != b.dim()) {
    throw ArgumentError("MMD: dimensions differ (" + std::to_string(a.dim()) + " vs " +
                        std::to_string(b.dim()) + ")");
  }
  const bool unbiased = estimator == MmdEstimator::unbiased;
  if (unbiased && (a.rows() < 2 || b.rows() < 2)) {
    throw ArgumentError("unbiased MMD needs at least 2 rows per set");
  }
  KernelEval eval{kernel.kind};
  if (kernel.kind == KernelKind::rbf) {
    const double sigma = kernel.bandwidth ? *kernel.bandwidth : median_heuristic_bandwidth(a, b);
    eval.gamma = 1.0 / (2.0 * sigma * sigma);
  } else {
    eval.scale = kernel.scale ? *kernel.scale : 1.0 / static_cast<double>(a.dim());
    eval.coef = kernel.coef;
    eval.degree = kernel.degree;
  }
  const RowMatrixD x = a.to_double();
  const RowMatrixD y = b.to_double();
  const double m = static_cast<double>(x.rows());
  const double n = static_cast<double>(y.rows());
  const double xx = gram_sum(x, x, eval, unbiased) / (unbiased ? m * (m - 1.0) : m * m);
  const double yy = gram_sum(y, y, eval, unbiased) / (unbiased ? n * (n - 1.0) : n * n);
  const double xy = gram_sum(x, y, eval, false) / (m * n);
  const double value = (xx + yy) - 2.0 * xy;
  if (!std::isfinite(value)) throw NumericalError("MMD estimate is not finite");
  return value;
}

double kid(const FeatureMatrix& a, const FeatureMatrix& b, MmdEstimator estimator) {
  return mmd(a, b, KernelConfig::kid(), estimator);
}

}  // namespace bop
