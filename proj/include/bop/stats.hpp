#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace bop {

// Equal-length finite (x, y) pairs, n >= 2.
class PairedSeries {
 public:
  PairedSeries(std::vector<double> x, std::vector<double> y);

  std::span<const double> x() const { return x_; }
  std::span<const double> y() const { return y_; }
  std::size_t size() const { return x_.size(); }

 private:
  std::vector<double> x_;
  std::vector<double> y_;
};

double pearson(const PairedSeries& s);

// Pearson correlation of average ranks.
double spearman(const PairedSeries& s);

// 1-based ranks, tied values share the average of their positions.
std::vector<double> average_ranks(std::span<const double> values);

enum class KendallWeighting {
  // w(i, j) = 1/(r_i + 1) + 1/(r_j + 1), r = 0-based rank of y descending.
  hyperbolic,
  // Every pair weighs 1: plain Kendall tau-a.
  uniform,
};

// Weighted Kendall tau with weights taken from the y ranking (y is treated as
// the reference, e.g. model accuracy, best item first). Throws
// UnsupportedTiesError if y has ties.
double weighted_kendall(const PairedSeries& s,
                        KendallWeighting weighting = KendallWeighting::hyperbolic);

double rmse(std::span<const double> predicted, std::span<const double> truth);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  std::size_t iterations = 0;
};

// Ordinary least squares y = slope * x + intercept.
LineFit ols_fit(const PairedSeries& s);

// Huber M-estimate by IRLS. Threshold 1.345 * scale, scale = 1.4826 * MAD of the
// current residuals, re-estimated every round.
LineFit huber_fit(const PairedSeries& s);

struct CorrelationReport {
  std::string method_label;
  std::size_t n = 0;
  double pearson_r = 0.0;
  double spearman_rho = 0.0;
  // Empty when the reference ranking has ties.
  std::optional<double> kendall_tau_w;
  std::string kendall_tau_w_error;
  double huber_slope = 0.0;
  double huber_intercept = 0.0;

  nlohmann::json to_json() const;
};

CorrelationReport correlate(const PairedSeries& s, std::string method_label);

}  // namespace bop
