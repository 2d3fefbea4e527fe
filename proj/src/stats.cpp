#include "bop/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bop/error.hpp"

namespace bop {
namespace {

double mean_of(std::span<const double> v) {
  double sum = 0.0;
  for (const double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

int sign(double v) { return (v > 0.0) - (v < 0.0); }

double median_of(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
  return m;
}

LineFit weighted_fit(std::span<const double> x, std::span<const double> y,
                     std::span<const double> w) {
  double sw = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    sx += w[i] * x[i];
    sy += w[i] * y[i];
  }
  if (!(sw > 0.0)) throw DegenerateFitError("line fit: all weights are zero");
  const double mx = sx / sw;
  const double my = sy / sw;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    sxx += w[i] * dx * dx;
    sxy += w[i] * dx * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw DegenerateFitError("line fit: x has no spread among weighted points");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  return fit;
}

}  // namespace

PairedSeries::PairedSeries(std::vector<double> x, std::vector<double> y)
    : x_(std::move(x)), y_(std::move(y)) {
  if (x_.size() != y_.size()) {
    throw ArgumentError("paired series lengths differ (" + std::to_string(x_.size()) + " vs " +
                        std::to_string(y_.size()) + ")");
  }
  if (x_.size() < 2) throw ArgumentError("paired series needs at least 2 points");
  for (std::size_t i = 0; i < x_.size(); ++i) {
    if (!std::isfinite(x_[i]) || !std::isfinite(y_[i])) {
      throw ArgumentError("paired series has a non-finite value at index " + std::to_string(i));
    }
  }
}

double pearson(const PairedSeries& s) {
  const double mx = mean_of(s.x());
  const double my = mean_of(s.y());
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double dx = s.x()[i] - mx;
    const double dy = s.y()[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) {
    throw UndefinedCorrelationError("correlation is undefined for a constant series");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman(const PairedSeries& s) {
  return pearson(PairedSeries(average_ranks(s.x()), average_ranks(s.y())));
}

double weighted_kendall(const PairedSeries& s, KendallWeighting weighting) {
  const std::size_t n = s.size();
  const auto x = s.x();
  const auto y = s.y();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return y[a] > y[b]; });
  std::vector<double> rank(n);
  for (std::size_t r = 0; r < n; ++r) {
    if (r > 0 && y[order[r]] == y[order[r - 1]]) {
      throw UnsupportedTiesError(
          "weighted Kendall tau: the reference series has ties; use Spearman's rho instead");
    }
    rank[order[r]] = static_cast<double>(r);
  }
  double numerator = 0.0;
  double denominator = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double w = weighting == KendallWeighting::hyperbolic
                           ? 1.0 / (rank[i] + 1.0) + 1.0 / (rank[j] + 1.0)
                           : 1.0;
      numerator += w * sign(x[i] - x[j]) * sign(y[i] - y[j]);
      denominator += w;
    }
  }
  return std::clamp(numerator / denominator, -1.0, 1.0);
}

double rmse(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.size() != truth.size()) {
    throw ArgumentError("rmse: length mismatch (" + std::to_string(predicted.size()) + " vs " +
                        std::to_string(truth.size()) + ")");
  }
  if (predicted.empty()) throw ArgumentError("rmse: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double diff = predicted[i] - truth[i];
    sum += diff * diff;
  }
  return std::sqrt(sum / static_cast<double>(predicted.size()));
}

LineFit ols_fit(const PairedSeries& s) {
  const std::vector<double> ones(s.size(), 1.0);
  return weighted_fit(s.x(), s.y(), ones);
}

LineFit huber_fit(const PairedSeries& s) {
  constexpr double kTuning = 1.345;
  constexpr double kMadToSigma = 1.4826;
  constexpr std::size_t kMaxIterations = 100;
  constexpr double kStep = 1e-8;

  const auto x = s.x();
  const auto y = s.y();
  const std::size_t n = s.size();
  if (*std::min_element(x.begin(), x.end()) == *std::max_element(x.begin(), x.end())) {
    throw DegenerateFitError("Huber fit: x is constant");
  }
  double y_scale = 0.0;
  for (const double v : y) y_scale = std::max(y_scale, std::abs(v));
  // Scale floor keeps the threshold positive once inliers fit exactly.
  const double scale_floor = 1e-12 * (1.0 + y_scale);

  LineFit fit = ols_fit(s);
  std::vector<double> residuals(n);
  std::vector<double> weights(n);
  for (std::size_t it = 1; it <= kMaxIterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) residuals[i] = y[i] - (fit.slope * x[i] + fit.intercept);
    std::vector<double> abs_dev(n);
    const double centre = median_of(residuals);
    for (std::size_t i = 0; i < n; ++i) abs_dev[i] = std::abs(residuals[i] - centre);
    const double scale = std::max(kMadToSigma * median_of(abs_dev), scale_floor);
    const double threshold = kTuning * scale;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = std::abs(residuals[i]);
      weights[i] = r <= threshold ? 1.0 : threshold / r;
    }
    LineFit next = weighted_fit(x, y, weights);
    next.iterations = it;
    const double change = std::max(std::abs(next.slope - fit.slope),
                                   std::abs(next.intercept - fit.intercept));
    fit = next;
    if (change < kStep) break;
  }
  return fit;
}

nlohmann::json CorrelationReport::to_json() const {
  nlohmann::json j{
      {"method", method_label},
      {"n", n},
      {"pearson_r", pearson_r},
      {"spearman_rho", spearman_rho},
      {"kendall_tau_w", kendall_tau_w ? nlohmann::json(*kendall_tau_w) : nlohmann::json(nullptr)},
      {"huber_slope", huber_slope},
      {"huber_intercept", huber_intercept},
  };
  if (!kendall_tau_w_error.empty()) j["kendall_tau_w_error"] = kendall_tau_w_error;
  return j;
}

CorrelationReport correlate(const PairedSeries& s, std::string method_label) {
  CorrelationReport report;
  report.method_label = std::move(method_label);
  report.n = s.size();
  report.pearson_r = pearson(s);
  report.spearman_rho = spearman(s);
  try {
    report.kendall_tau_w = weighted_kendall(s);
  } catch (const UnsupportedTiesError& e) {
    report.kendall_tau_w.reset();
    report.kendall_tau_w_error = e.what();
  }
  const LineFit fit = huber_fit(s);
  report.huber_slope = fit.slope;
  report.huber_intercept = fit.intercept;
  return report;
}

}  // namespace bop
