#include "bop/histogram.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "bop/error.hpp"

namespace bop {
namespace {

void check_comparable(const BopHistogram& a, const BopHistogram& b) {
  if (a.codebook_fingerprint() != b.codebook_fingerprint()) {
    throw ComparabilityError("histograms were encoded with different codebooks (" +
                             a.codebook_fingerprint().substr(0, 12) + " vs " +
                             b.codebook_fingerprint().substr(0, 12) + ")");
  }
  if (a.size() != b.size()) {
    throw ComparabilityError("histograms have different lengths (" + std::to_string(a.size()) +
                             " vs " + std::to_string(b.size()) + ")");
  }
}

// p * ln(p / m) with 0 * ln(0 / m) = 0.
double kl_term(double p, double m) { return p > 0.0 ? p * std::log(p / m) : 0.0; }

}  // namespace

BopHistogram::BopHistogram(std::vector<double> bins, std::string codebook_fingerprint,
                           std::uint64_t n_encoded)
    : bins_(std::move(bins)), fingerprint_(std::move(codebook_fingerprint)), n_encoded_(n_encoded) {
  if (bins_.empty()) throw ArgumentError("histogram needs at least one bin");
  double sum = 0.0;
  for (std::size_t i = 0; i < bins_.size(); ++i) {
    if (!std::isfinite(bins_[i]) || bins_[i] < 0.0) {
      throw ArgumentError("histogram bin " + std::to_string(i) + " is negative or non-finite");
    }
    sum += bins_[i];
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ArgumentError("histogram bins sum to " + std::to_string(sum) + ", expected 1");
  }
}

BopHistogram BopHistogram::from_counts(std::span<const std::uint64_t> counts,
                                       std::string codebook_fingerprint) {
  std::uint64_t total = 0;
  for (const auto c : counts) total += c;
  if (total == 0) throw ArgumentError("cannot normalise an all-zero count vector");
  std::vector<double> bins(counts.size());
  const double n = static_cast<double>(total);
  for (std::size_t i = 0; i < counts.size(); ++i) bins[i] = static_cast<double>(counts[i]) / n;
  return BopHistogram(std::move(bins), std::move(codebook_fingerprint), total);
}

nlohmann::json BopHistogram::to_json() const {
  return nlohmann::json{{"codebook_fingerprint", fingerprint_},
                        {"n_encoded", n_encoded_},
                        {"bins", bins_}};
}

BopHistogram BopHistogram::from_json(const nlohmann::json& j) {
  try {
    return BopHistogram(j.at("bins").get<std::vector<double>>(),
                        j.at("codebook_fingerprint").get<std::string>(),
                        j.at("n_encoded").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed histogram JSON: ") + e.what());
  }
}

std::vector<std::uint64_t> bin_counts(const FeatureMatrix& features, const Codebook& codebook) {
  const auto labels = assign(features, codebook);
  std::vector<std::uint64_t> counts(codebook.k(), 0);
  for (const auto label : labels) ++counts[label];
  return counts;
}

BopHistogram encode(const FeatureMatrix& features, const Codebook& codebook) {
  const auto counts = bin_counts(features, codebook);
  return BopHistogram::from_counts(counts, codebook.fingerprint_hex());
}

double js_divergence(const BopHistogram& a, const BopHistogram& b) {
  check_comparable(a, b);
  const auto pa = a.bins();
  const auto pb = b.bins();
  double sum = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double m = 0.5 * (pa[i] + pb[i]);
    // Both terms are added in a fixed order, so the result is exactly symmetric.
    sum += kl_term(pa[i], m) + kl_term(pb[i], m);
  }
  return std::clamp(0.5 * sum, 0.0, std::numbers::ln2);
}

double hellinger(const BopHistogram& a, const BopHistogram& b) {
  check_comparable(a, b);
  const auto pa = a.bins();
  const auto pb = b.bins();
  double sum = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double diff = std::sqrt(pa[i]) - std::sqrt(pb[i]);
    sum += diff * diff;
  }
  return std::min(1.0, std::sqrt(0.5 * sum));
}

double chi_squared(const BopHistogram& a, const BopHistogram& b) {
  check_comparable(a, b);
  const auto pa = a.bins();
  const auto pb = b.bins();
  double sum = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double denom = pa[i] + pb[i];
    if (denom <= 0.0) continue;
    const double diff = pa[i] - pb[i];
    sum += diff * diff / denom;
  }
  return std::clamp(0.5 * sum, 0.0, 1.0);
}

HistogramDistance parse_histogram_distance(std::string_view name) {
  if (name == "js") return HistogramDistance::js;
  if (name == "hellinger") return HistogramDistance::hellinger;
  if (name == "chi2" || name == "chi-squared") return HistogramDistance::chi2;
  throw ArgumentError("unknown histogram distance '" + std::string(name) + "'");
}

std::string_view to_string(HistogramDistance d) {
  switch (d) {
    case HistogramDistance::js: return "js";
    case HistogramDistance::hellinger: return "hellinger";
    case HistogramDistance::chi2: return "chi2";
  }
  return "unknown";
}

double distance(HistogramDistance d, const BopHistogram& a, const BopHistogram& b) {
  switch (d) {
    case HistogramDistance::js: return js_divergence(a, b);
    case HistogramDistance::hellinger: return hellinger(a, b);
    case HistogramDistance::chi2: return chi_squared(a, b);
  }
  throw ArgumentError("unknown histogram distance");
}

void save_histogram(const BopHistogram& h, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw WriteError("cannot open '" + path.string() + "' for writing");
  out << h.to_json().dump(2) << '\n';
  if (!out) throw WriteError("write to '" + path.string() + "' failed");
}

BopHistogram load_histogram(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": invalid JSON: " + e.what());
  }
  return BopHistogram::from_json(j);
}

}  // namespace bop
