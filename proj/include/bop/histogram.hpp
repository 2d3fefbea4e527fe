#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bop/codebook.hpp"
#include "bop/features.hpp"
#include "json.hpp"

namespace bop {

// A dataset's bag-of-prototypes representation: the normalised histogram of
// its features' nearest-prototype assignments over one codebook.
class BopHistogram {
 public:
  // Throws ArgumentError unless bins are finite, non-negative and sum to 1
  // within 1e-9.
  BopHistogram(std::vector<double> bins, std::string codebook_fingerprint, std::uint64_t n_encoded);

  static BopHistogram from_counts(std::span<const std::uint64_t> counts,
                                  std::string codebook_fingerprint);

  std::span<const double> bins() const { return bins_; }
  std::size_t size() const { return bins_.size(); }
  const std::string& codebook_fingerprint() const { return fingerprint_; }
  std::uint64_t n_encoded() const { return n_encoded_; }

  nlohmann::json to_json() const;
  static BopHistogram from_json(const nlohmann::json& j);

 private:
  std::vector<double> bins_;
  std::string fingerprint_;
  std::uint64_t n_encoded_;
};

// Count of rows quantised to each prototype.
std::vector<std::uint64_t> bin_counts(const FeatureMatrix& features, const Codebook& codebook);

BopHistogram encode(const FeatureMatrix& features, const Codebook& codebook);

// Jensen-Shannon divergence (natural log), in [0, ln 2].
double js_divergence(const BopHistogram& a, const BopHistogram& b);
// (1/sqrt 2) * ||sqrt(a) - sqrt(b)||, in [0, 1].
double hellinger(const BopHistogram& a, const BopHistogram& b);
// Symmetric chi-squared 1/2 * sum (a-b)^2 / (a+b), in [0, 1].
double chi_squared(const BopHistogram& a, const BopHistogram& b);

enum class HistogramDistance { js, hellinger, chi2 };

HistogramDistance parse_histogram_distance(std::string_view name);
std::string_view to_string(HistogramDistance d);
double distance(HistogramDistance d, const BopHistogram& a, const BopHistogram& b);

void save_histogram(const BopHistogram& h, const std::filesystem::path& path);
BopHistogram load_histogram(const std::filesystem::path& path);

}  // namespace bop
