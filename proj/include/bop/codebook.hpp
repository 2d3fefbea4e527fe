#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "bop/digest.hpp"
#include "bop/features.hpp"

namespace bop {

struct KMeansConfig {
  std::size_t k = 8;
  std::size_t max_iterations = 300;
  // Stop once an iteration lowers the inertia by less than this fraction.
  double tolerance = 1e-6;
  std::uint64_t seed = 0;
  std::size_t n_restarts = 3;

  void validate() const;
};

// K ordered prototypes in feature space. Prototype order is part of the
// codebook's identity: histogram bin i always refers to prototype i, and the
// fingerprint (SHA-256 over K, d and the prototype values) binds histograms
// and models to the exact codebook that produced them.
class Codebook {
 public:
  Codebook(RowMatrixD prototypes, std::string reference_id, std::uint64_t seed, double inertia);

  std::size_t k() const { return static_cast<std::size_t>(prototypes_->rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(prototypes_->cols()); }
  const RowMatrixD& prototypes() const { return *prototypes_; }
  const std::string& reference_id() const { return reference_id_; }
  std::uint64_t seed() const { return seed_; }
  double inertia() const { return inertia_; }
  const Sha256& fingerprint() const { return fingerprint_; }
  std::string fingerprint_hex() const { return to_hex(fingerprint_); }

  static Sha256 compute_fingerprint(const RowMatrixD& prototypes);

 private:
  std::shared_ptr<const RowMatrixD> prototypes_;
  std::string reference_id_;
  std::uint64_t seed_;
  double inertia_;
  Sha256 fingerprint_;
};

// Everything a k-means run produced; kmeans_fit() keeps only the codebook.
struct KMeansResult {
  Codebook codebook;
  // Final assignment of every reference row; equals assign(reference, codebook).
  std::vector<std::uint32_t> assignment;
  // Inertia after each assignment step of the winning restart, starting with
  // the assignment to the initial seeds.
  std::vector<double> inertia_trace;
  std::size_t iterations = 0;
  bool converged = false;
  std::size_t best_restart = 0;
  std::vector<double> restart_inertias;
};

// Lloyd's algorithm with k-means++ seeding; best of `n_restarts` runs.
KMeansResult kmeans_fit_detailed(const FeatureMatrix& reference, const KMeansConfig& config,
                                 std::string reference_id = {});
Codebook kmeans_fit(const FeatureMatrix& reference, const KMeansConfig& config,
                    std::string reference_id = {});

// Nearest prototype (squared Euclidean) for every row; ties go to the lowest
// prototype index.
std::vector<std::uint32_t> assign(const FeatureMatrix& features, const Codebook& codebook);

// Sum of squared distances from every row to its nearest prototype.
double quantization_error(const FeatureMatrix& features, const Codebook& codebook);

void save_codebook(const Codebook& codebook, const std::filesystem::path& path);
Codebook load_codebook(const std::filesystem::path& path);

namespace detail {

// Row-wise nearest-centre search shared by fitting and quantisation. Writes the
// winning index and its exact squared distance for every row of `points`.
void nearest_centers(const RowMatrixD& points, const RowMatrixD& centers,
                     std::span<std::uint32_t> labels, std::span<double> distances);

double squared_distance(const double* a, const double* b, std::size_t dim);

}  // namespace detail
}  // namespace bop
