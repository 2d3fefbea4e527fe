#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace bop {

using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class FeatureFormat { binary, csv };

// Parses "binary"/"bopf" or "csv".
FeatureFormat parse_feature_format(std::string_view name);

// Picks the format from the file extension: ".csv"/".txt" are CSV, anything
// else is treated as binary.
FeatureFormat format_from_path(const std::filesystem::path& path);

// N x d matrix of externally extracted features, one row per image.
//
// Values are held at the 32-bit on-disk precision so save/load round-trips are
// exact; numerical code converts to double (see to_double()). The matrix is
// immutable and copies share storage, so it can be handed to concurrent
// readers freely.
class FeatureMatrix {
 public:
  // Throws ArgumentError if empty or if any value is non-finite.
  explicit FeatureMatrix(RowMatrixF values);

  // Narrows to float; values outside float range are rejected as non-finite.
  static FeatureMatrix from_doubles(const RowMatrixD& values);

  std::size_t rows() const { return static_cast<std::size_t>(values_->rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(values_->cols()); }

  const RowMatrixF& values() const { return *values_; }
  std::span<const float> row(std::size_t i) const {
    return {values_->data() + i * dim(), dim()};
  }

  RowMatrixD to_double() const { return values_->cast<double>(); }

  // Copies the listed rows, in order, into a new matrix.
  FeatureMatrix select_rows(std::span<const std::size_t> indices) const;

 private:
  std::shared_ptr<const RowMatrixF> values_;
};

// One dataset of a study: its features and, optionally, the accuracy of the
// model under study on it (a fraction in [0, 1]).
struct DatasetRecord {
  std::string id;
  FeatureMatrix features;
  std::optional<double> accuracy;
  std::string source_path;

  // Throws ArgumentError on an empty id or an accuracy outside [0, 1].
  void validate() const;
};

FeatureMatrix load_features(const std::filesystem::path& path, FeatureFormat format);
void save_features(const FeatureMatrix& matrix, const std::filesystem::path& path,
                   FeatureFormat format);

// Uniform sample without replacement of max(1, round(fraction * rows)) rows,
// drawn by a seeded partial Fisher-Yates shuffle.
FeatureMatrix subsample(const FeatureMatrix& matrix, double fraction, std::uint64_t seed);

// Same, returning the chosen row indices in draw order.
std::vector<std::size_t> subsample_indices(std::size_t n_rows, double fraction,
                                           std::uint64_t seed);

}  // namespace bop
