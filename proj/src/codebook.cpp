#include "bop/codebook.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

#include "binary_io.hpp"
#include "bop/error.hpp"
#include "bop/parallel.hpp"
#include "bop/rng.hpp"

namespace bop {
namespace {

constexpr std::array<char, 4> kCodebookMagic{'B', 'O', 'P', 'C'};
constexpr std::uint32_t kCodebookVersion = 1;
constexpr Eigen::Index kAssignBlock = 256;

void check_dims(const FeatureMatrix& features, const Codebook& codebook) {
  if (features.dim() != codebook.dim()) {
    throw ArgumentError("feature dimension " + std::to_string(features.dim()) +
                        " does not match codebook dimension " + std::to_string(codebook.dim()));
  }
}

RowMatrixD seed_plus_plus(const RowMatrixD& points, std::size_t k, Rng& rng) {
  const std::size_t n = static_cast<std::size_t>(points.rows());
  const std::size_t d = static_cast<std::size_t>(points.cols());
  RowMatrixD centers(static_cast<Eigen::Index>(k), points.cols());
  std::vector<bool> chosen(n, false);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());

  std::size_t pick = rng.index(n);
  for (std::size_t c = 0; c < k; ++c) {
    if (c > 0) {
      double total = 0.0;
      for (const double v : nearest) total += v;
      if (total > 0.0) {
        const double target = rng.uniform() * total;
        double running = 0.0;
        pick = n;
        std::size_t last_positive = 0;
        for (std::size_t i = 0; i < n; ++i) {
          if (nearest[i] <= 0.0) continue;
          last_positive = i;
          running += nearest[i];
          if (running > target) {
            pick = i;
            break;
          }
        }
        if (pick == n) pick = last_positive;
      } else {
        // Every remaining point coincides with a chosen seed.
        std::size_t skip = rng.index(n - c);
        for (std::size_t i = 0; i < n; ++i) {
          if (chosen[i]) continue;
          if (skip == 0) {
            pick = i;
            break;
          }
          --skip;
        }
      }
    }
    chosen[pick] = true;
    centers.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(pick));
    const double* seed_row = points.data() + pick * d;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], detail::squared_distance(points.data() + i * d, seed_row, d));
    }
  }
  return centers;
}

// Moves the rows farthest from their current prototype into empty clusters.
// Returns true if any cluster was empty.
bool repair_empty_clusters(std::size_t k, std::vector<std::uint32_t>& labels,
                           std::vector<double>& distances) {
  std::vector<std::size_t> counts(k, 0);
  for (const auto label : labels) ++counts[label];
  std::vector<std::size_t> empty;
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) empty.push_back(c);
  }
  if (empty.empty()) return false;

  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return distances[a] > distances[b]; });
  std::size_t cursor = 0;
  for (const std::size_t cluster : empty) {
    while (counts[labels[order[cursor]]] <= 1) ++cursor;
    const std::size_t row = order[cursor++];
    --counts[labels[row]];
    labels[row] = static_cast<std::uint32_t>(cluster);
    counts[cluster] = 1;
    distances[row] = 0.0;
  }
  return true;
}

RowMatrixD cluster_means(const RowMatrixD& points, const std::vector<std::uint32_t>& labels,
                         std::size_t k) {
  RowMatrixD sums = RowMatrixD::Zero(static_cast<Eigen::Index>(k), points.cols());
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    sums.row(labels[i]) += points.row(static_cast<Eigen::Index>(i));
    ++counts[labels[i]];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] > 0) sums.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(counts[c]);
  }
  return sums;
}

double total(const std::vector<double>& values) {
  double sum = 0.0;
  for (const double v : values) sum += v;
  return sum;
}

struct LloydRun {
  RowMatrixD centers;
  std::vector<std::uint32_t> labels;
  std::vector<double> trace;
  double inertia = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

LloydRun lloyd(const RowMatrixD& points, const KMeansConfig& config, Rng& rng) {
  const std::size_t n = static_cast<std::size_t>(points.rows());
  const std::size_t k = config.k;
  LloydRun run;
  run.centers = seed_plus_plus(points, k, rng);
  run.labels.resize(n);
  std::vector<double> distances(n);
  detail::nearest_centers(points, run.centers, run.labels, distances);
  bool repaired = repair_empty_clusters(k, run.labels, distances);
  run.inertia = total(distances);
  run.trace.push_back(run.inertia);

  std::vector<std::uint32_t> next_labels(n);
  for (std::size_t it = 1; it <= config.max_iterations; ++it) {
    run.centers = cluster_means(points, run.labels, k);
    detail::nearest_centers(points, run.centers, next_labels, distances);
    repaired = repair_empty_clusters(k, next_labels, distances);
    const double next_inertia = total(distances);
    run.trace.push_back(next_inertia);
    run.iterations = it;
    const bool unchanged = next_labels == run.labels;
    const double decrease = run.inertia - next_inertia;
    const double previous = run.inertia;
    std::swap(run.labels, next_labels);
    run.inertia = next_inertia;
    if (!repaired && (unchanged || decrease < config.tolerance * previous)) {
      run.converged = true;
      break;
    }
  }
  if (repaired) {
    // The last step moved rows by hand; re-centre so labels match the prototypes.
    run.centers = cluster_means(points, run.labels, k);
    detail::nearest_centers(points, run.centers, run.labels, distances);
    run.inertia = total(distances);
  }
  return run;
}

}  // namespace

void KMeansConfig::validate() const {
  if (k == 0) throw ArgumentError("k-means: k must be at least 1");
  if (max_iterations == 0) throw ArgumentError("k-means: max_iterations must be at least 1");
  if (!(tolerance >= 0.0)) throw ArgumentError("k-means: tolerance must be >= 0");
  if (n_restarts == 0) throw ArgumentError("k-means: n_restarts must be at least 1");
}

Codebook::Codebook(RowMatrixD prototypes, std::string reference_id, std::uint64_t seed,
                   double inertia)
    : reference_id_(std::move(reference_id)), seed_(seed), inertia_(inertia) {
  if (prototypes.rows() < 1 || prototypes.cols() < 1) {
    throw ArgumentError("codebook needs at least one prototype of dimension >= 1");
  }
  if (!prototypes.allFinite()) throw ArgumentError("codebook prototypes must be finite");
  if (!(inertia >= 0.0) || !std::isfinite(inertia)) {
    throw ArgumentError("codebook inertia must be finite and >= 0");
  }
  fingerprint_ = compute_fingerprint(prototypes);
  prototypes_ = std::make_shared<const RowMatrixD>(std::move(prototypes));
}

Sha256 Codebook::compute_fingerprint(const RowMatrixD& prototypes) {
  detail::ByteWriter writer;
  writer.put<std::uint64_t>(static_cast<std::uint64_t>(prototypes.rows()));
  writer.put<std::uint64_t>(static_cast<std::uint64_t>(prototypes.cols()));
  for (Eigen::Index i = 0; i < prototypes.size(); ++i) writer.put<double>(prototypes.data()[i]);
  return sha256(writer.bytes());
}

namespace detail {

double squared_distance(const double* a, const double* b, std::size_t dim) {
  double sum = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    const double diff = a[j] - b[j];
    sum += diff * diff;
  }
  return sum;
}

void nearest_centers(const RowMatrixD& points, const RowMatrixD& centers,
                     std::span<std::uint32_t> labels, std::span<double> distances) {
  const Eigen::Index n = points.rows();
  const Eigen::Index k = centers.rows();
  const std::size_t d = static_cast<std::size_t>(points.cols());
  const Eigen::VectorXd center_norms = centers.rowwise().squaredNorm();
  const double max_center_norm = center_norms.maxCoeff();
  const std::size_t blocks = static_cast<std::size_t>((n + kAssignBlock - 1) / kAssignBlock);

  parallel_for(blocks, 1, [&](std::size_t first, std::size_t last) {
    Eigen::MatrixXd cross;
    for (std::size_t b = first; b < last; ++b) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(b) * kAssignBlock;
      const Eigen::Index rows = std::min(kAssignBlock, n - r0);
      cross.noalias() = points.middleRows(r0, rows) * centers.transpose();
      for (Eigen::Index i = 0; i < rows; ++i) {
        const Eigen::Index row = r0 + i;
        const double* x = points.data() + static_cast<std::size_t>(row) * d;
        const double x_norm = points.row(row).squaredNorm();
        // The expanded form is only a filter: any centre within rounding slack
        // of the best is re-scored exactly, so ties and near-ties resolve
        // exactly as a direct scan would.
        double best_approx = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < k; ++j) {
          best_approx = std::min(best_approx, x_norm - 2.0 * cross(i, j) + center_norms(j));
        }
        const double slack = 1e-9 * (x_norm + max_center_norm);
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t best_index = 0;
        for (Eigen::Index j = 0; j < k; ++j) {
          if (x_norm - 2.0 * cross(i, j) + center_norms(j) > best_approx + 2.0 * slack) continue;
          const double exact = squared_distance(x, centers.data() + static_cast<std::size_t>(j) * d, d);
          if (exact < best) {
            best = exact;
            best_index = static_cast<std::uint32_t>(j);
          }
        }
        labels[static_cast<std::size_t>(row)] = best_index;
        distances[static_cast<std::size_t>(row)] = best;
      }
    }
  });
}

}  // namespace detail

KMeansResult kmeans_fit_detailed(const FeatureMatrix& reference, const KMeansConfig& config,
                                 std::string reference_id) {
  config.validate();
  if (config.k > reference.rows()) {
    throw ArgumentError("k-means: k = " + std::to_string(config.k) + " exceeds the " +
                        std::to_string(reference.rows()) + " reference rows");
  }
  const RowMatrixD points = reference.to_double();
  std::optional<LloydRun> best;
  std::size_t best_restart = 0;
  std::vector<double> restart_inertias;
  for (std::size_t r = 0; r < config.n_restarts; ++r) {
    Rng rng(mix_seed(config.seed, r));
    LloydRun run = lloyd(points, config, rng);
    restart_inertias.push_back(run.inertia);
    if (!best || run.inertia < best->inertia) {
      best = std::move(run);
      best_restart = r;
    }
  }
  Codebook codebook(std::move(best->centers), std::move(reference_id), config.seed, best->inertia);
  return KMeansResult{std::move(codebook), std::move(best->labels), std::move(best->trace),
                      best->iterations, best->converged, best_restart, std::move(restart_inertias)};
}

Codebook kmeans_fit(const FeatureMatrix& reference, const KMeansConfig& config,
                    std::string reference_id) {
  return kmeans_fit_detailed(reference, config, std::move(reference_id)).codebook;
}

namespace {

// Runs the nearest-centre search over a float matrix in double-precision
// blocks so large inputs are never fully duplicated.
void assign_in_blocks(const FeatureMatrix& features, const Codebook& codebook,
                      std::span<std::uint32_t> labels, std::span<double> distances) {
  constexpr std::size_t kRowsPerPass = 1 << 14;
  const std::size_t n = features.rows();
  for (std::size_t start = 0; start < n; start += kRowsPerPass) {
    const std::size_t rows = std::min(kRowsPerPass, n - start);
    const RowMatrixD block = features.values()
                                 .middleRows(static_cast<Eigen::Index>(start),
                                             static_cast<Eigen::Index>(rows))
                                 .cast<double>();
    detail::nearest_centers(block, codebook.prototypes(), labels.subspan(start, rows),
                            distances.subspan(start, rows));
  }
}

}  // namespace

std::vector<std::uint32_t> assign(const FeatureMatrix& features, const Codebook& codebook) {
  check_dims(features, codebook);
  std::vector<std::uint32_t> labels(features.rows());
  std::vector<double> distances(features.rows());
  assign_in_blocks(features, codebook, labels, distances);
  return labels;
}

double quantization_error(const FeatureMatrix& features, const Codebook& codebook) {
  check_dims(features, codebook);
  std::vector<std::uint32_t> labels(features.rows());
  std::vector<double> distances(features.rows());
  assign_in_blocks(features, codebook, labels, distances);
  return total(distances);
}

void save_codebook(const Codebook& codebook, const std::filesystem::path& path) {
  detail::ByteWriter writer;
  writer.put_bytes(kCodebookMagic.data(), kCodebookMagic.size());
  writer.put<std::uint32_t>(kCodebookVersion);
  writer.put<std::uint32_t>(static_cast<std::uint32_t>(codebook.k()));
  writer.put<std::uint32_t>(static_cast<std::uint32_t>(codebook.dim()));
  writer.put<std::uint32_t>(static_cast<std::uint32_t>(codebook.reference_id().size()));
  writer.put_bytes(codebook.reference_id().data(), codebook.reference_id().size());
  writer.put<std::uint64_t>(codebook.seed());
  writer.put<double>(codebook.inertia());
  const RowMatrixD& prototypes = codebook.prototypes();
  for (Eigen::Index i = 0; i < prototypes.size(); ++i) writer.put<double>(prototypes.data()[i]);
  writer.put_bytes(codebook.fingerprint().data(), codebook.fingerprint().size());
  detail::write_file_bytes(path.string(), writer.bytes());
}

Codebook load_codebook(const std::filesystem::path& path) {
  const std::string where = path.string();
  const std::vector<std::byte> bytes = detail::read_file_bytes(where);
  detail::ByteReader reader(bytes);
  std::array<char, 4> magic{};
  reader.take(magic.data(), magic.size());
  const auto version = reader.get<std::uint32_t>();
  const auto k = reader.get<std::uint32_t>();
  const auto dim = reader.get<std::uint32_t>();
  const auto id_length = reader.get<std::uint32_t>();
  if (!reader.ok()) throw IntegrityError(where + ": truncated codebook header");
  if (magic != kCodebookMagic) throw IntegrityError(where + ": bad magic, not a BOPC codebook");
  if (version != kCodebookVersion) {
    throw IntegrityError(where + ": unsupported codebook version " + std::to_string(version));
  }
  if (k == 0 || dim == 0) throw IntegrityError(where + ": codebook declares zero prototypes or dimension");
  if (id_length > reader.remaining()) throw IntegrityError(where + ": truncated reference id");
  std::string reference_id(id_length, '\0');
  reader.take(reference_id.data(), id_length);
  const auto seed = reader.get<std::uint64_t>();
  const auto inertia = reader.get<double>();
  const std::uint64_t values = static_cast<std::uint64_t>(k) * dim;
  if (!reader.ok() || reader.remaining() != values * sizeof(double) + 32) {
    throw IntegrityError(where + ": codebook payload has the wrong size (truncated or trailing bytes)");
  }
  RowMatrixD prototypes(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < prototypes.size(); ++i) prototypes.data()[i] = reader.get<double>();
  Sha256 stored{};
  reader.take(stored.data(), stored.size());
  if (!prototypes.allFinite() || !std::isfinite(inertia) || inertia < 0.0) {
    throw IntegrityError(where + ": codebook contains non-finite values");
  }
  if (Codebook::compute_fingerprint(prototypes) != stored) {
    throw IntegrityError(where + ": fingerprint mismatch, codebook contents are corrupted");
  }
  return Codebook(std::move(prototypes), std::move(reference_id), seed, inertia);
}

}  // namespace bop
