#include "bop/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "bop/baselines.hpp"
#include "bop/error.hpp"
#include "bop/format.hpp"
#include "bop/histogram.hpp"
#include "bop/rng.hpp"

namespace bop::synth {
namespace {

constexpr std::uint64_t kMeansStream = 0;
constexpr std::uint64_t kDirectionStream = 1;
constexpr std::uint64_t kReferenceStream = 2;
constexpr std::uint64_t kKernelStream = 3;
constexpr std::uint64_t kShiftedStreamBase = 100;

Eigen::VectorXd gaussian_vector(std::size_t dim, Rng& rng) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
  return v;
}

RowMatrixD make_class_means(const ShiftSpec& spec) {
  Rng rng(mix_seed(spec.seed, kMeansStream));
  RowMatrixD means(static_cast<Eigen::Index>(spec.n_classes), static_cast<Eigen::Index>(spec.dim));
  for (Eigen::Index c = 0; c < means.rows(); ++c) means.row(c) = gaussian_vector(spec.dim, rng).transpose();
  double closest = std::numeric_limits<double>::infinity();
  for (Eigen::Index a = 0; a < means.rows(); ++a) {
    for (Eigen::Index b = a + 1; b < means.rows(); ++b) {
      closest = std::min(closest, (means.row(a) - means.row(b)).norm());
    }
  }
  // Rescale so the closest pair sits exactly at the requested separation.
  means *= spec.class_separation / closest;
  return means;
}

std::vector<std::size_t> class_counts(const ShiftSpec& spec, double severity) {
  const std::size_t classes = spec.n_classes;
  std::vector<std::size_t> counts(classes, spec.samples_per_class);
  if (spec.shift_kind != ShiftKind::class_imbalance || severity == 0.0) return counts;
  const std::size_t total = classes * spec.samples_per_class;
  std::vector<double> weights(classes);
  double weight_sum = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    weights[c] = std::exp(-severity * static_cast<double>(c) / static_cast<double>(classes - 1));
    weight_sum += weights[c];
  }
  // Largest-remainder rounding keeps the total fixed.
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double exact = static_cast<double>(total) * weights[c] / weight_sum;
    counts[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[remainders[i].second];
  return counts;
}

LabeledSet draw_set(const ShiftSpec& spec, const RowMatrixD& means, const Eigen::VectorXd& direction,
                    double severity, Rng& rng) {
  const std::vector<std::size_t> counts = class_counts(spec, severity);
  std::size_t rows = 0;
  for (const auto c : counts) rows += c;
  RowMatrixD values(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(spec.dim));
  LabeledSet set{FeatureMatrix(RowMatrixF::Zero(1, 1)), {}, severity, 0, 0};
  set.labels.reserve(rows);
  double scale = spec.noise;
  Eigen::VectorXd offset = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.dim));
  if (spec.shift_kind == ShiftKind::mean_drift) offset = severity * direction;
  if (spec.shift_kind == ShiftKind::noise_inflation) scale = spec.noise * (1.0 + severity);
  Eigen::Index row = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    for (std::size_t s = 0; s < counts[c]; ++s, ++row) {
      for (Eigen::Index j = 0; j < values.cols(); ++j) {
        values(row, j) = means(static_cast<Eigen::Index>(c), j) + offset(j) + scale * rng.normal();
      }
      set.labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  set.features = FeatureMatrix::from_doubles(values);
  return set;
}

FeatureMatrix kernel_subset(const FeatureMatrix& features, std::size_t rows, std::uint64_t seed) {
  if (rows == 0 || rows >= features.rows()) return features;
  const double fraction = static_cast<double>(rows) / static_cast<double>(features.rows());
  return subsample(features, fraction, seed);
}

std::string join_csv(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i > 0) line.push_back(',');
    line += fields[i];
  }
  return line + "\n";
}

std::string optional_text(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

}  // namespace

ShiftKind parse_shift_kind(std::string_view name) {
  if (name == "mean_drift") return ShiftKind::mean_drift;
  if (name == "noise_inflation") return ShiftKind::noise_inflation;
  if (name == "class_imbalance") return ShiftKind::class_imbalance;
  throw ArgumentError("unknown shift kind '" + std::string(name) + "'");
}

std::string_view to_string(ShiftKind kind) {
  switch (kind) {
    case ShiftKind::mean_drift: return "mean_drift";
    case ShiftKind::noise_inflation: return "noise_inflation";
    case ShiftKind::class_imbalance: return "class_imbalance";
  }
  return "unknown";
}

void ShiftSpec::validate() const {
  if (n_classes < 2) throw ArgumentError("shift spec: need at least 2 classes");
  if (dim < 2) throw ArgumentError("shift spec: dim must be >= 2");
  if (samples_per_class < 1) throw ArgumentError("shift spec: samples_per_class must be >= 1");
  if (!(noise >= 0.0)) throw ArgumentError("shift spec: noise must be >= 0");
  if (!(class_separation > 0.0)) {
    throw ArgumentError(noise == 0.0
                            ? "shift spec is degenerate: zero class separation and zero noise"
                            : "shift spec: class_separation must be > 0");
  }
  if (severities.empty()) throw ArgumentError("shift spec: need at least one severity");
  for (std::size_t i = 0; i < severities.size(); ++i) {
    if (!(severities[i] >= 0.0) || !std::isfinite(severities[i])) {
      throw ArgumentError("shift spec: severities must be finite and >= 0");
    }
    if (i > 0 && severities[i] < severities[i - 1]) {
      throw ArgumentError("shift spec: severities must be sorted ascending");
    }
  }
  if (sets_per_severity < 1) throw ArgumentError("shift spec: sets_per_severity must be >= 1");
  if (!(severity_spread >= 0.0)) throw ArgumentError("shift spec: severity_spread must be >= 0");
}

nlohmann::json ShiftSpec::to_json() const {
  return nlohmann::json{{"n_classes", n_classes},
                        {"dim", dim},
                        {"samples_per_class", samples_per_class},
                        {"class_separation", class_separation},
                        {"noise", noise},
                        {"severities", severities},
                        {"sets_per_severity", sets_per_severity},
                        {"severity_spread", severity_spread},
                        {"shift_kind", std::string(to_string(shift_kind))},
                        {"seed", seed}};
}

SyntheticBenchmark generate(const ShiftSpec& spec) {
  spec.validate();
  SyntheticBenchmark bench{spec, {FeatureMatrix(RowMatrixF::Zero(1, 1)), {}, 0.0, 0, 0}, {}, {}, {}};
  bench.class_means = make_class_means(spec);
  Rng direction_rng(mix_seed(spec.seed, kDirectionStream));
  bench.drift_direction = gaussian_vector(spec.dim, direction_rng);
  bench.drift_direction.normalize();

  ShiftSpec reference_spec = spec;
  reference_spec.shift_kind = ShiftKind::mean_drift;
  Rng reference_rng(mix_seed(spec.seed, kReferenceStream));
  bench.reference = draw_set(reference_spec, bench.class_means, bench.drift_direction, 0.0, reference_rng);

  double gap = 1.0;
  if (spec.severities.size() > 1) {
    gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < spec.severities.size(); ++i) {
      gap = std::min(gap, spec.severities[i] - spec.severities[i - 1]);
    }
  }
  const auto m = static_cast<double>(spec.sets_per_severity);
  std::size_t index = 0;
  for (std::size_t level = 0; level < spec.severities.size(); ++level) {
    for (std::size_t r = 0; r < spec.sets_per_severity; ++r, ++index) {
      const double offset = spec.severity_spread * gap * ((static_cast<double>(r) + 0.5) / m - 0.5);
      const double severity = std::max(0.0, spec.severities[level] + offset);
      Rng rng(mix_seed(spec.seed, kShiftedStreamBase + index));
      LabeledSet set = draw_set(spec, bench.class_means, bench.drift_direction, severity, rng);
      set.level = level;
      set.replicate = r;
      bench.shifted.push_back(std::move(set));
    }
  }
  return bench;
}

RowMatrixD estimate_class_means(const LabeledSet& set, std::size_t n_classes) {
  const RowMatrixD x = set.features.to_double();
  RowMatrixD sums = RowMatrixD::Zero(static_cast<Eigen::Index>(n_classes), x.cols());
  std::vector<std::size_t> counts(n_classes, 0);
  for (std::size_t i = 0; i < set.labels.size(); ++i) {
    if (set.labels[i] >= n_classes) throw ArgumentError("label out of range");
    sums.row(set.labels[i]) += x.row(static_cast<Eigen::Index>(i));
    ++counts[set.labels[i]];
  }
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (counts[c] == 0) throw ArgumentError("class " + std::to_string(c) + " has no samples");
    sums.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(counts[c]);
  }
  return sums;
}

double oracle_accuracy(const LabeledSet& set, const RowMatrixD& class_means) {
  if (static_cast<std::size_t>(class_means.cols()) != set.features.dim()) {
    throw ArgumentError("oracle accuracy: class means and features differ in dimension");
  }
  const RowMatrixD x = set.features.to_double();
  std::vector<std::uint32_t> predicted(set.labels.size());
  std::vector<double> distances(set.labels.size());
  detail::nearest_centers(x, class_means, predicted, distances);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == set.labels[i];
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

nlohmann::json BenchConfig::to_json() const {
  return nlohmann::json{{"k", k},
                        {"kmeans",
                         {{"max_iterations", kmeans.max_iterations},
                          {"tolerance", kmeans.tolerance},
                          {"seed", kmeans.seed},
                          {"n_restarts", kmeans.n_restarts}}},
                        {"kernel_rows", kernel_rows},
                        {"train_predictor", train_predictor},
                        {"holdout_level", holdout_level},
                        {"predictor", predictor.to_json()}};
}

const CorrelationReport& BenchResult::correlation(std::string_view method) const {
  for (const auto& c : correlations) {
    if (c.method_label == method) return c;
  }
  throw ArgumentError("no correlation report for method '" + std::string(method) + "'");
}

nlohmann::json BenchResult::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"index", r.index},
                         {"level", r.level},
                         {"replicate", r.replicate},
                         {"severity", r.severity},
                         {"js", r.js},
                         {"fd", r.fd},
                         {"mmd", r.mmd},
                         {"kid", r.kid},
                         {"oracle_accuracy", r.oracle_accuracy},
                         {"predicted_accuracy", r.predicted_accuracy ? nlohmann::json(*r.predicted_accuracy)
                                                                     : nlohmann::json(nullptr)}});
  }
  nlohmann::json corr = nlohmann::json::array();
  for (const auto& c : correlations) corr.push_back(c.to_json());
  return nlohmann::json{
      {"k", k},
      {"codebook_fingerprint", codebook_fingerprint},
      {"codebook_inertia", codebook_inertia},
      {"rows", rows_json},
      {"correlations", corr},
      {"predictor_rmse", predictor_rmse ? nlohmann::json(*predictor_rmse) : nlohmann::json(nullptr)},
      {"predictor_train_loss",
       predictor_train_loss ? nlohmann::json(*predictor_train_loss) : nlohmann::json(nullptr)}};
}

std::string BenchResult::to_csv() const {
  std::string out = join_csv({"index", "level", "replicate", "severity", "js", "fd", "mmd", "kid",
                              "oracle_accuracy", "predicted_accuracy"});
  for (const auto& r : rows) {
    out += join_csv({std::to_string(r.index), std::to_string(r.level), std::to_string(r.replicate),
                     format_double(r.severity), format_double(r.js), format_double(r.fd),
                     format_double(r.mmd), format_double(r.kid), format_double(r.oracle_accuracy),
                     optional_text(r.predicted_accuracy)});
  }
  return out;
}

BenchResult run_study(const SyntheticBenchmark& bench, const BenchConfig& config) {
  if (config.k < 2) throw ArgumentError("bench: codebook size must be >= 2");
  KMeansConfig kmeans = config.kmeans;
  kmeans.k = config.k;
  // Difficulty orientation: the codebook comes from the (training) reference.
  const Codebook codebook = kmeans_fit(bench.reference.features, kmeans, "synthetic-reference");
  const BopHistogram reference_hist = encode(bench.reference.features, codebook);
  const RowMatrixD class_means = estimate_class_means(bench.reference, bench.spec.n_classes);
  const GaussianSummary reference_summary = summarize(bench.reference.features);
  const std::uint64_t kernel_seed = mix_seed(bench.spec.seed, kKernelStream);
  const FeatureMatrix reference_kernel = kernel_subset(bench.reference.features, config.kernel_rows, kernel_seed);

  BenchResult result;
  result.k = codebook.k();
  result.codebook_fingerprint = codebook.fingerprint_hex();
  result.codebook_inertia = codebook.inertia();
  std::vector<BopHistogram> histograms;
  for (std::size_t i = 0; i < bench.shifted.size(); ++i) {
    const LabeledSet& set = bench.shifted[i];
    BenchRow row;
    row.index = i;
    row.level = set.level;
    row.replicate = set.replicate;
    row.severity = set.severity;
    histograms.push_back(encode(set.features, codebook));
    row.js = js_divergence(reference_hist, histograms.back());
    row.fd = frechet_distance(reference_summary, summarize(set.features));
    const FeatureMatrix subset = kernel_subset(set.features, config.kernel_rows, mix_seed(kernel_seed, i + 1));
    row.mmd = mmd(reference_kernel, subset);
    row.kid = kid(reference_kernel, subset);
    row.oracle_accuracy = oracle_accuracy(set, class_means);
    result.rows.push_back(row);
  }

  std::vector<double> accuracy;
  for (const auto& r : result.rows) accuracy.push_back(r.oracle_accuracy);
  const auto column = [&](auto member) {
    std::vector<double> v;
    for (const auto& r : result.rows) v.push_back(r.*member);
    return v;
  };
  result.correlations.push_back(correlate(PairedSeries(column(&BenchRow::js), accuracy), "js"));
  result.correlations.push_back(correlate(PairedSeries(column(&BenchRow::fd), accuracy), "fd"));
  result.correlations.push_back(correlate(PairedSeries(column(&BenchRow::mmd), accuracy), "mmd"));
  result.correlations.push_back(correlate(PairedSeries(column(&BenchRow::kid), accuracy), "kid"));

  const bool can_hold_out = config.holdout_level < bench.spec.severities.size() &&
                            bench.spec.severities.size() > 1;
  if (config.train_predictor && can_hold_out) {
    std::vector<TrainingSample> training;
    for (std::size_t i = 0; i < result.rows.size(); ++i) {
      if (result.rows[i].level != config.holdout_level) {
        training.push_back({histograms[i], result.rows[i].oracle_accuracy});
      }
    }
    const TrainResult trained = train(training, config.predictor);
    std::vector<double> predicted;
    std::vector<double> truth;
    for (std::size_t i = 0; i < result.rows.size(); ++i) {
      const double p = predict(trained.model, histograms[i]);
      result.rows[i].predicted_accuracy = p;
      if (result.rows[i].level == config.holdout_level) {
        predicted.push_back(100.0 * p);
        truth.push_back(100.0 * result.rows[i].oracle_accuracy);
      }
    }
    result.predictor_rmse = rmse(predicted, truth);
    result.predictor_train_loss = trained.final_loss;
  }
  return result;
}

BenchResult run_study(const ShiftSpec& spec, const BenchConfig& config) {
  return run_study(generate(spec), config);
}

std::vector<KSweepRow> k_sweep(const SyntheticBenchmark& bench, const BenchConfig& config,
                               const std::vector<std::size_t>& ks) {
  const RowMatrixD class_means = estimate_class_means(bench.reference, bench.spec.n_classes);
  std::vector<double> accuracy;
  for (const auto& set : bench.shifted) accuracy.push_back(oracle_accuracy(set, class_means));
  std::vector<KSweepRow> rows;
  for (const std::size_t k : ks) {
    if (k < 2) throw ArgumentError("k sweep: codebook size must be >= 2");
    KMeansConfig kmeans = config.kmeans;
    kmeans.k = k;
    const Codebook codebook = kmeans_fit(bench.reference.features, kmeans, "synthetic-reference");
    const BopHistogram reference_hist = encode(bench.reference.features, codebook);
    std::vector<double> js;
    for (const auto& set : bench.shifted) js.push_back(js_divergence(reference_hist, encode(set.features, codebook)));
    rows.push_back({k, codebook.inertia(), correlate(PairedSeries(js, accuracy), "js")});
  }
  return rows;
}

std::string k_sweep_csv(const std::vector<KSweepRow>& rows) {
  std::string out = join_csv({"k", "inertia", "n", "pearson_r", "spearman_rho", "kendall_tau_w",
                              "huber_slope", "huber_intercept"});
  for (const auto& r : rows) {
    out += join_csv({std::to_string(r.k), format_double(r.inertia), std::to_string(r.js.n),
                     format_double(r.js.pearson_r), format_double(r.js.spearman_rho),
                     optional_text(r.js.kendall_tau_w), format_double(r.js.huber_slope),
                     format_double(r.js.huber_intercept)});
  }
  return out;
}

}  // namespace bop::synth
