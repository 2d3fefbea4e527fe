#include "cli.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "bop/baselines.hpp"
#include "bop/codebook.hpp"
#include "bop/digest.hpp"
#include "bop/error.hpp"
#include "bop/features.hpp"
#include "bop/format.hpp"
#include "bop/histogram.hpp"
#include "bop/parallel.hpp"
#include "bop/predictor.hpp"
#include "bop/stats.hpp"
#include "bop/synthbench.hpp"
#include "json.hpp"

namespace bop::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Small text and file helpers.

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      parts.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  return parts;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WriteError("cannot open '" + path.string() + "' for writing");
  out << text;
  out.flush();
  if (!out) throw WriteError("failed writing '" + path.string() + "'");
}

double parse_real(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ArgumentError(what + ": '" + text + "' is not a number");
  }
}

std::vector<double> parse_real_list(const std::string& text, const std::string& what) {
  std::vector<double> values;
  for (const auto& part : split(text, ',')) values.push_back(parse_real(part, what));
  return values;
}

std::vector<std::size_t> parse_size_list(const std::string& text, const std::string& what) {
  std::vector<std::size_t> values;
  for (const auto& part : split(text, ',')) {
    const double v = parse_real(part, what);
    if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
      throw ArgumentError(what + ": '" + part + "' is not a non-negative integer");
    }
    values.push_back(static_cast<std::size_t>(v));
  }
  return values;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Input sniffing, so that swapped arguments fail with a useful message.

enum class InputKind { features, codebook, histogram, model, json_other };

std::string_view describe(InputKind kind) {
  switch (kind) {
    case InputKind::features: return "a feature matrix";
    case InputKind::codebook: return "a codebook";
    case InputKind::histogram: return "a BoP histogram";
    case InputKind::model: return "a predictor model";
    case InputKind::json_other: return "an unrecognised JSON document";
  }
  return "unknown";
}

InputKind sniff(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open '" + path.string() + "'");
  char magic[4] = {0, 0, 0, 0};
  in.read(magic, 4);
  const std::string head(magic, static_cast<std::size_t>(in.gcount()));
  if (head == "BOPF") return InputKind::features;
  if (head == "BOPC") return InputKind::codebook;
  std::size_t first = 0;
  while (first < head.size() && std::isspace(static_cast<unsigned char>(head[first]))) ++first;
  if (first < head.size() && head[first] == '{') {
    json j;
    try {
      j = json::parse(read_text(path));
    } catch (const json::exception& e) {
      throw LoadError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
    if (j.contains("bins")) return InputKind::histogram;
    if (j.contains("layers")) return InputKind::model;
    return InputKind::json_other;
  }
  return InputKind::features;
}

void expect_kind(const fs::path& path, InputKind wanted, std::string_view guidance) {
  const InputKind got = sniff(path);
  if (got == wanted) return;
  throw ArgumentError("'" + path.string() + "' is " + std::string(describe(got)) + ", expected " +
                      std::string(describe(wanted)) + "; " + std::string(guidance));
}

FeatureMatrix read_features(const fs::path& path) {
  expect_kind(path, InputKind::features,
              "feature inputs are BOPF binary or CSV matrices (one row per sample)");
  std::ifstream in(path, std::ios::binary);
  char magic[4] = {0, 0, 0, 0};
  in.read(magic, 4);
  const bool binary = in.gcount() == 4 && std::string(magic, 4) == "BOPF";
  return load_features(path, binary ? FeatureFormat::binary : FeatureFormat::csv);
}

BopHistogram read_histogram(const fs::path& path) {
  expect_kind(path, InputKind::histogram, "produce histograms with `bop encode`");
  return load_histogram(path);
}

Codebook read_codebook(const fs::path& path) {
  expect_kind(path, InputKind::codebook, "produce codebooks with `bop codebook build`");
  return load_codebook(path);
}

// ---------------------------------------------------------------------------
// Batch manifests: CSV with a header naming `id`, a path column (`features`,
// `histogram` or `path`) and an optional `accuracy` column. Relative paths
// resolve against the manifest's directory.

struct ManifestEntry {
  std::string id;
  fs::path path;
  std::optional<double> accuracy;
};

std::vector<ManifestEntry> read_manifest(const fs::path& manifest_path) {
  std::istringstream in(read_text(manifest_path));
  const fs::path base = manifest_path.parent_path();
  std::string line;
  std::vector<std::string> header;
  std::vector<ManifestEntry> entries;
  std::size_t line_no = 0;
  int id_col = -1;
  int path_col = -1;
  int acc_col = -1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto fields = split(t, ',');
    if (header.empty()) {
      header = fields;
      for (std::size_t c = 0; c < header.size(); ++c) {
        const std::string& h = header[c];
        if (h == "id") id_col = static_cast<int>(c);
        if (h == "features" || h == "histogram" || h == "path") path_col = static_cast<int>(c);
        if (h == "accuracy") acc_col = static_cast<int>(c);
      }
      if (id_col < 0 || path_col < 0) {
        throw ArgumentError("manifest '" + manifest_path.string() +
                            "' needs a header with 'id' and one of 'features', 'histogram', 'path'");
      }
      continue;
    }
    if (fields.size() != header.size()) {
      throw ArgumentError("manifest '" + manifest_path.string() + "' line " + std::to_string(line_no) +
                          ": expected " + std::to_string(header.size()) + " fields, found " +
                          std::to_string(fields.size()));
    }
    ManifestEntry entry;
    entry.id = fields[static_cast<std::size_t>(id_col)];
    fs::path p = fields[static_cast<std::size_t>(path_col)];
    entry.path = p.is_absolute() ? p : base / p;
    if (acc_col >= 0 && !fields[static_cast<std::size_t>(acc_col)].empty()) {
      entry.accuracy = parse_real(fields[static_cast<std::size_t>(acc_col)],
                                  "manifest line " + std::to_string(line_no) + " accuracy");
      if (*entry.accuracy < 0.0 || *entry.accuracy > 1.0) {
        throw ArgumentError("manifest line " + std::to_string(line_no) + ": accuracy must lie in [0, 1]");
      }
    }
    if (entry.id.empty()) throw ArgumentError("manifest line " + std::to_string(line_no) + ": empty id");
    entries.push_back(std::move(entry));
  }
  if (entries.empty()) throw ArgumentError("manifest '" + manifest_path.string() + "' lists no datasets");
  return entries;
}

// ---------------------------------------------------------------------------
// Run manifest.

std::string timestamp_now() {
  std::time_t t = 0;
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch != nullptr && *epoch != '\0') {
    t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
  } else {
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  }
  std::tm utc{};
  gmtime_r(&t, &utc);
  char buffer[32];
  std::strftime(buffer, sizeof buffer, "%Y-%m-%dT%H:%M:%SZ", &utc);
  return buffer;
}

class RunManifest {
 public:
  RunManifest(std::string command, json config) : command_(std::move(command)), config_(std::move(config)) {}

  void add_input(const fs::path& path) {
    const std::string key = path.string();
    if (!inputs_.contains(key)) inputs_[key] = to_hex(sha256_file(path));
  }

  json to_json() const {
    return json{{"command", command_},
                {"config", config_},
                {"inputs", inputs_},
                {"version", kToolVersion},
                {"timestamp", timestamp_now()}};
  }

 private:
  std::string command_;
  json config_;
  json inputs_ = json::object();
};

// Echo of every option of the selected subcommand, explicit or defaulted.
json collect_config(const CLI::App& app) {
  json config = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_name(false, true);
    if (name.empty() || name == "--help" || name == "-h") continue;
    std::string key = opt->get_lnames().empty() ? name : opt->get_lnames().front();
    if (key.empty()) key = name;
    if (opt->count() > 0) {
      const auto& results = opt->results();
      if (opt->get_multi_option_policy() == CLI::MultiOptionPolicy::TakeAll) {
        config[key] = results;
      } else {
        config[key] = results.front();
      }
    } else if (!opt->get_default_str().empty()) {
      config[key] = opt->get_default_str();
    }
  }
  return config;
}

// ---------------------------------------------------------------------------
// Output.

enum class OutputFormat { json, csv };

OutputFormat parse_output_format(const std::string& name) {
  if (name == "json") return OutputFormat::json;
  if (name == "csv") return OutputFormat::csv;
  throw ArgumentError("unknown format '" + name + "'; expected json or csv");
}

// CSV reports carry the run manifest as one leading comment line.
std::string csv_with_manifest(const json& manifest, const std::string& body) {
  return "# run_manifest: " + manifest.dump() + "\n" + body;
}

struct Emitter {
  std::ostream& out;
  std::string out_path;

  void emit(const std::string& text) const {
    if (out_path.empty()) {
      out << text;
    } else {
      write_text(out_path, text);
    }
  }
};

std::string csv_optional(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

// ---------------------------------------------------------------------------
// Distances.

bool is_histogram_method(const std::string& method) {
  return method == "js" || method == "hellinger" || method == "chi2";
}

void check_method(const std::string& method) {
  static const std::vector<std::string> known{"js", "hellinger", "chi2", "fd", "mmd", "kid"};
  if (std::find(known.begin(), known.end(), method) == known.end()) {
    throw ArgumentError("unknown method '" + method + "'; expected one of js, hellinger, chi2, fd, mmd, kid");
  }
}

struct KernelOptions {
  std::string kernel = "rbf";
  std::optional<double> bandwidth;
  std::string estimator = "unbiased";

  KernelConfig config() const {
    if (kernel == "rbf") return KernelConfig::rbf(bandwidth);
    if (kernel == "linear") return KernelConfig::linear();
    if (kernel == "kid" || kernel == "polynomial") return KernelConfig::kid();
    throw ArgumentError("unknown kernel '" + kernel + "'; expected rbf, linear or polynomial");
  }
};

json method_params(const std::string& method, const KernelOptions& k) {
  if (method == "mmd") {
    return json{{"kernel", k.config().to_json()}, {"estimator", k.estimator}};
  }
  if (method == "kid") return json{{"kernel", KernelConfig::kid().to_json()}, {"estimator", k.estimator}};
  if (method == "fd") return json{{"gaussian", "unbiased covariance"}};
  return json{{"log_base", "e"}};
}

double feature_distance(const std::string& method, const FeatureMatrix& a, const FeatureMatrix& b,
                        const KernelOptions& k) {
  if (a.dim() != b.dim()) {
    throw ArgumentError("feature dimensions differ: " + std::to_string(a.dim()) + " vs " +
                        std::to_string(b.dim()));
  }
  if (method == "fd") return frechet_distance(a, b);
  const MmdEstimator estimator = parse_mmd_estimator(k.estimator);
  if (method == "mmd") return mmd(a, b, k.config(), estimator);
  return kid(a, b, estimator);
}

// Distance between two on-disk inputs of the kind `method` expects.
double file_distance(const std::string& method, const fs::path& a, const fs::path& b, const KernelOptions& k,
                     const std::optional<Codebook>& codebook) {
  if (is_histogram_method(method)) {
    const InputKind kind_a = sniff(a);
    if (kind_a == InputKind::features && codebook) {
      return distance(parse_histogram_distance(method), encode(read_features(a), *codebook),
                      encode(read_features(b), *codebook));
    }
    const std::string guidance = "--method " + method +
                                 " compares BoP histograms; run `bop encode` on feature files first"
                                 " (or pass --codebook to encode in-line)";
    expect_kind(a, InputKind::histogram, guidance);
    expect_kind(b, InputKind::histogram, guidance);
    return distance(parse_histogram_distance(method), load_histogram(a), load_histogram(b));
  }
  const std::string guidance = "--method " + method + " compares feature matrices, not histograms";
  expect_kind(a, InputKind::features, guidance);
  expect_kind(b, InputKind::features, guidance);
  return feature_distance(method, read_features(a), read_features(b), k);
}

// ---------------------------------------------------------------------------
// Options shared by all subcommands.

struct CommonOptions {
  std::uint64_t seed = 0;
  std::string out;
  std::string format = "json";
  std::string manifest;
};

void add_common(CLI::App* app, CommonOptions& c, bool with_manifest) {
  app->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  app->add_option("--out", c.out, "Output path (stdout when omitted)");
  app->add_option("--format", c.format, "Report format: json or csv")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();
  if (with_manifest) app->add_option("--manifest", c.manifest, "Batch manifest CSV (id, path, accuracy)");
}

// ---------------------------------------------------------------------------
// Commands.

struct CodebookOptions {
  CommonOptions common;
  std::string features;
  std::size_t k = 8;
  std::size_t max_iterations = 300;
  double tolerance = 1e-6;
  std::size_t restarts = 3;
  std::string reference_id;
  std::string summary;
};

int cmd_codebook_build(const CodebookOptions& o, RunManifest& manifest, std::ostream& out) {
  if (o.common.out.empty()) throw ArgumentError("codebook build: --out is required");
  const FeatureMatrix features = read_features(o.features);
  manifest.add_input(o.features);
  if (o.k < 1) throw ArgumentError("codebook build: k must be >= 1");
  if (o.k > features.rows()) {
    throw ArgumentError("codebook build: k = " + std::to_string(o.k) + " exceeds the " +
                        std::to_string(features.rows()) + " rows of '" + o.features + "'");
  }
  KMeansConfig config;
  config.k = o.k;
  config.max_iterations = o.max_iterations;
  config.tolerance = o.tolerance;
  config.seed = o.common.seed;
  config.n_restarts = o.restarts;
  const std::string reference_id = o.reference_id.empty() ? fs::path(o.features).filename().string() : o.reference_id;
  const KMeansResult result = kmeans_fit_detailed(features, config, reference_id);
  save_codebook(result.codebook, o.common.out);

  const json summary{{"k", result.codebook.k()},
                     {"dim", result.codebook.dim()},
                     {"inertia", result.codebook.inertia()},
                     {"seed", result.codebook.seed()},
                     {"reference_id", result.codebook.reference_id()},
                     {"fingerprint", result.codebook.fingerprint_hex()},
                     {"iterations", result.iterations},
                     {"converged", result.converged},
                     {"best_restart", result.best_restart},
                     {"codebook_path", o.common.out}};
  std::string text;
  if (parse_output_format(o.common.format) == OutputFormat::csv) {
    text = csv_with_manifest(manifest.to_json(),
                             "k,dim,inertia,seed,fingerprint\n" + std::to_string(result.codebook.k()) + "," +
                                 std::to_string(result.codebook.dim()) + "," +
                                 format_double(result.codebook.inertia()) + "," +
                                 std::to_string(result.codebook.seed()) + "," +
                                 result.codebook.fingerprint_hex() + "\n");
  } else {
    json report = summary;
    report["run_manifest"] = manifest.to_json();
    text = dump(report);
  }
  Emitter{out, o.summary}.emit(text);
  return 0;
}

struct EncodeOptions {
  CommonOptions common;
  std::string features;
  std::string codebook;
};

int cmd_encode(const EncodeOptions& o, RunManifest& manifest, std::ostream& out) {
  const Codebook codebook = read_codebook(o.codebook);
  manifest.add_input(o.codebook);
  const Emitter emitter{out, o.common.out};
  if (!o.common.manifest.empty()) {
    // Batch: one histogram per manifest entry, written next to --out.
    if (o.common.out.empty()) throw ArgumentError("encode --manifest needs --out as the output directory");
    manifest.add_input(o.common.manifest);
    const auto entries = read_manifest(o.common.manifest);
    json index = json::array();
    std::string csv = "id,histogram,accuracy\n";
    for (const auto& e : entries) {
      const FeatureMatrix features = read_features(e.path);
      manifest.add_input(e.path);
      if (features.dim() != codebook.dim()) {
        throw ArgumentError("'" + e.path.string() + "' has dimension " + std::to_string(features.dim()) +
                            " but the codebook expects " + std::to_string(codebook.dim()));
      }
      const BopHistogram h = encode(features, codebook);
      const fs::path target = fs::path(o.common.out) / (e.id + ".hist.json");
      write_text(target, dump(h.to_json()));
      index.push_back({{"id", e.id}, {"histogram", target.filename().string()},
                       {"accuracy", e.accuracy ? json(*e.accuracy) : json(nullptr)}});
      csv += e.id + "," + target.filename().string() + "," + csv_optional(e.accuracy) + "\n";
    }
    write_text(fs::path(o.common.out) / "manifest.csv", csv);
    out << dump(json{{"histograms", index}, {"run_manifest", manifest.to_json()}});
    return 0;
  }
  const FeatureMatrix features = read_features(o.features);
  manifest.add_input(o.features);
  if (features.dim() != codebook.dim()) {
    throw ArgumentError("'" + o.features + "' has dimension " + std::to_string(features.dim()) +
                        " but the codebook expects " + std::to_string(codebook.dim()));
  }
  const BopHistogram h = encode(features, codebook);
  if (parse_output_format(o.common.format) == OutputFormat::csv) {
    std::string body = "bin,mass\n";
    for (std::size_t i = 0; i < h.size(); ++i) body += std::to_string(i) + "," + format_double(h.bins()[i]) + "\n";
    emitter.emit(csv_with_manifest(manifest.to_json(), body));
    return 0;
  }
  json j = h.to_json();
  j["run_manifest"] = manifest.to_json();
  emitter.emit(dump(j));
  return 0;
}

struct DistOptions {
  CommonOptions common;
  std::string method = "js";
  std::vector<std::string> inputs;
  std::string reference;
  std::string codebook;
  KernelOptions kernel;
};

int cmd_dist(const DistOptions& o, RunManifest& manifest, std::ostream& out) {
  check_method(o.method);
  std::optional<Codebook> codebook;
  if (!o.codebook.empty()) {
    codebook = read_codebook(o.codebook);
    manifest.add_input(o.codebook);
  }
  const Emitter emitter{out, o.common.out};
  const OutputFormat format = parse_output_format(o.common.format);
  const json params = method_params(o.method, o.kernel);
  if (!o.common.manifest.empty()) {
    if (o.reference.empty()) throw ArgumentError("dist --manifest needs --reference");
    if (!o.inputs.empty()) throw ArgumentError("dist: give either two inputs or --manifest, not both");
    manifest.add_input(o.common.manifest);
    manifest.add_input(o.reference);
    const auto entries = read_manifest(o.common.manifest);
    json rows = json::array();
    std::string csv = "id,distance,accuracy\n";
    for (const auto& e : entries) {
      manifest.add_input(e.path);
      const double d = file_distance(o.method, o.reference, e.path, o.kernel, codebook);
      rows.push_back({{"id", e.id}, {"distance", d}, {"accuracy", e.accuracy ? json(*e.accuracy) : json(nullptr)}});
      csv += e.id + "," + format_double(d) + "," + csv_optional(e.accuracy) + "\n";
    }
    if (format == OutputFormat::csv) {
      emitter.emit(csv_with_manifest(manifest.to_json(), csv));
    } else {
      emitter.emit(dump(json{{"method", o.method},
                             {"params", params},
                             {"reference", o.reference},
                             {"rows", rows},
                             {"run_manifest", manifest.to_json()}}));
    }
    return 0;
  }
  if (o.inputs.size() != 2) {
    throw ArgumentError("dist needs exactly two inputs (or --manifest with --reference), got " +
                        std::to_string(o.inputs.size()));
  }
  manifest.add_input(o.inputs[0]);
  manifest.add_input(o.inputs[1]);
  const double d = file_distance(o.method, o.inputs[0], o.inputs[1], o.kernel, codebook);
  if (format == OutputFormat::csv) {
    emitter.emit(csv_with_manifest(manifest.to_json(), "a,b,method,distance\n" + o.inputs[0] + "," + o.inputs[1] +
                                                           "," + o.method + "," + format_double(d) + "\n"));
  } else {
    emitter.emit(dump(json{{"method", o.method},
                           {"params", params},
                           {"a", o.inputs[0]},
                           {"b", o.inputs[1]},
                           {"distance", d},
                           {"run_manifest", manifest.to_json()}}));
  }
  return 0;
}

struct CorrelateOptions {
  CommonOptions common;
  std::string input;
  std::string reference;
  std::string codebook;
  std::string methods = "js";
  std::string plot_data;
  KernelOptions kernel;
};

struct ScoreTable {
  std::vector<std::string> ids;
  std::vector<std::string> methods;
  std::vector<std::vector<double>> scores;  // per method
  std::vector<double> accuracy;
};

// CSV with header `id,<method>...,accuracy`; '#' lines are comments.
ScoreTable read_score_table(const fs::path& path) {
  std::istringstream in(read_text(path));
  ScoreTable table;
  std::string line;
  std::vector<std::string> header;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto fields = split(t, ',');
    if (header.empty()) {
      header = fields;
      if (header.size() < 3 || header.front() != "id" || header.back() != "accuracy") {
        throw ArgumentError("score table '" + path.string() +
                            "' needs a header 'id,<distance columns>,accuracy'");
      }
      table.methods.assign(header.begin() + 1, header.end() - 1);
      table.scores.resize(table.methods.size());
      continue;
    }
    if (fields.size() != header.size()) {
      throw ArgumentError("score table line " + std::to_string(line_no) + ": expected " +
                          std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
    }
    table.ids.push_back(fields.front());
    for (std::size_t m = 0; m < table.methods.size(); ++m) {
      table.scores[m].push_back(parse_real(fields[m + 1], "score table line " + std::to_string(line_no)));
    }
    table.accuracy.push_back(parse_real(fields.back(), "score table line " + std::to_string(line_no)));
  }
  if (table.ids.empty()) throw ArgumentError("score table '" + path.string() + "' has no rows");
  return table;
}

int cmd_correlate(const CorrelateOptions& o, RunManifest& manifest, std::ostream& out) {
  ScoreTable table;
  if (!o.input.empty()) {
    if (!o.common.manifest.empty()) throw ArgumentError("correlate: give either --input or --manifest, not both");
    table = read_score_table(o.input);
    manifest.add_input(o.input);
  } else {
    if (o.common.manifest.empty() || o.reference.empty()) {
      throw ArgumentError("correlate needs --input scores.csv, or --manifest with --reference");
    }
    manifest.add_input(o.common.manifest);
    manifest.add_input(o.reference);
    std::optional<Codebook> codebook;
    if (!o.codebook.empty()) {
      codebook = read_codebook(o.codebook);
      manifest.add_input(o.codebook);
    }
    table.methods = split(o.methods, ',');
    for (const auto& m : table.methods) {
      check_method(m);
      if (is_histogram_method(m) && !codebook) {
        throw ArgumentError("correlate: --methods " + m + " on feature manifests needs --codebook");
      }
    }
    table.scores.resize(table.methods.size());
    const FeatureMatrix reference = read_features(o.reference);
    std::optional<BopHistogram> reference_hist;
    if (codebook) reference_hist = encode(reference, *codebook);
    for (const auto& e : read_manifest(o.common.manifest)) {
      if (!e.accuracy) throw ArgumentError("correlate: manifest entry '" + e.id + "' has no accuracy");
      manifest.add_input(e.path);
      const FeatureMatrix features = read_features(e.path);
      table.ids.push_back(e.id);
      table.accuracy.push_back(*e.accuracy);
      for (std::size_t m = 0; m < table.methods.size(); ++m) {
        const std::string& method = table.methods[m];
        table.scores[m].push_back(is_histogram_method(method)
                                      ? distance(parse_histogram_distance(method), *reference_hist,
                                                 encode(features, *codebook))
                                      : feature_distance(method, reference, features, o.kernel));
      }
    }
  }

  std::vector<CorrelationReport> reports;
  for (std::size_t m = 0; m < table.methods.size(); ++m) {
    reports.push_back(correlate(PairedSeries(table.scores[m], table.accuracy), table.methods[m]));
  }
  const json run = manifest.to_json();
  if (!o.plot_data.empty()) {
    std::string plot = "id,method,distance,accuracy,huber_fit\n";
    for (std::size_t m = 0; m < table.methods.size(); ++m) {
      for (std::size_t i = 0; i < table.ids.size(); ++i) {
        const double fit = reports[m].huber_intercept + reports[m].huber_slope * table.scores[m][i];
        plot += table.ids[i] + "," + table.methods[m] + "," + format_double(table.scores[m][i]) + "," +
                format_double(table.accuracy[i]) + "," + format_double(fit) + "\n";
      }
    }
    write_text(o.plot_data, csv_with_manifest(run, plot));
  }
  const Emitter emitter{out, o.common.out};
  if (parse_output_format(o.common.format) == OutputFormat::csv) {
    std::string body = "method,n,pearson_r,spearman_rho,kendall_tau_w,huber_slope,huber_intercept\n";
    for (const auto& r : reports) {
      body += r.method_label + "," + std::to_string(r.n) + "," + format_double(r.pearson_r) + "," +
              format_double(r.spearman_rho) + "," + csv_optional(r.kendall_tau_w) + "," +
              format_double(r.huber_slope) + "," + format_double(r.huber_intercept) + "\n";
    }
    emitter.emit(csv_with_manifest(run, body));
    return 0;
  }
  json list = json::array();
  for (const auto& r : reports) list.push_back(r.to_json());
  emitter.emit(dump(json{{"reports", list}, {"run_manifest", run}}));
  return 0;
}

struct PredictTrainOptions {
  CommonOptions common;
  double lr = 1e-3;
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  std::string hidden;
  double weight_decay = 0.0;
  std::string report;
};

std::vector<std::pair<ManifestEntry, BopHistogram>> read_histogram_manifest(const fs::path& path,
                                                                            RunManifest& manifest) {
  manifest.add_input(path);
  std::vector<std::pair<ManifestEntry, BopHistogram>> rows;
  for (auto& e : read_manifest(path)) {
    const BopHistogram h = read_histogram(e.path);
    manifest.add_input(e.path);
    rows.emplace_back(std::move(e), h);
  }
  return rows;
}

int cmd_predict_train(const PredictTrainOptions& o, RunManifest& manifest, std::ostream& out) {
  if (o.common.manifest.empty()) throw ArgumentError("predict train: --manifest is required");
  if (o.common.out.empty()) throw ArgumentError("predict train: --out (model path) is required");
  TrainConfig config;
  config.learning_rate = o.lr;
  config.epochs = o.epochs;
  config.batch_size = o.batch_size;
  config.seed = o.common.seed;
  config.weight_decay = o.weight_decay;
  if (!o.hidden.empty()) {
    const auto dims = parse_size_list(o.hidden, "--hidden");
    if (dims.size() != 2) throw ArgumentError("--hidden takes two sizes, e.g. 64,32");
    config.hidden_dims = std::make_pair(dims[0], dims[1]);
  }
  std::vector<TrainingSample> samples;
  for (auto& [entry, h] : read_histogram_manifest(o.common.manifest, manifest)) {
    if (!entry.accuracy) throw ArgumentError("predict train: manifest entry '" + entry.id + "' has no accuracy");
    samples.push_back({h, *entry.accuracy});
  }
  const TrainResult result = train(samples, config);
  const json run = manifest.to_json();
  json model = result.model.to_json();
  model["run_manifest"] = run;
  write_text(o.common.out, dump(model));
  const json report{{"n", samples.size()},
                    {"final_loss", result.final_loss},
                    {"epoch_losses", result.epoch_losses},
                    {"model_digest", result.model.digest()},
                    {"model_path", o.common.out},
                    {"run_manifest", run}};
  Emitter{out, o.report}.emit(dump(report));
  return 0;
}

struct PredictEvalOptions {
  CommonOptions common;
  std::string model;
};

int cmd_predict_eval(const PredictEvalOptions& o, RunManifest& manifest, std::ostream& out) {
  if (o.common.manifest.empty()) throw ArgumentError("predict eval: --manifest is required");
  expect_kind(o.model, InputKind::model, "produce models with `bop predict train`");
  const MlpModel model = load_model(o.model);
  manifest.add_input(o.model);
  std::vector<double> predicted;
  std::vector<double> truth;
  json rows = json::array();
  std::string csv = "id,predicted,accuracy\n";
  for (const auto& [entry, h] : read_histogram_manifest(o.common.manifest, manifest)) {
    const double p = predict(model, h);
    rows.push_back({{"id", entry.id}, {"predicted", p},
                    {"accuracy", entry.accuracy ? json(*entry.accuracy) : json(nullptr)}});
    csv += entry.id + "," + format_double(p) + "," + csv_optional(entry.accuracy) + "\n";
    if (entry.accuracy) {
      predicted.push_back(p);
      truth.push_back(*entry.accuracy);
    }
  }
  std::optional<double> error;
  if (!truth.empty()) error = rmse(predicted, truth);
  const json run = manifest.to_json();
  const Emitter emitter{out, o.common.out};
  if (parse_output_format(o.common.format) == OutputFormat::csv) {
    emitter.emit(csv_with_manifest(run, csv));
    return 0;
  }
  emitter.emit(dump(json{{"n", rows.size()},
                         {"n_scored", truth.size()},
                         {"rmse", error ? json(*error) : json(nullptr)},
                         {"model_digest", model.digest()},
                         {"predictions", rows},
                         {"run_manifest", run}}));
  return 0;
}

struct BenchOptions {
  CommonOptions common;
  synth::ShiftSpec spec;
  synth::BenchConfig config;
  std::string severities = "3,6,9,12,15";
  std::string shift_kind = "mean_drift";
  std::string k_sweep;
  bool no_predictor = false;
};

int cmd_bench(BenchOptions o, RunManifest& manifest, std::ostream& out) {
  o.spec.severities = parse_real_list(o.severities, "--severities");
  o.spec.shift_kind = synth::parse_shift_kind(o.shift_kind);
  o.spec.seed = o.common.seed;
  o.config.kmeans.seed = o.common.seed;
  o.config.predictor.seed = o.common.seed;
  o.config.train_predictor = !o.no_predictor;
  const auto ks = o.k_sweep.empty() ? std::vector<std::size_t>{} : parse_size_list(o.k_sweep, "--k-sweep");

  const synth::SyntheticBenchmark bench = synth::generate(o.spec);
  const synth::BenchResult result = synth::run_study(bench, o.config);
  std::vector<synth::KSweepRow> sweep;
  if (!ks.empty()) sweep = synth::k_sweep(bench, o.config, ks);

  const json run = manifest.to_json();
  json report = result.to_json();
  report["spec"] = o.spec.to_json();
  report["config"] = o.config.to_json();
  if (!ks.empty()) {
    json rows = json::array();
    for (const auto& r : sweep) rows.push_back({{"k", r.k}, {"inertia", r.inertia}, {"js", r.js.to_json()}});
    report["k_sweep"] = rows;
  }
  report["run_manifest"] = run;

  const OutputFormat format = parse_output_format(o.common.format);
  if (o.common.out.empty()) {
    if (format == OutputFormat::csv) {
      out << csv_with_manifest(run, ks.empty() ? result.to_csv() : synth::k_sweep_csv(sweep));
    } else {
      out << dump(report);
    }
    return 0;
  }
  const fs::path dir(o.common.out);
  write_text(dir / "bench.json", dump(report));
  write_text(dir / "bench.csv", csv_with_manifest(run, result.to_csv()));
  if (!ks.empty()) write_text(dir / "k_sweep.csv", csv_with_manifest(run, synth::k_sweep_csv(sweep)));
  json summary = json::object();
  for (const auto& c : result.correlations) summary["spearman_" + c.method_label] = c.spearman_rho;
  summary["predictor_rmse"] = result.predictor_rmse ? json(*result.predictor_rmse) : json(nullptr);
  summary["out"] = dir.string();
  out << dump(summary);
  return 0;
}

// ---------------------------------------------------------------------------
// Config files: `key = value` lines (or a flat JSON object). Entries become
// `--key=value` arguments placed after the user's own, and every option keeps
// its first value, so explicit flags win.

std::vector<std::string> config_arguments(const fs::path& path) {
  const std::string text = read_text(path);
  std::vector<std::pair<std::string, std::string>> pairs;
  const std::string stripped = trim(text);
  if (!stripped.empty() && stripped.front() == '{') {
    json j;
    try {
      j = json::parse(stripped);
    } catch (const json::exception& e) {
      throw ArgumentError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    for (const auto& [key, value] : j.items()) {
      std::string v;
      if (value.is_string()) {
        v = value.get<std::string>();
      } else if (value.is_array()) {
        for (std::size_t i = 0; i < value.size(); ++i) {
          if (i > 0) v += ",";
          v += value[i].is_string() ? value[i].get<std::string>() : value[i].dump();
        }
      } else {
        v = value.dump();
      }
      pairs.emplace_back(key, v);
    }
  } else {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ArgumentError("config '" + path.string() + "' line " + std::to_string(line_no) +
                            ": expected key = value");
      }
      pairs.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
  }
  std::vector<std::string> args;
  for (auto [key, value] : pairs) {
    std::replace(key.begin(), key.end(), '_', '-');
    if (key.rfind("--", 0) != 0) key = "--" + key;
    args.push_back(key + "=" + value);
  }
  return args;
}

std::string join_command(const std::vector<std::string>& args) {
  std::string command = "bop";
  for (const auto& a : args) command += " " + a;
  return command;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericalError*>(&e) != nullptr) return 1;
  if (dynamic_cast<const WriteError*>(&e) != nullptr) return 1;
  if (dynamic_cast<const Error*>(&e) != nullptr) return 2;
  return 1;
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bag-of-Prototypes dataset representation toolkit", "bop"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeFirst);
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  std::size_t threads = 0;
  std::string config_path;
  app.add_option("--threads", threads, "Worker threads (default: BOP_NUM_THREADS or 1)");
  app.add_option("--config", config_path, "key=value or JSON file of option defaults; flags win");
  app.fallthrough();

  CodebookOptions cb;
  CLI::App* codebook = app.add_subcommand("codebook", "Codebook operations");
  codebook->require_subcommand(1);
  CLI::App* cb_build = codebook->add_subcommand("build", "Cluster a reference feature set into K prototypes");
  add_common(cb_build, cb.common, false);
  cb_build->add_option("--features", cb.features, "Reference features (BOPF or CSV)")->required();
  cb_build->add_option("--k", cb.k, "Number of prototypes")->capture_default_str();
  cb_build->add_option("--max-iterations", cb.max_iterations, "Lloyd iteration cap per restart")->capture_default_str();
  cb_build->add_option("--tolerance", cb.tolerance, "Relative inertia change that stops iteration")->capture_default_str();
  cb_build->add_option("--restarts", cb.restarts, "k-means++ restarts; the lowest inertia wins")->capture_default_str();
  cb_build->add_option("--reference-id", cb.reference_id, "Label stored in the codebook");
  cb_build->add_option("--summary", cb.summary, "Write the JSON summary here instead of stdout");

  EncodeOptions enc;
  CLI::App* encode_cmd = app.add_subcommand("encode", "Encode features as a BoP histogram");
  add_common(encode_cmd, enc.common, true);
  encode_cmd->add_option("--features", enc.features, "Features to encode");
  encode_cmd->add_option("--codebook", enc.codebook, "Codebook file")->required();

  DistOptions dist;
  CLI::App* dist_cmd = app.add_subcommand("dist", "Distance between two datasets");
  add_common(dist_cmd, dist.common, true);
  dist_cmd->add_option("--method", dist.method, "js, hellinger, chi2, fd, mmd or kid")->capture_default_str();
  dist_cmd->add_option("inputs", dist.inputs, "Two histogram files (js/hellinger/chi2) or feature files")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  dist_cmd->add_option("--reference", dist.reference, "Reference input for --manifest batches");
  dist_cmd->add_option("--codebook", dist.codebook, "Encode feature inputs in-line for histogram methods");
  dist_cmd->add_option("--kernel", dist.kernel.kernel, "MMD kernel: rbf, linear or polynomial")->capture_default_str();
  dist_cmd->add_option("--bandwidth", dist.kernel.bandwidth, "RBF bandwidth (median heuristic when omitted)");
  dist_cmd->add_option("--estimator", dist.kernel.estimator, "MMD estimator: unbiased or biased")
      ->capture_default_str();

  CorrelateOptions corr;
  CLI::App* corr_cmd = app.add_subcommand("correlate", "Correlate dataset distances with accuracy");
  add_common(corr_cmd, corr.common, true);
  corr_cmd->add_option("--input", corr.input, "CSV: id,<distance columns>,accuracy");
  corr_cmd->add_option("--reference", corr.reference, "Reference features for --manifest");
  corr_cmd->add_option("--codebook", corr.codebook, "Codebook for histogram methods");
  corr_cmd->add_option("--methods", corr.methods, "Comma-separated methods for --manifest")->capture_default_str();
  corr_cmd->add_option("--plot-data", corr.plot_data, "Write per-dataset plot CSV here");
  corr_cmd->add_option("--kernel", corr.kernel.kernel, "MMD kernel: rbf, linear or polynomial")->capture_default_str();
  corr_cmd->add_option("--bandwidth", corr.kernel.bandwidth, "RBF bandwidth; median heuristic when omitted");
  corr_cmd->add_option("--estimator", corr.kernel.estimator, "MMD estimator: unbiased or biased")->capture_default_str();

  PredictTrainOptions ptrain;
  PredictEvalOptions peval;
  CLI::App* predict_cmd = app.add_subcommand("predict", "Accuracy regression on BoP histograms");
  predict_cmd->require_subcommand(1);
  CLI::App* ptrain_cmd = predict_cmd->add_subcommand("train", "Train the regressor");
  add_common(ptrain_cmd, ptrain.common, true);
  ptrain_cmd->add_option("--lr", ptrain.lr, "Adam learning rate")->capture_default_str();
  ptrain_cmd->add_option("--epochs", ptrain.epochs, "Training epochs")->capture_default_str();
  ptrain_cmd->add_option("--batch-size", ptrain.batch_size, "Minibatch size")->capture_default_str();
  ptrain_cmd->add_option("--hidden", ptrain.hidden, "Hidden sizes h1,h2");
  ptrain_cmd->add_option("--weight-decay", ptrain.weight_decay, "L2 penalty on weights")->capture_default_str();
  ptrain_cmd->add_option("--report", ptrain.report, "Write the training report here instead of stdout");
  CLI::App* peval_cmd = predict_cmd->add_subcommand("eval", "Predict accuracies and score them");
  add_common(peval_cmd, peval.common, true);
  peval_cmd->add_option("--model", peval.model, "Model file")->required();

  BenchOptions bench;
  CLI::App* bench_cmd = app.add_subcommand("bench", "Synthetic end-to-end study");
  add_common(bench_cmd, bench.common, false);
  bench_cmd->add_option("--k", bench.config.k, "Codebook size")->capture_default_str();
  bench_cmd->add_option("--classes", bench.spec.n_classes, "Number of classes")->capture_default_str();
  bench_cmd->add_option("--dim", bench.spec.dim, "Feature dimension")->capture_default_str();
  bench_cmd->add_option("--samples-per-class", bench.spec.samples_per_class, "Samples per class in every dataset")->capture_default_str();
  bench_cmd->add_option("--separation", bench.spec.class_separation, "Distance between the closest pair of class means")->capture_default_str();
  bench_cmd->add_option("--noise", bench.spec.noise, "Per-coordinate noise standard deviation")->capture_default_str();
  bench_cmd->add_option("--severities", bench.severities, "Comma-separated ascending severity levels")->capture_default_str();
  bench_cmd->add_option("--sets-per-severity", bench.spec.sets_per_severity, "Datasets drawn per severity level")->capture_default_str();
  bench_cmd->add_option("--severity-spread", bench.spec.severity_spread, "Replicate spread as a fraction of the level gap")->capture_default_str();
  bench_cmd->add_option("--shift-kind", bench.shift_kind, "mean_drift, noise_inflation or class_imbalance")->capture_default_str();
  bench_cmd->add_option("--kernel-rows", bench.config.kernel_rows, "Rows per set used by the kernel baselines")->capture_default_str();
  bench_cmd->add_option("--holdout-level", bench.config.holdout_level, "Severity level index held out from predictor training")->capture_default_str();
  bench_cmd->add_option("--epochs", bench.config.predictor.epochs, "Predictor training epochs")->capture_default_str();
  bench_cmd->add_option("--lr", bench.config.predictor.learning_rate, "Predictor learning rate")->capture_default_str();
  bench_cmd->add_flag("--no-predictor", bench.no_predictor, "Skip the held-out predictor study");
  bench_cmd->add_option("--k-sweep", bench.k_sweep, "Comma-separated codebook sizes, e.g. 20,50,100,200");

  std::vector<std::string> args = raw_args;
  const std::string command = join_command(raw_args);
  try {
    // Pull --config out first so its entries can be appended after the user's flags.
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) {
        config_path = args[i + 1];
        args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
        break;
      }
      if (args[i].rfind("--config=", 0) == 0) {
        config_path = args[i].substr(9);
        args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
        break;
      }
    }
    if (!config_path.empty()) {
      const auto extra = config_arguments(config_path);
      args.insert(args.end(), extra.begin(), extra.end());
    }
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }

  try {
    if (threads > 0) set_thread_count(threads);
    const auto make_manifest = [&](const CLI::App* sub) {
      RunManifest m(command, collect_config(*sub));
      if (!config_path.empty()) m.add_input(config_path);
      return m;
    };
    if (cb_build->parsed()) {
      RunManifest m = make_manifest(cb_build);
      return cmd_codebook_build(cb, m, out);
    }
    if (encode_cmd->parsed()) {
      if (enc.common.manifest.empty() && encode_cmd->count("--features") == 0) {
        throw ArgumentError("encode needs --features (or --manifest for a batch)");
      }
      RunManifest m = make_manifest(encode_cmd);
      return cmd_encode(enc, m, out);
    }
    if (dist_cmd->parsed()) {
      RunManifest m = make_manifest(dist_cmd);
      return cmd_dist(dist, m, out);
    }
    if (corr_cmd->parsed()) {
      RunManifest m = make_manifest(corr_cmd);
      return cmd_correlate(corr, m, out);
    }
    if (ptrain_cmd->parsed()) {
      RunManifest m = make_manifest(ptrain_cmd);
      return cmd_predict_train(ptrain, m, out);
    }
    if (peval_cmd->parsed()) {
      RunManifest m = make_manifest(peval_cmd);
      return cmd_predict_eval(peval, m, out);
    }
    if (bench_cmd->parsed()) {
      RunManifest m = make_manifest(bench_cmd);
      return cmd_bench(bench, m, out);
    }
    err << app.help();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace bop::cli
