#include "bop/features.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <system_error>

#include "binary_io.hpp"
#include "bop/error.hpp"
#include "bop/rng.hpp"

namespace bop {
namespace {

constexpr std::array<char, 4> kFeatureMagic{'B', 'O', 'P', 'F'};
constexpr std::uint32_t kFeatureVersion = 1;
constexpr std::size_t kFeatureHeaderBytes = 4 + 4 + 8 + 4;

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

void check_finite(const RowMatrixF& values, const std::string& where) {
  const std::size_t cols = static_cast<std::size_t>(values.cols());
  const float* data = values.data();
  const std::size_t total = static_cast<std::size_t>(values.size());
  for (std::size_t i = 0; i < total; ++i) {
    if (!std::isfinite(data[i])) {
      throw LoadError(where + ": non-finite value at row " + std::to_string(i / cols) +
                      ", column " + std::to_string(i % cols));
    }
  }
}

FeatureMatrix load_binary(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::vector<std::byte> bytes;
  try {
    bytes = detail::read_file_bytes(where);
  } catch (const Error& e) {
    throw LoadError(e.what());
  }
  detail::ByteReader reader(bytes);
  std::array<char, 4> magic{};
  reader.take(magic.data(), magic.size());
  const auto version = reader.get<std::uint32_t>();
  const auto n_rows = reader.get<std::uint64_t>();
  const auto dim = reader.get<std::uint32_t>();
  if (!reader.ok()) throw LoadError(where + ": file too short for a feature header");
  if (magic != kFeatureMagic) throw LoadError(where + ": bad magic, not a BOPF feature file");
  if (version != kFeatureVersion) {
    throw LoadError(where + ": unsupported feature file version " + std::to_string(version));
  }
  if (n_rows == 0 || dim == 0) {
    throw LoadError(where + ": header declares an empty matrix (" + std::to_string(n_rows) +
                    " x " + std::to_string(dim) + ")");
  }
  const std::uint64_t max_values = (std::numeric_limits<std::uint64_t>::max() / 4) / dim;
  if (n_rows > max_values) throw LoadError(where + ": header dimensions overflow");
  const std::uint64_t payload = n_rows * dim * 4;
  if (reader.remaining() != payload) {
    throw LoadError(where + ": expected " + std::to_string(payload) + " payload bytes for " +
                    std::to_string(n_rows) + " x " + std::to_string(dim) + ", found " +
                    std::to_string(reader.remaining()));
  }
  RowMatrixF values(static_cast<Eigen::Index>(n_rows), static_cast<Eigen::Index>(dim));
  reader.take(values.data(), payload);
  if constexpr (std::endian::native != std::endian::little) {
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      values.data()[i] = detail::byteswap_value(values.data()[i]);
    }
  }
  check_finite(values, where);
  return FeatureMatrix(std::move(values));
}

FeatureMatrix load_csv(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open '" + where + "'");
  std::vector<float> values;
  std::size_t width = 0;
  std::size_t row = 0;
  std::string line;
  while (std::getline(in, line)) {
    const std::string_view content = trim(line);
    if (content.empty()) continue;
    std::size_t fields = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = content.find(',', start);
      const std::string_view field =
          trim(content.substr(start, comma == std::string_view::npos ? content.npos : comma - start));
      float value = 0.0f;
      const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
      if (field.empty() || ec == std::errc::invalid_argument || ptr != field.data() + field.size()) {
        throw LoadError(where + ": cannot parse '" + std::string(field) + "' at row " +
                        std::to_string(row) + ", column " + std::to_string(fields));
      }
      if (ec == std::errc::result_out_of_range || !std::isfinite(value)) {
        throw LoadError(where + ": non-finite value '" + std::string(field) + "' at row " +
                        std::to_string(row) + ", column " + std::to_string(fields));
      }
      values.push_back(value);
      ++fields;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (row == 0) {
      width = fields;
    } else if (fields != width) {
      throw LoadError(where + ": row " + std::to_string(row) + " has " + std::to_string(fields) +
                      " values, expected " + std::to_string(width));
    }
    ++row;
  }
  if (in.bad()) throw LoadError(where + ": read error");
  if (row == 0) throw LoadError(where + ": no feature rows");
  RowMatrixF matrix(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(width));
  std::copy(values.begin(), values.end(), matrix.data());
  return FeatureMatrix(std::move(matrix));
}

}  // namespace

FeatureFormat parse_feature_format(std::string_view name) {
  if (name == "binary" || name == "bopf") return FeatureFormat::binary;
  if (name == "csv") return FeatureFormat::csv;
  throw ArgumentError("unknown feature format '" + std::string(name) + "' (expected binary or csv)");
}

FeatureFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return (ext == ".csv" || ext == ".txt") ? FeatureFormat::csv : FeatureFormat::binary;
}

FeatureMatrix::FeatureMatrix(RowMatrixF values) {
  if (values.rows() < 1 || values.cols() < 1) {
    throw ArgumentError("feature matrix must have at least one row and one column");
  }
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values.data()[i])) {
      throw ArgumentError("feature matrix contains a non-finite value at row " +
                          std::to_string(i / values.cols()) + ", column " +
                          std::to_string(i % values.cols()));
    }
  }
  values_ = std::make_shared<const RowMatrixF>(std::move(values));
}

FeatureMatrix FeatureMatrix::from_doubles(const RowMatrixD& values) {
  return FeatureMatrix(RowMatrixF(values.cast<float>()));
}

FeatureMatrix FeatureMatrix::select_rows(std::span<const std::size_t> indices) const {
  RowMatrixF out(static_cast<Eigen::Index>(indices.size()), values_->cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows()) throw ArgumentError("row index out of range");
    out.row(static_cast<Eigen::Index>(i)) = values_->row(static_cast<Eigen::Index>(indices[i]));
  }
  return FeatureMatrix(std::move(out));
}

void DatasetRecord::validate() const {
  if (id.empty()) throw ArgumentError("dataset id must be non-empty");
  if (accuracy && !(*accuracy >= 0.0 && *accuracy <= 1.0)) {
    throw ArgumentError("dataset '" + id + "': accuracy " + std::to_string(*accuracy) +
                        " outside [0, 1]");
  }
}

FeatureMatrix load_features(const std::filesystem::path& path, FeatureFormat format) {
  return format == FeatureFormat::binary ? load_binary(path) : load_csv(path);
}

void save_features(const FeatureMatrix& matrix, const std::filesystem::path& path,
                   FeatureFormat format) {
  const std::string where = path.string();
  if (format == FeatureFormat::binary) {
    detail::ByteWriter writer;
    writer.put_bytes(kFeatureMagic.data(), kFeatureMagic.size());
    writer.put<std::uint32_t>(kFeatureVersion);
    writer.put<std::uint64_t>(matrix.rows());
    writer.put<std::uint32_t>(static_cast<std::uint32_t>(matrix.dim()));
    const float* data = matrix.values().data();
    const std::size_t total = matrix.rows() * matrix.dim();
    if constexpr (std::endian::native == std::endian::little) {
      writer.put_bytes(data, total * sizeof(float));
    } else {
      for (std::size_t i = 0; i < total; ++i) writer.put<float>(data[i]);
    }
    detail::write_file_bytes(where, writer.bytes());
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WriteError("cannot open '" + where + "' for writing");
  std::array<char, 64> buffer{};
  std::string line;
  for (std::size_t r = 0; r < matrix.rows(); ++r) {
    line.clear();
    const auto row = matrix.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c > 0) line.push_back(',');
      // Shortest representation that round-trips the float exactly (<= 9 digits).
      const auto [ptr, ec] = std::to_chars(buffer.data(), buffer.data() + buffer.size(), row[c]);
      line.append(buffer.data(), ptr);
    }
    line.push_back('\n');
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
  }
  out.flush();
  if (!out) throw WriteError("write to '" + where + "' failed");
}

std::vector<std::size_t> subsample_indices(std::size_t n_rows, double fraction,
                                           std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ArgumentError("subsample fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  if (n_rows == 0) throw ArgumentError("cannot subsample an empty matrix");
  const auto wanted = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n_rows)));
  const std::size_t count = std::clamp<std::size_t>(wanted, 1, n_rows);
  std::vector<std::size_t> order(n_rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.index(n_rows - i);
    std::swap(order[i], order[j]);
  }
  order.resize(count);
  return order;
}

FeatureMatrix subsample(const FeatureMatrix& matrix, double fraction, std::uint64_t seed) {
  const auto indices = subsample_indices(matrix.rows(), fraction, seed);
  return matrix.select_rows(indices);
}

namespace detail {

std::vector<std::byte> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw LoadError("cannot open '" + path + "'");
  const auto size = static_cast<std::streamoff>(in.tellg());
  if (size < 0) throw LoadError("cannot determine size of '" + path + "'");
  std::vector<std::byte> bytes(static_cast<std::size_t>(size));
  in.seekg(0);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), size)) {
    throw LoadError("read error on '" + path + "'");
  }
  return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<std::byte>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WriteError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw WriteError("write to '" + path + "' failed");
}

}  // namespace detail
}  // namespace bop
