#include "bop/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "bop/digest.hpp"
#include "bop/error.hpp"
#include "bop/rng.hpp"

namespace bop {
namespace {

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Eigen::VectorXd to_vector(const BopHistogram& h) {
  const auto bins = h.bins();
  return Eigen::Map<const Eigen::VectorXd>(bins.data(), static_cast<Eigen::Index>(bins.size()));
}

struct Activations {
  Eigen::VectorXd z1, a1, z2, a2;
  double z3 = 0.0;
  double output = 0.0;
};

Activations run_forward(const std::array<DenseLayer, 3>& layers, const Eigen::VectorXd& input) {
  Activations act;
  act.z1 = layers[0].weights * input + layers[0].bias;
  act.a1 = act.z1.cwiseMax(0.0);
  act.z2 = layers[1].weights * act.a1 + layers[1].bias;
  act.a2 = act.z2.cwiseMax(0.0);
  act.z3 = (layers[2].weights * act.a2 + layers[2].bias)(0);
  act.output = logistic(act.z3);
  return act;
}

std::array<DenseLayer, 3> zeros_like(const std::array<DenseLayer, 3>& layers) {
  std::array<DenseLayer, 3> out;
  for (std::size_t l = 0; l < 3; ++l) {
    out[l].weights = Eigen::MatrixXd::Zero(layers[l].weights.rows(), layers[l].weights.cols());
    out[l].bias = Eigen::VectorXd::Zero(layers[l].bias.size());
  }
  return out;
}

void check_fingerprint(const MlpModel& model, const BopHistogram& h) {
  if (h.codebook_fingerprint() != model.input_fingerprint()) {
    throw ComparabilityError("histogram codebook " + h.codebook_fingerprint().substr(0, 12) +
                             " does not match the model's codebook " +
                             model.input_fingerprint().substr(0, 12));
  }
  if (h.size() != model.layer_dims()[0]) {
    throw ComparabilityError("histogram has " + std::to_string(h.size()) +
                             " bins, model expects " + std::to_string(model.layer_dims()[0]));
  }
}

double dataset_loss(const MlpModel& model, const std::vector<Eigen::VectorXd>& inputs,
                    const std::vector<double>& targets) {
  double sum = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const double diff = model.forward(inputs[i]) - targets[i];
    sum += diff * diff;
  }
  return sum / static_cast<double>(inputs.size());
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ArgumentError("learning_rate must be > 0");
  if (epochs < 1) throw ArgumentError("epochs must be >= 1");
  if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (!(weight_decay >= 0.0)) throw ArgumentError("weight_decay must be >= 0");
  if (hidden_dims && (hidden_dims->first < 1 || hidden_dims->second < 1)) {
    throw ArgumentError("hidden layer widths must be >= 1");
  }
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j{{"learning_rate", learning_rate},
                   {"epochs", epochs},
                   {"batch_size", batch_size},
                   {"seed", seed},
                   {"weight_decay", weight_decay}};
  j["hidden_dims"] = hidden_dims ? nlohmann::json{hidden_dims->first, hidden_dims->second}
                                 : nlohmann::json(nullptr);
  return j;
}

std::pair<std::size_t, std::size_t> default_hidden_dims(std::size_t input_dim) {
  return {std::max<std::size_t>(64, input_dim), std::max<std::size_t>(32, input_dim / 2)};
}

MlpModel::MlpModel(std::array<DenseLayer, 3> layers, std::string input_fingerprint,
                   nlohmann::json train_config)
    : layers_(std::move(layers)),
      input_fingerprint_(std::move(input_fingerprint)),
      train_config_(std::move(train_config)) {
  for (std::size_t l = 0; l < 3; ++l) {
    const auto& layer = layers_[l];
    if (layer.weights.rows() < 1 || layer.weights.cols() < 1 ||
        layer.bias.size() != layer.weights.rows()) {
      throw ArgumentError("layer " + std::to_string(l) + " has inconsistent shapes");
    }
    if (l > 0 && layer.weights.cols() != layers_[l - 1].weights.rows()) {
      throw ArgumentError("layer " + std::to_string(l) + " input width does not match the previous layer");
    }
    if (!layer.weights.allFinite() || !layer.bias.allFinite()) {
      throw ArgumentError("layer " + std::to_string(l) + " has non-finite parameters");
    }
  }
  if (layers_[2].weights.rows() != 1) throw ArgumentError("output layer must have width 1");
}

MlpModel MlpModel::initialize(std::size_t input_dim, std::size_t hidden1, std::size_t hidden2,
                              std::uint64_t seed, std::string input_fingerprint) {
  if (input_dim < 1 || hidden1 < 1 || hidden2 < 1) throw ArgumentError("layer widths must be >= 1");
  Rng rng(seed);
  const std::array<std::size_t, 4> dims{input_dim, hidden1, hidden2, 1};
  std::array<DenseLayer, 3> layers;
  for (std::size_t l = 0; l < 3; ++l) {
    const auto fan_in = static_cast<double>(dims[l]);
    const double stddev = l < 2 ? std::sqrt(2.0 / fan_in) : std::sqrt(1.0 / fan_in);
    layers[l].weights.resize(static_cast<Eigen::Index>(dims[l + 1]), static_cast<Eigen::Index>(dims[l]));
    for (Eigen::Index r = 0; r < layers[l].weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layers[l].weights.cols(); ++c) {
        layers[l].weights(r, c) = stddev * rng.normal();
      }
    }
    layers[l].bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dims[l + 1]));
  }
  return MlpModel(std::move(layers), std::move(input_fingerprint));
}

std::array<std::size_t, 4> MlpModel::layer_dims() const {
  return {static_cast<std::size_t>(layers_[0].weights.cols()),
          static_cast<std::size_t>(layers_[0].weights.rows()),
          static_cast<std::size_t>(layers_[1].weights.rows()),
          static_cast<std::size_t>(layers_[2].weights.rows())};
}

double MlpModel::forward(const Eigen::VectorXd& input) const {
  if (input.size() != layers_[0].weights.cols()) {
    throw ArgumentError("input has " + std::to_string(input.size()) + " entries, model expects " +
                        std::to_string(layers_[0].weights.cols()));
  }
  return run_forward(layers_, input).output;
}

std::size_t MlpModel::parameter_count() const {
  std::size_t count = 0;
  for (const auto& layer : layers_) {
    count += static_cast<std::size_t>(layer.weights.size() + layer.bias.size());
  }
  return count;
}

std::vector<double> MlpModel::flat_parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& layer : layers_) {
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) flat.push_back(layer.weights(r, c));
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) flat.push_back(layer.bias(i));
  }
  return flat;
}

MlpModel MlpModel::with_parameters(std::span<const double> flat) const {
  if (flat.size() != parameter_count()) throw ArgumentError("parameter vector has the wrong length");
  std::array<DenseLayer, 3> layers = layers_;
  std::size_t pos = 0;
  for (auto& layer : layers) {
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = flat[pos++];
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = flat[pos++];
  }
  return MlpModel(std::move(layers), input_fingerprint_, train_config_);
}

nlohmann::json MlpModel::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : layers_) {
    layers.push_back({{"weights", matrix_to_json(layer.weights)},
                      {"bias", std::vector<double>(layer.bias.data(),
                                                   layer.bias.data() + layer.bias.size())}});
  }
  return nlohmann::json{{"layer_dims", layer_dims()},
                        {"hidden_activation", "relu"},
                        {"output_activation", "logistic"},
                        {"input_fingerprint", input_fingerprint_},
                        {"train_config", train_config_},
                        {"layers", layers}};
}

MlpModel MlpModel::from_json(const nlohmann::json& j) {
  try {
    const auto dims = j.at("layer_dims").get<std::vector<std::size_t>>();
    const auto& layers_json = j.at("layers");
    if (dims.size() != 4 || layers_json.size() != 3) {
      throw LoadError("model JSON must describe exactly three layers");
    }
    std::array<DenseLayer, 3> layers;
    for (std::size_t l = 0; l < 3; ++l) {
      const auto rows = layers_json[l].at("weights").get<std::vector<std::vector<double>>>();
      const auto bias = layers_json[l].at("bias").get<std::vector<double>>();
      if (rows.size() != dims[l + 1] || bias.size() != dims[l + 1]) {
        throw LoadError("model layer " + std::to_string(l) + " does not match layer_dims");
      }
      auto& layer = layers[l];
      layer.weights.resize(static_cast<Eigen::Index>(dims[l + 1]), static_cast<Eigen::Index>(dims[l]));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != dims[l]) {
          throw LoadError("model layer " + std::to_string(l) + " row width does not match layer_dims");
        }
        for (std::size_t c = 0; c < dims[l]; ++c) {
          layer.weights(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
      }
      layer.bias = Eigen::Map<const Eigen::VectorXd>(bias.data(), static_cast<Eigen::Index>(bias.size()));
    }
    return MlpModel(std::move(layers), j.at("input_fingerprint").get<std::string>(),
                    j.value("train_config", nlohmann::json::object()));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed model JSON: ") + e.what());
  }
}

std::string MlpModel::digest() const {
  const std::string text = to_json().dump();
  return to_hex(sha256(std::as_bytes(std::span<const char>(text.data(), text.size()))));
}

LossGradient loss_and_gradient(const MlpModel& model, const Eigen::VectorXd& input, double target) {
  const auto& layers = model.layers();
  if (input.size() != layers[0].weights.cols()) throw ArgumentError("input width does not match model");
  const Activations act = run_forward(layers, input);
  LossGradient out;
  const double diff = act.output - target;
  out.loss = diff * diff;
  out.gradient = zeros_like(layers);

  const double dz3 = 2.0 * diff * act.output * (1.0 - act.output);
  out.gradient[2].weights = dz3 * act.a2.transpose();
  out.gradient[2].bias(0) = dz3;

  const Eigen::VectorXd dz2 =
      (layers[2].weights.transpose() * dz3).cwiseProduct((act.z2.array() > 0.0).cast<double>().matrix());
  out.gradient[1].weights = dz2 * act.a1.transpose();
  out.gradient[1].bias = dz2;

  const Eigen::VectorXd dz1 =
      (layers[1].weights.transpose() * dz2).cwiseProduct((act.z1.array() > 0.0).cast<double>().matrix());
  out.gradient[0].weights = dz1 * input.transpose();
  out.gradient[0].bias = dz1;
  return out;
}

TrainResult train(std::span<const TrainingSample> data, const TrainConfig& config) {
  config.validate();
  if (data.empty()) throw ArgumentError("training needs at least one sample");
  const std::string& fingerprint = data.front().histogram.codebook_fingerprint();
  const std::size_t input_dim = data.front().histogram.size();
  for (const auto& sample : data) {
    if (sample.histogram.codebook_fingerprint() != fingerprint) {
      throw ComparabilityError("training histograms come from different codebooks");
    }
    if (sample.histogram.size() != input_dim) {
      throw ComparabilityError("training histograms have different lengths");
    }
    if (!(sample.accuracy >= 0.0 && sample.accuracy <= 1.0)) {
      throw ArgumentError("training accuracy " + std::to_string(sample.accuracy) + " outside [0, 1]");
    }
  }

  // Canonical order: by target, then bins lexicographically.
  std::vector<std::size_t> canonical(data.size());
  std::iota(canonical.begin(), canonical.end(), std::size_t{0});
  std::stable_sort(canonical.begin(), canonical.end(), [&](std::size_t a, std::size_t b) {
    if (data[a].accuracy != data[b].accuracy) return data[a].accuracy < data[b].accuracy;
    const auto ba = data[a].histogram.bins();
    const auto bb = data[b].histogram.bins();
    return std::lexicographical_compare(ba.begin(), ba.end(), bb.begin(), bb.end());
  });
  std::vector<Eigen::VectorXd> inputs;
  std::vector<double> targets;
  for (const auto idx : canonical) {
    inputs.push_back(to_vector(data[idx].histogram));
    targets.push_back(data[idx].accuracy);
  }

  const auto [h1, h2] = config.hidden_dims ? *config.hidden_dims : default_hidden_dims(input_dim);
  MlpModel model = MlpModel::initialize(input_dim, h1, h2, mix_seed(config.seed, 0), fingerprint);
  Rng shuffle_rng(mix_seed(config.seed, 1));

  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEpsilon = 1e-8;
  std::vector<double> params = model.flat_parameters();
  std::vector<double> first_moment(params.size(), 0.0);
  std::vector<double> second_moment(params.size(), 0.0);
  // Weight decay applies to weights only, not biases.
  std::vector<bool> decays(params.size(), false);
  {
    std::size_t pos = 0;
    for (const auto& layer : model.layers()) {
      for (Eigen::Index i = 0; i < layer.weights.size(); ++i) decays[pos++] = true;
      pos += static_cast<std::size_t>(layer.bias.size());
    }
  }

  const std::size_t n = inputs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  TrainResult result{model, {}, 0.0};
  std::size_t step = 0;
  std::vector<double> grad(params.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.index(i)]);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = start; b < end; ++b) {
        const LossGradient lg = loss_and_gradient(model, inputs[order[b]], targets[order[b]]);
        std::size_t pos = 0;
        for (const auto& layer : lg.gradient) {
          for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
            for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) grad[pos++] += layer.weights(r, c);
          }
          for (Eigen::Index i = 0; i < layer.bias.size(); ++i) grad[pos++] += layer.bias(i);
        }
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      ++step;
      const double correction1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double correction2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      for (std::size_t p = 0; p < params.size(); ++p) {
        double g = grad[p] * inv;
        if (decays[p]) g += config.weight_decay * params[p];
        first_moment[p] = kBeta1 * first_moment[p] + (1.0 - kBeta1) * g;
        second_moment[p] = kBeta2 * second_moment[p] + (1.0 - kBeta2) * g * g;
        const double m_hat = first_moment[p] / correction1;
        const double v_hat = second_moment[p] / correction2;
        params[p] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + kEpsilon);
      }
      for (const double p : params) {
        if (!std::isfinite(p)) throw DivergenceError("training diverged: non-finite parameters");
      }
      model = model.with_parameters(params);
    }
    const double loss = dataset_loss(model, inputs, targets);
    if (!std::isfinite(loss)) throw DivergenceError("training diverged: non-finite loss at epoch " +
                                                    std::to_string(epoch));
    result.epoch_losses.push_back(loss);
  }
  result.final_loss = result.epoch_losses.back();
  result.model = MlpModel(model.layers(), fingerprint, config.to_json());
  return result;
}

double predict(const MlpModel& model, const BopHistogram& h) {
  check_fingerprint(model, h);
  return model.forward(to_vector(h));
}

double grad_check(const MlpModel& model, const Eigen::VectorXd& input, double target, double step) {
  const LossGradient analytic = loss_and_gradient(model, input, target);
  std::vector<double> analytic_flat;
  for (const auto& layer : analytic.gradient) {
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) analytic_flat.push_back(layer.weights(r, c));
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) analytic_flat.push_back(layer.bias(i));
  }
  std::vector<double> params = model.flat_parameters();
  const auto loss_at = [&](const std::vector<double>& p) {
    const double diff = model.with_parameters(p).forward(input) - target;
    return diff * diff;
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + step;
    const double up = loss_at(params);
    params[i] = saved - step;
    const double down = loss_at(params);
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic_flat[i];
    const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-6);
    worst = std::max(worst, rel);
  }
  return worst;
}

double grad_check(const MlpModel& model, const BopHistogram& h, double target, double step) {
  check_fingerprint(model, h);
  return grad_check(model, to_vector(h), target, step);
}

void save_model(const MlpModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw WriteError("cannot open '" + path.string() + "' for writing");
  out << model.to_json().dump(2) << '\n';
  if (!out) throw WriteError("write to '" + path.string() + "' failed");
}

MlpModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": invalid JSON: " + e.what());
  }
  return MlpModel::from_json(j);
}

}  // namespace bop
