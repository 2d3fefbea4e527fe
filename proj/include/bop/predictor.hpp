#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bop/histogram.hpp"
#include "json.hpp"

namespace bop {

struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;     // out
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  // Empty selects (max(64, K), max(32, K / 2)).
  std::optional<std::pair<std::size_t, std::size_t>> hidden_dims;
  double weight_decay = 0.0;

  void validate() const;
  nlohmann::json to_json() const;
};

std::pair<std::size_t, std::size_t> default_hidden_dims(std::size_t input_dim);

// Three fully connected layers K -> h1 -> h2 -> 1, ReLU after the two hidden
// layers and a logistic output, so predictions are accuracies in (0, 1).
class MlpModel {
 public:
  MlpModel(std::array<DenseLayer, 3> layers, std::string input_fingerprint,
           nlohmann::json train_config = nlohmann::json::object());

  // He-normal hidden weights, variance 1/fan_in for the output layer, zero biases.
  static MlpModel initialize(std::size_t input_dim, std::size_t hidden1, std::size_t hidden2,
                             std::uint64_t seed, std::string input_fingerprint);

  std::array<std::size_t, 4> layer_dims() const;
  const std::array<DenseLayer, 3>& layers() const { return layers_; }
  const std::string& input_fingerprint() const { return input_fingerprint_; }
  const nlohmann::json& train_config() const { return train_config_; }

  double forward(const Eigen::VectorXd& input) const;

  std::size_t parameter_count() const;
  // Layer by layer: weights (row-major) then bias.
  std::vector<double> flat_parameters() const;
  MlpModel with_parameters(std::span<const double> flat) const;

  nlohmann::json to_json() const;
  static MlpModel from_json(const nlohmann::json& j);
  // SHA-256 of the serialised model.
  std::string digest() const;

 private:
  std::array<DenseLayer, 3> layers_;
  std::string input_fingerprint_;
  nlohmann::json train_config_;
};

struct LossGradient {
  double loss = 0.0;
  std::array<DenseLayer, 3> gradient;
};

// Squared error (f(x) - target)^2 and its gradient by backpropagation.
LossGradient loss_and_gradient(const MlpModel& model, const Eigen::VectorXd& input, double target);

struct TrainingSample {
  BopHistogram histogram;
  double accuracy;
};

struct TrainResult {
  MlpModel model;
  // Mean squared error over the full training set after each epoch.
  std::vector<double> epoch_losses;
  double final_loss = 0.0;
};

// Mini-batch Adam on the mean squared error. Samples are put in a canonical
// order before the seeded per-epoch shuffle, so the result depends only on the
// set of samples and the config.
TrainResult train(std::span<const TrainingSample> data, const TrainConfig& config);

double predict(const MlpModel& model, const BopHistogram& h);

// Largest relative difference between backprop gradients and central finite
// differences over every parameter: |a - n| / max(|a| + |n|, 1e-6).
double grad_check(const MlpModel& model, const BopHistogram& h, double target, double step = 1e-5);
double grad_check(const MlpModel& model, const Eigen::VectorXd& input, double target,
                  double step = 1e-5);

void save_model(const MlpModel& model, const std::filesystem::path& path);
MlpModel load_model(const std::filesystem::path& path);

}  // namespace bop
