#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "bop/error.hpp"
#include "bop/predictor.hpp"
#include "bop/stats.hpp"
#include "test_support.hpp"

namespace bop {
namespace {

using testing::random_histogram;

double relu(double v) { return v > 0 ? v : 0; }

// Straight loops over the stored parameters.
double forward_oracle(const MlpModel& m, const std::vector<double>& x) {
  std::vector<double> a = x;
  for (std::size_t l = 0; l < 3; ++l) {
    const auto& layer = m.layers()[l];
    std::vector<double> z(static_cast<std::size_t>(layer.weights.rows()));
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      double s = layer.bias(r);
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) s += layer.weights(r, c) * a[static_cast<std::size_t>(c)];
      z[static_cast<std::size_t>(r)] = l < 2 ? relu(s) : 1.0 / (1.0 + std::exp(-s));
    }
    a = z;
  }
  return a[0];
}

Eigen::VectorXd to_vector(const BopHistogram& h) {
  return Eigen::Map<const Eigen::VectorXd>(h.bins().data(), static_cast<Eigen::Index>(h.size()));
}

TEST(Mlp, InitializationShapesAndDeterminism) {
  const MlpModel a = MlpModel::initialize(8, 16, 8, 3, "fp");
  const MlpModel b = MlpModel::initialize(8, 16, 8, 3, "fp");
  EXPECT_EQ(a.flat_parameters(), b.flat_parameters());
  EXPECT_EQ(a.layer_dims(), (std::array<std::size_t, 4>{8, 16, 8, 1}));
  EXPECT_EQ(a.parameter_count(), 8u * 16 + 16 + 16 * 8 + 8 + 8 + 1);
  for (const auto& layer : a.layers()) EXPECT_TRUE(layer.bias.isZero());
  EXPECT_NE(a.flat_parameters(), MlpModel::initialize(8, 16, 8, 4, "fp").flat_parameters());
}

TEST(Mlp, DefaultHiddenDims) {
  EXPECT_EQ(default_hidden_dims(10), std::make_pair(std::size_t{64}, std::size_t{32}));
  EXPECT_EQ(default_hidden_dims(100), std::make_pair(std::size_t{100}, std::size_t{50}));
}

TEST(Mlp, ForwardMatchesOracle) {
  Rng rng(1);
  MlpModel m = MlpModel::initialize(6, 5, 4, 9, "fp");
  std::vector<double> flat = m.flat_parameters();
  for (auto& p : flat) p = 0.7 * rng.normal();  // non-zero biases too
  m = m.with_parameters(flat);
  for (int t = 0; t < 10; ++t) {
    const BopHistogram h = random_histogram(6, rng);
    const std::vector<double> x(h.bins().begin(), h.bins().end());
    EXPECT_NEAR(m.forward(to_vector(h)), forward_oracle(m, x), 1e-14);
    EXPECT_EQ(predict(m, h), predict(m, h));
  }
}

TEST(Mlp, ZeroWeightsGiveLogisticOfBias) {
  MlpModel m = MlpModel::initialize(4, 3, 2, 0, "fp");
  std::vector<double> flat(m.parameter_count(), 0.0);
  flat.back() = 0.8;
  m = m.with_parameters(flat);
  EXPECT_NEAR(m.forward(Eigen::VectorXd::Constant(4, 0.25)), 1.0 / (1.0 + std::exp(-0.8)), 1e-15);
}

TEST(Mlp, RejectsWrongInputs) {
  const MlpModel m = MlpModel::initialize(4, 3, 2, 0, "fp");
  Rng rng(2);
  EXPECT_THROW(predict(m, random_histogram(4, rng, false, "other")), ComparabilityError);
  EXPECT_THROW(predict(m, random_histogram(5, rng)), ComparabilityError);
  EXPECT_THROW(m.forward(Eigen::VectorXd::Zero(3)), ArgumentError);
  EXPECT_THROW(m.with_parameters(std::vector<double>(3, 0.0)), ArgumentError);
}

TEST(GradCheck, RandomSmallModels) {
  Rng rng(3);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const MlpModel m = MlpModel::initialize(8, 16, 8, seed, "fp");
    const BopHistogram h = random_histogram(8, rng);
    EXPECT_LT(grad_check(m, h, 0.3 + 0.05 * static_cast<double>(seed)), 1e-4) << seed;
  }
}

TEST(GradCheck, ZeroLossPoint) {
  const MlpModel m = MlpModel::initialize(8, 16, 8, 1, "fp");
  Rng rng(4);
  const BopHistogram h = random_histogram(8, rng);
  const Eigen::VectorXd x = to_vector(h);
  const double target = m.forward(x);
  const LossGradient g = loss_and_gradient(m, x, target);
  EXPECT_EQ(g.loss, 0.0);
  for (const auto& layer : g.gradient) {
    EXPECT_EQ(layer.weights.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(layer.bias.cwiseAbs().maxCoeff(), 0.0);
  }
  EXPECT_LT(grad_check(m, x, target), 1e-4);
}

TEST(GradCheck, ErrorGrowsWithCoarseStep) {
  const MlpModel m = MlpModel::initialize(8, 16, 8, 5, "fp");
  Rng rng(5);
  const BopHistogram h = random_histogram(8, rng);
  EXPECT_LE(grad_check(m, h, 0.9, 1e-5), grad_check(m, h, 0.9, 1e-2));
}

std::vector<TrainingSample> monotone_task(std::size_t n, Rng& rng, const BopHistogram& ref) {
  std::vector<TrainingSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const BopHistogram h = random_histogram(ref.size(), rng);
    out.push_back({h, 1.0 - js_divergence(h, ref) / std::numbers::ln2});
  }
  return out;
}

TEST(Train, ConstantTargets) {
  Rng rng(6);
  std::vector<TrainingSample> data;
  for (int i = 0; i < 20; ++i) data.push_back({random_histogram(8, rng), 0.7});
  TrainConfig config;
  config.learning_rate = 0.01;
  config.epochs = 300;
  const TrainResult r = train(data, config);
  for (const auto& s : data) EXPECT_NEAR(predict(r.model, s.histogram), 0.7, 0.01);
}

TEST(Train, SingleSampleIsMemorized) {
  Rng rng(7);
  const std::vector<TrainingSample> data{{random_histogram(8, rng), 0.42}};
  TrainConfig config;
  config.learning_rate = 0.01;
  config.epochs = 300;
  const TrainResult r = train(data, config);
  EXPECT_NEAR(predict(r.model, data[0].histogram), 0.42, 0.01);
  EXPECT_EQ(r.epoch_losses.size(), 300u);
  EXPECT_EQ(r.final_loss, r.epoch_losses.back());
}

TEST(Train, MonotoneMapGeneralizes) {
  Rng rng(8);
  const BopHistogram ref(std::vector<double>(4, 0.25), "fp", 100);
  const auto all = monotone_task(200, rng, ref);
  const std::vector<TrainingSample> fit(all.begin(), all.begin() + 150);
  TrainConfig config;
  config.learning_rate = 0.01;
  config.epochs = 400;
  config.seed = 1;
  const TrainResult r = train(fit, config);
  std::vector<double> p, t;
  for (std::size_t i = 150; i < 200; ++i) {
    p.push_back(predict(r.model, all[i].histogram));
    t.push_back(all[i].accuracy);
  }
  EXPECT_LT(rmse(p, t), 0.02);
  EXPECT_LT(r.epoch_losses.back(), r.epoch_losses.front());
}

TEST(Train, DeterministicAndOrderIndependent) {
  Rng rng(9);
  const BopHistogram ref(std::vector<double>(8, 0.125), "fp", 100);
  auto data = monotone_task(12, rng, ref);
  TrainConfig config;
  config.epochs = 20;
  config.batch_size = 5;
  config.seed = 4;
  const TrainResult a = train(data, config);
  const TrainResult b = train(data, config);
  EXPECT_EQ(a.model.flat_parameters(), b.model.flat_parameters());
  std::reverse(data.begin(), data.end());
  const TrainResult c = train(data, config);
  EXPECT_EQ(a.model.flat_parameters(), c.model.flat_parameters());
  EXPECT_EQ(a.model.digest(), c.model.digest());
}

TEST(Train, RejectsBadInputs) {
  Rng rng(10);
  TrainConfig config;
  EXPECT_THROW(train(std::vector<TrainingSample>{}, config), ArgumentError);
  const std::vector<TrainingSample> mixed{{random_histogram(4, rng, false, "a"), 0.5},
                                          {random_histogram(4, rng, false, "b"), 0.5}};
  EXPECT_THROW(train(mixed, config), ComparabilityError);
  const std::vector<TrainingSample> out_of_range{{random_histogram(4, rng), 1.5}};
  EXPECT_THROW(train(out_of_range, config), ArgumentError);
  config.learning_rate = 0;
  EXPECT_THROW(config.validate(), ArgumentError);
}

TEST(Train, HugeLearningRateDivergesOrSaturates) {
  // Either training fails loudly or the outputs stay finite; never NaN silently.
  Rng rng(11);
  std::vector<TrainingSample> data;
  for (int i = 0; i < 8; ++i) data.push_back({random_histogram(4, rng), 0.1 * i});
  TrainConfig config;
  config.learning_rate = 1e300;
  config.epochs = 5;
  try {
    const TrainResult r = train(data, config);
    for (const auto& s : data) EXPECT_TRUE(std::isfinite(predict(r.model, s.histogram)));
  } catch (const DivergenceError&) {
    SUCCEED();
  }
}

TEST(ModelIo, RoundTrip) {
  testing::TempDir dir;
  Rng rng(12);
  const std::vector<TrainingSample> data{{random_histogram(6, rng), 0.3}, {random_histogram(6, rng), 0.6}};
  TrainConfig config;
  config.epochs = 10;
  const TrainResult r = train(data, config);
  save_model(r.model, dir / "m.json");
  const MlpModel back = load_model(dir / "m.json");
  EXPECT_EQ(back.flat_parameters(), r.model.flat_parameters());
  EXPECT_EQ(back.digest(), r.model.digest());
  EXPECT_EQ(back.input_fingerprint(), "fp");
  EXPECT_EQ(predict(back, data[0].histogram), predict(r.model, data[0].histogram));
  EXPECT_THROW(MlpModel::from_json(nlohmann::json{{"layer_dims", {1, 2}}}), LoadError);
}

}  // namespace
}  // namespace bop
