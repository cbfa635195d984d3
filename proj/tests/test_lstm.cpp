#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "mergexai/error.hpp"
#include "mergexai/lstm.hpp"
#include "mergexai/random.hpp"
#include "mergexai/synth.hpp"
#include "oracles.hpp"

namespace mergexai::lstm {
namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * standard_normal(rng);
  return m;
}

// Initialized network with every tensor, biases included, perturbed.
NetworkParams random_net(const NetworkDims& dims, std::uint64_t seed) {
  NetworkParams net = initialize(dims, seed);
  Rng rng(seed + 1000);
  for_each_tensor([&](auto t) {
    for (Eigen::Index k = 0; k < t.size(); ++k) t[k] += 0.3 * standard_normal(rng);
  }, net);
  return net;
}

std::vector<TrainingWindow> random_batch(std::size_t n, std::size_t w, std::size_t in, Rng& rng) {
  std::vector<TrainingWindow> batch;
  for (std::size_t b = 0; b < n; ++b)
    batch.push_back({random_matrix(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(in), rng),
                     standard_normal(rng)});
  return batch;
}

TEST(Cell, ZeroParamsGiveZeroState) {
  const auto net = NetworkParams::zeros({3, 4, 2, 2});
  const LstmState prev{Vector::Zero(4), Vector::Zero(4)};
  GateActivations g;
  const LstmState s = cell_forward(net.cell, Vector::Ones(3), prev, &g);
  EXPECT_EQ(s.s, Vector::Zero(4));
  EXPECT_EQ(s.h, Vector::Zero(4));
  EXPECT_EQ(g.forget, Vector::Constant(4, 0.5));
}

TEST(Cell, SaturatedForgetGateKeepsMemory) {
  auto net = NetworkParams::zeros({1, 1, 1, 1});
  net.cell.forget.bias(0) = 50.0;
  const LstmState prev{Vector::Ones(1), Vector::Zero(1)};
  const LstmState s = cell_forward(net.cell, Vector::Zero(1), prev);
  EXPECT_NEAR(s.s(0), 1.0, 1e-15);
}

TEST(Cell, GateRangesOnRandomInputs) {
  Rng rng(8);
  const auto net = random_net({4, 6, 3, 2}, 8);
  for (int t = 0; t < 200; ++t) {
    const Vector x = random_matrix(4, 1, rng, 5.0);
    const LstmState prev{random_matrix(6, 1, rng, 3.0), random_matrix(6, 1, rng).array().tanh()};
    GateActivations g;
    const LstmState s = cell_forward(net.cell, x, prev, &g);
    for (const Vector* v : {&g.forget, &g.input, &g.output}) {
      EXPECT_GT(v->minCoeff(), 0.0);
      EXPECT_LT(v->maxCoeff(), 1.0);
    }
    EXPECT_LT(s.h.cwiseAbs().maxCoeff(), 1.0);
  }
}

TEST(Forward, ZeroWeightsGiveHeadBias) {
  auto net = NetworkParams::zeros({3, 4, 5, 2});
  net.head.bias(0) = 0.625;
  Rng rng(1);
  EXPECT_EQ(predict(net, {random_matrix(7, 3, rng), 0.0}), 0.625);
}

TEST(Forward, SingleStepIsCellPlusDenseStack) {
  const auto net = random_net({3, 4, 5, 2}, 21);
  Rng rng(2);
  const Matrix x = random_matrix(1, 3, rng);
  const LstmState s = cell_forward(net.cell, x.row(0).transpose(), {Vector::Zero(4), Vector::Zero(4)});
  const Vector d1 = (net.dense1.weights * s.h + net.dense1.bias).array().tanh();
  const Vector d2 = (net.dense2.weights * d1 + net.dense2.bias).array().tanh();
  const double expected = (net.head.weights * d2 + net.head.bias)(0);
  EXPECT_NEAR(predict(net, {x, 0.0}), expected, 1e-15);
}

TEST(Forward, MatchesCommittedFixture) {
  std::ifstream in(std::string(MERGEXAI_FIXTURE_DIR) + "/forward_seed42.json");
  ASSERT_TRUE(in.good());
  const auto j = nlohmann::json::parse(in);
  const ModelArtifact fixture = deserialize_model(j.at("model").dump());
  const NetworkParams fresh = initialize(fixture.net.dims(), 42);
  bool same = true;
  for_each_tensor([&](auto a, auto b) { same = same && a == b; }, fresh, fixture.net);
  EXPECT_TRUE(same) << "seed-42 initialization changed";

  const auto rows = j.at("window").get<std::vector<std::vector<double>>>();
  Matrix window(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < 3; ++c) window(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  const double expected = j.at("prediction").get<double>();
  EXPECT_NEAR(predict(fresh, {window, 0.0}), expected, 1e-12);
  EXPECT_NEAR(oracle::straight_line_forward(fresh, rows), expected, 1e-12);
}

TEST(Forward, PredictEqualsForwardSequence) {
  const auto net = random_net({4, 5, 4, 3}, 4);
  Rng rng(44);
  for (int k = 0; k < 100; ++k) {
    const TrainingWindow w{random_matrix(1 + k % 9, 4, rng), 0.0};
    EXPECT_EQ(predict(net, w), forward_sequence(net, w).prediction);
  }
}

TEST(Forward, NonFiniteInputIsNumericFault) {
  const auto net = random_net({2, 3, 3, 2}, 5);
  Matrix x = Matrix::Zero(4, 2);
  x(2, 1) = std::numeric_limits<double>::quiet_NaN();
  try {
    predict(net, {x, 0.0});
    FAIL() << "expected NumericFault";
  } catch (const NumericFault& e) {
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos) << e.what();
  }
}

TEST(Gradients, PerfectBatchHasZeroLossAndGradient) {
  const auto net = random_net({3, 4, 3, 2}, 6);
  Rng rng(60);
  auto batch = random_batch(5, 4, 3, rng);
  for (auto& w : batch) w.target = predict(net, w);
  const auto lg = loss_and_gradients(net, batch);
  EXPECT_EQ(lg.mse, 0.0);
  double max_abs = 0.0;
  for_each_tensor([&](auto g) { max_abs = std::max(max_abs, g.cwiseAbs().maxCoeff()); }, lg.grads);
  EXPECT_EQ(max_abs, 0.0);
}

TEST(Gradients, HeadBiasChainRule) {
  auto net = NetworkParams::zeros({2, 3, 3, 2});
  net.head.bias(0) = 1.5;
  Rng rng(7);
  const std::vector<TrainingWindow> batch = {{random_matrix(3, 2, rng), -0.25}};
  const auto lg = loss_and_gradients(net, batch);
  EXPECT_DOUBLE_EQ(lg.mse, 1.75 * 1.75);
  EXPECT_DOUBLE_EQ(lg.grads.head.bias(0), 2.0 * 1.75);
}

TEST(Gradients, MatchCentralDifferences) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto net = random_net({3, 2, 3, 2}, seed);
    Rng rng(seed * 17);
    const auto batch = random_batch(3, 5, 3, rng);
    const auto lg = loss_and_gradients(net, batch);
    EXPECT_NEAR(lg.mse, oracle::batch_mse(net, batch), 1e-12);
    EXPECT_LT(oracle::max_gradient_error(net, batch, lg.grads), 1e-4) << "seed " << seed;
  }
}

TEST(Gradients, IndependentOfThreadCount) {
  const auto net = random_net({3, 6, 4, 3}, 9);
  Rng rng(90);
  const auto batch = random_batch(17, 6, 3, rng);
  const auto one = loss_and_gradients(net, batch, 1);
  const auto four = loss_and_gradients(net, batch, 4);
  EXPECT_EQ(one.mse, four.mse);
  bool same = true;
  for_each_tensor([&](auto a, auto b) { same = same && a == b; }, one.grads, four.grads);
  EXPECT_TRUE(same);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  auto net = random_net({2, 3, 3, 2}, 10);
  const auto before = net;
  auto state = AdamState::fresh(net);
  adam_step(state, net, NetworkParams::zeros(net.dims()));
  bool same = true;
  for_each_tensor([&](auto a, auto b) { same = same && a == b; }, net, before);
  EXPECT_TRUE(same);
  EXPECT_EQ(state.step_count, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto net = NetworkParams::zeros({1, 1, 1, 1});
  auto grads = NetworkParams::zeros(net.dims());
  grads.head.bias(0) = 3.0;
  grads.dense1.bias(0) = -0.02;
  auto state = AdamState::fresh(net, 0.005);
  adam_step(state, net, grads);
  EXPECT_NEAR(net.head.bias(0), -0.005, 1e-10);
  EXPECT_NEAR(net.dense1.bias(0), 0.005, 1e-8);
}

TEST(Adam, QuadraticDescent) {
  auto net = NetworkParams::zeros({1, 1, 1, 1});
  net.head.bias(0) = 1.0;
  auto state = AdamState::fresh(net, 0.005);
  double prev = 1.0;
  for (int step = 0; step < 100; ++step) {
    auto grads = NetworkParams::zeros(net.dims());
    grads.head.bias(0) = 2.0 * net.head.bias(0);
    adam_step(state, net, grads);
    const double now = std::abs(net.head.bias(0));
    if (step >= 5) EXPECT_LT(now, prev);
    prev = now;
  }
  EXPECT_LT(std::abs(net.head.bias(0)), 0.7);
}

std::vector<AlignedDemonstration> synthetic(std::size_t n, std::uint64_t seed, std::size_t grid) {
  auto c = synth::default_config(seed);
  c.n_demos = n;
  std::vector<AlignedDemonstration> out;
  for (const auto& d : synth::generate_synthetic_dataset(c)) out.push_back(align_to_grid(d, grid));
  return out;
}

TEST(Windows, LeftPaddingAndCounts) {
  const auto demos = synthetic(3, 1, 21);
  const std::vector<Feature> inputs = {Feature::kDxLead, Feature::kVyEgo};
  const Matrix w = raw_window(demos[0], 2, 5, inputs);
  ASSERT_EQ(w.rows(), 5);
  for (int r = 0; r < 3; ++r) EXPECT_EQ(w(r, 0), demos[0].grid[0][Feature::kDxLead]);
  EXPECT_EQ(w(3, 1), demos[0].grid[1][Feature::kVyEgo]);
  EXPECT_EQ(w(4, 1), demos[0].grid[2][Feature::kVyEgo]);

  TrainConfig c;
  c.inputs = inputs;
  c.dims.input = 2;
  c.window = 5;
  const auto norm = compute_norm_stats(demos, inputs, c.output);
  EXPECT_EQ(make_windows(demos, norm, c).size(), 3u * 21u);
  c.pad_start = false;
  EXPECT_EQ(make_windows(demos, norm, c).size(), 3u * 17u);
}

TEST(Windows, RawPredictionIsNormalizedPath) {
  const auto demos = synthetic(4, 2, 21);
  TrainConfig c;
  c.epochs = 1;
  c.dims = {6, 4, 3, 2};
  const auto net = train(demos, c).net;
  for (std::size_t a = 0; a < 21; a += 4) {
    const Matrix raw = raw_window(demos[1], a, c.window, c.inputs);
    const double direct = predict_raw(net, raw);
    EXPECT_EQ(direct, denormalize_target(net.norm, predict(net, {normalize_inputs(net.norm, raw), 0.0})));
    EXPECT_EQ(direct, predict_raw(net, raw));
  }
}

TEST(Train, ZeroEpochsReturnsInitialization) {
  const auto demos = synthetic(3, 3, 21);
  TrainConfig c;
  c.epochs = 0;
  c.dims = {6, 4, 3, 2};
  c.seed = 77;
  const auto r = train(demos, c);
  EXPECT_TRUE(r.loss_history.empty());
  const auto init = initialize(c.dims, substream_seed(77, "init"));
  bool same = true;
  for_each_tensor([&](auto a, auto b) { same = same && a == b; }, r.net, init);
  EXPECT_TRUE(same);
}

TEST(Train, SameSeedIsBitIdentical) {
  const auto demos = synthetic(6, 4, 21);
  TrainConfig c;
  c.epochs = 3;
  c.dims = {6, 8, 6, 4};
  c.seed = 5;
  const auto a = train(demos, c);
  c.threads = 3;
  const auto b = train(demos, c);
  EXPECT_EQ(serialize_model(a.net, c), serialize_model(b.net, c));
  EXPECT_EQ(a.loss_history, b.loss_history);
}

TEST(Train, RejectsDemosWithoutWindows) {
  const auto demos = synthetic(2, 5, 5);
  TrainConfig c;
  c.pad_start = false;
  c.window = 10;
  EXPECT_THROW(train(demos, c), DataError);
}

TEST(Train, LearnsNoiselessSyntheticTask) {
  const auto demos = synthetic(40, 6, 21);
  TrainConfig c;
  c.seed = 6;
  const auto r = train(demos, c);
  ASSERT_EQ(r.loss_history.size(), 200u);
  EXPECT_LT(r.loss_history.back(), r.loss_history.front());
  EXPECT_LT(r.loss_history.back(), 1e-2);
}

TEST(Serialize, RoundTripIsBitExact) {
  auto net = random_net({6, 5, 4, 3}, 12);
  net.norm.input_mean = Vector::LinSpaced(6, -1.0 / 3.0, 7.1);
  net.norm.input_std = Vector::Constant(6, 0.1);
  net.norm.target_mean = 1.0 / 7.0;
  net.norm.target_std = 3.3;
  TrainConfig c;
  c.dims = {6, 5, 4, 3};
  c.seed = 123456789012345ULL;
  const std::string text = serialize_model(net, c);
  const auto back = deserialize_model(text);
  EXPECT_EQ(serialize_model(back.net, back.config), text);
  bool same = true;
  for_each_tensor([&](auto a, auto b) { same = same && a == b; }, net, back.net);
  EXPECT_TRUE(same);
  EXPECT_EQ(back.net.norm.input_mean, net.norm.input_mean);
  EXPECT_EQ(back.net.norm.target_std, net.norm.target_std);
  EXPECT_EQ(back.config.seed, c.seed);
  EXPECT_EQ(back.config.inputs, c.inputs);
  EXPECT_THROW(deserialize_model("{\"format\": \"other\"}"), DataError);
}

}  // namespace
}  // namespace mergexai::lstm
