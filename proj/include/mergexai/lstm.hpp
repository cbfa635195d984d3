#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mergexai/features.hpp"
#include "mergexai/ingest.hpp"

namespace mergexai::lstm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// One gate's affine form: W_input * x_t + W_recurrent * h_{t-1} + bias.
struct GateParams {
  Matrix input_weights;      // hidden x input
  Matrix recurrent_weights;  // hidden x hidden
  Vector bias;               // hidden
};

struct LstmCellParams {
  GateParams forget;
  GateParams candidate;
  GateParams input;
  GateParams output;

  std::size_t input_dim() const { return static_cast<std::size_t>(forget.input_weights.cols()); }
  std::size_t hidden_dim() const { return static_cast<std::size_t>(forget.input_weights.rows()); }
};

struct LstmState {
  Vector s;  // cell state
  Vector h;  // hidden output
};

struct GateActivations {
  Vector forget;
  Vector input;
  Vector output;
  Vector candidate;
};

// One LSTM step. Gate activations are written to `gates` when non-null.
LstmState cell_forward(const LstmCellParams& params, const Vector& input,
                       const LstmState& prev, GateActivations* gates = nullptr);

struct DenseLayer {
  Matrix weights;  // out x in
  Vector bias;     // out
};

// Z-score statistics of the model inputs and target, from the training split.
struct NormStats {
  Vector input_mean;
  Vector input_std;
  double target_mean = 0.0;
  double target_std = 1.0;
};

struct NetworkDims {
  std::size_t input = 6;
  std::size_t hidden = 32;
  std::size_t dense1 = 32;
  std::size_t dense2 = 16;

  bool operator==(const NetworkDims&) const = default;
};

// LSTM layer, two tanh dense layers on the final hidden state, linear head.
struct NetworkParams {
  LstmCellParams cell;
  DenseLayer dense1;
  DenseLayer dense2;
  DenseLayer head;
  NormStats norm;

  NetworkDims dims() const;
  std::size_t parameter_count() const;
  static NetworkParams zeros(const NetworkDims& dims);
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases except the
// forget gate bias which starts at +1. Norm stats are identity.
NetworkParams initialize(const NetworkDims& dims, std::uint64_t seed);

// Visits every trainable tensor of one or more same-shaped networks in a
// fixed order, passing flat Eigen maps.
template <typename Fn, typename... Nets>
void for_each_tensor(Fn&& fn, Nets&... nets) {
  auto flat = [](auto& m) {
    using Scalar = std::remove_reference_t<decltype(*m.data())>;
    return Eigen::Map<std::conditional_t<std::is_const_v<Scalar>, const Vector, Vector>>(
        m.data(), m.size());
  };
  auto gate = [&](auto member) {
    fn(flat((nets.cell.*member).input_weights)...);
    fn(flat((nets.cell.*member).recurrent_weights)...);
    fn(flat((nets.cell.*member).bias)...);
  };
  gate(&LstmCellParams::forget);
  gate(&LstmCellParams::candidate);
  gate(&LstmCellParams::input);
  gate(&LstmCellParams::output);
  auto dense = [&](auto member) {
    fn(flat((nets.*member).weights)...);
    fn(flat((nets.*member).bias)...);
  };
  dense(&NetworkParams::dense1);
  dense(&NetworkParams::dense2);
  dense(&NetworkParams::head);
}

// A window of W normalized input rows and the normalized target at its last
// row.
struct TrainingWindow {
  Matrix inputs;  // W x input_dim
  double target = 0.0;
};

struct StepCache {
  Vector input;
  LstmState prev;
  GateActivations gates;
  Vector tanh_s;
  LstmState state;
};

struct ForwardCache {
  std::vector<StepCache> steps;
  Vector dense1_out;
  Vector dense2_out;
  double prediction = 0.0;
};

// Unrolls the LSTM from a zero state over the window rows and applies the
// dense stack to the final hidden state. Throws NumericFault naming the step
// on a non-finite activation.
ForwardCache forward_sequence(const NetworkParams& net, const TrainingWindow& window);

// Same arithmetic as forward_sequence without retaining activations.
double predict(const NetworkParams& net, const TrainingWindow& window);

struct LossAndGradients {
  double mse = 0.0;
  NetworkParams grads;
};

// Mean squared error over the batch and its exact gradient via BPTT.
// Per-window gradients are reduced in window order, so the result does not
// depend on `threads`.
LossAndGradients loss_and_gradients(const NetworkParams& net,
                                    std::span<const TrainingWindow> batch,
                                    std::size_t threads = 1);

struct AdamState {
  NetworkParams m;
  NetworkParams v;
  std::uint64_t step_count = 0;
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState fresh(const NetworkParams& like, double lr = 0.005);
};

void adam_step(AdamState& state, NetworkParams& net, const NetworkParams& grads);

struct TrainConfig {
  std::vector<Feature> inputs = default_input_features();
  Feature output = kDefaultOutputFeature;
  std::size_t window = 10;
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  double lr = 0.005;
  NetworkDims dims;
  // Windows ending before index W-1 are left-padded with the first row, so
  // every grid point gets a prediction.
  bool pad_start = true;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct TrainResult {
  NetworkParams net;
  std::vector<double> loss_history;  // mean training MSE per epoch
};

NormStats compute_norm_stats(std::span<const AlignedDemonstration> demos,
                             std::span<const Feature> inputs, Feature output);

// Raw (unnormalized) window of the selected inputs ending at grid index
// `end`, left-padded by repeating the first row.
Matrix raw_window(const AlignedDemonstration& demo, std::size_t end, std::size_t length,
                  std::span<const Feature> inputs);

Matrix normalize_inputs(const NormStats& norm, const Matrix& raw);
double normalize_target(const NormStats& norm, double raw);
double denormalize_target(const NormStats& norm, double normalized);

// Prediction in target units for a raw input window.
double predict_raw(const NetworkParams& net, const Matrix& raw);

std::vector<TrainingWindow> make_windows(std::span<const AlignedDemonstration> demos,
                                         const NormStats& norm, const TrainConfig& config);

// Throws DataError when no window can be formed.
TrainResult train(std::span<const AlignedDemonstration> demos, const TrainConfig& config);

// Model artifact: dims, every weight as a double, norm stats, config echo and
// seed. Round-trips bit-exactly.
std::string serialize_model(const NetworkParams& net, const TrainConfig& config);

struct ModelArtifact {
  NetworkParams net;
  TrainConfig config;
};

ModelArtifact deserialize_model(const std::string& text);

}  // namespace mergexai::lstm
