#include "mergexai/lstm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "mergexai/error.hpp"
#include "mergexai/parallel.hpp"
#include "mergexai/random.hpp"

namespace mergexai::lstm {

namespace {

Vector sigmoid(const Vector& a) {
  return a.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

Vector tanh_of(const Vector& a) {
  return a.unaryExpr([](double v) { return std::tanh(v); });
}

Vector affine(const GateParams& g, const Vector& x, const Vector& h) {
  return g.input_weights * x + g.recurrent_weights * h + g.bias;
}

GateParams zero_gate(std::size_t in, std::size_t hidden) {
  const auto i = static_cast<Eigen::Index>(in);
  const auto h = static_cast<Eigen::Index>(hidden);
  return {Matrix::Zero(h, i), Matrix::Zero(h, h), Vector::Zero(h)};
}

DenseLayer zero_dense(std::size_t in, std::size_t out) {
  return {Matrix::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)),
          Vector::Zero(static_cast<Eigen::Index>(out))};
}

void fill_uniform(Matrix& m, double limit, Rng& rng) {
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = uniform(rng, -limit, limit);
}

}  // namespace

// ---------------------------------------------------------------------------
// Cell

LstmState cell_forward(const LstmCellParams& params, const Vector& input,
                       const LstmState& prev, GateActivations* gates) {
  require(input.size() == static_cast<Eigen::Index>(params.input_dim()),
          "cell input size mismatch");
  require(prev.s.size() == static_cast<Eigen::Index>(params.hidden_dim()) &&
              prev.h.size() == prev.s.size(),
          "cell state size mismatch");
  Vector f = sigmoid(affine(params.forget, input, prev.h));
  Vector cand = tanh_of(affine(params.candidate, input, prev.h));
  Vector i = sigmoid(affine(params.input, input, prev.h));
  Vector o = sigmoid(affine(params.output, input, prev.h));
  LstmState next;
  next.s = f.cwiseProduct(prev.s) + i.cwiseProduct(cand);
  next.h = o.cwiseProduct(tanh_of(next.s));
  if (gates) *gates = {std::move(f), std::move(i), std::move(o), std::move(cand)};
  return next;
}

// ---------------------------------------------------------------------------
// Network

NetworkDims NetworkParams::dims() const {
  return {cell.input_dim(), cell.hidden_dim(), static_cast<std::size_t>(dense1.bias.size()),
          static_cast<std::size_t>(dense2.bias.size())};
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](const auto& t) { n += static_cast<std::size_t>(t.size()); }, *this);
  return n;
}

NetworkParams NetworkParams::zeros(const NetworkDims& d) {
  NetworkParams net;
  net.cell = {zero_gate(d.input, d.hidden), zero_gate(d.input, d.hidden),
              zero_gate(d.input, d.hidden), zero_gate(d.input, d.hidden)};
  net.dense1 = zero_dense(d.hidden, d.dense1);
  net.dense2 = zero_dense(d.dense1, d.dense2);
  net.head = zero_dense(d.dense2, 1);
  const auto in = static_cast<Eigen::Index>(d.input);
  net.norm = {Vector::Zero(in), Vector::Ones(in), 0.0, 1.0};
  return net;
}

NetworkParams initialize(const NetworkDims& dims, std::uint64_t seed) {
  NetworkParams net = NetworkParams::zeros(dims);
  Rng rng(seed);
  // Every gate sees [x_t; h_{t-1}], so both blocks share that fan-in.
  const double gate_limit = 1.0 / std::sqrt(static_cast<double>(dims.input + dims.hidden));
  for (GateParams* g : {&net.cell.forget, &net.cell.candidate, &net.cell.input, &net.cell.output}) {
    fill_uniform(g->input_weights, gate_limit, rng);
    fill_uniform(g->recurrent_weights, gate_limit, rng);
  }
  net.cell.forget.bias.setOnes();
  for (DenseLayer* d : {&net.dense1, &net.dense2, &net.head})
    fill_uniform(d->weights, 1.0 / std::sqrt(static_cast<double>(d->weights.cols())), rng);
  return net;
}

namespace {

double run_forward(const NetworkParams& net, const Matrix& inputs, ForwardCache* cache) {
  require(inputs.cols() == static_cast<Eigen::Index>(net.cell.input_dim()),
          "window width does not match the model input size");
  require(inputs.rows() >= 1, "empty window");
  const auto hidden = static_cast<Eigen::Index>(net.cell.hidden_dim());
  LstmState state{Vector::Zero(hidden), Vector::Zero(hidden)};
  if (cache) cache->steps.resize(static_cast<std::size_t>(inputs.rows()));
  for (Eigen::Index t = 0; t < inputs.rows(); ++t) {
    Vector x = inputs.row(t).transpose();
    if (cache) {
      StepCache& sc = cache->steps[static_cast<std::size_t>(t)];
      sc.prev = state;
      state = cell_forward(net.cell, x, state, &sc.gates);
      sc.input = std::move(x);
      sc.tanh_s = tanh_of(state.s);
      sc.state = state;
    } else {
      state = cell_forward(net.cell, x, state);
    }
    if (!state.h.allFinite() || !state.s.allFinite())
      throw NumericFault("non-finite LSTM activation at step " + std::to_string(t));
  }
  Vector a1 = tanh_of(net.dense1.weights * state.h + net.dense1.bias);
  Vector a2 = tanh_of(net.dense2.weights * a1 + net.dense2.bias);
  const double y = net.head.weights.row(0).dot(a2) + net.head.bias(0);
  if (!std::isfinite(y)) throw NumericFault("non-finite prediction");
  if (cache) {
    cache->dense1_out = std::move(a1);
    cache->dense2_out = std::move(a2);
    cache->prediction = y;
  }
  return y;
}

void accumulate(NetworkParams& acc, const NetworkParams& add) {
  for_each_tensor([](auto a, auto b) { a += b; }, acc, add);
}

// Gradient of scale * prediction with respect to every parameter, written
// into `g` (which must be zeroed and shaped like `net`).
void backward(const NetworkParams& net, const ForwardCache& cache, double dy, NetworkParams& g) {
  const Vector& a2 = cache.dense2_out;
  const Vector& a1 = cache.dense1_out;
  const Vector& h_last = cache.steps.back().state.h;

  g.head.weights.row(0) += dy * a2.transpose();
  g.head.bias(0) += dy;
  const Vector dz2 = (net.head.weights.row(0).transpose() * dy)
                         .cwiseProduct((1.0 - a2.array().square()).matrix());
  g.dense2.weights += dz2 * a1.transpose();
  g.dense2.bias += dz2;
  const Vector dz1 = (net.dense2.weights.transpose() * dz2)
                         .cwiseProduct((1.0 - a1.array().square()).matrix());
  g.dense1.weights += dz1 * h_last.transpose();
  g.dense1.bias += dz1;

  Vector dh = net.dense1.weights.transpose() * dz1;
  Vector ds_next = Vector::Zero(dh.size());
  for (std::size_t k = cache.steps.size(); k-- > 0;) {
    const StepCache& sc = cache.steps[k];
    const GateActivations& a = sc.gates;
    const Vector d_out = dh.cwiseProduct(sc.tanh_s);
    const Vector ds =
        ds_next + dh.cwiseProduct(a.output)
                      .cwiseProduct((1.0 - sc.tanh_s.array().square()).matrix());
    const Vector d_forget = ds.cwiseProduct(sc.prev.s);
    const Vector d_input = ds.cwiseProduct(a.candidate);
    const Vector d_cand = ds.cwiseProduct(a.input);
    ds_next = ds.cwiseProduct(a.forget);

    auto sig_grad = [](const Vector& d, const Vector& act) -> Vector {
      return d.array() * act.array() * (1.0 - act.array());
    };
    const Vector da_f = sig_grad(d_forget, a.forget);
    const Vector da_i = sig_grad(d_input, a.input);
    const Vector da_o = sig_grad(d_out, a.output);
    const Vector da_c = d_cand.array() * (1.0 - a.candidate.array().square());

    dh.setZero();
    auto gate_grad = [&](GateParams& gg, const GateParams& gp, const Vector& da) {
      gg.input_weights += da * sc.input.transpose();
      gg.recurrent_weights += da * sc.prev.h.transpose();
      gg.bias += da;
      dh += gp.recurrent_weights.transpose() * da;
    };
    gate_grad(g.cell.forget, net.cell.forget, da_f);
    gate_grad(g.cell.candidate, net.cell.candidate, da_c);
    gate_grad(g.cell.input, net.cell.input, da_i);
    gate_grad(g.cell.output, net.cell.output, da_o);
  }
}

}  // namespace

ForwardCache forward_sequence(const NetworkParams& net, const TrainingWindow& window) {
  ForwardCache cache;
  run_forward(net, window.inputs, &cache);
  return cache;
}

double predict(const NetworkParams& net, const TrainingWindow& window) {
  return run_forward(net, window.inputs, nullptr);
}

LossAndGradients loss_and_gradients(const NetworkParams& net,
                                    std::span<const TrainingWindow> batch,
                                    std::size_t threads) {
  require(!batch.empty(), "empty batch");
  const NetworkDims dims = net.dims();
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<NetworkParams> per_window(batch.size());
  std::vector<double> sq_err(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t k) {
    const ForwardCache cache = forward_sequence(net, batch[k]);
    const double err = cache.prediction - batch[k].target;
    sq_err[k] = err * err;
    per_window[k] = NetworkParams::zeros(dims);
    backward(net, cache, 2.0 * err * inv_n, per_window[k]);
  });
  LossAndGradients out;
  out.grads = NetworkParams::zeros(dims);
  out.grads.norm = net.norm;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    out.mse += sq_err[k];
    accumulate(out.grads, per_window[k]);
  }
  out.mse *= inv_n;
  return out;
}

// ---------------------------------------------------------------------------
// Adam

AdamState AdamState::fresh(const NetworkParams& like, double lr) {
  AdamState s;
  s.m = NetworkParams::zeros(like.dims());
  s.v = NetworkParams::zeros(like.dims());
  s.lr = lr;
  return s;
}

void adam_step(AdamState& state, NetworkParams& net, const NetworkParams& grads) {
  require(net.dims() == grads.dims() && net.dims() == state.m.dims(),
          "adam shapes do not match");
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const double b1 = state.beta1, b2 = state.beta2, lr = state.lr, eps = state.eps;
  for_each_tensor(
      [&](auto p, auto g, auto m, auto v) {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
        p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
      },
      net, grads, state.m, state.v);
}

// ---------------------------------------------------------------------------
// Data plumbing

NormStats compute_norm_stats(std::span<const AlignedDemonstration> demos,
                             std::span<const Feature> inputs, Feature output) {
  require(!demos.empty(), "no demonstrations for normalization");
  const auto m = static_cast<Eigen::Index>(inputs.size());
  Vector sum = Vector::Zero(m), sum_sq = Vector::Zero(m);
  double t_sum = 0.0, t_sq = 0.0;
  double n = 0.0;
  for (const auto& d : demos)
    for (const auto& fv : d.grid) {
      for (Eigen::Index i = 0; i < m; ++i) {
        const double v = fv[inputs[static_cast<std::size_t>(i)]];
        sum(i) += v;
        sum_sq(i) += v * v;
      }
      t_sum += fv[output];
      t_sq += fv[output] * fv[output];
      n += 1.0;
    }
  auto std_of = [&](double s, double sq) {
    const double mean = s / n;
    const double var = std::max(0.0, sq / n - mean * mean);
    const double sd = std::sqrt(var);
    return sd > 1e-12 ? sd : 1.0;
  };
  NormStats ns;
  ns.input_mean = sum / n;
  ns.input_std.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) ns.input_std(i) = std_of(sum(i), sum_sq(i));
  ns.target_mean = t_sum / n;
  ns.target_std = std_of(t_sum, t_sq);
  return ns;
}

Matrix raw_window(const AlignedDemonstration& demo, std::size_t end, std::size_t length,
                  std::span<const Feature> inputs) {
  require(end < demo.grid.size(), "window end outside the grid");
  require(length >= 1, "window length must be positive");
  Matrix w(static_cast<Eigen::Index>(length), static_cast<Eigen::Index>(inputs.size()));
  for (std::size_t r = 0; r < length; ++r) {
    const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(end) -
                               static_cast<std::ptrdiff_t>(length - 1 - r);
    const auto& fv = demo.grid[static_cast<std::size_t>(std::max<std::ptrdiff_t>(idx, 0))];
    for (std::size_t c = 0; c < inputs.size(); ++c)
      w(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = fv[inputs[c]];
  }
  return w;
}

Matrix normalize_inputs(const NormStats& norm, const Matrix& raw) {
  require(raw.cols() == norm.input_mean.size(), "window width does not match norm stats");
  return (raw.rowwise() - norm.input_mean.transpose()).array().rowwise() /
         norm.input_std.transpose().array();
}

double normalize_target(const NormStats& norm, double raw) {
  return (raw - norm.target_mean) / norm.target_std;
}

double denormalize_target(const NormStats& norm, double normalized) {
  return normalized * norm.target_std + norm.target_mean;
}

double predict_raw(const NetworkParams& net, const Matrix& raw) {
  return denormalize_target(net.norm, run_forward(net, normalize_inputs(net.norm, raw), nullptr));
}

std::vector<TrainingWindow> make_windows(std::span<const AlignedDemonstration> demos,
                                         const NormStats& norm, const TrainConfig& config) {
  std::vector<TrainingWindow> out;
  for (const auto& d : demos) {
    const std::size_t first = config.pad_start ? 0 : config.window - 1;
    for (std::size_t end = first; end < d.grid.size(); ++end) {
      out.push_back({normalize_inputs(norm, raw_window(d, end, config.window, config.inputs)),
                     normalize_target(norm, d.grid[end][config.output])});
    }
  }
  return out;
}

TrainResult train(std::span<const AlignedDemonstration> demos, const TrainConfig& config) {
  if (demos.empty()) throw DataError("no training demonstrations");
  require(config.window >= 1 && config.batch_size >= 1, "window and batch size must be positive");
  require(config.dims.input == config.inputs.size(), "dims.input must equal the input count");

  NetworkParams net = initialize(config.dims, substream_seed(config.seed, "init"));
  net.norm = compute_norm_stats(demos, config.inputs, config.output);
  const auto windows = make_windows(demos, net.norm, config);
  if (windows.empty())
    throw DataError("no training windows: every demonstration is shorter than the window");

  TrainResult result;
  AdamState adam = AdamState::fresh(net, config.lr);
  Rng shuffle_rng(substream_seed(config.seed, "shuffle"));
  std::vector<std::size_t> order(windows.size());
  std::vector<TrainingWindow> batch;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(std::span<std::size_t>(order), shuffle_rng);
    double epoch_sse = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t k = start; k < stop; ++k) batch.push_back(windows[order[k]]);
      auto lg = loss_and_gradients(net, batch, config.threads);
      epoch_sse += lg.mse * static_cast<double>(batch.size());
      adam_step(adam, net, lg.grads);
    }
    result.loss_history.push_back(epoch_sse / static_cast<double>(windows.size()));
  }
  result.net = std::move(net);
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

using json = nlohmann::ordered_json;

json matrix_json(const Matrix& m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  j["data"] = std::move(data);
  return j;
}

Matrix matrix_from(const json& j, Eigen::Index rows, Eigen::Index cols) {
  if (j.at("rows").get<Eigen::Index>() != rows || j.at("cols").get<Eigen::Index>() != cols)
    throw DataError("model tensor shape does not match its declared dims");
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw DataError("model tensor has the wrong number of entries");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  return m;
}

json vector_json(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Vector vector_from(const json& j, Eigen::Index n) {
  const auto data = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != n)
    throw DataError("model vector has the wrong length");
  return Eigen::Map<const Vector>(data.data(), n);
}

std::vector<std::string> names_of(std::span<const Feature> fs) {
  std::vector<std::string> out;
  for (auto f : fs) out.emplace_back(feature_name(f));
  return out;
}

Feature feature_or_throw(const std::string& name) {
  auto f = feature_from_name(name);
  if (!f) throw DataError("unknown feature '" + name + "' in model file");
  return *f;
}

}  // namespace

std::string serialize_model(const NetworkParams& net, const TrainConfig& config) {
  json j;
  j["format"] = "mergexai-lstm";
  j["version"] = 1;
  const NetworkDims d = net.dims();
  j["dims"] = {{"input", d.input}, {"hidden", d.hidden}, {"dense1", d.dense1}, {"dense2", d.dense2}};
  j["seed"] = config.seed;
  j["config"] = {{"inputs", names_of(config.inputs)},
                 {"output", std::string(feature_name(config.output))},
                 {"window", config.window},
                 {"epochs", config.epochs},
                 {"batch_size", config.batch_size},
                 {"lr", config.lr},
                 {"pad_start", config.pad_start}};
  j["norm"] = {{"input_mean", vector_json(net.norm.input_mean)},
               {"input_std", vector_json(net.norm.input_std)},
               {"target_mean", net.norm.target_mean},
               {"target_std", net.norm.target_std}};
  auto gate = [](const GateParams& g) {
    return json{{"input_weights", matrix_json(g.input_weights)},
                {"recurrent_weights", matrix_json(g.recurrent_weights)},
                {"bias", vector_json(g.bias)}};
  };
  auto dense = [](const DenseLayer& l) {
    return json{{"weights", matrix_json(l.weights)}, {"bias", vector_json(l.bias)}};
  };
  j["cell"] = {{"forget", gate(net.cell.forget)},
               {"candidate", gate(net.cell.candidate)},
               {"input", gate(net.cell.input)},
               {"output", gate(net.cell.output)}};
  j["dense1"] = dense(net.dense1);
  j["dense2"] = dense(net.dense2);
  j["head"] = dense(net.head);
  return j.dump(1) + "\n";
}

ModelArtifact deserialize_model(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format") != "mergexai-lstm" || j.at("version") != 1)
      throw DataError("unsupported model file format");
    NetworkDims d;
    d.input = j.at("dims").at("input");
    d.hidden = j.at("dims").at("hidden");
    d.dense1 = j.at("dims").at("dense1");
    d.dense2 = j.at("dims").at("dense2");
    const auto in = static_cast<Eigen::Index>(d.input), h = static_cast<Eigen::Index>(d.hidden);
    const auto d1 = static_cast<Eigen::Index>(d.dense1), d2 = static_cast<Eigen::Index>(d.dense2);

    ModelArtifact art;
    auto gate = [&](const json& g) {
      return GateParams{matrix_from(g.at("input_weights"), h, in),
                        matrix_from(g.at("recurrent_weights"), h, h),
                        vector_from(g.at("bias"), h)};
    };
    const json& c = j.at("cell");
    art.net.cell = {gate(c.at("forget")), gate(c.at("candidate")), gate(c.at("input")),
                    gate(c.at("output"))};
    auto dense = [&](const json& l, Eigen::Index out, Eigen::Index inp) {
      return DenseLayer{matrix_from(l.at("weights"), out, inp), vector_from(l.at("bias"), out)};
    };
    art.net.dense1 = dense(j.at("dense1"), d1, h);
    art.net.dense2 = dense(j.at("dense2"), d2, d1);
    art.net.head = dense(j.at("head"), 1, d2);
    const json& n = j.at("norm");
    art.net.norm = {vector_from(n.at("input_mean"), in), vector_from(n.at("input_std"), in),
                    n.at("target_mean").get<double>(), n.at("target_std").get<double>()};

    const json& cfg = j.at("config");
    art.config.inputs.clear();
    for (const auto& name : cfg.at("inputs")) art.config.inputs.push_back(feature_or_throw(name));
    art.config.output = feature_or_throw(cfg.at("output"));
    art.config.window = cfg.at("window");
    art.config.epochs = cfg.at("epochs");
    art.config.batch_size = cfg.at("batch_size");
    art.config.lr = cfg.at("lr");
    art.config.pad_start = cfg.at("pad_start");
    art.config.dims = d;
    art.config.seed = j.at("seed");
    if (art.config.inputs.size() != d.input)
      throw DataError("model input list does not match its dims");
    return art;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed model file: ") + e.what());
  }
}

}  // namespace mergexai::lstm
