#pragma once

// Independent reference computations used by the unit and acceptance tests.
// None of these share code with the library implementations they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "mergexai/lstm.hpp"
#include "mergexai/shap.hpp"

namespace oracle {

// Shapley values as the average marginal contribution over all M! feature
// orderings.
inline std::vector<double> permutation_shapley(
    const std::function<double(std::uint32_t)>& value, std::size_t m) {
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> phi(m, 0.0);
  double count = 0.0;
  do {
    std::uint32_t bits = 0;
    double prev = value(bits);
    for (std::size_t k : order) {
      bits |= 1u << k;
      const double next = value(bits);
      phi[k] += next - prev;
      prev = next;
    }
    count += 1.0;
  } while (std::next_permutation(order.begin(), order.end()));
  for (double& p : phi) p /= count;
  return phi;
}

// Distance from p to the segment ab, and the signed cross product that
// tells the side (positive to the left of a->b).
inline double point_segment_distance(double px, double py, double ax, double ay, double bx,
                                     double by) {
  const double dx = bx - ax, dy = by - ay;
  double t = ((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy);
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (ax + t * dx), py - (ay + t * dy));
}

// Least-squares line by the 2x2 normal equations.
struct Line {
  double slope, intercept;
};
inline Line normal_equations(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double det = n * sxx - sx * sx;
  return {(n * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det};
}

// Scalar-loop LSTM forward pass, written element by element.
inline double straight_line_forward(const mergexai::lstm::NetworkParams& net,
                                    const std::vector<std::vector<double>>& window) {
  const auto& c = net.cell;
  const std::size_t hdim = c.hidden_dim(), idim = c.input_dim();
  std::vector<double> h(hdim, 0.0), s(hdim, 0.0);
  auto sigmoid = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  auto affine = [&](const mergexai::lstm::GateParams& g, const std::vector<double>& x,
                    std::size_t j) {
    double z = g.bias(j);
    for (std::size_t k = 0; k < idim; ++k) z += g.input_weights(j, k) * x[k];
    for (std::size_t k = 0; k < hdim; ++k) z += g.recurrent_weights(j, k) * h[k];
    return z;
  };
  for (const auto& x : window) {
    std::vector<double> nh(hdim), ns(hdim);
    for (std::size_t j = 0; j < hdim; ++j) {
      const double f = sigmoid(affine(c.forget, x, j));
      const double i = sigmoid(affine(c.input, x, j));
      const double o = sigmoid(affine(c.output, x, j));
      const double cand = std::tanh(affine(c.candidate, x, j));
      ns[j] = f * s[j] + i * cand;
      nh[j] = o * std::tanh(ns[j]);
    }
    h = nh;
    s = ns;
  }
  auto dense = [](const mergexai::lstm::DenseLayer& l, const std::vector<double>& in, bool act) {
    std::vector<double> out(static_cast<std::size_t>(l.weights.rows()));
    for (std::size_t r = 0; r < out.size(); ++r) {
      double z = l.bias(r);
      for (std::size_t k = 0; k < in.size(); ++k) z += l.weights(r, k) * in[k];
      out[r] = act ? std::tanh(z) : z;
    }
    return out;
  };
  const auto d1 = dense(net.dense1, h, true);
  const auto d2 = dense(net.dense2, d1, true);
  return dense(net.head, d2, false)[0];
}

inline std::vector<std::vector<double>> rows_of(const Eigen::MatrixXd& m) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(r)].push_back(m(r, c));
  return out;
}

// Mean-squared-error loss of a batch, evaluated with the scalar forward pass.
inline double batch_mse(const mergexai::lstm::NetworkParams& net,
                        const std::vector<mergexai::lstm::TrainingWindow>& batch) {
  double sum = 0.0;
  for (const auto& w : batch) {
    const double e = straight_line_forward(net, rows_of(w.inputs)) - w.target;
    sum += e * e;
  }
  return sum / static_cast<double>(batch.size());
}

// Largest relative error between analytic gradients and central differences
// over every parameter. Relative error uses max(|a|, |n|, floor).
inline double max_gradient_error(mergexai::lstm::NetworkParams net,
                                 const std::vector<mergexai::lstm::TrainingWindow>& batch,
                                 const mergexai::lstm::NetworkParams& analytic, double h = 1e-5,
                                 double floor = 1e-6) {
  // Collect pointers to every parameter and its analytic gradient.
  std::vector<double*> params;
  std::vector<double> grads;
  auto collect = [&](auto p, auto g) {
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      params.push_back(&p.data()[k]);
      grads.push_back(g.data()[k]);
    }
  };
  mergexai::lstm::for_each_tensor(collect, net, analytic);
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double orig = *params[k];
    *params[k] = orig + h;
    const double up = batch_mse(net, batch);
    *params[k] = orig - h;
    const double down = batch_mse(net, batch);
    *params[k] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(numeric), std::abs(grads[k]), floor});
    worst = std::max(worst, std::abs(numeric - grads[k]) / denom);
  }
  return worst;
}

}  // namespace oracle
