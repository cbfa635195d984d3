#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mergexai/error.hpp"
#include "mergexai/random.hpp"
#include "mergexai/shap.hpp"
#include "oracles.hpp"

namespace mergexai::shap {
namespace {

std::vector<double> random_table(std::size_t m, Rng& rng) {
  std::vector<double> t(std::size_t{1} << m);
  for (auto& v : t) v = uniform(rng, -5.0, 5.0);
  return t;
}

ShapleyResult from_table(const std::vector<double>& t, std::size_t m) {
  return shapley_exact([&](const CoalitionMask& s) { return t[s.bits()]; }, m);
}

TEST(ShapleyExact, SymmetricAdditiveGame) {
  const auto r = shapley_exact([](const CoalitionMask& s) { return double(s.count()); }, 3);
  EXPECT_EQ(r.phi0, 0.0);
  for (double p : r.phi) EXPECT_NEAR(p, 1.0, 1e-15);
}

TEST(ShapleyExact, DummyFeatureGetsExactlyZero) {
  Rng rng(2);
  for (std::size_t m = 2; m <= 7; ++m) {
    auto t = random_table(m, rng);
    const std::uint32_t bit = 1u << 1;
    for (std::uint32_t s = 0; s < t.size(); ++s)
      if (s & bit) t[s] = t[s & ~bit];
    EXPECT_EQ(from_table(t, m).phi[1], 0.0);
  }
}

TEST(ShapleyExact, MatchesPermutationOracle) {
  Rng rng(3);
  for (std::size_t m = 1; m <= 6; ++m)
    for (int rep = 0; rep < 5; ++rep) {
      const auto t = random_table(m, rng);
      const auto r = from_table(t, m);
      const auto expected = oracle::permutation_shapley([&](std::uint32_t b) { return t[b]; }, m);
      for (std::size_t i = 0; i < m; ++i) EXPECT_NEAR(r.phi[i], expected[i], 1e-12);
      double sum = r.phi0;
      for (double p : r.phi) sum += p;
      EXPECT_NEAR(sum, t.back(), 1e-12);
    }
}

TEST(ShapleyExact, EvaluatesEachCoalitionOnce) {
  for (std::size_t m = 1; m <= 8; ++m) {
    std::vector<int> seen(std::size_t{1} << m, 0);
    const auto r = shapley_exact([&](const CoalitionMask& s) {
      ++seen[s.bits()];
      return 0.0;
    }, m);
    EXPECT_EQ(r.evaluations, seen.size());
    for (int c : seen) EXPECT_EQ(c, 1);
  }
}

TEST(ShapleyExact, EnumerationGuard) {
  const ValueFunction zero = [](const CoalitionMask&) { return 0.0; };
  EXPECT_THROW(shapley_exact(zero, 0), ConfigError);
  EXPECT_THROW(shapley_exact(zero, kMaxEnumerableFeatures + 1), ConfigError);
}

TEST(ShapleyExact, LinearityAndSymmetry) {
  Rng rng(4);
  const std::size_t m = 5;
  const auto a = random_table(m, rng);
  const auto b = random_table(m, rng);
  std::vector<double> sum(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) sum[k] = a[k] + b[k];
  const auto ra = from_table(a, m), rb = from_table(b, m), rs = from_table(sum, m);
  for (std::size_t i = 0; i < m; ++i) EXPECT_NEAR(rs.phi[i], ra.phi[i] + rb.phi[i], 1e-12);

  // Make features 0 and 2 interchangeable.
  auto swap_bits = [](std::uint32_t s) {
    const std::uint32_t b0 = s & 1u, b2 = (s >> 2) & 1u;
    return (s & ~5u) | (b0 << 2) | b2;
  };
  std::vector<double> sym(a.size());
  for (std::uint32_t s = 0; s < a.size(); ++s) sym[s] = a[s] + a[swap_bits(s)];
  const auto r = from_table(sym, m);
  EXPECT_NEAR(r.phi[0], r.phi[2], 1e-12);
}

TEST(ShapleyExact, Consistency) {
  Rng rng(5);
  const std::size_t m = 4;
  for (int rep = 0; rep < 20; ++rep) {
    const auto v = random_table(m, rng);
    // v2 adds a non-negative extra to every marginal contribution of feature 0.
    auto v2 = v;
    for (std::uint32_t s = 0; s < v.size(); ++s)
      if (s & 1u) v2[s] += uniform(rng, 0.0, 1.0);
    EXPECT_GE(from_table(v2, m).phi[0], from_table(v, m).phi[0]);
  }
}

TEST(ValueMask, LinearClosedForm) {
  Rng rng(6);
  const std::size_t m = 6, w = 4;
  std::vector<double> coef(m);
  for (auto& c : coef) c = uniform(rng, -3.0, 3.0);
  const Predictor linear = [&](const lstm::Matrix& x) {
    double y = 0.5;
    for (std::size_t i = 0; i < m; ++i) y += coef[i] * x(x.rows() - 1, static_cast<Eigen::Index>(i));
    return y;
  };
  for (int rep = 0; rep < 20; ++rep) {
    const lstm::Matrix x = lstm::Matrix::Random(w, m) * 4.0;
    const BackgroundSet bg{{lstm::Matrix::Random(w, m)}};
    const auto a = explain_window_mask(linear, x, bg);
    for (std::size_t i = 0; i < m; ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      EXPECT_NEAR(a.phi[i], coef[i] * (x(w - 1, c) - bg.references[0](w - 1, c)), 1e-9);
    }
    // Masking feature j moves the output by coef_j (background_j - x_j).
    const auto full = CoalitionMask::full(m);
    EXPECT_NEAR(value_mask(linear, x, full.without(2), bg) - value_mask(linear, x, full, bg),
                coef[2] * (bg.references[0](w - 1, 2) - x(w - 1, 2)), 1e-12);
  }
}

lstm::NetworkParams small_net(std::uint64_t seed) {
  auto net = lstm::initialize({3, 5, 4, 3}, seed);
  net.norm.input_mean = lstm::Vector::Zero(3);
  net.norm.input_std = lstm::Vector::Ones(3);
  return net;
}

TEST(ValueMask, EndpointsOfTheLattice) {
  const auto net = small_net(7);
  Rng rng(7);
  const lstm::Matrix x = lstm::Matrix::Random(5, 3);
  BackgroundSet bg;
  for (int k = 0; k < 3; ++k) bg.references.push_back(lstm::Matrix::Random(5, 3));
  EXPECT_EQ(value_mask(net, x, CoalitionMask::full(3), bg), lstm::predict_raw(net, x));
  double mean = 0.0;
  for (const auto& r : bg.references) mean += lstm::predict_raw(net, r);
  EXPECT_NEAR(value_mask(net, x, CoalitionMask::none(3), bg), mean / 3.0, 1e-15);
}

TEST(ValueMask, WindowEqualToBackgroundHasNoAttribution) {
  const auto net = small_net(8);
  const lstm::Matrix x = lstm::Matrix::Random(5, 3);
  const auto a = explain_window_mask(net, x, BackgroundSet{{x}});
  for (double p : a.phi) EXPECT_EQ(p, 0.0);
  EXPECT_EQ(a.fx, a.phi0);
}

std::vector<AlignedDemonstration> linear_demos(std::size_t n, std::size_t grid, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<AlignedDemonstration> out;
  for (std::size_t d = 0; d < n; ++d) {
    AlignedDemonstration a{static_cast<int>(d), {}};
    for (std::size_t j = 0; j < grid; ++j) {
      FeatureVector f;
      f[Feature::kDxLead] = standard_normal(rng);
      f[Feature::kDvLead] = standard_normal(rng);
      f[Feature::kVxEgo] = standard_normal(rng);
      f[Feature::kDxEnd] = 1.0 + 2.0 * f[Feature::kDxLead] - f[Feature::kDvLead] +
                           0.5 * f[Feature::kVxEgo];
      a.grid.push_back(f);
    }
    out.push_back(a);
  }
  return out;
}

lstm::TrainConfig linear_config() {
  lstm::TrainConfig c;
  c.inputs = {Feature::kDxLead, Feature::kDvLead, Feature::kVxEgo};
  c.dims = {3, 8, 8, 4};
  c.window = 1;
  c.epochs = 60;
  c.seed = 31;
  return c;
}

TEST(ValueRetrain, BaseCases) {
  const auto demos = linear_demos(6, 11, 9);
  auto c = linear_config();
  c.epochs = 2;
  const auto full = value_retrain(demos, CoalitionMask::full(3), c);
  ASSERT_TRUE(full.net.has_value());
  EXPECT_EQ(lstm::serialize_model(*full.net, c), lstm::serialize_model(lstm::train(demos, c).net, c));

  const auto empty = value_retrain(demos, CoalitionMask::none(3), c);
  EXPECT_FALSE(empty.net.has_value());
  double mean = 0.0;
  for (const auto& d : demos)
    for (const auto& f : d.grid) mean += f[Feature::kDxEnd] / 66.0;
  EXPECT_NEAR(empty.constant, mean, 1e-12);
  EXPECT_EQ(empty.predict(lstm::Matrix::Random(1, 3)), empty.constant);
}

// Least-squares fit of the target on the present columns plus an intercept.
Eigen::VectorXd restricted_fit(const std::vector<AlignedDemonstration>& demos,
                               const std::vector<Feature>& cols) {
  const std::size_t n = demos.size() * demos[0].grid.size();
  Eigen::MatrixXd x(n, cols.size() + 1);
  Eigen::VectorXd y(n);
  std::size_t r = 0;
  for (const auto& d : demos)
    for (const auto& f : d.grid) {
      x(r, 0) = 1.0;
      for (std::size_t c = 0; c < cols.size(); ++c) x(r, c + 1) = f[cols[c]];
      y(r++) = f[Feature::kDxEnd];
    }
  return (x.transpose() * x).ldlt().solve(x.transpose() * y);
}

TEST(ValueRetrain, SubsetModelsRecoverRestrictedLeastSquares) {
  const auto train = linear_demos(40, 21, 10);
  const auto probe = linear_demos(10, 21, 11);
  const auto c = linear_config();
  const auto models = RetrainedModels::build(train, c, 2);
  for (std::uint32_t bits = 1; bits < 8; ++bits) {
    const CoalitionMask mask(bits, 3);
    std::vector<Feature> cols;
    for (std::size_t i = 0; i < 3; ++i)
      if (mask.has(i)) cols.push_back(c.inputs[i]);
    const auto beta = restricted_fit(train, cols);
    double mse = 0.0;
    std::size_t n = 0;
    for (const auto& d : probe)
      for (std::size_t a = 0; a < d.grid.size(); ++a) {
        double ls = beta(0);
        for (std::size_t k = 0; k < cols.size(); ++k) ls += beta(static_cast<Eigen::Index>(k + 1)) * d.grid[a][cols[k]];
        const double got = models.value(lstm::raw_window(d, a, 1, c.inputs), mask);
        mse += (got - ls) * (got - ls);
        ++n;
      }
    // Dropping the weakest input (coefficient 0.5) shifts the fit by variance
    // 0.25, so 0.1 still tells every coalition apart.
    EXPECT_LT(mse / static_cast<double>(n), 0.1) << "mask " << bits;
  }
  // Retrained attributions satisfy local accuracy too.
  const auto attr = explain_moment(lstm::NetworkParams{}, probe[0], 3, 1, c.inputs,
                                   Variant::kRetrain, nullptr, &models);
  ASSERT_EQ(attr.phi.size(), 3u);
  EXPECT_NEAR(attr.phi0 + attr.phi[0] + attr.phi[1] + attr.phi[2], attr.fx, 1e-12);
}

TEST(Background, MeanAndSampled) {
  const auto demos = linear_demos(5, 7, 12);
  const std::vector<Feature> in = {Feature::kDxLead, Feature::kVxEgo};
  const auto bg = mean_background(demos, 4, 3, in);
  ASSERT_EQ(bg.references.size(), 1u);
  double expected = 0.0;
  for (const auto& d : demos) expected += d.grid[3][Feature::kVxEgo] / 5.0;
  EXPECT_NEAR(bg.references[0](1, 1), expected, 1e-15);
  const auto s1 = sampled_background(demos, 4, 3, in, 8, 99);
  const auto s2 = sampled_background(demos, 4, 3, in, 8, 99);
  ASSERT_EQ(s1.references.size(), 8u);
  for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(s1.references[k], s2.references[k]);
}

TEST(Tensor, ExplainAllIsThreadIndependentAndRoundTrips) {
  const auto demos = linear_demos(6, 9, 13);
  auto c = linear_config();
  c.window = 3;
  c.epochs = 3;
  const auto net = lstm::train(demos, c).net;
  ExplainConfig ec;
  ec.window = 3;
  ec.inputs = c.inputs;
  const auto one = explain_all(net, demos, demos, ec);
  ec.threads = 4;
  const auto four = explain_all(net, demos, demos, ec);
  EXPECT_EQ(one.phi, four.phi);
  EXPECT_EQ(one.fx, four.fx);
  for (std::size_t d = 0; d < one.num_demos(); ++d)
    for (std::size_t a = 0; a < one.grid_size; ++a) {
      double sum = one.phi0[d * one.grid_size + a];
      for (std::size_t i = 0; i < 3; ++i) sum += one.phi_at(d, a, i);
      EXPECT_NEAR(sum, one.fx[d * one.grid_size + a], 1e-9);
    }

  std::stringstream ss;
  write_saliency_csv(ss, one);
  const auto back = read_saliency_csv(ss);
  EXPECT_EQ(back.demo_ids, one.demo_ids);
  EXPECT_EQ(back.phi, one.phi);
  EXPECT_EQ(back.feature_value, one.feature_value);
  EXPECT_EQ(back.fx, one.fx);
  EXPECT_EQ(back.phi0, one.phi0);
  EXPECT_EQ(back.features, one.features);
  EXPECT_EQ(back.variant, one.variant);
}

TEST(Summary, MeanOfAbsoluteValues) {
  SaliencyTensor t;
  t.demo_ids = {1, 2};
  t.grid_size = 1;
  t.features = {Feature::kDxLead, Feature::kDvLead};
  t.phi = {0.75, 0.1, -0.75, 0.3};
  t.feature_value = {1, 2, 3, 4};
  t.fx = {0, 0};
  t.phi0 = {0, 0};
  const auto s = saliency_summary(t, 0);
  EXPECT_DOUBLE_EQ(s.mean_abs_phi[0], 0.75);
  EXPECT_DOUBLE_EQ(s.mean_phi[0], 0.0);
  EXPECT_DOUBLE_EQ(s.mean_abs_phi[1], 0.2);
  ASSERT_EQ(s.pairs[0].size(), 2u);
  EXPECT_EQ(s.pairs[0][1], std::make_pair(3.0, -0.75));

  t.demo_ids = {1};
  t.phi = {-0.4, 0.2};
  t.feature_value = {1, 2};
  t.fx = {0};
  t.phi0 = {0};
  const auto single = saliency_summary(t, 0);
  EXPECT_DOUBLE_EQ(single.mean_abs_phi[0], 0.4);
  EXPECT_DOUBLE_EQ(single.mean_abs_phi[1], 0.2);
}

}  // namespace
}  // namespace mergexai::shap
