#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "stc/datasets.hpp"
#include "stc/sparse_ternary.hpp"

using namespace stc;

namespace {

Vector example() {
  Vector v(4);
  v << 3.0, -1.0, 0.5, -4.0;
  return v;
}

}  // namespace

TEST(Operators, Ternarize) {
  const TernaryCode c = ternarize(example(), 2.0);
  EXPECT_EQ(c.support, (std::vector<Index>{0, 3}));
  EXPECT_EQ(c.signs, (std::vector<std::int8_t>{1, -1}));
  EXPECT_THROW(ternarize(example(), -1.0), ConfigError);
}

TEST(Operators, HardAndSoftThreshold) {
  Vector h(4), s(4);
  h << 3.0, 0.0, 0.0, -4.0;
  s << 1.0, 0.0, 0.0, -2.0;
  EXPECT_EQ(hard_threshold(example(), 2.0), h);
  EXPECT_EQ(soft_threshold(example(), 2.0), s);
}

TEST(Operators, KBest) {
  const TernaryCode c = k_best_ternarize(example(), 1);
  EXPECT_EQ(c.support, (std::vector<Index>{3}));
  EXPECT_EQ(c.signs, (std::vector<std::int8_t>{-1}));
  Vector tie(3);
  tie << 1.0, -1.0, 1.0;
  EXPECT_EQ(k_best_ternarize(tie, 2).support, (std::vector<Index>{0, 1}));
  EXPECT_EQ(k_best_ternarize(example(), 10).nnz(), 4);
}

TEST(Operators, TernarizeIsSignOfHardThreshold) {
  Rng r(1);
  for (int t = 0; t < 50; ++t) {
    const Vector v = r.normal_matrix(20, 1);
    const double lambda = std::abs(r.normal());
    const Vector h = hard_threshold(v, lambda);
    const Vector d = ternarize(v, lambda).dense();
    for (Index j = 0; j < 20; ++j) EXPECT_EQ(d(j), h(j) == 0.0 ? 0.0 : (h(j) > 0 ? 1.0 : -1.0));
  }
}

TEST(OptimalBeta, Examples) {
  EXPECT_NEAR(optimal_beta(2.0, 0.0), 2.0 * std::sqrt(2.0 / std::numbers::pi), 1e-14);
  EXPECT_NEAR(optimal_beta(1.0, 1.0), 1.52514, 1e-4);
  // Independent oracle: E[X | X > 1] by quadrature.
  const double num = integrate_adaptive([](double x) { return x * normal_pdf(x); }, 1.0, 40.0).value;
  const double den = integrate_adaptive([](double x) { return normal_pdf(x); }, 1.0, 40.0).value;
  EXPECT_NEAR(optimal_beta(1.0, 1.0), num / den, 1e-10);
}

TEST(OptimalBeta, IsArgmin) {
  for (double sigma : {0.5, 1.0, 3.0})
    for (double lambda : {0.0, 0.5, 1.0, 2.0}) {
      const double b = optimal_beta(sigma, lambda);
      const double d = stc_distortion_per_dim(sigma, lambda, b);
      EXPECT_GT(stc_distortion_per_dim(sigma, lambda, b + 1e-3), d);
      EXPECT_GT(stc_distortion_per_dim(sigma, lambda, b - 1e-3), d);
    }
}

TEST(Distortion, Examples) {
  EXPECT_NEAR(stc_distortion_per_dim(1.0, 0.0, optimal_beta(1.0, 0.0)), 1.0 - 2.0 / std::numbers::pi, 1e-14);
  EXPECT_NEAR(stc_distortion_per_dim(2.0, 60.0, optimal_beta(2.0, 60.0)), 4.0, 1e-12);
}

TEST(Distortion, MonteCarloOracle) {
  const double beta = optimal_beta(1.0, 1.0);
  const double d = stc_distortion_per_dim(1.0, 1.0, beta);
  Rng r(2);
  const int n = 10000000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    const double q = std::abs(x) > 1.0 ? (x > 0 ? beta : -beta) : 0.0;
    const double e = (x - q) * (x - q);
    s += e;
    s2 += e * e;
  }
  const double mean = s / n;
  const double sd = std::sqrt((s2 / n - mean * mean) / n);
  EXPECT_NEAR(mean, d, 3.0 * sd);
}

TEST(Rate, Examples) {
  EXPECT_EQ(stc_rate_upper_bound(Vector::Zero(5)), 0.0);
  EXPECT_NEAR(stc_rate_upper_bound(Vector::Constant(5, 1.0 / 3.0)), std::log2(3.0), 1e-12);
  EXPECT_NEAR(stc_rate_upper_bound(Vector::Constant(5, 0.25)), 1.5, 1e-12);
  EXPECT_THROW(ternary_entropy(0.6), ConfigError);
}

TEST(Rate, EntropyPeaksAtOneThird) {
  double best = 0.0, arg = 0.0;
  for (int i = 0; i <= 5000; ++i) {
    const double a = 0.5 * i / 5000.0;
    if (ternary_entropy(a) > best) {
      best = ternary_entropy(a);
      arg = a;
    }
  }
  EXPECT_NEAR(arg, 1.0 / 3.0, 1e-4);
  EXPECT_LE(best, std::log2(3.0) + 1e-12);
}

TEST(StcLayer, LinearMatchesAnalyticDistortion) {
  Rng r(3);
  const VectorSet s = generate({SourceKind::iid_gaussian, 128, 1.0}, 5000, r);
  for (double lambda : {0.0, 1.0}) {
    const StcLayer layer = stc_train_linear(s.data, ThresholdPolicy::fixed(lambda));
    double analytic = 0.0;
    for (Index j = 0; j < 128; ++j)
      analytic += stc_distortion_per_dim(std::sqrt(layer.variances(j)), lambda, layer.beta(j));
    analytic /= 128.0;
    const double emp = (s.data - stc_decode(stc_encode(s.data, layer), layer)).squaredNorm() / s.data.size();
    EXPECT_NEAR(emp, analytic, 0.02 * analytic) << lambda;
  }
}

TEST(StcLayer, LambdaZeroIsBinaryQuantizer) {
  Rng r(4);
  const VectorSet s = generate({SourceKind::iid_gaussian, 8, 1.0}, 200, r);
  const StcLayer layer = stc_train_linear(s.data, ThresholdPolicy::fixed(0.0));
  const Matrix Y = layer.A * s.data;
  const TernaryCodeSet c = stc_encode(s.data, layer);
  for (Index i = 0; i < 200; ++i) {
    const Vector w = weighted_code(c.codes[static_cast<std::size_t>(i)], layer);
    for (Index j = 0; j < 8; ++j) EXPECT_EQ(w(j), (Y(j, i) > 0 ? 1.0 : -1.0) * layer.beta(j));
  }
}

TEST(StcLayer, RankOneDataUsesOneDimension) {
  Rng r(5);
  Vector u = r.normal_matrix(6, 1);
  Matrix F(6, 100);
  for (Index i = 0; i < 100; ++i) F.col(i) = r.normal() * u;
  const StcLayer layer = stc_train_linear(F, ThresholdPolicy::fixed(0.1));
  EXPECT_GT(layer.beta(0), 0.0);
  for (Index j = 1; j < 6; ++j) EXPECT_EQ(layer.beta(j), 0.0);
}

TEST(StcLayer, EncodeDecodeSimpleCases) {
  Rng r(6);
  const VectorSet s = generate({SourceKind::iid_gaussian, 5, 1.0}, 100, r);
  const StcLayer layer = stc_train_linear(s.data, ThresholdPolicy::fixed(0.5));
  const TernaryCode z = stc_encode(Vector(Vector::Zero(5)), layer);
  EXPECT_EQ(z.nnz(), 0);
  EXPECT_EQ(stc_decode(z, layer), Vector::Zero(5));
  // One projected coordinate above threshold.
  const Vector f = 2.0 * layer.A.row(2).transpose();
  const TernaryCode c = stc_encode(f, layer);
  ASSERT_EQ(c.support, (std::vector<Index>{2}));
  EXPECT_LT((stc_decode(c, layer) - layer.beta(2) * layer.A.row(2).transpose()).norm(), 1e-12);
}

TEST(StcLayer, GramTrickForWideData) {
  Rng r(7);
  const Matrix F = r.normal_matrix(40, 10);
  const StcLayer layer = stc_train_linear(F, ThresholdPolicy::fixed(0.5));
  EXPECT_LE(layer.code_length(), 10);
  EXPECT_LT((layer.A * layer.A.transpose() - Matrix::Identity(layer.code_length(), layer.code_length())).norm(),
            1e-10);
}

TEST(StcLayer, KBestSelectsExactlyK) {
  Rng r(8);
  const VectorSet s = generate({SourceKind::iid_gaussian, 16, 1.0}, 300, r);
  const StcLayer layer = stc_train_linear(s.data, ThresholdPolicy::k_best(3));
  for (const auto& c : stc_encode(s.data, layer).codes) EXPECT_EQ(c.nnz(), 3);
  for (Index j = 0; j < 16; ++j) EXPECT_GT(layer.beta(j), 0.0);
}

TEST(Procrustean, OrthonormalAndNoWorseThanLinear) {
  Rng r(9);
  const VectorSet s = generate({SourceKind::ar1, 32, 1.0, 0.9}, 2000, r);
  const StcLayer lin = stc_train_linear(s.data, ThresholdPolicy::k_best(4));
  ProcrusteanTrace trace;
  const StcLayer pro = stc_train_procrustean(s.data, ThresholdPolicy::k_best(4), {50, 1e-6}, &trace);
  EXPECT_LT((pro.A * pro.A.transpose() - Matrix::Identity(32, 32)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE(pro.distortion, lin.distortion + 1e-12);
  for (std::size_t i = 0; i < trace.surrogate_after.size(); ++i)
    EXPECT_LE(trace.surrogate_after[i], trace.surrogate_before[i] * (1 + 1e-12));
}

TEST(Procrustean, GaussianDataNearFixedPoint) {
  Rng r(10);
  const VectorSet s = generate({SourceKind::var_decay, 16, 1.0, 0.0, 0.2}, 20000, r);
  const StcLayer lin = stc_train_linear(s.data, ThresholdPolicy::fixed(1.0));
  const StcLayer pro = stc_train_procrustean(s.data, ThresholdPolicy::fixed(1.0), {1, 1e-6});
  EXPECT_NEAR(pro.distortion, lin.distortion, 0.01 * lin.distortion);
}

TEST(MlStc, SingleLayerEqualsLinear) {
  Rng r(11);
  const VectorSet s = generate({SourceKind::ar1, 16, 1.0, 0.9}, 300, r);
  const MlStcModel m = mlstc_train(s.data, 1, ThresholdPolicy::fixed(0.7));
  EXPECT_EQ(m.layers[0], stc_train_linear(s.data, ThresholdPolicy::fixed(0.7)));
}

TEST(MlStc, PrefixPropertyAndBookkeeping) {
  Rng r(12);
  const VectorSet s = generate({SourceKind::ar1, 32, 1.0, 0.9}, 1000, r);
  const MlStcModel m = mlstc_train(s.data, 5, ThresholdPolicy::relative(1.0));
  const auto full = mlstc_encode(s.data, m);
  for (Index l = 1; l <= 5; ++l) {
    const auto part = mlstc_encode(s.data, m, l);
    for (Index k = 0; k < l; ++k) EXPECT_EQ(part[static_cast<std::size_t>(k)], full[static_cast<std::size_t>(k)]);
    const double d = (s.data - mlstc_decode(full, m, l)).squaredNorm() / s.data.squaredNorm();
    EXPECT_NEAR(d, m.per_layer_distortion[static_cast<std::size_t>(l - 1)], 1e-10);
  }
  EXPECT_EQ(mlstc_decode(full, m, 0).norm(), 0.0);
  for (Index l = 1; l < 5; ++l) EXPECT_LT(m.per_layer_distortion[l], m.per_layer_distortion[l - 1]);
  for (Index l = 1; l <= 5; ++l) EXPECT_GT(m.cumulative_rate(l), m.cumulative_rate(l - 1));
}

TEST(MlStc, LateResidualsDecorrelate) {
  Rng r(13);
  const VectorSet s = generate({SourceKind::ar1, 128, 1.0, 0.9}, 3000, r);
  // Low rate per layer; at rates near 1 bit/dim per layer the residual keeps
  // the source's spectral shape.
  const MlStcModel m = mlstc_train(s.data, 8, ThresholdPolicy::relative(2.0));
  const Matrix R = s.data - mlstc_decode(mlstc_encode(s.data, m), m);
  const double num = (R.topRows(127).cwiseProduct(R.bottomRows(127))).sum();
  const double den = std::sqrt(R.topRows(127).squaredNorm() * R.bottomRows(127).squaredNorm());
  EXPECT_LT(std::abs(num / den), 0.05);
}

TEST(MlStc, ProcrusteanStackOrthonormal) {
  Rng r(14);
  const VectorSet s = generate({SourceKind::ar1, 16, 1.0, 0.9}, 500, r);
  const MlStcModel m = mlstc_train_procrustean(s.data, 3, ThresholdPolicy::k_best(3), {10, 1e-6});
  for (const auto& l : m.layers) EXPECT_LT((l.A * l.A.transpose() - Matrix::Identity(16, 16)).norm(), 1e-8);
}
