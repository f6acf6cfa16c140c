#pragma once

// Sparse ternary codes: thresholding operators, single-layer encoder/decoder
// with per-dimension weights, Procrustean training, and multi-layer stacks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <vector>

#include "stc/error.hpp"
#include "stc/numerics.hpp"

namespace stc {

/// Signed support of a vector in {+1, 0, -1}^m.
struct TernaryCode {
  Index length = 0;
  std::vector<Index> support;       // strictly increasing
  std::vector<std::int8_t> signs;   // +1 / -1, aligned with support

  Index nnz() const { return static_cast<Index>(support.size()); }

  /// Dense {+1,0,-1} representation.
  Vector dense() const {
    Vector v = Vector::Zero(length);
    for (std::size_t t = 0; t < support.size(); ++t) v(support[t]) = signs[t];
    return v;
  }

  static TernaryCode from_dense(const Vector& v) {
    TernaryCode c;
    c.length = v.size();
    for (Index j = 0; j < v.size(); ++j)
      if (v(j) != 0.0) {
        c.support.push_back(j);
        c.signs.push_back(v(j) > 0.0 ? 1 : -1);
      }
    return c;
  }

  bool operator==(const TernaryCode&) const = default;
};

/// Codes of a batch of N samples, all of length m.
struct TernaryCodeSet {
  Index m = 0;
  std::vector<TernaryCode> codes;

  Index size() const { return static_cast<Index>(codes.size()); }
  bool operator==(const TernaryCodeSet&) const = default;
};

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

inline void check_lambda(double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("threshold must be >= 0");
}

/// phi_lambda: sign where |v_j| > lambda, else 0.
inline TernaryCode ternarize(const Vector& v, double lambda) {
  check_lambda(lambda);
  TernaryCode c;
  c.length = v.size();
  for (Index j = 0; j < v.size(); ++j)
    if (std::abs(v(j)) > lambda) {
      c.support.push_back(j);
      c.signs.push_back(v(j) > 0.0 ? 1 : -1);
    }
  return c;
}

/// psi_lambda: v_j where |v_j| > lambda, else 0.
inline Vector hard_threshold(const Vector& v, double lambda) {
  check_lambda(lambda);
  return v.unaryExpr([lambda](double x) { return std::abs(x) > lambda ? x : 0.0; });
}

/// eta_lambda: sign(v_j) max(|v_j| - lambda, 0).
inline Vector soft_threshold(const Vector& v, double lambda) {
  check_lambda(lambda);
  return v.unaryExpr([lambda](double x) {
    const double a = std::abs(x) - lambda;
    return a > 0.0 ? std::copysign(a, x) : 0.0;
  });
}

/// Keep the k largest magnitudes (nonzero only), ties to the lower index.
/// Entries with `eligible(j) == false` are never selected.
inline TernaryCode k_best_ternarize(const Vector& v, Index k, const std::vector<bool>* eligible = nullptr) {
  if (k < 0) throw ConfigError("k_best: k must be >= 0");
  std::vector<Index> idx;
  idx.reserve(static_cast<std::size_t>(v.size()));
  for (Index j = 0; j < v.size(); ++j)
    if (v(j) != 0.0 && (!eligible || (*eligible)[static_cast<std::size_t>(j)])) idx.push_back(j);
  const auto take = static_cast<std::size_t>(std::min<Index>(k, static_cast<Index>(idx.size())));
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(),
                    [&](Index a, Index b) {
                      const double x = std::abs(v(a)), y = std::abs(v(b));
                      return x > y || (x == y && a < b);
                    });
  idx.resize(take);
  std::sort(idx.begin(), idx.end());
  TernaryCode c;
  c.length = v.size();
  for (Index j : idx) {
    c.support.push_back(j);
    c.signs.push_back(v(j) > 0.0 ? 1 : -1);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Scalar analysis under a Gaussian model
// ---------------------------------------------------------------------------

/// -2a log2 a - (1-2a) log2(1-2a), with 0 log 0 = 0.
inline double ternary_entropy(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 0.5)) throw ConfigError("ternary_entropy: alpha must lie in [0, 0.5]");
  auto xlog = [](double p) { return p > 0.0 ? -p * std::log2(p) : 0.0; };
  return 2.0 * xlog(alpha) + xlog(1.0 - 2.0 * alpha);
}

/// P[X > lambda] for X ~ N(0, sigma^2): the probability of a +1 (equally of a -1).
inline double stc_sparsity(double sigma, double lambda) { return q_function(lambda / sigma); }

/// Weight minimizing the per-dimension distortion:
/// sigma exp(-lambda^2 / 2 sigma^2) / (sqrt(2 pi) Q(lambda / sigma)).
inline double optimal_beta(double sigma, double lambda) {
  if (!(sigma > 0.0)) throw ConfigError("optimal_beta: sigma must be > 0");
  check_lambda(lambda);
  const double t = lambda / sigma;
  const double q = q_function(t);
  if (q <= 0.0) return lambda;  // E[X | X > lambda] -> lambda far in the tail
  return sigma * normal_pdf(t) / q;
}

/// E[(X - beta phi_lambda(X))^2] for X ~ N(0, sigma^2).
inline double stc_distortion_per_dim(double sigma, double lambda, double beta) {
  if (!(sigma > 0.0)) throw ConfigError("stc_distortion_per_dim: sigma must be > 0");
  const double t = lambda / sigma;
  return sigma * sigma + 2.0 * beta * beta * q_function(t) - 4.0 * beta * sigma * normal_pdf(t);
}

/// (1/n) sum_j H_ternary(alpha_j).
inline double stc_rate_upper_bound(const Vector& alpha) {
  if (alpha.size() == 0) return 0.0;
  double r = 0.0;
  for (Index j = 0; j < alpha.size(); ++j) r += ternary_entropy(alpha(j));
  return r / static_cast<double>(alpha.size());
}

// ---------------------------------------------------------------------------
// Single layer
// ---------------------------------------------------------------------------

enum class ThresholdKind : std::uint8_t {
  fixed = 0,     // lambda = value
  k_best = 1,    // keep the k largest magnitudes
  relative = 2,  // lambda = value * RMS of the layer's projected standard deviations
};

struct ThresholdPolicy {
  ThresholdKind kind = ThresholdKind::fixed;
  double value = 0.0;
  Index k = 0;

  static ThresholdPolicy fixed(double lambda) { return {ThresholdKind::fixed, lambda, 0}; }
  static ThresholdPolicy k_best(Index k) { return {ThresholdKind::k_best, 0.0, k}; }
  static ThresholdPolicy relative(double ratio) { return {ThresholdKind::relative, ratio, 0}; }

  bool operator==(const ThresholdPolicy&) const = default;
};

/// Projection, weights and threshold of one layer. Encoding is
/// phi(A f) and decoding A' (x .* beta).
struct StcLayer {
  Matrix A;             // m x n
  Vector beta;          // m
  ThresholdPolicy policy;
  double lambda = 0.0;  // effective threshold (fixed / relative policies)
  Vector variances;     // projected per-dimension training variances, length m
  Vector alpha;         // per-dimension probability of a +1 (or a -1)
  double rate = 0.0;    // bits per input dimension
  double distortion = 0.0;  // ||F - F_hat||^2 / ||F||^2 on the layer's training input

  Index code_length() const { return A.rows(); }
  Index dim() const { return A.cols(); }

  bool operator==(const StcLayer&) const = default;
};

inline TernaryCode stc_encode_projected(const Vector& y, const StcLayer& layer) {
  if (layer.policy.kind == ThresholdKind::k_best) {
    std::vector<bool> eligible(static_cast<std::size_t>(y.size()));
    for (Index j = 0; j < y.size(); ++j) eligible[static_cast<std::size_t>(j)] = layer.beta(j) > 0.0;
    return k_best_ternarize(y, layer.policy.k, &eligible);
  }
  TernaryCode c;
  c.length = y.size();
  for (Index j = 0; j < y.size(); ++j)
    if (std::abs(y(j)) > layer.lambda && layer.beta(j) > 0.0) {
      c.support.push_back(j);
      c.signs.push_back(y(j) > 0.0 ? 1 : -1);
    }
  return c;
}

inline TernaryCode stc_encode(const Vector& f, const StcLayer& layer) {
  if (f.size() != layer.dim()) throw ConfigError("stc_encode: dimension mismatch");
  return stc_encode_projected(layer.A * f, layer);
}

inline TernaryCodeSet stc_encode(const Matrix& F, const StcLayer& layer) {
  if (F.rows() != layer.dim()) throw ConfigError("stc_encode: dimension mismatch");
  TernaryCodeSet out;
  out.m = layer.code_length();
  out.codes.reserve(static_cast<std::size_t>(F.cols()));
  const Matrix Y = layer.A * F;
  for (Index i = 0; i < F.cols(); ++i) out.codes.push_back(stc_encode_projected(Y.col(i), layer));
  return out;
}

/// x .* beta in the projected domain.
inline Vector weighted_code(const TernaryCode& x, const StcLayer& layer) {
  Vector v = Vector::Zero(layer.code_length());
  for (std::size_t t = 0; t < x.support.size(); ++t) v(x.support[t]) = x.signs[t] * layer.beta(x.support[t]);
  return v;
}

inline Vector stc_decode(const TernaryCode& x, const StcLayer& layer) {
  if (x.length != layer.code_length()) throw ConfigError("stc_decode: code length mismatch");
  Vector out = Vector::Zero(layer.dim());
  for (std::size_t t = 0; t < x.support.size(); ++t) {
    const Index j = x.support[t];
    out += (x.signs[t] * layer.beta(j)) * layer.A.row(j).transpose();
  }
  return out;
}

inline Matrix stc_decode(const TernaryCodeSet& X, const StcLayer& layer) {
  Matrix out(layer.dim(), X.size());
  for (Index i = 0; i < X.size(); ++i) out.col(i) = stc_decode(X.codes[static_cast<std::size_t>(i)], layer);
  return out;
}

namespace detail {

inline constexpr double kDegenerateVariance = 1e-12;

/// Rows of an orthonormal basis for the covariance of F, descending variance.
/// With more dimensions than samples the basis comes from the N x N Gram
/// matrix and is truncated to its rank.
inline std::pair<Matrix, Vector> covariance_basis(const Matrix& F) {
  const Index n = F.rows(), N = F.cols();
  if (N < 2) throw DataError("stc: need N >= 2 training samples");
  if (!F.allFinite()) throw DataError("stc: non-finite training data");
  if (n <= N) {
    const Matrix S = sample_covariance(F);
    EigResult e = sym_eig(0.5 * (S + S.transpose()));
    return {e.eigenvectors.transpose(), e.eigenvalues.cwiseMax(0.0)};
  }
  const Matrix G = (F.transpose() * F) / static_cast<double>(N - 1);
  EigResult e = sym_eig(0.5 * (G + G.transpose()));
  const double top = std::max(e.eigenvalues(0), 0.0);
  Index rank = 0;
  while (rank < N && e.eigenvalues(rank) > 1e-12 * top) ++rank;
  if (rank == 0) throw DataError("stc: degenerate covariance");
  Matrix A(rank, n);
  for (Index k = 0; k < rank; ++k) {
    Vector u = F * e.eigenvectors.col(k);
    u.normalize();
    canonical_sign(u);
    A.row(k) = u.transpose();
  }
  return {A, e.eigenvalues.head(rank)};
}

inline double effective_lambda(const ThresholdPolicy& p, const Vector& variances) {
  switch (p.kind) {
    case ThresholdKind::fixed: check_lambda(p.value); return p.value;
    case ThresholdKind::relative: {
      check_lambda(p.value);
      const double rms = variances.size() ? std::sqrt(variances.mean()) : 0.0;
      return p.value * rms;
    }
    case ThresholdKind::k_best: return 0.0;
  }
  return 0.0;
}

/// Fill beta, alpha, lambda and rate for a layer whose A and variances are set.
/// `Y` is the projected training data A F.
inline void fit_weights(StcLayer& layer, const Matrix& Y) {
  const Index m = layer.A.rows();
  const double n = static_cast<double>(layer.A.cols());
  layer.beta = Vector::Zero(m);
  layer.alpha = Vector::Zero(m);
  if (layer.policy.kind == ThresholdKind::k_best) {
    if (layer.policy.k < 0) throw ConfigError("k_best: k must be >= 0");
    layer.lambda = 0.0;
    StcLayer probe = layer;
    for (Index j = 0; j < m; ++j) probe.beta(j) = layer.variances(j) > kDegenerateVariance ? 1.0 : 0.0;
    Vector sum = Vector::Zero(m), count = Vector::Zero(m), sum_all = Vector::Zero(m);
    for (Index i = 0; i < Y.cols(); ++i) {
      const TernaryCode c = stc_encode_projected(Y.col(i), probe);
      for (std::size_t t = 0; t < c.support.size(); ++t) {
        sum(c.support[t]) += std::abs(Y(c.support[t], i));
        count(c.support[t]) += 1.0;
      }
    }
    sum_all = Y.cwiseAbs().rowwise().mean();
    for (Index j = 0; j < m; ++j) {
      if (probe.beta(j) == 0.0) continue;
      layer.beta(j) = count(j) > 0.0 ? sum(j) / count(j) : sum_all(j);
      if (!(layer.beta(j) > 0.0)) layer.beta(j) = std::sqrt(layer.variances(j));
      layer.alpha(j) = std::min(0.5, count(j) / (2.0 * static_cast<double>(Y.cols())));
    }
  } else {
    layer.lambda = effective_lambda(layer.policy, layer.variances);
    for (Index j = 0; j < m; ++j) {
      if (layer.variances(j) <= kDegenerateVariance) continue;
      const double s = std::sqrt(layer.variances(j));
      layer.beta(j) = optimal_beta(s, layer.lambda);
      layer.alpha(j) = stc_sparsity(s, layer.lambda);
    }
  }
  double r = 0.0;
  for (Index j = 0; j < m; ++j) r += ternary_entropy(layer.alpha(j));
  layer.rate = r / n;
}

inline double layer_distortion(const Matrix& F, const StcLayer& layer) {
  const double energy = F.squaredNorm();
  const Matrix R = F - stc_decode(stc_encode(F, layer), layer);
  return energy > 0.0 ? R.squaredNorm() / energy : 0.0;
}

}  // namespace detail

/// PCA projection (rows of A are covariance eigenvectors), weights from the
/// threshold policy.
inline StcLayer stc_train_linear(const Matrix& F, const ThresholdPolicy& policy) {
  auto [A, var] = detail::covariance_basis(F);
  StcLayer layer;
  layer.A = std::move(A);
  layer.variances = std::move(var);
  layer.policy = policy;
  const Matrix Y = layer.A * F;
  detail::fit_weights(layer, Y);
  layer.distortion = detail::layer_distortion(F, layer);
  return layer;
}

struct ProcrusteanOptions {
  int max_iter = 50;
  double tol = 1e-6;
};

struct ProcrusteanTrace {
  std::vector<double> distortion;         // after each full iteration
  std::vector<double> surrogate_before;   // ||A F - X.*beta||^2 before each A-update
  std::vector<double> surrogate_after;    // same, after
};

/// Alternates weights (from the projected variances of the current A) and
/// the orthogonal Procrustes update A = U V' from svd((X .* beta) F').
inline StcLayer stc_train_procrustean(const Matrix& F, const ThresholdPolicy& policy,
                                      const ProcrusteanOptions& opt = {},
                                      ProcrusteanTrace* trace = nullptr) {
  StcLayer layer = stc_train_linear(F, policy);
  if (layer.A.rows() != layer.A.cols())
    throw ConfigError("stc_train_procrustean: requires a square projection (N > n)");
  const double N1 = static_cast<double>(std::max<Index>(F.cols() - 1, 1));
  double prev = layer.distortion;
  for (int it = 0; it < opt.max_iter; ++it) {
    // Codes and weights at the current A.
    Matrix Y = layer.A * F;
    layer.variances = Y.rowwise().squaredNorm() / N1;
    detail::fit_weights(layer, Y);
    Matrix B = Matrix::Zero(Y.rows(), Y.cols());
    for (Index i = 0; i < F.cols(); ++i) B.col(i) = weighted_code(stc_encode_projected(Y.col(i), layer), layer);
    if (trace) trace->surrogate_before.push_back((Y - B).squaredNorm());
    SvdResult s = svd(B * F.transpose());
    layer.A = s.U * s.V.transpose();
    if (trace) trace->surrogate_after.push_back((layer.A * F - B).squaredNorm());
    // Refresh weights for the new A so the layer is self-consistent.
    Y = layer.A * F;
    layer.variances = Y.rowwise().squaredNorm() / N1;
    detail::fit_weights(layer, Y);
    layer.distortion = detail::layer_distortion(F, layer);
    if (trace) trace->distortion.push_back(layer.distortion);
    if (std::abs(prev - layer.distortion) <= opt.tol * std::max(prev, 1e-300)) break;
    prev = layer.distortion;
  }
  return layer;
}

// ---------------------------------------------------------------------------
// Multi-layer
// ---------------------------------------------------------------------------

struct MlStcModel {
  std::vector<StcLayer> layers;
  std::vector<double> per_layer_distortion;  // cumulative ||F^[l]||^2 / ||F||^2 on train
  bool procrustean = false;

  Index num_layers() const { return static_cast<Index>(layers.size()); }
  Index dim() const { return layers.empty() ? 0 : layers.front().dim(); }
  /// Sum of per-layer rates of the first l layers.
  double cumulative_rate(Index l) const {
    double r = 0.0;
    for (Index i = 0; i < l; ++i) r += layers[static_cast<std::size_t>(i)].rate;
    return r;
  }

  bool operator==(const MlStcModel&) const = default;
};

namespace detail {

inline MlStcModel mlstc_train_impl(const Matrix& F, const std::vector<ThresholdPolicy>& policies,
                                   bool procrustean, const ProcrusteanOptions& popt) {
  if (policies.empty()) throw ConfigError("mlstc_train: L must be >= 1");
  if (F.cols() < 2) throw DataError("mlstc_train: need N >= 2");
  MlStcModel model;
  model.procrustean = procrustean;
  const double energy = F.squaredNorm();
  Matrix R = F;
  for (const ThresholdPolicy& p : policies) {
    StcLayer layer = procrustean ? stc_train_procrustean(R, p, popt) : stc_train_linear(R, p);
    R -= stc_decode(stc_encode(R, layer), layer);
    model.per_layer_distortion.push_back(energy > 0.0 ? R.squaredNorm() / energy : 0.0);
    model.layers.push_back(std::move(layer));
  }
  return model;
}

}  // namespace detail

/// Layer l is trained on the residual left by layers 1..l-1.
inline MlStcModel mlstc_train(const Matrix& F, const std::vector<ThresholdPolicy>& policies) {
  return detail::mlstc_train_impl(F, policies, false, {});
}

inline MlStcModel mlstc_train(const Matrix& F, Index L, const ThresholdPolicy& policy) {
  return mlstc_train(F, std::vector<ThresholdPolicy>(static_cast<std::size_t>(std::max<Index>(L, 0)), policy));
}

inline MlStcModel mlstc_train_procrustean(const Matrix& F, const std::vector<ThresholdPolicy>& policies,
                                          const ProcrusteanOptions& opt = {}) {
  return detail::mlstc_train_impl(F, policies, true, opt);
}

inline MlStcModel mlstc_train_procrustean(const Matrix& F, Index L, const ThresholdPolicy& policy,
                                          const ProcrusteanOptions& opt = {}) {
  return mlstc_train_procrustean(
      F, std::vector<ThresholdPolicy>(static_cast<std::size_t>(std::max<Index>(L, 0)), policy), opt);
}

/// Greedy encoding; entry l holds layer l's codes for every column of F.
inline std::vector<TernaryCodeSet> mlstc_encode(const Matrix& F, const MlStcModel& model,
                                                Index up_to = -1) {
  if (F.rows() != model.dim()) throw ConfigError("mlstc_encode: dimension mismatch");
  const Index L = up_to < 0 ? model.num_layers() : up_to;
  if (L > model.num_layers()) throw ConfigError("mlstc_encode: layer count exceeds model");
  std::vector<TernaryCodeSet> out;
  Matrix R = F;
  for (Index l = 0; l < L; ++l) {
    const StcLayer& layer = model.layers[static_cast<std::size_t>(l)];
    TernaryCodeSet c = stc_encode(R, layer);
    if (l + 1 < L) R -= stc_decode(c, layer);
    out.push_back(std::move(c));
  }
  return out;
}

inline std::vector<TernaryCode> mlstc_encode(const Vector& f, const MlStcModel& model) {
  std::vector<TernaryCode> out;
  for (auto& set : mlstc_encode(Matrix(f), model)) out.push_back(std::move(set.codes.front()));
  return out;
}

/// Additive reconstruction from the first `up_to` layers (all when negative).
inline Matrix mlstc_decode(const std::vector<TernaryCodeSet>& codes, const MlStcModel& model,
                           Index up_to = -1) {
  const Index L = up_to < 0 ? static_cast<Index>(codes.size()) : up_to;
  if (L > model.num_layers() || L > static_cast<Index>(codes.size()))
    throw ConfigError("mlstc_decode: up_to_layer exceeds available layers");
  const Index N = codes.empty() ? 0 : codes.front().size();
  Matrix out = Matrix::Zero(model.dim(), N);
  for (Index l = 0; l < L; ++l) {
    if (codes[static_cast<std::size_t>(l)].size() != N) throw ConfigError("mlstc_decode: inconsistent code counts");
    out += stc_decode(codes[static_cast<std::size_t>(l)], model.layers[static_cast<std::size_t>(l)]);
  }
  return out;
}

inline Vector mlstc_decode(const std::vector<TernaryCode>& codes, const MlStcModel& model, Index up_to = -1) {
  std::vector<TernaryCodeSet> sets;
  for (const auto& c : codes) sets.push_back(TernaryCodeSet{c.length, {c}});
  if (sets.empty()) return Vector::Zero(model.dim());
  return mlstc_decode(sets, model, up_to).col(0);
}

}  // namespace stc
