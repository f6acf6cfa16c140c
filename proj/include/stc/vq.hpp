#pragma once

// Codebook quantizers: K-means, variance-regularized K-means with Newton
// codebook updates, and the residual stacks built from them.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "stc/error.hpp"
#include "stc/numerics.hpp"
#include "stc/rate_allocation.hpp"

namespace stc {

inline constexpr double kInfiniteMu = std::numeric_limits<double>::infinity();

/// m codewords (columns of C) in n dimensions plus per-codeword assignment ratios.
struct Codebook {
  Matrix C;
  Vector zeta;

  Index dim() const { return C.rows(); }
  Index size() const { return C.cols(); }
};

/// Zero-based codeword index per sample.
struct AssignmentSet {
  std::vector<Index> indices;

  Index size() const { return static_cast<Index>(indices.size()); }
};

namespace detail {

inline double squared_distance(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  return (a - b).squaredNorm();
}

}  // namespace detail

/// Nearest codeword under squared Euclidean distance, ties to the lowest index.
/// Distances come from one GEMM per block; near-ties are re-resolved with exact
/// distances so the result matches a brute-force scan.
inline AssignmentSet assign(const Matrix& F, const Matrix& C, std::vector<double>* distances = nullptr) {
  if (C.cols() == 0) throw ConfigError("assign: empty codebook");
  if (C.rows() != F.rows()) throw ConfigError("assign: dimension mismatch");
  const Index N = F.cols();
  const Index m = C.cols();
  AssignmentSet out;
  out.indices.resize(static_cast<std::size_t>(N));
  if (distances) distances->assign(static_cast<std::size_t>(N), 0.0);
  const Vector cnorm = C.colwise().squaredNorm().transpose();
  const double cmax = cnorm.size() ? cnorm.maxCoeff() : 0.0;
  constexpr Index kBlock = 1024;
  std::vector<Index> cand;
  for (Index start = 0; start < N; start += kBlock) {
    const Index len = std::min(kBlock, N - start);
    Matrix D = -2.0 * (C.transpose() * F.middleCols(start, len));
    D.colwise() += cnorm;
    for (Index i = 0; i < len; ++i) {
      const Index col = start + i;
      const double fnorm = F.col(col).squaredNorm();
      Index best = 0;
      double bestv = D(0, i);
      for (Index k = 1; k < m; ++k)
        if (D(k, i) < bestv) {
          bestv = D(k, i);
          best = k;
        }
      const double eps = 1e-9 * (fnorm + cmax) + 1e-300;
      cand.clear();
      for (Index k = 0; k < m; ++k)
        if (D(k, i) <= bestv + eps) cand.push_back(k);
      double exact = std::numeric_limits<double>::infinity();
      for (Index k : cand) {
        const double d = detail::squared_distance(F.col(col), C.col(k));
        if (d < exact) {
          exact = d;
          best = k;
        }
      }
      out.indices[static_cast<std::size_t>(col)] = best;
      if (distances) (*distances)[static_cast<std::size_t>(col)] = exact;
    }
  }
  return out;
}

inline AssignmentSet assign(const Matrix& F, const Codebook& cb, std::vector<double>* distances = nullptr) {
  return assign(F, cb.C, distances);
}

/// Per-codeword assignment ratios.
inline Vector assignment_ratios(const AssignmentSet& a, Index m) {
  Vector z = Vector::Zero(m);
  for (Index k : a.indices) z(k) += 1.0;
  if (!a.indices.empty()) z /= static_cast<double>(a.indices.size());
  return z;
}

/// Reconstruction C X for a set of assignments.
inline Matrix reconstruct(const Matrix& C, const AssignmentSet& a) {
  Matrix out(C.rows(), a.size());
  for (Index i = 0; i < a.size(); ++i) out.col(i) = C.col(a.indices[static_cast<std::size_t>(i)]);
  return out;
}

/// ||F - C X||_F^2 / ||F||_F^2 (0 when F is identically zero).
inline double normalized_distortion(const Matrix& F, const Matrix& C, const AssignmentSet& a) {
  const double energy = F.squaredNorm();
  double err = 0.0;
  for (Index i = 0; i < F.cols(); ++i)
    err += (F.col(i) - C.col(a.indices[static_cast<std::size_t>(i)])).squaredNorm();
  return energy > 0.0 ? err / energy : err;
}

namespace detail {

/// Give every empty cluster the sample with the largest residual whose own
/// cluster holds more than one sample. The codeword is set to that sample
/// (restricted to `rows` when given) and the assignment moved.
inline void reseed_empty(const Matrix& F, Matrix& C, AssignmentSet& a,
                         const std::vector<Index>* rows = nullptr) {
  const Index m = C.cols();
  std::vector<Index> counts(static_cast<std::size_t>(m), 0);
  for (Index k : a.indices) ++counts[static_cast<std::size_t>(k)];
  if (std::find(counts.begin(), counts.end(), 0) == counts.end()) return;
  std::vector<double> resid(a.indices.size());
  for (std::size_t i = 0; i < a.indices.size(); ++i)
    resid[i] = (F.col(static_cast<Index>(i)) - C.col(a.indices[i])).squaredNorm();
  std::vector<Index> order(a.indices.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index x, Index y) { return resid[static_cast<std::size_t>(x)] > resid[static_cast<std::size_t>(y)]; });
  std::size_t next = 0;
  for (Index k = 0; k < m; ++k) {
    if (counts[static_cast<std::size_t>(k)] != 0) continue;
    while (next < order.size() &&
           counts[static_cast<std::size_t>(a.indices[static_cast<std::size_t>(order[next])])] <= 1)
      ++next;
    if (next == order.size()) return;
    const Index i = order[next++];
    --counts[static_cast<std::size_t>(a.indices[static_cast<std::size_t>(i)])];
    ++counts[static_cast<std::size_t>(k)];
    a.indices[static_cast<std::size_t>(i)] = k;
    if (rows) {
      C.col(k).setZero();
      for (Index j : *rows) C(j, k) = F(j, i);
    } else {
      C.col(k) = F.col(i);
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// K-means
// ---------------------------------------------------------------------------

struct KmeansOptions {
  int max_iter = 100;
  double tol = 1e-6;
};

struct KmeansResult {
  Codebook codebook;
  AssignmentSet assignment;
  std::vector<double> distortion_trace;  // normalized distortion after each iteration
};

/// Lloyd iterations from a given initial codebook.
inline KmeansResult kmeans_from(const Matrix& F, Matrix C, const KmeansOptions& opt = {}) {
  if (C.rows() != F.rows()) throw ConfigError("kmeans: dimension mismatch");
  if (F.cols() < C.cols()) throw ConfigError("kmeans: N < m");
  KmeansResult r;
  const Index m = C.cols();
  double prev = std::numeric_limits<double>::infinity();
  AssignmentSet a;
  for (int it = 0; it < opt.max_iter; ++it) {
    a = assign(F, C);
    detail::reseed_empty(F, C, a);
    Matrix sums = Matrix::Zero(F.rows(), m);
    Vector counts = Vector::Zero(m);
    for (Index i = 0; i < F.cols(); ++i) {
      sums.col(a.indices[static_cast<std::size_t>(i)]) += F.col(i);
      counts(a.indices[static_cast<std::size_t>(i)]) += 1.0;
    }
    for (Index k = 0; k < m; ++k)
      if (counts(k) > 0.0) C.col(k) = sums.col(k) / counts(k);
    const double d = normalized_distortion(F, C, a);
    r.distortion_trace.push_back(d);
    if (std::isfinite(prev) && std::abs(prev - d) <= opt.tol * std::max(prev, 1e-300)) break;
    if (d == 0.0) break;
    prev = d;
  }
  r.codebook.C = std::move(C);
  r.codebook.zeta = assignment_ratios(a, m);
  r.assignment = std::move(a);
  return r;
}

/// K-means initialized with m distinct training samples.
inline KmeansResult kmeans(const Matrix& F, Index m, Rng& rng, const KmeansOptions& opt = {}) {
  if (m < 1) throw ConfigError("kmeans: m must be >= 1");
  if (F.cols() < m) throw ConfigError("kmeans: N < m");
  const std::vector<Index> pick = rng.sample_without_replacement(F.cols(), m);
  Matrix C(F.rows(), m);
  for (Index k = 0; k < m; ++k) C.col(k) = F.col(pick[static_cast<std::size_t>(k)]);
  return kmeans_from(F, std::move(C), opt);
}

// ---------------------------------------------------------------------------
// VR-Kmeans
// ---------------------------------------------------------------------------

/// Per-dimension codebook sub-problem with assignments fixed:
///   J(c) = -z'c / N + 1/2 sum_k zeta_k c_k^2 + mu/2 (||c||^2 - target)^2
/// where z = (F X')_j, zeta the assignment ratios and target = m sigma_Cj^2.
struct VrRowProblem {
  Vector z;
  Vector zeta;
  double N = 1.0;
  double mu = 0.0;
  double target = 0.0;

  double objective(const Vector& c) const {
    const double s = c.squaredNorm() - target;
    return -z.dot(c) / N + 0.5 * zeta.dot(c.cwiseProduct(c)) + 0.5 * mu * s * s;
  }

  /// zeta' = zeta + 2 mu (||c||^2 - target); the Hessian is diag(zeta') + 4 mu c c'.
  Vector zeta_prime(const Vector& c) const {
    return zeta.array() + 2.0 * mu * (c.squaredNorm() - target);
  }

  Vector gradient(const Vector& c) const { return -z / N + c.cwiseProduct(zeta_prime(c)); }

  Matrix hessian(const Vector& c) const {
    Matrix h = 4.0 * mu * c * c.transpose();
    h.diagonal() += zeta_prime(c);
    return h;
  }

  /// Sufficient condition for a positive definite Hessian.
  bool positive_definite(const Vector& c) const { return (zeta_prime(c).array() > 0.0).all(); }

  /// Sherman-Morrison inverse of diag(zeta') + 4 mu c c'.
  Matrix hessian_inverse(const Vector& c) const {
    const Vector dinv = zeta_prime(c).cwiseInverse();
    const Vector u = dinv.cwiseProduct(c);
    Matrix h = -(4.0 * mu / (1.0 + 4.0 * mu * c.dot(u))) * u * u.transpose();
    h.diagonal() += dinv;
    return h;
  }

  /// H^{-1} g without forming the matrix.
  Vector newton_direction(const Vector& c) const {
    const Vector dinv = zeta_prime(c).cwiseInverse();
    const Vector g = gradient(c);
    const Vector u = dinv.cwiseProduct(c);
    const Vector dg = dinv.cwiseProduct(g);
    return dg - (4.0 * mu * c.dot(dg) / (1.0 + 4.0 * mu * c.dot(u))) * u;
  }
};

struct VrKmeansOptions {
  double mu = 0.0;       // kInfiniteMu: random codebook, no data update
  double eta = 1.0;      // Newton step
  int max_iter = 100;
  int newton_iter = 10;
  int max_halvings = 20;
  int max_reinit = 100;  // per call
  double tol = 1e-6;
};

struct VrKmeansResult {
  Codebook codebook;
  AssignmentSet assignment;
  std::vector<double> objective_trace;   // full regularized objective per outer iteration
  std::vector<double> distortion_trace;  // normalized distortion per outer iteration
  int reinit_count = 0;
};

/// (1/(2Nn)) ||F - C X||^2 + (mu/(2n)) sum_j (||c(j)||^2 - m sigma_Cj^2)^2, the
/// sum running over the active set.
inline double vr_objective(const Matrix& F, const Matrix& C, const AssignmentSet& a,
                           const AllocationResult& alloc, double mu) {
  const double N = static_cast<double>(F.cols());
  const double n = static_cast<double>(F.rows());
  double err = 0.0;
  for (Index i = 0; i < F.cols(); ++i)
    err += (F.col(i) - C.col(a.indices[static_cast<std::size_t>(i)])).squaredNorm();
  double reg = 0.0;
  if (mu > 0.0 && std::isfinite(mu)) {
    const double m = static_cast<double>(C.cols());
    for (Index j : alloc.active_set) {
      const double s = C.row(j).squaredNorm() - m * alloc.target_variances(j);
      reg += s * s;
    }
  }
  return err / (2.0 * N * n) + mu * reg / (2.0 * n);
}

namespace detail {

inline Vector random_row(Index m, double variance, Rng& rng) {
  Vector c(m);
  for (Index k = 0; k < m; ++k) c(k) = std::sqrt(variance) * rng.normal();
  return c;
}

/// Damped Newton on one codebook row. Returns the number of re-initializations.
inline int newton_row(const VrRowProblem& p, Eigen::Ref<Vector> row, double variance,
                      const VrKmeansOptions& opt, Rng& rng) {
  Vector c = row;
  int reinit = 0;
  const auto reinitialize = [&] {
    if (reinit >= opt.max_reinit)
      throw NumericalError("vr_kmeans: Hessian guard not met after re-initializations; reduce mu");
    ++reinit;
    c = random_row(c.size(), variance, rng);
    const double nrm = c.squaredNorm();
    if (nrm > 0.0) c *= std::sqrt(p.target / nrm);
  };
  for (int it = 0; it < opt.newton_iter; ++it) {
    while (!p.positive_definite(c)) reinitialize();
    const double f0 = p.objective(c);
    const Vector dir = p.newton_direction(c);
    double t = opt.eta;
    bool accepted = false;
    Vector cand;
    double f1 = f0;
    for (int h = 0; h <= opt.max_halvings; ++h, t *= 0.5) {
      cand = c - t * dir;
      if (p.positive_definite(cand)) {
        f1 = p.objective(cand);
        if (f1 <= f0) {
          accepted = true;
          break;
        }
      }
    }
    if (!accepted) break;
    c = cand;
    if (std::abs(f0 - f1) <= 1e-14 * std::max(1.0, std::abs(f0))) break;
  }
  row = c;
  return reinit;
}

}  // namespace detail

/// Codebook rows outside the allocation's active set are exactly zero. Rows in
/// it start as draws from N(0, sigma_Cj^2) and are refined by Newton steps on
/// the per-row sub-problem between assignment passes.
inline VrKmeansResult vr_kmeans(const Matrix& F, Index m, const AllocationResult& alloc,
                                const VrKmeansOptions& opt, Rng& rng) {
  if (m < 1) throw ConfigError("vr_kmeans: m must be >= 1");
  if (F.cols() < m) throw ConfigError("vr_kmeans: N < m");
  if (alloc.target_variances.size() != F.rows()) throw ConfigError("vr_kmeans: allocation size mismatch");
  if (!(opt.mu >= 0.0)) throw ConfigError("vr_kmeans: mu must be >= 0");
  if (!(opt.eta > 0.0)) throw ConfigError("vr_kmeans: eta must be > 0");

  const Index n = F.rows();
  const double N = static_cast<double>(F.cols());
  Matrix C = Matrix::Zero(n, m);
  for (Index j : alloc.active_set)
    C.row(j) = detail::random_row(m, alloc.target_variances(j), rng).transpose();

  VrKmeansResult r;
  AssignmentSet a;
  if (std::isinf(opt.mu)) {
    a = assign(F, C);
    r.objective_trace.push_back(vr_objective(F, C, a, alloc, 0.0));
    r.distortion_trace.push_back(normalized_distortion(F, C, a));
    r.codebook.C = std::move(C);
    r.codebook.zeta = assignment_ratios(a, m);
    r.assignment = std::move(a);
    return r;
  }

  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < opt.max_iter; ++it) {
    a = assign(F, C);
    detail::reseed_empty(F, C, a, &alloc.active_set);
    const Vector zeta = assignment_ratios(a, m);
    Matrix Z = Matrix::Zero(n, m);  // F X'
    for (Index i = 0; i < F.cols(); ++i) Z.col(a.indices[static_cast<std::size_t>(i)]) += F.col(i);
    for (Index j : alloc.active_set) {
      VrRowProblem p;
      p.z = Z.row(j).transpose();
      p.zeta = zeta;
      p.N = N;
      p.mu = opt.mu;
      p.target = static_cast<double>(m) * alloc.target_variances(j);
      Vector row = C.row(j).transpose();
      r.reinit_count += detail::newton_row(p, row, alloc.target_variances(j), opt, rng);
      C.row(j) = row.transpose();
    }
    const double J = vr_objective(F, C, a, alloc, opt.mu);
    r.objective_trace.push_back(J);
    r.distortion_trace.push_back(normalized_distortion(F, C, a));
    if (std::isfinite(prev) && std::abs(prev - J) <= opt.tol * std::max(std::abs(prev), 1e-300)) break;
    prev = J;
  }
  r.codebook.C = std::move(C);
  r.codebook.zeta = assignment_ratios(a, m);
  r.assignment = std::move(a);
  return r;
}

// ---------------------------------------------------------------------------
// Residual quantizers
// ---------------------------------------------------------------------------

struct ResidualQuantizer {
  std::vector<Codebook> layers;
  std::vector<double> per_layer_distortion;  // ||F^[l]||^2 / ||F||^2 on the training set
  std::vector<double> mu;                    // per layer; empty for plain RQ
  std::vector<AllocationResult> allocation;  // per layer; empty for plain RQ

  Index num_layers() const { return static_cast<Index>(layers.size()); }
  Index dim() const { return layers.empty() ? 0 : layers.front().dim(); }
  /// log2(m_l) / n bits per dimension for layer l.
  double layer_rate(Index l) const {
    return std::log2(static_cast<double>(layers[static_cast<std::size_t>(l)].size())) /
           static_cast<double>(dim());
  }
};

/// Layer 1..5 at mu0, infinite afterwards.
inline std::vector<double> default_mu_schedule(Index L, double mu0, Index finite_layers = 5) {
  std::vector<double> s(static_cast<std::size_t>(L), mu0);
  for (Index l = finite_layers; l < L; ++l) s[static_cast<std::size_t>(l)] = kInfiniteMu;
  return s;
}

inline ResidualQuantizer rq_train(const Matrix& F, Index L, Index m, Rng& rng,
                                  const KmeansOptions& opt = {}) {
  if (L < 1) throw ConfigError("rq_train: L must be >= 1");
  ResidualQuantizer q;
  const double energy = F.squaredNorm();
  Matrix R = F;
  for (Index l = 0; l < L; ++l) {
    Rng layer_rng = rng.fork(static_cast<std::uint64_t>(l));
    KmeansResult k = kmeans(R, m, layer_rng, opt);
    for (Index i = 0; i < R.cols(); ++i)
      R.col(i) -= k.codebook.C.col(k.assignment.indices[static_cast<std::size_t>(i)]);
    q.layers.push_back(std::move(k.codebook));
    q.per_layer_distortion.push_back(energy > 0.0 ? R.squaredNorm() / energy : 0.0);
  }
  return q;
}

struct RrqOptions {
  Index L = 1;
  Index m = 2;
  double gamma_ratio = 1.0;
  std::vector<double> mu_schedule;  // length L; empty means default_mu_schedule(L, 0)
  VrKmeansOptions vr;
};

/// Each layer allocates log2(m)/n bits/dim by reverse water-filling over the
/// per-dimension variances of its input residual, then runs VR-Kmeans.
/// F is expected in a decorrelated (whitened) basis.
inline ResidualQuantizer rrq_train(const Matrix& F, const RrqOptions& opt, Rng& rng) {
  if (opt.L < 1) throw ConfigError("rrq_train: L must be >= 1");
  std::vector<double> mus = opt.mu_schedule.empty() ? default_mu_schedule(opt.L, 0.0) : opt.mu_schedule;
  if (static_cast<Index>(mus.size()) != opt.L) throw ConfigError("rrq_train: mu schedule length != L");
  ResidualQuantizer q;
  const double energy = F.squaredNorm();
  const double rate = std::log2(static_cast<double>(opt.m)) / static_cast<double>(F.rows());
  Matrix R = F;
  for (Index l = 0; l < opt.L; ++l) {
    Rng layer_rng = rng.fork(static_cast<std::uint64_t>(l));
    const Vector var = R.rowwise().squaredNorm() / static_cast<double>(std::max<Index>(R.cols() - 1, 1));
    AllocationResult alloc = rev_wfiller(var, rate, opt.gamma_ratio);
    VrKmeansOptions vo = opt.vr;
    vo.mu = mus[static_cast<std::size_t>(l)];
    VrKmeansResult v = vr_kmeans(R, opt.m, alloc, vo, layer_rng);
    for (Index i = 0; i < R.cols(); ++i)
      R.col(i) -= v.codebook.C.col(v.assignment.indices[static_cast<std::size_t>(i)]);
    q.layers.push_back(std::move(v.codebook));
    q.per_layer_distortion.push_back(energy > 0.0 ? R.squaredNorm() / energy : 0.0);
    q.mu.push_back(vo.mu);
    q.allocation.push_back(std::move(alloc));
  }
  return q;
}

/// Greedy layer-by-layer encoding of the columns of F: one index per layer per sample.
inline std::vector<AssignmentSet> rq_encode(const Matrix& F, const ResidualQuantizer& q) {
  if (F.rows() != q.dim()) throw ConfigError("rq_encode: dimension mismatch");
  std::vector<AssignmentSet> codes;
  Matrix R = F;
  for (const Codebook& cb : q.layers) {
    AssignmentSet a = assign(R, cb);
    for (Index i = 0; i < R.cols(); ++i) R.col(i) -= cb.C.col(a.indices[static_cast<std::size_t>(i)]);
    codes.push_back(std::move(a));
  }
  return codes;
}

inline std::vector<Index> rq_encode(const Vector& f, const ResidualQuantizer& q) {
  const std::vector<AssignmentSet> codes = rq_encode(Matrix(f), q);
  std::vector<Index> out;
  for (const auto& c : codes) out.push_back(c.indices.front());
  return out;
}

/// Sum of the first `up_to` layers' codewords (all layers when negative).
inline Matrix rq_decode(const std::vector<AssignmentSet>& codes, const ResidualQuantizer& q,
                        Index up_to = -1) {
  const Index L = up_to < 0 ? q.num_layers() : up_to;
  if (L > q.num_layers() || L > static_cast<Index>(codes.size()))
    throw ConfigError("rq_decode: layer count exceeds model");
  const Index N = codes.empty() ? 0 : codes.front().size();
  Matrix out = Matrix::Zero(q.dim(), N);
  for (Index l = 0; l < L; ++l) {
    const Codebook& cb = q.layers[static_cast<std::size_t>(l)];
    const AssignmentSet& a = codes[static_cast<std::size_t>(l)];
    if (a.size() != N) throw ConfigError("rq_decode: inconsistent code counts");
    for (Index i = 0; i < N; ++i) {
      const Index k = a.indices[static_cast<std::size_t>(i)];
      if (k < 0 || k >= cb.size()) throw ConfigError("rq_decode: index out of range");
      out.col(i) += cb.C.col(k);
    }
  }
  return out;
}

inline Vector rq_decode(const std::vector<Index>& indices, const ResidualQuantizer& q, Index up_to = -1) {
  std::vector<AssignmentSet> codes;
  for (Index k : indices) codes.push_back(AssignmentSet{{k}});
  return rq_decode(codes, q, up_to).col(0);
}

}  // namespace stc
