#pragma once

// Dense linear algebra wrappers, Gaussian special functions, adaptive
// quadrature and a seeded, platform-independent random source.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "stc/error.hpp"

namespace stc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

// ---------------------------------------------------------------------------
// Random numbers
// ---------------------------------------------------------------------------

/// SplitMix64 step; used for seeding and for deriving child streams.
constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Deterministic xoshiro256** generator. Identical seeds give identical
/// streams on every platform; normals use Box-Muller on top of it so no
/// library distribution is involved.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t s = seed;
    for (auto& w : state_) w = splitmix64(s);
  }

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1).
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound) noexcept {
    // Lemire's nearly-divisionless method.
    __uint128_t m = static_cast<__uint128_t>(next_u64()) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (low < threshold) {
        m = static_cast<__uint128_t>(next_u64()) * bound;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Standard normal sample.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  Matrix normal_matrix(Index rows, Index cols, double stddev = 1.0) {
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = stddev * normal();
    return m;
  }

  /// Independent child stream keyed by `stream`.
  Rng fork(std::uint64_t stream) const {
    std::uint64_t s = seed_ ^ (0xD1B54A32D192ED03ULL * (stream + 1));
    return Rng(splitmix64(s));
  }

  /// `k` distinct indices from [0, n) in random order (partial Fisher-Yates).
  std::vector<Index> sample_without_replacement(Index n, Index k) {
    std::vector<Index> perm(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    for (Index i = 0; i < k; ++i) {
      const auto j = i + static_cast<Index>(below(static_cast<std::uint64_t>(n - i)));
      std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    perm.resize(static_cast<std::size_t>(k));
    return perm;
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Factorizations
// ---------------------------------------------------------------------------

struct EigResult {
  Matrix eigenvectors;  // columns orthonormal
  Vector eigenvalues;   // non-increasing
};

struct SvdResult {
  Matrix U;
  Vector s;  // non-increasing, >= 0
  Matrix V;
};

namespace detail {

/// Flip `v` so that its largest-magnitude entry (first one on ties) is positive.
/// Returns true if a flip happened.
inline bool canonical_sign(Eigen::Ref<Vector> v) {
  if (v.size() == 0) return false;
  Index best = 0;
  double best_abs = std::abs(v(0));
  for (Index i = 1; i < v.size(); ++i) {
    const double a = std::abs(v(i));
    if (a > best_abs * (1.0 + 1e-12)) {
      best = i;
      best_abs = a;
    }
  }
  if (v(best) < 0.0) {
    v = -v;
    return true;
  }
  return false;
}

}  // namespace detail

/// Eigen-decomposition of a symmetric matrix, eigenvalues sorted descending
/// and each eigenvector sign-normalized (largest-magnitude entry positive).
inline EigResult sym_eig(const Matrix& S) {
  if (S.rows() != S.cols()) throw ConfigError("sym_eig: matrix is not square");
  if (!S.allFinite()) throw NumericalError("sym_eig: non-finite entries");
  const double scale = std::max(1.0, S.cwiseAbs().maxCoeff());
  if ((S - S.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw ConfigError("sym_eig: matrix is not symmetric");

  const Index n = S.rows();
  EigResult out;
  if (n == 0) return out;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(0.5 * (S + S.transpose()));
  if (solver.info() != Eigen::Success) throw NumericalError("sym_eig: solver failed");
  out.eigenvectors = solver.eigenvectors().rowwise().reverse();
  out.eigenvalues = solver.eigenvalues().reverse();
  for (Index j = 0; j < n; ++j) detail::canonical_sign(out.eigenvectors.col(j));
  return out;
}

/// Thin SVD, M = U diag(s) V^T. Each singular pair is sign-normalized on U.
inline SvdResult svd(const Matrix& M) {
  if (!M.allFinite()) throw NumericalError("svd: non-finite entries");
  SvdResult out;
  if (M.size() == 0) {
    out.U = Matrix(M.rows(), 0);
    out.V = Matrix(M.cols(), 0);
    return out;
  }
  Eigen::BDCSVD<Matrix> solver(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  out.U = solver.matrixU();
  out.s = solver.singularValues();
  out.V = solver.matrixV();
  for (Index j = 0; j < out.U.cols(); ++j) {
    if (detail::canonical_sign(out.U.col(j))) out.V.col(j) = -out.V.col(j);
  }
  return out;
}

/// Moore-Penrose pseudo-inverse via SVD.
inline Matrix pseudo_inverse(const Matrix& M, double rcond = 1e-12) {
  const SvdResult f = svd(M);
  if (f.s.size() == 0) return Matrix::Zero(M.cols(), M.rows());
  const double cutoff = rcond * f.s(0);
  Vector inv_s = f.s;
  for (Index i = 0; i < inv_s.size(); ++i) inv_s(i) = f.s(i) > cutoff ? 1.0 / f.s(i) : 0.0;
  return f.V * inv_s.asDiagonal() * f.U.transpose();
}

/// Largest eigenvalue of a symmetric PSD operator by power iteration.
inline double power_iteration_lambda_max(const std::function<Vector(const Vector&)>& apply,
                                         Index n, Rng& rng, int max_iter = 500,
                                         double tol = 1e-10) {
  if (n == 0) return 0.0;
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = rng.normal();
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Vector w = apply(v);
    const double next = v.dot(w);
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    if (std::abs(next - lambda) <= tol * std::max(1.0, std::abs(next))) return next;
    lambda = next;
  }
  return lambda;
}

/// Sample covariance of the columns of F (each column one sample), with
/// (N-1) normalization. Columns are assumed centered unless `center` is set.
inline Matrix sample_covariance(const Matrix& F, bool center = false) {
  const Index N = F.cols();
  if (N < 2) throw DataError("sample_covariance: need at least two samples");
  if (center) {
    const Matrix X = F.colwise() - F.rowwise().mean();
    return (X * X.transpose()) / static_cast<double>(N - 1);
  }
  return (F * F.transpose()) / static_cast<double>(N - 1);
}

// ---------------------------------------------------------------------------
// Gaussian functions and quadrature
// ---------------------------------------------------------------------------

/// Gaussian tail probability P[Z > u] for Z ~ N(0,1).
inline double q_function(double u) { return 0.5 * std::erfc(u / std::numbers::sqrt2); }

inline double normal_pdf(double u) {
  return std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi);
}

/// P[a < Z < b] for Z ~ N(0,1), evaluated on whichever tail keeps precision.
inline double normal_interval(double a, double b) {
  if (!(a < b)) return 0.0;
  if (a >= 0.0) return q_function(a) - q_function(b);
  if (b <= 0.0) return q_function(-b) - q_function(-a);
  return 1.0 - q_function(b) - q_function(-a);
}

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;
  int evaluations = 0;
};

namespace detail {

// 7-point Gauss / 15-point Kronrod nodes and weights on [-1, 1].
inline constexpr std::array<double, 8> kKronrodNodes = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> kKronrodWeights = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr std::array<double, 4> kGaussWeights = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

template <class F>
QuadratureResult gauss_kronrod_15(const F& f, double a, double b) {
  const double center = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const double fc = f(center);
  double kronrod = fc * kKronrodWeights[7];
  double gauss = fc * kGaussWeights[3];
  for (int i = 0; i < 7; ++i) {
    const double dx = half * kKronrodNodes[static_cast<std::size_t>(i)];
    const double s = f(center - dx) + f(center + dx);
    kronrod += kKronrodWeights[static_cast<std::size_t>(i)] * s;
    if (i % 2 == 1) gauss += kGaussWeights[static_cast<std::size_t>(i / 2)] * s;
  }
  return {kronrod * half, std::abs((kronrod - gauss) * half), 15};
}

}  // namespace detail

/// Globally adaptive Gauss-Kronrod (G7K15) quadrature on a finite interval.
template <class F>
QuadratureResult integrate_adaptive(const F& f, double a, double b, double abs_tol = 1e-13,
                                    double rel_tol = 1e-12, int max_intervals = 2000) {
  struct Piece {
    double a, b;
    QuadratureResult r;
  };
  if (a == b) return {};
  if (!std::isfinite(a) || !std::isfinite(b))
    throw ConfigError("integrate_adaptive: bounds must be finite");
  std::vector<Piece> pieces;
  pieces.push_back({a, b, detail::gauss_kronrod_15(f, a, b)});
  QuadratureResult total = pieces.front().r;
  while (static_cast<int>(pieces.size()) < max_intervals) {
    total.value = 0.0;
    total.error = 0.0;
    std::size_t worst = 0;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      total.value += pieces[i].r.value;
      total.error += pieces[i].r.error;
      if (pieces[i].r.error > pieces[worst].r.error) worst = i;
    }
    if (total.error <= std::max(abs_tol, rel_tol * std::abs(total.value))) break;
    const Piece p = pieces[worst];
    const double mid = 0.5 * (p.a + p.b);
    pieces[worst] = {p.a, mid, detail::gauss_kronrod_15(f, p.a, mid)};
    pieces.push_back({mid, p.b, detail::gauss_kronrod_15(f, mid, p.b)});
    total.evaluations += 30;
  }
  total.value = 0.0;
  total.error = 0.0;
  for (const auto& p : pieces) {
    total.value += p.r.value;
    total.error += p.r.error;
  }
  return total;
}

/// Probability that a zero-mean, unit-variance bivariate Gaussian with
/// correlation `rho` falls in [a1,b1] x [a2,b2]. Bounds may be infinite.
/// The inner conditional integral is closed form; the outer one is
/// integrated adaptively.
inline double bivariate_gaussian_rect(double rho, double a1, double b1, double a2, double b2) {
  if (!(std::abs(rho) < 1.0)) throw ConfigError("bivariate_gaussian_rect: |rho| must be < 1");
  if (std::isnan(a1) || std::isnan(b1) || std::isnan(a2) || std::isnan(b2))
    throw ConfigError("bivariate_gaussian_rect: NaN bound");
  // Beyond |x| = 38.5 the standard normal density underflows double precision.
  constexpr double kCut = 38.5;
  const double lo = std::max(a1, -kCut);
  const double hi = std::min(b1, kCut);
  if (!(lo < hi) || !(a2 < b2)) return 0.0;
  const double s = std::sqrt(1.0 - rho * rho);
  auto inner = [&](double x) {
    const double lo2 = std::isinf(a2) ? a2 : (a2 - rho * x) / s;
    const double hi2 = std::isinf(b2) ? b2 : (b2 - rho * x) / s;
    return normal_pdf(x) * normal_interval(lo2, hi2);
  };
  // Split at the origin and at the conditional-mean crossings so each piece
  // is smooth on a scale the rule can resolve quickly.
  std::vector<double> cuts = {lo, hi};
  auto add_cut = [&](double c) {
    if (std::isfinite(c) && c > lo && c < hi) cuts.push_back(c);
  };
  add_cut(0.0);
  if (rho != 0.0) {
    add_cut(a2 / rho);
    add_cut(b2 / rho);
  }
  std::sort(cuts.begin(), cuts.end());
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    if (cuts[i + 1] > cuts[i]) total += integrate_adaptive(inner, cuts[i], cuts[i + 1], 1e-14).value;
  }
  return std::clamp(total, 0.0, 1.0);
}

}  // namespace stc
