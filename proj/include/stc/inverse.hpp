#pragma once

// Gradient-descent recovery of degraded observations with a black-box
// compress/decompress function as prior, plus a Sobolev smoothness term.

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "stc/datasets.hpp"
#include "stc/error.hpp"
#include "stc/numerics.hpp"
#include "stc/sparse_ternary.hpp"
#include "stc/vq.hpp"

namespace stc {

/// h_R: compress then decompress at a fixed rate.
struct Compressor {
  std::function<Vector(const Vector&)> fn;
  double rate = 0.0;
  std::string label;

  Vector operator()(const Vector& f) const {
    Vector out = fn(f);
    if (out.size() != f.size()) throw ConfigError("compressor: output dimension != input dimension");
    return out;
  }
};

/// ML-STC compressor using the first `layers` layers (all when negative),
/// optionally wrapped in a whitener.
inline Compressor make_compressor(const MlStcModel& model, const Whitener* whitener = nullptr,
                                  Index layers = -1) {
  const Index L = layers < 0 ? model.num_layers() : layers;
  if (L > model.num_layers()) throw ConfigError("make_compressor: layer count exceeds model");
  Compressor c;
  c.rate = model.cumulative_rate(L);
  c.label = "mlstc";
  c.fn = [&model, whitener, L](const Vector& f) -> Vector {
    const Vector z = whitener ? whitener->apply(f) : f;
    const Matrix zhat = mlstc_decode(mlstc_encode(Matrix(z), model, L), model, L);
    return whitener ? whitener->invert(Vector(zhat.col(0))) : Vector(zhat.col(0));
  };
  return c;
}

inline Compressor make_compressor(const ResidualQuantizer& q, const Whitener* whitener = nullptr,
                                  Index layers = -1) {
  const Index L = layers < 0 ? q.num_layers() : layers;
  if (L > q.num_layers()) throw ConfigError("make_compressor: layer count exceeds model");
  Compressor c;
  for (Index l = 0; l < L; ++l) c.rate += q.layer_rate(l);
  c.label = "rq";
  c.fn = [&q, whitener, L](const Vector& f) -> Vector {
    const Vector z = whitener ? whitener->apply(f) : f;
    const Vector zhat = rq_decode(rq_encode(Matrix(z), q), q, L).col(0);
    return whitener ? whitener->invert(zhat) : zhat;
  };
  return c;
}

/// 5-point Laplacian of an h x w row-major grid, boundary pixels mirrored
/// (zero normal derivative).
inline Vector laplacian(const Vector& f, Index height, Index width) {
  if (height < 1 || width < 1 || f.size() != height * width) throw ConfigError("laplacian: shape mismatch");
  Vector out(f.size());
  auto at = [&](Index r, Index c) {
    r = std::clamp<Index>(r, 0, height - 1);
    c = std::clamp<Index>(c, 0, width - 1);
    return f(r * width + c);
  };
  for (Index r = 0; r < height; ++r)
    for (Index c = 0; c < width; ++c)
      out(r * width + c) = at(r - 1, c) + at(r + 1, c) + at(r, c - 1) + at(r, c + 1) - 4.0 * at(r, c);
  return out;
}

enum class InitKind : std::uint8_t { pseudo_inverse, adjoint, custom };

struct InverseProblem {
  Matrix T;                 // l x n
  Vector q;                 // l
  double sigma_p2 = 0.0;    // observation noise variance (metadata)
  double mu = 0.0;          // compressibility prior weight
  double mu_sobolev = 0.0;  // Sobolev prior weight (grid problems only)
  Index height = 0;         // grid shape for the Laplacian
  Index width = 0;
  double tau = 0.0;         // step size; 0 selects the default
  int max_iter = 500;
  double tol = 1e-6;
  InitKind init = InitKind::pseudo_inverse;
  Vector custom_init;
};

struct SolveTrace {
  std::vector<double> objective;  // at each iterate, starting with the initial point
  std::vector<double> mse;        // against the reference when one is given
  double tau = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct SolveResult {
  Vector f;
  SolveTrace trace;
};

/// 0.9 / (lambda_max(T'T) + mu + 8 mu'), the largest eigenvalue by power iteration.
inline double default_step(const InverseProblem& p, Rng& rng) {
  const Matrix TtT = p.T.transpose() * p.T;
  const double lmax = power_iteration_lambda_max([&](const Vector& v) -> Vector { return TtT * v; },
                                                 p.T.cols(), rng, 1000, 1e-12);
  const double L = lmax + p.mu + 8.0 * p.mu_sobolev;
  if (!(L > 0.0)) throw NumericalError("solve: zero curvature; cannot choose a step size");
  return 0.9 / L;
}

/// Iterates f <- f - tau [T'(T f - q) + mu (f - h(f)) - mu' Laplacian(f)],
/// treating h as locally constant. The objective traced is
/// 1/2 ||T f - q||^2 + mu/2 ||f - h(f)||^2 + mu'/2 f'(-Laplacian) f.
inline SolveResult solve(const InverseProblem& p, const Compressor& h, const Vector* reference = nullptr,
                         std::uint64_t seed = 0) {
  const Index n = p.T.cols();
  if (p.q.size() != p.T.rows()) throw ConfigError("solve: q length != rows of T");
  if (!(p.mu >= 0.0) || !(p.mu_sobolev >= 0.0) || !(p.tau >= 0.0))
    throw ConfigError("solve: mu, mu' and tau must be >= 0");
  if (p.max_iter < 0) throw ConfigError("solve: max_iter must be >= 0");
  if (p.mu_sobolev > 0.0 && p.height * p.width != n) throw ConfigError("solve: Sobolev prior needs a grid shape");
  if (p.mu > 0.0 && !h.fn) throw ConfigError("solve: compressibility prior without a compressor");
  if (reference && reference->size() != n) throw ConfigError("solve: reference dimension mismatch");

  Vector f;
  switch (p.init) {
    case InitKind::pseudo_inverse: f = pseudo_inverse(p.T) * p.q; break;
    case InitKind::adjoint: f = p.T.transpose() * p.q; break;
    case InitKind::custom:
      if (p.custom_init.size() != n) throw ConfigError("solve: custom init dimension mismatch");
      f = p.custom_init;
      break;
  }
  Rng rng(seed);
  SolveResult out;
  out.trace.tau = p.tau > 0.0 ? p.tau : default_step(p, rng);
  const double tau = out.trace.tau;

  auto evaluate = [&](const Vector& x, Vector& grad) {
    const Vector r = p.T * x - p.q;
    double obj = 0.5 * r.squaredNorm();
    grad = p.T.transpose() * r;
    if (p.mu > 0.0) {
      const Vector d = x - h(x);
      obj += 0.5 * p.mu * d.squaredNorm();
      grad += p.mu * d;
    }
    if (p.mu_sobolev > 0.0) {
      const Vector nl = -laplacian(x, p.height, p.width);
      obj += 0.5 * p.mu_sobolev * x.dot(nl);
      grad += p.mu_sobolev * nl;
    }
    return obj;
  };
  auto record = [&](double obj, const Vector& x) {
    out.trace.objective.push_back(obj);
    if (reference) out.trace.mse.push_back((x - *reference).squaredNorm() / static_cast<double>(n));
  };

  Vector grad;
  double obj = evaluate(f, grad);
  const double start = obj;
  record(obj, f);
  for (int it = 0; it < p.max_iter; ++it) {
    f -= tau * grad;
    const double next = evaluate(f, grad);
    if (!std::isfinite(next) || next > 10.0 * std::max(start, 1e-300))
      throw NumericalError("solve: divergence (objective " + std::to_string(next) + " vs start " +
                           std::to_string(start) + "); reduce tau or mu");
    record(next, f);
    out.trace.iterations = it + 1;
    const double change = std::abs(obj - next) / std::max(std::abs(obj), 1e-300);
    obj = next;
    if (change < p.tol) {
      out.trace.converged = true;
      break;
    }
  }
  out.f = std::move(f);
  return out;
}

/// T with i.i.d. N(0, 1/l) entries and q = T f_true + N(0, sigma_p2) noise.
inline InverseProblem make_cs_problem(Index n, Index l, double sigma_p2, Rng& rng, const Vector& f_true) {
  if (l < 1 || l > n) throw ConfigError("make_cs_problem: need 1 <= l <= n");
  if (f_true.size() != n) throw ConfigError("make_cs_problem: f_true dimension mismatch");
  if (!(sigma_p2 >= 0.0)) throw ConfigError("make_cs_problem: sigma_P^2 must be >= 0");
  InverseProblem p;
  p.T = rng.normal_matrix(l, n, 1.0 / std::sqrt(static_cast<double>(l)));
  p.q = p.T * f_true;
  for (Index i = 0; i < l; ++i) p.q(i) += std::sqrt(sigma_p2) * rng.normal();
  p.sigma_p2 = sigma_p2;
  return p;
}

struct DenoiseCurve {
  std::vector<double> mse;   // per cumulative layer count 1..L
  std::vector<double> psnr;  // 10 log10(peak^2 / mse)
};

/// Reconstruct noisy inputs from 1..L layers and score against the clean set.
inline DenoiseCurve denoise_by_reconstruction(const Matrix& noisy, const Matrix& clean, Index L,
                                              const std::function<Matrix(const Matrix&, Index)>& reconstruct,
                                              double peak = 0.0) {
  if (noisy.rows() != clean.rows() || noisy.cols() != clean.cols())
    throw ConfigError("denoise: noisy / clean shape mismatch");
  const double pk = peak > 0.0 ? peak : clean.cwiseAbs().maxCoeff();
  DenoiseCurve c;
  for (Index l = 1; l <= L; ++l) {
    const Matrix rec = reconstruct(noisy, l);
    if (rec.rows() != clean.rows() || rec.cols() != clean.cols()) throw ConfigError("denoise: dim mismatch");
    const double mse = (rec - clean).squaredNorm() / static_cast<double>(clean.size());
    c.mse.push_back(mse);
    c.psnr.push_back(10.0 * std::log10(pk * pk / std::max(mse, 1e-300)));
  }
  return c;
}

inline DenoiseCurve denoise_by_reconstruction(const Matrix& noisy, const Matrix& clean, const MlStcModel& model,
                                              double peak = 0.0) {
  if (noisy.rows() != model.dim()) throw ConfigError("denoise: dim mismatch");
  const std::vector<TernaryCodeSet> codes = mlstc_encode(noisy, model);
  return denoise_by_reconstruction(
      noisy, clean, model.num_layers(), [&](const Matrix&, Index l) { return mlstc_decode(codes, model, l); }, peak);
}

inline DenoiseCurve denoise_by_reconstruction(const Matrix& noisy, const Matrix& clean, const ResidualQuantizer& q,
                                              double peak = 0.0) {
  if (noisy.rows() != q.dim()) throw ConfigError("denoise: dim mismatch");
  const std::vector<AssignmentSet> codes = rq_encode(noisy, q);
  return denoise_by_reconstruction(
      noisy, clean, q.num_layers(), [&](const Matrix&, Index l) { return rq_decode(codes, q, l); }, peak);
}

}  // namespace stc
