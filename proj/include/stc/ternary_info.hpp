#pragma once

// Entropies, transition matrices and mutual information of ternary codes of
// a Gaussian signal observed through additive Gaussian noise.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "stc/error.hpp"
#include "stc/numerics.hpp"
#include "stc/sparse_ternary.hpp"

namespace stc {

/// Symbols are ordered (+1, 0, -1) in every row and column.
struct TernaryChannel {
  double sigma2 = 1.0;
  double sigma_p2 = 0.0;
  double lambda_x = 0.0;
  double lambda_y = 0.0;
  Eigen::Matrix3d P = Eigen::Matrix3d::Identity();  // P(r, c) = p(y = c | x = r)
  Eigen::Matrix3d joint = Eigen::Matrix3d::Zero();   // p(x, y)
  Eigen::Vector3d px = Eigen::Vector3d::Zero();
  Eigen::Vector3d py = Eigen::Vector3d::Zero();
  double alpha_x = 0.0;
  double alpha_y = 0.0;

  double rho() const { return std::sqrt(sigma2 / (sigma2 + sigma_p2)); }
};

namespace detail {

inline constexpr double kChannelFloor = 1e-15;

inline double xlog2(double p) { return p > kChannelFloor ? -p * std::log2(p) : 0.0; }

/// Standardized interval of symbol s (0: +1, 1: 0, 2: -1) for threshold t.
inline std::pair<double, double> symbol_interval(int s, double t) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  switch (s) {
    case 0: return {t, inf};
    case 1: return {-t, t};
    default: return {-inf, -t};
  }
}

}  // namespace detail

/// Joint and conditional symbol probabilities of X = phi_{lambda_x}(f) and
/// Y = phi_{lambda_y}(f + p) with f ~ N(0, sigma2), p ~ N(0, sigma_p2).
inline TernaryChannel build_channel(double sigma2, double sigma_p2, double lambda_x, double lambda_y) {
  if (!(sigma2 > 0.0)) throw ConfigError("build_channel: sigma^2 must be > 0");
  if (!(sigma_p2 >= 0.0)) throw ConfigError("build_channel: sigma_P^2 must be >= 0");
  check_lambda(lambda_x);
  check_lambda(lambda_y);
  TernaryChannel ch;
  ch.sigma2 = sigma2;
  ch.sigma_p2 = sigma_p2;
  ch.lambda_x = lambda_x;
  ch.lambda_y = lambda_y;
  const double a = lambda_x / std::sqrt(sigma2);
  const double b = lambda_y / std::sqrt(sigma2 + sigma_p2);
  const double rho = ch.rho();
  for (int r = 0; r < 3; ++r) {
    const auto [x0, x1] = detail::symbol_interval(r, a);
    for (int c = 0; c < 3; ++c) {
      const auto [y0, y1] = detail::symbol_interval(c, b);
      double mass;
      if (rho >= 1.0) {
        const double lo = std::max(x0, y0), hi = std::min(x1, y1);
        mass = hi > lo ? normal_interval(lo, hi) : 0.0;
      } else {
        mass = bivariate_gaussian_rect(rho, x0, x1, y0, y1);
      }
      ch.joint(r, c) = mass < detail::kChannelFloor ? 0.0 : mass;
    }
  }
  for (int r = 0; r < 3; ++r) {
    const auto [x0, x1] = detail::symbol_interval(r, a);
    ch.px(r) = normal_interval(x0, x1);
    const auto [y0, y1] = detail::symbol_interval(r, b);
    ch.py(r) = normal_interval(y0, y1);
  }
  for (int r = 0; r < 3; ++r) {
    const double row = ch.joint.row(r).sum();
    if (row <= detail::kChannelFloor) {
      ch.P.row(r) << 0.0, 0.0, 0.0;
      ch.P(r, r) = 1.0;  // never-occupied input symbol
    } else {
      ch.P.row(r) = ch.joint.row(r) / row;
    }
  }
  ch.alpha_x = ch.px(0);
  ch.alpha_y = ch.py(0);
  return ch;
}

inline double entropy_x(const TernaryChannel& ch) {
  return detail::xlog2(ch.px(0)) + detail::xlog2(ch.px(1)) + detail::xlog2(ch.px(2));
}

inline double entropy_y(const TernaryChannel& ch) {
  return detail::xlog2(ch.py(0)) + detail::xlog2(ch.py(1)) + detail::xlog2(ch.py(2));
}

inline double joint_entropy(const TernaryChannel& ch) {
  double h = 0.0;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) h += detail::xlog2(ch.joint(r, c));
  return h;
}

/// I(X;Y) = H(X) + H(Y) - H(X,Y), clamped at 0.
inline double mutual_information(const TernaryChannel& ch) {
  return std::max(0.0, entropy_x(ch) + entropy_y(ch) - joint_entropy(ch));
}

struct BinaryChannelInfo {
  double pb = 0.0;  // bit-flip probability
  double mutual_information = 0.0;
  double entropy = 1.0;
};

inline double binary_entropy(double p) { return detail::xlog2(p) + detail::xlog2(1.0 - p); }

/// Sign codes of f and f + p: a binary symmetric channel with
/// P_b = arccos(rho) / pi.
inline BinaryChannelInfo binary_bsc(double sigma2, double sigma_p2) {
  if (!(sigma2 > 0.0)) throw ConfigError("binary_bsc: sigma^2 must be > 0");
  if (!(sigma_p2 >= 0.0)) throw ConfigError("binary_bsc: sigma_P^2 must be >= 0");
  BinaryChannelInfo out;
  const double rho = std::min(1.0, std::sqrt(sigma2 / (sigma2 + sigma_p2)));
  out.pb = std::acos(rho) / std::numbers::pi;
  out.mutual_information = 1.0 - binary_entropy(out.pb);
  return out;
}

/// I(X;Y) / H(X).
inline double coding_gain(const TernaryChannel& ch) {
  const double h = entropy_x(ch);
  if (h <= 0.0) throw ConfigError("coding_gain: H(X) = 0 (all-zero code)");
  return std::min(1.0, mutual_information(ch) / h);
}

/// Default grid: `points` values evenly spaced over [0, 4 sqrt(sigma2 + sigma_p2)].
inline std::vector<double> default_lambda_y_grid(double sigma2, double sigma_p2, int points = 101) {
  std::vector<double> g(static_cast<std::size_t>(points));
  const double hi = 4.0 * std::sqrt(sigma2 + sigma_p2);
  for (int i = 0; i < points; ++i) g[static_cast<std::size_t>(i)] = hi * i / std::max(points - 1, 1);
  return g;
}

/// lambda_Y maximizing I(X;Y) over the grid (first maximizer on ties).
inline double optimize_lambda_y(double sigma2, double sigma_p2, double lambda_x,
                                const std::vector<double>& grid) {
  if (grid.empty()) throw ConfigError("optimize_lambda_y: empty grid");
  double best = grid.front();
  double best_i = -1.0;
  for (double ly : grid) {
    const double i = mutual_information(build_channel(sigma2, sigma_p2, lambda_x, ly));
    if (i > best_i + 1e-15) {
      best_i = i;
      best = ly;
    }
  }
  return best;
}

inline double optimize_lambda_y(double sigma2, double sigma_p2, double lambda_x) {
  return optimize_lambda_y(sigma2, sigma_p2, lambda_x, default_lambda_y_grid(sigma2, sigma_p2));
}

/// lambda_x / sigma giving a ternary code of entropy h bits (0 < h <= log2 3),
/// by bisection on the standardized threshold.
inline double threshold_for_entropy(double h) {
  if (!(h > 0.0 && h <= std::log2(3.0) + 1e-12)) throw ConfigError("threshold_for_entropy: h out of range");
  // Entropy peaks where alpha = 1/3; search on the branch beyond the peak.
  double peak_lo = 0.0, peak_hi = 5.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (peak_lo + peak_hi);
    if (q_function(mid) > 1.0 / 3.0) peak_lo = mid; else peak_hi = mid;
  }
  double lo = peak_hi, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (ternary_entropy(q_function(mid)) > h) lo = mid; else hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace stc
