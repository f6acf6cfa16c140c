#pragma once

// Reverse water-filling over independent Gaussian dimensions.

#include <algorithm>
#include <cmath>
#include <vector>

#include "stc/error.hpp"
#include "stc/numerics.hpp"

namespace stc {

struct AllocationResult {
  double water_level = 0.0;           // gamma*
  Vector target_variances;            // sigma_C^2 = max(0, sigma^2 - gamma*)
  std::vector<Index> active_set;      // ascending dimension indices
  Vector per_dim_rate;                // max(0, 1/2 log2(sigma^2 / gamma*))
  double achieved_rate = 0.0;         // mean of per_dim_rate
  bool saturated = false;             // every positive-variance dimension active

  bool is_active(Index j) const {
    return std::binary_search(active_set.begin(), active_set.end(), j);
  }
};

namespace detail {

inline double water_rate(const Vector& v, double gamma) {
  double r = 0.0;
  for (Index j = 0; j < v.size(); ++j)
    if (v(j) > gamma) r += 0.5 * std::log2(v(j) / gamma);
  return r / static_cast<double>(v.size());
}

}  // namespace detail

/// Rate allocation for a budget of R bits/dim. gamma* is bracketed by
/// bisection on the (non-increasing) rate curve and then snapped to the
/// closed form on the bracketed active set. A dimension is active when
/// sigma_j^2 > gamma_ratio * gamma*.
inline AllocationResult rev_wfiller(const Vector& variances, double R, double gamma_ratio = 1.0) {
  const Index n = variances.size();
  if (n == 0) throw ConfigError("rev_wfiller: empty variance vector");
  if (!(R >= 0.0) || !std::isfinite(R)) throw ConfigError("rev_wfiller: R must be finite and >= 0");
  if (!(gamma_ratio >= 0.0)) throw ConfigError("rev_wfiller: gamma' must be >= 0");
  if (!variances.allFinite() || (variances.array() < 0.0).any())
    throw ConfigError("rev_wfiller: variances must be finite and >= 0");
  const double vmax = variances.maxCoeff();
  if (vmax == 0.0 && R > 0.0) throw ConfigError("rev_wfiller: all-zero variances with R > 0");

  AllocationResult out;
  double gamma = vmax;
  if (R > 0.0) {
    double vmin = vmax;
    for (Index j = 0; j < n; ++j)
      if (variances(j) > 0.0) vmin = std::min(vmin, variances(j));
    double lo = vmin * std::exp2(-2.0 * R * static_cast<double>(n));
    double hi = vmax;
    // rate(lo) >= R >= rate(hi) = 0
    for (int it = 0; it < 400 && (hi - lo) > 1e-10 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (detail::water_rate(variances, mid) >= R) lo = mid; else hi = mid;
    }
    // Closed form on the active set found by the bracket (lower end so the
    // rate is met or exceeded).
    double log_sum = 0.0;
    Index k = 0;
    for (Index j = 0; j < n; ++j)
      if (variances(j) > lo) {
        log_sum += std::log2(variances(j));
        ++k;
      }
    gamma = lo;
    if (k > 0) {
      const double exact = std::exp2((log_sum - 2.0 * static_cast<double>(n) * R) /
                                     static_cast<double>(k));
      if (std::abs(exact - lo) <= 1e-6 * hi) gamma = exact;
    }
  }

  out.water_level = gamma;
  out.target_variances = (variances.array() - gamma).cwiseMax(0.0).matrix();
  out.per_dim_rate = Vector::Zero(n);
  Index positive = 0;
  for (Index j = 0; j < n; ++j) {
    if (variances(j) > 0.0) ++positive;
    if (variances(j) > gamma) out.per_dim_rate(j) = 0.5 * std::log2(variances(j) / gamma);
    if (variances(j) > gamma_ratio * gamma && variances(j) > 0.0) out.active_set.push_back(j);
  }
  out.achieved_rate = out.per_dim_rate.mean();
  out.saturated = positive > 0 && static_cast<Index>(out.active_set.size()) == positive && R > 0.0;
  return out;
}

}  // namespace stc
