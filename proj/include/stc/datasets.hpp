#pragma once

// Synthetic Gaussian sources, fvecs/bvecs I/O, PCA and block-DCT sub-band
// whitening, and the Gaussian rate-distortion lower bound.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "stc/error.hpp"
#include "stc/numerics.hpp"

namespace stc {

enum class SetTag : std::uint8_t { train, test, query, index };

/// n x N matrix of samples, one sample per column.
struct VectorSet {
  Matrix data;
  SetTag tag = SetTag::train;

  Index dim() const { return data.rows(); }
  Index size() const { return data.cols(); }
};

enum class SourceKind : std::uint8_t { iid_gaussian, var_decay, ar1 };

struct SourceSpec {
  SourceKind kind = SourceKind::iid_gaussian;
  Index n = 0;
  double variance = 1.0;
  double rho = 0.0;         // ar1 only
  double decay_rate = 0.01; // var_decay only: sigma_j^2 = variance * exp(-decay_rate * j), j = 1..n
};

inline std::string to_string(SourceKind k) {
  switch (k) {
    case SourceKind::iid_gaussian: return "iid_gaussian";
    case SourceKind::var_decay: return "var_decay";
    case SourceKind::ar1: return "ar1";
  }
  return "unknown";
}

inline SourceKind source_kind_from_string(const std::string& s) {
  if (s == "iid_gaussian" || s == "iid") return SourceKind::iid_gaussian;
  if (s == "var_decay") return SourceKind::var_decay;
  if (s == "ar1") return SourceKind::ar1;
  throw ConfigError("unknown source kind '" + s + "'");
}

/// Per-dimension variances of a source (diagonal of its covariance).
inline Vector source_variances(const SourceSpec& spec) {
  Vector v(spec.n);
  for (Index j = 0; j < spec.n; ++j) {
    v(j) = spec.kind == SourceKind::var_decay
               ? spec.variance * std::exp(-spec.decay_rate * static_cast<double>(j + 1))
               : spec.variance;
  }
  return v;
}

/// Exact covariance of a source.
inline Matrix source_covariance(const SourceSpec& spec) {
  if (spec.kind != SourceKind::ar1) return source_variances(spec).asDiagonal();
  Matrix c(spec.n, spec.n);
  for (Index i = 0; i < spec.n; ++i)
    for (Index j = 0; j < spec.n; ++j)
      c(i, j) = spec.variance * std::pow(spec.rho, static_cast<double>(std::abs(i - j)));
  return c;
}

/// N i.i.d. samples of the source. AR(1) uses the stationary recursive filter
/// f_j = rho f_{j-1} + sqrt(1 - rho^2) w_j.
inline VectorSet generate(const SourceSpec& spec, Index N, Rng& rng, SetTag tag = SetTag::train) {
  if (N < 1) throw ConfigError("generate: N must be >= 1");
  if (spec.n < 1) throw ConfigError("generate: n must be >= 1");
  if (!(spec.variance > 0.0)) throw ConfigError("generate: variance must be > 0");
  if (spec.kind == SourceKind::ar1 && !(spec.rho >= 0.0 && spec.rho < 1.0))
    throw ConfigError("generate: rho must lie in [0, 1)");
  if (spec.kind == SourceKind::var_decay && !(spec.decay_rate > 0.0))
    throw ConfigError("generate: decay_rate must be > 0");

  VectorSet out;
  out.tag = tag;
  out.data.resize(spec.n, N);
  const double sigma = std::sqrt(spec.variance);
  if (spec.kind == SourceKind::ar1) {
    const double innov = std::sqrt(1.0 - spec.rho * spec.rho);
    for (Index i = 0; i < N; ++i) {
      double prev = rng.normal();
      out.data(0, i) = sigma * prev;
      for (Index j = 1; j < spec.n; ++j) {
        prev = spec.rho * prev + innov * rng.normal();
        out.data(j, i) = sigma * prev;
      }
    }
  } else {
    const Vector stddev = source_variances(spec).cwiseSqrt();
    for (Index i = 0; i < N; ++i)
      for (Index j = 0; j < spec.n; ++j) out.data(j, i) = stddev(j) * rng.normal();
  }
  return out;
}

// ---------------------------------------------------------------------------
// fvecs / bvecs
// ---------------------------------------------------------------------------

enum class XvecsKind : std::uint8_t { fvecs, bvecs };

namespace detail {

inline std::uint32_t read_le_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void write_le_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

/// Parse an fvecs/bvecs byte buffer: per record a 4-byte little-endian
/// dimension followed by dim floats (fvecs) or dim unsigned bytes (bvecs).
inline VectorSet parse_xvecs(const std::vector<unsigned char>& bytes, XvecsKind kind) {
  const std::size_t elem = kind == XvecsKind::fvecs ? 4 : 1;
  std::vector<std::vector<double>> records;
  std::size_t pos = 0;
  std::uint32_t dim = 0;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 4) throw DataError("xvecs: truncated record header");
    const std::uint32_t d = detail::read_le_u32(bytes.data() + pos);
    pos += 4;
    if (records.empty()) {
      dim = d;
    } else if (d != dim) {
      throw DataError("xvecs: inconsistent dimension " + std::to_string(d) + " vs " +
                      std::to_string(dim));
    }
    if (bytes.size() - pos < static_cast<std::size_t>(d) * elem)
      throw DataError("xvecs: truncated record payload");
    std::vector<double> rec(d);
    for (std::uint32_t j = 0; j < d; ++j) {
      if (kind == XvecsKind::fvecs) {
        const std::uint32_t bits = detail::read_le_u32(bytes.data() + pos);
        rec[j] = static_cast<double>(std::bit_cast<float>(bits));
        pos += 4;
      } else {
        rec[j] = static_cast<double>(bytes[pos]);
        pos += 1;
      }
    }
    records.push_back(std::move(rec));
  }
  VectorSet out;
  out.data.resize(static_cast<Index>(dim), static_cast<Index>(records.size()));
  for (std::size_t i = 0; i < records.size(); ++i)
    for (std::uint32_t j = 0; j < dim; ++j)
      out.data(static_cast<Index>(j), static_cast<Index>(i)) = records[i][j];
  return out;
}

inline VectorSet load_xvecs(const std::string& path, XvecsKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("xvecs: cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return parse_xvecs(bytes, kind);
}

/// Write as fvecs (values narrowed to float) or bvecs (values clamped and
/// rounded to [0, 255]).
inline void save_xvecs(const std::string& path, const VectorSet& set, XvecsKind kind) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("xvecs: cannot write '" + path + "'");
  const auto dim = static_cast<std::uint32_t>(set.dim());
  for (Index i = 0; i < set.size(); ++i) {
    detail::write_le_u32(out, dim);
    for (Index j = 0; j < set.dim(); ++j) {
      if (kind == XvecsKind::fvecs) {
        detail::write_le_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(set.data(j, i))));
      } else {
        const double v = std::clamp(std::round(set.data(j, i)), 0.0, 255.0);
        const auto b = static_cast<unsigned char>(v);
        out.write(reinterpret_cast<const char*>(&b), 1);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Whitening
// ---------------------------------------------------------------------------

enum class WhitenerKind : std::uint8_t { pca = 0, dct_subband_pca = 1 };

/// Orthonormal decorrelating transform fitted on training data.
/// For `pca` there is a single band covering all n dimensions in the original
/// domain. For `dct_subband_pca` the input is an h x w image (row-major),
/// transformed by an orthonormal 2-D DCT-II, zig-zag scanned, and each
/// contiguous band of coefficients rotated by its own PCA basis.
struct Whitener {
  struct Band {
    Index start = 0;
    Index size = 0;
    Matrix basis;  // size x size, columns are eigenvectors (descending)
  };

  WhitenerKind kind = WhitenerKind::pca;
  Index n = 0;
  Index height = 0;  // dct only
  Index width = 0;   // dct only
  Vector mean;       // in the domain the band bases act on
  std::vector<Band> bands;
  Vector eigvals;    // per output dimension

  Matrix apply(const Matrix& X) const;
  Matrix invert(const Matrix& Y) const;
  Vector apply(const Vector& x) const { return apply(Matrix(x)).col(0); }
  Vector invert(const Vector& y) const { return invert(Matrix(y)).col(0); }

  bool operator==(const Whitener&) const = default;
};

inline bool operator==(const Whitener::Band& a, const Whitener::Band& b) {
  return a.start == b.start && a.size == b.size && a.basis == b.basis;
}

namespace detail {

/// Orthonormal DCT-II matrix D (k x k): y = D x.
inline Matrix dct_matrix(Index k) {
  Matrix d(k, k);
  const double kd = static_cast<double>(k);
  for (Index u = 0; u < k; ++u) {
    const double scale = u == 0 ? std::sqrt(1.0 / kd) : std::sqrt(2.0 / kd);
    for (Index x = 0; x < k; ++x)
      d(u, x) = scale * std::cos(std::numbers::pi * (2.0 * static_cast<double>(x) + 1.0) *
                                 static_cast<double>(u) / (2.0 * kd));
  }
  return d;
}

/// Zig-zag scan order of an h x w grid: entry t is the row-major index of the
/// t-th scanned coefficient.
inline std::vector<Index> zigzag_order(Index h, Index w) {
  std::vector<Index> order;
  order.reserve(static_cast<std::size_t>(h * w));
  for (Index s = 0; s <= h + w - 2; ++s) {
    if (s % 2 == 0) {
      // upward: row decreasing
      Index r = std::min(s, h - 1);
      for (; r >= 0 && s - r < w; --r) order.push_back(r * w + (s - r));
    } else {
      Index c = std::min(s, w - 1);
      for (; c >= 0 && s - c < h; --c) order.push_back((s - c) * w + c);
    }
  }
  return order;
}

/// 2-D orthonormal DCT-II of each column (an h x w row-major image), output
/// in zig-zag order. `inverse` runs the exact inverse.
inline Matrix dct2_zigzag(const Matrix& X, Index h, Index w, bool inverse) {
  const Matrix dh = dct_matrix(h);
  const Matrix dw = dct_matrix(w);
  const std::vector<Index> zz = zigzag_order(h, w);
  Matrix out(X.rows(), X.cols());
  Matrix img(h, w);
  for (Index i = 0; i < X.cols(); ++i) {
    if (!inverse) {
      for (Index r = 0; r < h; ++r)
        for (Index c = 0; c < w; ++c) img(r, c) = X(r * w + c, i);
      const Matrix coef = dh * img * dw.transpose();
      for (std::size_t t = 0; t < zz.size(); ++t) {
        const Index k = zz[t];
        out(static_cast<Index>(t), i) = coef(k / w, k % w);
      }
    } else {
      for (std::size_t t = 0; t < zz.size(); ++t) {
        const Index k = zz[t];
        img(k / w, k % w) = X(static_cast<Index>(t), i);
      }
      const Matrix pix = dh.transpose() * img * dw;
      for (Index r = 0; r < h; ++r)
        for (Index c = 0; c < w; ++c) out(r * w + c, i) = pix(r, c);
    }
  }
  return out;
}

inline void fit_band(const Matrix& centered_rows, Whitener::Band& band, Vector& eigvals) {
  const Matrix block = centered_rows.middleRows(band.start, band.size);
  const Matrix cov = (block * block.transpose()) / static_cast<double>(block.cols() - 1);
  EigResult e = sym_eig(0.5 * (cov + cov.transpose()));
  band.basis = std::move(e.eigenvectors);
  eigvals.segment(band.start, band.size) = e.eigenvalues.cwiseMax(0.0);
}

}  // namespace detail

inline Matrix Whitener::apply(const Matrix& X) const {
  if (X.rows() != n) throw ConfigError("whitener: dimension mismatch");
  Matrix Z = kind == WhitenerKind::dct_subband_pca ? detail::dct2_zigzag(X, height, width, false) : X;
  Z.colwise() -= mean;
  Matrix Y(n, X.cols());
  for (const auto& b : bands)
    Y.middleRows(b.start, b.size).noalias() = b.basis.transpose() * Z.middleRows(b.start, b.size);
  return Y;
}

inline Matrix Whitener::invert(const Matrix& Y) const {
  if (Y.rows() != n) throw ConfigError("whitener: dimension mismatch");
  Matrix Z(n, Y.cols());
  for (const auto& b : bands)
    Z.middleRows(b.start, b.size).noalias() = b.basis * Y.middleRows(b.start, b.size);
  Z.colwise() += mean;
  return kind == WhitenerKind::dct_subband_pca ? detail::dct2_zigzag(Z, height, width, true) : Z;
}

/// PCA whitener: subtract the training mean and rotate onto the eigenvectors
/// of the sample covariance (descending variance). No rescaling.
inline Whitener fit_pca_whitener(const VectorSet& F) {
  if (F.size() < 2) throw DataError("fit_pca_whitener: need N >= 2");
  if (!F.data.allFinite()) throw DataError("fit_pca_whitener: non-finite data");
  Whitener w;
  w.kind = WhitenerKind::pca;
  w.n = F.dim();
  w.mean = F.data.rowwise().mean();
  const Matrix centered = F.data.colwise() - w.mean;
  if (centered.cwiseAbs().maxCoeff() == 0.0)
    throw DataError("fit_pca_whitener: degenerate data (all samples identical)");
  w.bands.push_back({0, w.n, Matrix()});
  w.eigvals = Vector::Zero(w.n);
  detail::fit_band(centered, w.bands.front(), w.eigvals);
  return w;
}

/// Block-DCT + sub-band PCA whitener for h x w images stored row-major in
/// the columns of `images`. The n = h*w zig-zag coefficients are cut into p
/// contiguous bands of floor(n/p) coefficients; the remainder joins the last
/// (highest-frequency) band.
inline Whitener fit_dct_subband_whitener(const VectorSet& images, Index height, Index width,
                                         Index p) {
  const Index n = height * width;
  if (images.dim() != n) throw ConfigError("fit_dct_subband_whitener: n != height * width");
  if (p < 1 || p > n) throw ConfigError("fit_dct_subband_whitener: band count must be in [1, n]");
  if (images.size() < 2) throw DataError("fit_dct_subband_whitener: need N >= 2");
  Whitener w;
  w.kind = WhitenerKind::dct_subband_pca;
  w.n = n;
  w.height = height;
  w.width = width;
  const Matrix coef = detail::dct2_zigzag(images.data, height, width, false);
  w.mean = coef.rowwise().mean();
  const Matrix centered = coef.colwise() - w.mean;
  if (centered.cwiseAbs().maxCoeff() == 0.0)
    throw DataError("fit_dct_subband_whitener: degenerate data (all samples identical)");
  const Index base = n / p;
  w.eigvals = Vector::Zero(n);
  for (Index b = 0; b < p; ++b) {
    Whitener::Band band;
    band.start = b * base;
    band.size = b + 1 == p ? n - band.start : base;
    detail::fit_band(centered, band, w.eigvals);
    w.bands.push_back(std::move(band));
  }
  return w;
}

// ---------------------------------------------------------------------------
// Rate-distortion bound
// ---------------------------------------------------------------------------

/// Shannon lower bound on per-dimension MSE for independent Gaussian
/// components with the given variances at R bits/dim (reverse water-filling).
/// Solved in closed form over the number of active dimensions.
inline double shannon_lower_bound(const Vector& variances, double R) {
  const Index n = variances.size();
  if (n == 0) throw ConfigError("shannon_lower_bound: empty variance vector");
  if (R < 0.0) throw ConfigError("shannon_lower_bound: R must be >= 0");
  if ((variances.array() < 0.0).any()) throw ConfigError("shannon_lower_bound: negative variance");
  std::vector<double> v(variances.data(), variances.data() + n);
  std::sort(v.begin(), v.end(), std::greater<>());
  const double mean = variances.mean();
  if (R == 0.0 || v.front() == 0.0) return mean;
  const double total_bits = 2.0 * static_cast<double>(n) * R;  // sum of log2(sigma^2 / gamma)
  double log_sum = 0.0;
  double gamma = v.front();
  for (std::size_t k = 1; k <= v.size(); ++k) {
    if (v[k - 1] <= 0.0) break;
    log_sum += std::log2(v[k - 1]);
    const double log_gamma = (log_sum - total_bits) / static_cast<double>(k);
    gamma = std::exp2(log_gamma);
    const double next = k < v.size() ? v[k] : 0.0;
    if (gamma >= next) break;
  }
  double d = 0.0;
  for (double s : v) d += std::min(s, gamma);
  return d / static_cast<double>(n);
}

}  // namespace stc
