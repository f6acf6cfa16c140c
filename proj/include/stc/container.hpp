#pragma once

// Binary model container ("STCM") and packed code files ("STCX").
//
// All integers and floats are little-endian. Matrices are written as
// u64 rows, u64 cols, then rows*cols f64 values in row-major order;
// vectors as u64 length followed by the values.
//
// STCM: magic, u32 version, u8 kind, whitener block, u64 layer count,
//       per-layer blocks, distortion vector, u64 length + JSON metadata.
// STCX: magic, u32 version, u8 payload kind, u64 N, u64 layer count, then per
//       layer u64 m followed by the payload. Ternary symbols are packed four
//       per byte, position j in byte j/4 at bits 2*(j%4) (00 = 0, 01 = +1,
//       10 = -1); codeword indices are u32; binary codes are u64 words.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "stc/datasets.hpp"
#include "stc/error.hpp"
#include "stc/rate_allocation.hpp"
#include "stc/search.hpp"
#include "stc/sparse_ternary.hpp"
#include "stc/vq.hpp"

namespace stc {

inline constexpr std::uint32_t kContainerVersion = 1;

enum class ModelKind : std::uint8_t {
  kmeans = 0,
  vr_kmeans = 1,
  rq = 2,
  rrq = 3,
  stc = 4,
  mlstc = 5,
  mlstc_proc = 6,
  binary_baseline = 7,
};

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::kmeans: return "kmeans";
    case ModelKind::vr_kmeans: return "vr_kmeans";
    case ModelKind::rq: return "rq";
    case ModelKind::rrq: return "rrq";
    case ModelKind::stc: return "stc";
    case ModelKind::mlstc: return "mlstc";
    case ModelKind::mlstc_proc: return "mlstc_proc";
    case ModelKind::binary_baseline: return "binary_baseline";
  }
  return "unknown";
}

inline ModelKind model_kind_from_string(const std::string& s) {
  for (int k = 0; k <= 7; ++k)
    if (to_string(static_cast<ModelKind>(k)) == s) return static_cast<ModelKind>(k);
  throw ConfigError("unknown model kind '" + s + "'");
}

inline bool is_vq(ModelKind k) { return k <= ModelKind::rrq; }
inline bool is_stc(ModelKind k) { return k >= ModelKind::stc && k <= ModelKind::mlstc_proc; }

/// A trained model of any kind with its (optional) whitener. Only the member
/// matching `kind` is meaningful.
struct Model {
  ModelKind kind = ModelKind::mlstc;
  bool has_whitener = false;
  Whitener whitener;
  ResidualQuantizer vq;      // kmeans / vr_kmeans are single-layer stacks
  MlStcModel stc;
  BinaryBaseline binary;
  std::string metadata = "{}";

  std::vector<double> distortions() const {
    if (is_vq(kind)) return vq.per_layer_distortion;
    if (is_stc(kind)) return stc.per_layer_distortion;
    return {};
  }

  Matrix to_model_domain(const Matrix& F) const { return has_whitener ? whitener.apply(F) : F; }
  Matrix from_model_domain(const Matrix& Z) const { return has_whitener ? whitener.invert(Z) : Z; }
};

// ---------------------------------------------------------------------------
// Byte streams
// ---------------------------------------------------------------------------

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void string(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void vector(const Vector& v) {
    u64(static_cast<std::uint64_t>(v.size()));
    for (Index i = 0; i < v.size(); ++i) f64(v(i));
  }
  void matrix(const Matrix& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) f64(m(r, c));
  }
  const std::vector<std::uint8_t>& bytes() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& b) : b_(b) {}

  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string string() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Vector vector() {
    const std::uint64_t n = u64();
    need(n * 8);
    Vector v(static_cast<Index>(n));
    for (Index i = 0; i < v.size(); ++i) v(i) = f64();
    return v;
  }
  Matrix matrix() {
    const std::uint64_t r = u64(), c = u64();
    if (c != 0 && r > (b_.size() / 8) / c) throw DataError("container: matrix size exceeds file");
    need(r * c * 8);
    Matrix m(static_cast<Index>(r), static_cast<Index>(c));
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = f64();
    return m;
  }
  void need(std::uint64_t n) const {
    if (n > b_.size() - pos_) throw DataError("container: truncated file");
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// STCM
// ---------------------------------------------------------------------------

namespace detail {

inline void write_index_list(ByteWriter& w, const std::vector<Index>& v) {
  w.u64(v.size());
  for (Index i : v) w.u64(static_cast<std::uint64_t>(i));
}

inline std::vector<Index> read_index_list(ByteReader& r) {
  const std::uint64_t n = r.u64();
  r.need(n * 8);
  std::vector<Index> v(n);
  for (auto& i : v) i = static_cast<Index>(r.u64());
  return v;
}

inline void write_whitener(ByteWriter& w, const Whitener& wh) {
  w.u8(static_cast<std::uint8_t>(wh.kind));
  w.u64(static_cast<std::uint64_t>(wh.n));
  w.u64(static_cast<std::uint64_t>(wh.height));
  w.u64(static_cast<std::uint64_t>(wh.width));
  w.vector(wh.mean);
  w.vector(wh.eigvals);
  w.u64(wh.bands.size());
  for (const auto& b : wh.bands) {
    w.u64(static_cast<std::uint64_t>(b.start));
    w.u64(static_cast<std::uint64_t>(b.size));
    w.matrix(b.basis);
  }
}

inline Whitener read_whitener(ByteReader& r) {
  Whitener wh;
  const std::uint8_t k = r.u8();
  if (k > 1) throw DataError("container: unknown whitener kind");
  wh.kind = static_cast<WhitenerKind>(k);
  wh.n = static_cast<Index>(r.u64());
  wh.height = static_cast<Index>(r.u64());
  wh.width = static_cast<Index>(r.u64());
  wh.mean = r.vector();
  wh.eigvals = r.vector();
  const std::uint64_t bands = r.u64();
  Index covered = 0;
  for (std::uint64_t i = 0; i < bands; ++i) {
    Whitener::Band b;
    b.start = static_cast<Index>(r.u64());
    b.size = static_cast<Index>(r.u64());
    b.basis = r.matrix();
    if (b.basis.rows() != b.size || b.basis.cols() != b.size || b.start != covered)
      throw DataError("container: inconsistent whitener band");
    covered += b.size;
    wh.bands.push_back(std::move(b));
  }
  if (covered != wh.n || wh.mean.size() != wh.n) throw DataError("container: whitener size mismatch");
  return wh;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_model(const Model& m) {
  ByteWriter w;
  w.raw("STCM", 4);
  w.u32(kContainerVersion);
  w.u8(static_cast<std::uint8_t>(m.kind));
  w.u8(m.has_whitener ? 1 : 0);
  if (m.has_whitener) detail::write_whitener(w, m.whitener);
  if (is_vq(m.kind)) {
    w.u64(m.vq.layers.size());
    for (std::size_t l = 0; l < m.vq.layers.size(); ++l) {
      w.matrix(m.vq.layers[l].C);
      w.vector(m.vq.layers[l].zeta);
      const bool reg = l < m.vq.mu.size();
      w.u8(reg ? 1 : 0);
      if (reg) {
        w.f64(m.vq.mu[l]);
        const AllocationResult& a = m.vq.allocation[l];
        w.f64(a.water_level);
        w.vector(a.target_variances);
        detail::write_index_list(w, a.active_set);
        w.vector(a.per_dim_rate);
        w.f64(a.achieved_rate);
        w.u8(a.saturated ? 1 : 0);
      }
    }
  } else if (is_stc(m.kind)) {
    w.u64(m.stc.layers.size());
    for (const StcLayer& s : m.stc.layers) {
      w.matrix(s.A);
      w.vector(s.beta);
      w.u8(static_cast<std::uint8_t>(s.policy.kind));
      w.f64(s.policy.value);
      w.u64(static_cast<std::uint64_t>(s.policy.k));
      w.f64(s.lambda);
      w.vector(s.variances);
      w.vector(s.alpha);
      w.f64(s.rate);
      w.f64(s.distortion);
    }
  } else {
    w.u64(1);
    w.matrix(m.binary.A);
    w.matrix(m.binary.A_pinv);
    w.f64(m.binary.beta);
  }
  const std::vector<double> d = m.distortions();
  w.vector(Eigen::Map<const Vector>(d.data(), static_cast<Index>(d.size())));
  w.string(m.metadata);
  return w.bytes();
}

inline Model deserialize_model(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  r.need(4);
  if (std::memcmp(bytes.data(), "STCM", 4) != 0) throw DataError("container: bad magic (not an STCM file)");
  for (int i = 0; i < 4; ++i) r.u8();
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion)
    throw DataError("container: unsupported version " + std::to_string(version));
  Model m;
  const std::uint8_t kind = r.u8();
  if (kind > 7) throw DataError("container: unknown model kind");
  m.kind = static_cast<ModelKind>(kind);
  m.has_whitener = r.u8() != 0;
  if (m.has_whitener) m.whitener = detail::read_whitener(r);
  const std::uint64_t layers = r.u64();
  if (is_vq(m.kind)) {
    for (std::uint64_t l = 0; l < layers; ++l) {
      Codebook cb;
      cb.C = r.matrix();
      cb.zeta = r.vector();
      if (cb.zeta.size() != cb.C.cols()) throw DataError("container: codebook size mismatch");
      m.vq.layers.push_back(std::move(cb));
      if (r.u8() != 0) {
        m.vq.mu.push_back(r.f64());
        AllocationResult a;
        a.water_level = r.f64();
        a.target_variances = r.vector();
        a.active_set = detail::read_index_list(r);
        a.per_dim_rate = r.vector();
        a.achieved_rate = r.f64();
        a.saturated = r.u8() != 0;
        m.vq.allocation.push_back(std::move(a));
      }
    }
  } else if (is_stc(m.kind)) {
    m.stc.procrustean = m.kind == ModelKind::mlstc_proc;
    for (std::uint64_t l = 0; l < layers; ++l) {
      StcLayer s;
      s.A = r.matrix();
      s.beta = r.vector();
      const std::uint8_t pk = r.u8();
      if (pk > 2) throw DataError("container: unknown threshold policy");
      s.policy.kind = static_cast<ThresholdKind>(pk);
      s.policy.value = r.f64();
      s.policy.k = static_cast<Index>(r.u64());
      s.lambda = r.f64();
      s.variances = r.vector();
      s.alpha = r.vector();
      s.rate = r.f64();
      s.distortion = r.f64();
      if (s.beta.size() != s.A.rows()) throw DataError("container: layer size mismatch");
      m.stc.layers.push_back(std::move(s));
    }
  } else {
    if (layers != 1) throw DataError("container: binary baseline expects one block");
    m.binary.A = r.matrix();
    m.binary.A_pinv = r.matrix();
    m.binary.beta = r.f64();
  }
  const Vector d = r.vector();
  std::vector<double> dist(d.data(), d.data() + d.size());
  if (is_vq(m.kind)) m.vq.per_layer_distortion = dist;
  if (is_stc(m.kind)) m.stc.per_layer_distortion = dist;
  m.metadata = r.string();
  if (!r.done()) throw DataError("container: trailing bytes");
  return m;
}

inline void save_model(const std::string& path, const Model& m) { write_file(path, serialize_model(m)); }
inline Model load_model(const std::string& path) { return deserialize_model(read_file(path)); }

// ---------------------------------------------------------------------------
// STCX
// ---------------------------------------------------------------------------

enum class CodePayload : std::uint8_t { ternary = 0, indices = 1, binary = 2 };

/// Codes for a batch, of one payload kind.
struct CodeFile {
  CodePayload payload = CodePayload::ternary;
  std::vector<TernaryCodeSet> ternary;
  std::vector<AssignmentSet> indices;
  std::vector<Index> index_m;  // codebook sizes for index payloads
  BinaryCodeSet binary;

  Index size() const {
    switch (payload) {
      case CodePayload::ternary: return ternary.empty() ? 0 : ternary.front().size();
      case CodePayload::indices: return indices.empty() ? 0 : indices.front().size();
      case CodePayload::binary: return binary.size();
    }
    return 0;
  }
};

/// Pack one ternary code into ceil(m/4) bytes.
inline std::vector<std::uint8_t> pack_ternary(const TernaryCode& c) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>((c.length + 3) / 4), 0);
  for (std::size_t t = 0; t < c.support.size(); ++t) {
    const auto j = static_cast<std::size_t>(c.support[t]);
    const std::uint8_t sym = c.signs[t] > 0 ? 0b01 : 0b10;
    out[j / 4] |= static_cast<std::uint8_t>(sym << (2 * (j % 4)));
  }
  return out;
}

inline TernaryCode unpack_ternary(const std::uint8_t* bytes, Index m) {
  TernaryCode c;
  c.length = m;
  for (Index j = 0; j < m; ++j) {
    const unsigned sym = (bytes[j / 4] >> (2 * (j % 4))) & 0b11U;
    if (sym == 0b01) {
      c.support.push_back(j);
      c.signs.push_back(1);
    } else if (sym == 0b10) {
      c.support.push_back(j);
      c.signs.push_back(-1);
    } else if (sym == 0b11) {
      throw DataError("codes: invalid ternary symbol 11");
    }
  }
  return c;
}

inline std::vector<std::uint8_t> serialize_codes(const CodeFile& f) {
  ByteWriter w;
  w.raw("STCX", 4);
  w.u32(kContainerVersion);
  w.u8(static_cast<std::uint8_t>(f.payload));
  w.u64(static_cast<std::uint64_t>(f.size()));
  switch (f.payload) {
    case CodePayload::ternary:
      w.u64(f.ternary.size());
      for (const TernaryCodeSet& s : f.ternary) {
        w.u64(static_cast<std::uint64_t>(s.m));
        for (const TernaryCode& c : s.codes) {
          const auto b = pack_ternary(c);
          w.raw(b.data(), b.size());
        }
      }
      break;
    case CodePayload::indices:
      w.u64(f.indices.size());
      for (std::size_t l = 0; l < f.indices.size(); ++l) {
        w.u64(static_cast<std::uint64_t>(l < f.index_m.size() ? f.index_m[l] : 0));
        for (Index i : f.indices[l].indices) w.u32(static_cast<std::uint32_t>(i));
      }
      break;
    case CodePayload::binary:
      w.u64(1);
      w.u64(static_cast<std::uint64_t>(f.binary.m));
      for (std::uint64_t word : f.binary.bits) w.u64(word);
      break;
  }
  return w.bytes();
}

inline CodeFile deserialize_codes(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  r.need(4);
  if (std::memcmp(bytes.data(), "STCX", 4) != 0) throw DataError("codes: bad magic (not an STCX file)");
  for (int i = 0; i < 4; ++i) r.u8();
  if (r.u32() != kContainerVersion) throw DataError("codes: unsupported version");
  CodeFile f;
  const std::uint8_t p = r.u8();
  if (p > 2) throw DataError("codes: unknown payload kind");
  f.payload = static_cast<CodePayload>(p);
  const std::uint64_t N = r.u64();
  const std::uint64_t layers = r.u64();
  for (std::uint64_t l = 0; l < layers; ++l) {
    const std::uint64_t m = r.u64();
    switch (f.payload) {
      case CodePayload::ternary: {
        TernaryCodeSet s;
        s.m = static_cast<Index>(m);
        const std::uint64_t per = (m + 3) / 4;
        if (per != 0 && N > (bytes.size() / per)) throw DataError("codes: truncated file");
        r.need(per * N);
        std::vector<std::uint8_t> tmp(per);
        for (std::uint64_t i = 0; i < N; ++i) {
          for (auto& b : tmp) b = r.u8();
          s.codes.push_back(unpack_ternary(tmp.data(), s.m));
        }
        f.ternary.push_back(std::move(s));
        break;
      }
      case CodePayload::indices: {
        AssignmentSet a;
        r.need(N * 4);
        a.indices.resize(N);
        for (auto& i : a.indices) {
          i = static_cast<Index>(r.u32());
          if (m > 0 && static_cast<std::uint64_t>(i) >= m) throw DataError("codes: index out of range");
        }
        f.indices.push_back(std::move(a));
        f.index_m.push_back(static_cast<Index>(m));
        break;
      }
      case CodePayload::binary: {
        f.binary.m = static_cast<Index>(m);
        f.binary.words = static_cast<Index>((m + 63) / 64);
        r.need(N * static_cast<std::uint64_t>(f.binary.words) * 8);
        f.binary.bits.resize(N * static_cast<std::uint64_t>(f.binary.words));
        for (auto& w : f.binary.bits) w = r.u64();
        break;
      }
    }
  }
  if (!r.done()) throw DataError("codes: trailing bytes");
  return f;
}

inline void save_codes(const std::string& path, const CodeFile& f) { write_file(path, serialize_codes(f)); }
inline CodeFile load_codes(const std::string& path) { return deserialize_codes(read_file(path)); }

}  // namespace stc
