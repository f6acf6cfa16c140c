#pragma once

// Two-stage similarity search over sparse ternary codes: sign lookup tables,
// vote decoding, multi-layer aggregation, list refinement by reconstruction,
// a binary-hashing baseline and retrieval metrics.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "stc/error.hpp"
#include "stc/numerics.hpp"
#include "stc/sparse_ternary.hpp"
#include "stc/ternary_info.hpp"
#include "stc/vq.hpp"

namespace stc {

using ItemId = std::uint32_t;

/// Operation counters accumulated across queries.
struct SearchCounters {
  std::uint64_t vote_touches = 0;
  std::uint64_t float_distance_evals = 0;
  std::uint64_t hamming_word_ops = 0;

  SearchCounters& operator+=(const SearchCounters& o) {
    vote_touches += o.vote_touches;
    float_distance_evals += o.float_distance_evals;
    hamming_word_ops += o.hamming_word_ops;
    return *this;
  }
};

/// Per-position lists of database ids holding +1 / -1, one pair per layer.
struct TernaryIndex {
  struct Layer {
    std::vector<std::vector<ItemId>> plus;   // m lists, ascending ids
    std::vector<std::vector<ItemId>> minus;
  };

  Index m = 0;
  Index N = 0;
  std::vector<Layer> layers;
  std::vector<double> weights;  // omega per layer

  Index num_layers() const { return static_cast<Index>(layers.size()); }
};

/// omega_l = D_l / D_{l-1} with D_0 = 1, zero from layer l_prime + 1 on.
inline std::vector<double> vote_weights(const std::vector<double>& distortions, Index l_prime) {
  std::vector<double> w(distortions.size(), 0.0);
  double prev = 1.0;
  for (std::size_t l = 0; l < distortions.size(); ++l) {
    if (static_cast<Index>(l) < l_prime) w[l] = prev > 0.0 ? distortions[l] / prev : 0.0;
    prev = distortions[l];
  }
  return w;
}

inline TernaryIndex build_index(const std::vector<TernaryCodeSet>& codes,
                                const std::vector<double>& distortions, Index l_prime = 4) {
  if (codes.empty()) throw ConfigError("build_index: no layers");
  if (distortions.size() != codes.size()) throw ConfigError("build_index: distortion count != layer count");
  TernaryIndex idx;
  idx.N = codes.front().size();
  idx.m = codes.front().m;
  if (idx.N > static_cast<Index>(std::numeric_limits<ItemId>::max()))
    throw ConfigError("build_index: database too large");
  for (const TernaryCodeSet& set : codes) {
    if (set.size() != idx.N) throw DataError("build_index: inconsistent N across layers");
    if (set.m != idx.m) throw DataError("build_index: inconsistent code length across layers");
    TernaryIndex::Layer layer;
    layer.plus.resize(static_cast<std::size_t>(idx.m));
    layer.minus.resize(static_cast<std::size_t>(idx.m));
    for (Index i = 0; i < set.size(); ++i) {
      const TernaryCode& c = set.codes[static_cast<std::size_t>(i)];
      for (std::size_t t = 0; t < c.support.size(); ++t) {
        auto& list = c.signs[t] > 0 ? layer.plus : layer.minus;
        list[static_cast<std::size_t>(c.support[t])].push_back(static_cast<ItemId>(i));
      }
    }
    idx.layers.push_back(std::move(layer));
  }
  idx.weights = vote_weights(distortions, l_prime);
  return idx;
}

struct VoteParams {
  double nu_plus = 1.0;
  double nu_minus = -4.0;
};

inline void check_votes(const VoteParams& v) {
  if (v.nu_minus > 0.0) throw ConfigError("fast_decode: nu_minus must be <= 0");
}

/// Adds weight * (nu+ on sign matches, nu- on sign mismatches) into `votes`.
inline void fast_decode_into(const TernaryCode& y, const TernaryIndex& index, Index layer,
                             const VoteParams& vp, double weight, std::vector<double>& votes,
                             SearchCounters* counters = nullptr) {
  check_votes(vp);
  if (y.length != index.m) throw ConfigError("fast_decode: query code length != m");
  if (layer < 0 || layer >= index.num_layers()) throw ConfigError("fast_decode: layer out of range");
  if (static_cast<Index>(votes.size()) != index.N) votes.assign(static_cast<std::size_t>(index.N), 0.0);
  const auto& L = index.layers[static_cast<std::size_t>(layer)];
  const double up = weight * vp.nu_plus, down = weight * vp.nu_minus;
  std::uint64_t touches = 0;
  for (std::size_t t = 0; t < y.support.size(); ++t) {
    const auto j = static_cast<std::size_t>(y.support[t]);
    const auto& same = y.signs[t] > 0 ? L.plus[j] : L.minus[j];
    const auto& opposite = y.signs[t] > 0 ? L.minus[j] : L.plus[j];
    for (ItemId i : same) votes[i] += up;
    for (ItemId i : opposite) votes[i] += down;
    touches += same.size() + opposite.size();
  }
  if (counters) counters->vote_touches += touches;
}

inline std::vector<double> fast_decode(const TernaryCode& y, const TernaryIndex& index, Index layer,
                                       const VoteParams& vp = {}, SearchCounters* counters = nullptr) {
  std::vector<double> votes(static_cast<std::size_t>(index.N), 0.0);
  fast_decode_into(y, index, layer, vp, 1.0, votes, counters);
  return votes;
}

enum class SearchStage : std::uint8_t { initial, refined };

struct SearchResult {
  std::vector<Index> ids;
  std::vector<double> scores;  // votes / log-likelihoods (descending) or distances (ascending)
  SearchStage stage = SearchStage::initial;
};

namespace detail {

inline SearchResult top_k(const std::vector<double>& values, Index k, bool descending, SearchStage stage) {
  std::vector<Index> ids(values.size());
  std::iota(ids.begin(), ids.end(), Index{0});
  const auto take = static_cast<std::size_t>(std::clamp<Index>(k, 0, static_cast<Index>(ids.size())));
  auto cmp = [&](Index a, Index b) {
    const double x = values[static_cast<std::size_t>(a)], y = values[static_cast<std::size_t>(b)];
    if (x != y) return descending ? x > y : x < y;
    return a < b;
  };
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(take), ids.end(), cmp);
  ids.resize(take);
  SearchResult r;
  r.stage = stage;
  r.ids = std::move(ids);
  for (Index i : r.ids) r.scores.push_back(values[static_cast<std::size_t>(i)]);
  return r;
}

}  // namespace detail

/// Weighted vote aggregation over the query's layers; layers with zero
/// weight are skipped.
inline SearchResult aggregate_search(const std::vector<TernaryCode>& y_layers, const TernaryIndex& index,
                                     const VoteParams& vp, Index list_size,
                                     SearchCounters* counters = nullptr,
                                     std::vector<double>* votes_out = nullptr) {
  if (index.N == 0) throw ConfigError("aggregate_search: empty index");
  if (static_cast<Index>(y_layers.size()) > index.num_layers())
    throw ConfigError("aggregate_search: more query layers than indexed layers");
  std::vector<double> votes(static_cast<std::size_t>(index.N), 0.0);
  for (std::size_t l = 0; l < y_layers.size(); ++l) {
    const double w = index.weights[l];
    if (w == 0.0) continue;
    fast_decode_into(y_layers[l], index, static_cast<Index>(l), vp, w, votes, counters);
  }
  SearchResult r = detail::top_k(votes, list_size, true, SearchStage::initial);
  if (votes_out) *votes_out = std::move(votes);
  return r;
}

/// Exhaustive maximum-likelihood ranking: sum over positions of
/// log p(y_j | x_ij), probabilities floored at 1e-12.
inline SearchResult ml_decode(const TernaryCode& y, const TernaryCodeSet& codes, const TernaryChannel& ch,
                              Index top) {
  if (y.length != codes.m) throw ConfigError("ml_decode: code length mismatch");
  auto sym = [](double v) { return v > 0.0 ? 0 : (v < 0.0 ? 2 : 1); };
  Eigen::Matrix3d logp;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) logp(r, c) = std::log(std::max(ch.P(r, c), 1e-12));
  const Vector yd = y.dense();
  double base = 0.0;  // all-zero database code
  for (Index j = 0; j < yd.size(); ++j) base += logp(1, sym(yd(j)));
  std::vector<double> score(static_cast<std::size_t>(codes.size()), base);
  for (Index i = 0; i < codes.size(); ++i) {
    const TernaryCode& x = codes.codes[static_cast<std::size_t>(i)];
    double s = base;
    for (std::size_t t = 0; t < x.support.size(); ++t) {
      const int ys = sym(yd(x.support[t]));
      s += logp(x.signs[t] > 0 ? 0 : 2, ys) - logp(1, ys);
    }
    score[static_cast<std::size_t>(i)] = s;
  }
  return detail::top_k(score, top, true, SearchStage::initial);
}

/// Re-rank a shortlist by squared Euclidean distance between q and each
/// item's reconstruction.
inline SearchResult refine(const Vector& q, const SearchResult& initial,
                           const std::function<Vector(Index)>& reconstruct_item, Index list_size,
                           SearchCounters* counters = nullptr) {
  if (initial.ids.empty()) throw ConfigError("refine: empty initial list");
  std::vector<double> d(initial.ids.size());
  for (std::size_t t = 0; t < initial.ids.size(); ++t)
    d[t] = (q - reconstruct_item(initial.ids[t])).squaredNorm();
  if (counters) counters->float_distance_evals += initial.ids.size();
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return d[a] < d[b] || (d[a] == d[b] && initial.ids[a] < initial.ids[b]);
  });
  SearchResult r;
  r.stage = SearchStage::refined;
  const auto take = std::min(order.size(), static_cast<std::size_t>(std::max<Index>(list_size, 0)));
  for (std::size_t t = 0; t < take; ++t) {
    r.ids.push_back(initial.ids[order[t]]);
    r.scores.push_back(d[order[t]]);
  }
  return r;
}

/// Reconstruction of one database item from all layers of its stored codes.
inline Vector reconstruct_item(const MlStcModel& model, const std::vector<TernaryCodeSet>& codes, Index id) {
  if (codes.empty() || id < 0 || id >= codes.front().size()) throw DataError("refine: missing codes for id");
  Vector out = Vector::Zero(model.dim());
  for (std::size_t l = 0; l < codes.size(); ++l)
    out += stc_decode(codes[l].codes[static_cast<std::size_t>(id)], model.layers[l]);
  return out;
}

inline Vector reconstruct_item(const ResidualQuantizer& q, const std::vector<AssignmentSet>& codes, Index id) {
  if (codes.empty() || id < 0 || id >= codes.front().size()) throw DataError("refine: missing codes for id");
  Vector out = Vector::Zero(q.dim());
  for (std::size_t l = 0; l < codes.size(); ++l)
    out += q.layers[l].C.col(codes[l].indices[static_cast<std::size_t>(id)]);
  return out;
}

inline SearchResult refine(const Vector& q, const SearchResult& initial, const MlStcModel& model,
                           const std::vector<TernaryCodeSet>& codes, Index list_size,
                           SearchCounters* counters = nullptr) {
  return refine(q, initial, [&](Index id) { return reconstruct_item(model, codes, id); }, list_size, counters);
}

inline SearchResult refine(const Vector& q, const SearchResult& initial, const ResidualQuantizer& model,
                           const std::vector<AssignmentSet>& codes, Index list_size,
                           SearchCounters* counters = nullptr) {
  return refine(q, initial, [&](Index id) { return reconstruct_item(model, codes, id); }, list_size, counters);
}

/// Query codes from the same model with the thresholds scaled by
/// `lambda_scale` (fixed and relative policies) and k scaled for k-best.
/// Layer l encodes the residual left by the query's own reconstruction.
inline std::vector<TernaryCodeSet> mlstc_encode_query(const Matrix& Q, const MlStcModel& model,
                                                      double lambda_scale, Index up_to = -1) {
  if (!(lambda_scale >= 0.0)) throw ConfigError("query threshold scale must be >= 0");
  MlStcModel scaled = model;
  for (StcLayer& l : scaled.layers) {
    l.lambda *= lambda_scale;
    if (l.policy.kind == ThresholdKind::k_best)
      l.policy.k = static_cast<Index>(std::llround(static_cast<double>(l.policy.k) * lambda_scale));
  }
  return mlstc_encode(Q, scaled, up_to);
}

// ---------------------------------------------------------------------------
// Binary hashing baseline
// ---------------------------------------------------------------------------

struct BinaryCodeSet {
  Index m = 0;
  Index words = 0;                   // 64-bit words per code
  std::vector<std::uint64_t> bits;   // N * words, bit j of word j/64 set for +1

  Index size() const { return words ? static_cast<Index>(bits.size()) / words : 0; }
  bool operator==(const BinaryCodeSet&) const = default;
};

/// x = sign(A f) with Gaussian A (m x n), reconstructed as beta A^+ x.
struct BinaryBaseline {
  Matrix A;
  Matrix A_pinv;
  double beta = 1.0;

  Index code_length() const { return A.rows(); }
  Index dim() const { return A.cols(); }
  bool operator==(const BinaryBaseline&) const = default;
};

inline Matrix binary_signs(const Matrix& F, const Matrix& A) {
  return (A * F).unaryExpr([](double v) { return v >= 0.0 ? 1.0 : -1.0; });
}

/// beta* = tr[A^+ X F'] / tr[(A^+ X)(A^+ X)'].
inline BinaryBaseline binary_baseline_train(const Matrix& F, Index m, Rng& rng) {
  if (m < 1) throw ConfigError("binary baseline: m must be >= 1");
  if (m > F.rows()) throw ConfigError("binary baseline: m > n");
  BinaryBaseline b;
  b.A = rng.normal_matrix(m, F.rows());
  b.A_pinv = pseudo_inverse(b.A);
  const Matrix R = b.A_pinv * binary_signs(F, b.A);
  const double den = R.squaredNorm();
  b.beta = den > 0.0 ? (R.cwiseProduct(F)).sum() / den : 1.0;
  return b;
}

inline BinaryCodeSet binary_baseline_encode(const Matrix& F, const BinaryBaseline& b) {
  if (F.rows() != b.dim()) throw ConfigError("binary baseline: dimension mismatch");
  BinaryCodeSet out;
  out.m = b.code_length();
  out.words = (out.m + 63) / 64;
  out.bits.assign(static_cast<std::size_t>(out.words * F.cols()), 0);
  const Matrix Y = b.A * F;
  for (Index i = 0; i < F.cols(); ++i)
    for (Index j = 0; j < out.m; ++j)
      if (Y(j, i) >= 0.0) out.bits[static_cast<std::size_t>(i * out.words + j / 64)] |= std::uint64_t{1} << (j % 64);
  return out;
}

inline Vector binary_baseline_reconstruct(const BinaryCodeSet& codes, Index id, const BinaryBaseline& b) {
  Vector x(codes.m);
  for (Index j = 0; j < codes.m; ++j)
    x(j) = (codes.bits[static_cast<std::size_t>(id * codes.words + j / 64)] >> (j % 64)) & 1U ? 1.0 : -1.0;
  return b.beta * (b.A_pinv * x);
}

inline std::vector<std::uint32_t> hamming_distances(const BinaryCodeSet& db, const BinaryCodeSet& query,
                                                    Index qi, SearchCounters* counters = nullptr) {
  if (db.words != query.words) throw ConfigError("hamming: code length mismatch");
  std::vector<std::uint32_t> d(static_cast<std::size_t>(db.size()));
  const std::uint64_t* q = query.bits.data() + qi * query.words;
  for (Index i = 0; i < db.size(); ++i) {
    const std::uint64_t* x = db.bits.data() + i * db.words;
    std::uint32_t s = 0;
    for (Index w = 0; w < db.words; ++w) s += static_cast<std::uint32_t>(std::popcount(x[w] ^ q[w]));
    d[static_cast<std::size_t>(i)] = s;
  }
  if (counters) counters->hamming_word_ops += static_cast<std::uint64_t>(db.size() * db.words);
  return d;
}

/// Exhaustive Hamming ranking of query `qi`, ties by id.
inline SearchResult binary_baseline_search(const BinaryCodeSet& db, const BinaryCodeSet& query, Index qi,
                                           Index list_size, SearchCounters* counters = nullptr) {
  const auto d = hamming_distances(db, query, qi, counters);
  std::vector<double> v(d.begin(), d.end());
  return detail::top_k(v, list_size, false, SearchStage::initial);
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct SearchMetrics {
  double map_at_t = 0.0;
  double recall_r_at_t = 0.0;
  double p_id = 0.0;  // 1-Recall@1
  Index queries = 0;
};

/// Average precision of `ranked` (first T entries) against the relevant set
/// `truth` (first T entries), normalized by the number of relevant items.
inline double average_precision(const std::vector<Index>& ranked, const std::vector<Index>& truth, Index T) {
  const auto tt = static_cast<std::size_t>(std::min<Index>(T, static_cast<Index>(truth.size())));
  if (tt == 0) return 0.0;
  std::vector<Index> rel(truth.begin(), truth.begin() + static_cast<std::ptrdiff_t>(tt));
  std::sort(rel.begin(), rel.end());
  double hits = 0.0, sum = 0.0;
  const auto rt = std::min(ranked.size(), static_cast<std::size_t>(T));
  for (std::size_t k = 0; k < rt; ++k)
    if (std::binary_search(rel.begin(), rel.end(), ranked[k])) {
      hits += 1.0;
      sum += hits / static_cast<double>(k + 1);
    }
  return sum / static_cast<double>(tt);
}

/// Fraction of the top-R true neighbours found among the first T results.
inline double recall_at(const std::vector<Index>& ranked, const std::vector<Index>& truth, Index R, Index T) {
  const auto rr = static_cast<std::size_t>(std::min<Index>(R, static_cast<Index>(truth.size())));
  if (rr == 0) return 0.0;
  const auto rt = std::min(ranked.size(), static_cast<std::size_t>(T));
  std::size_t found = 0;
  for (std::size_t a = 0; a < rr; ++a)
    if (std::find(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(rt), truth[a]) !=
        ranked.begin() + static_cast<std::ptrdiff_t>(rt))
      ++found;
  return static_cast<double>(found) / static_cast<double>(rr);
}

inline SearchMetrics evaluate(const std::vector<SearchResult>& results,
                              const std::vector<std::vector<Index>>& ground_truth, Index T, Index R) {
  if (results.empty()) throw ConfigError("evaluate: empty query set");
  if (results.size() != ground_truth.size()) throw ConfigError("evaluate: result / ground-truth count mismatch");
  SearchMetrics m;
  m.queries = static_cast<Index>(results.size());
  for (std::size_t q = 0; q < results.size(); ++q) {
    m.map_at_t += average_precision(results[q].ids, ground_truth[q], T);
    m.recall_r_at_t += recall_at(results[q].ids, ground_truth[q], R, T);
    m.p_id += recall_at(results[q].ids, ground_truth[q], 1, 1);
  }
  const double n = static_cast<double>(results.size());
  m.map_at_t /= n;
  m.recall_r_at_t /= n;
  m.p_id /= n;
  return m;
}

/// Exact top-k neighbours of each query column by brute-force scan.
inline std::vector<std::vector<Index>> brute_force_knn(const Matrix& database, const Matrix& queries, Index k) {
  if (database.rows() != queries.rows()) throw ConfigError("brute_force_knn: dimension mismatch");
  std::vector<std::vector<Index>> out;
  const Vector dn = database.colwise().squaredNorm().transpose();
  for (Index q = 0; q < queries.cols(); ++q) {
    Vector d = dn - 2.0 * database.transpose() * queries.col(q);
    std::vector<double> v(d.data(), d.data() + d.size());
    out.push_back(detail::top_k(v, k, false, SearchStage::initial).ids);
  }
  return out;
}

/// 4 * mean(alpha_X) * mean(alpha_Y) * N * m per decoded layer.
inline double expected_vote_touches(double alpha_x, double alpha_y, Index N, Index m, Index layers) {
  return 4.0 * alpha_x * alpha_y * static_cast<double>(N) * static_cast<double>(m) * static_cast<double>(layers);
}

}  // namespace stc
