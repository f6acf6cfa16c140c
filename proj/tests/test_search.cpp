#include <gtest/gtest.h>

#include <cmath>

#include "stc/datasets.hpp"
#include "stc/search.hpp"

using namespace stc;

namespace {

TernaryCode code(std::initializer_list<int> v) {
  Vector d(static_cast<Index>(v.size()));
  Index j = 0;
  for (int x : v) d(j++) = x;
  return TernaryCode::from_dense(d);
}

TernaryCodeSet toy_set() {
  TernaryCodeSet s;
  s.m = 4;
  s.codes = {code({1, 0, 0, -1}), code({0, 1, 0, 0})};
  return s;
}

TernaryCodeSet random_codes(Rng& r, Index N, Index m, double p) {
  TernaryCodeSet s;
  s.m = m;
  for (Index i = 0; i < N; ++i) {
    Vector d = Vector::Zero(m);
    for (Index j = 0; j < m; ++j) {
      const double u = r.uniform();
      d(j) = u < p ? 1.0 : (u < 2 * p ? -1.0 : 0.0);
    }
    s.codes.push_back(TernaryCode::from_dense(d));
  }
  return s;
}

std::vector<double> dense_oracle(const TernaryCode& y, const TernaryCodeSet& db, const VoteParams& vp) {
  const Vector yd = y.dense();
  std::vector<double> v;
  for (const auto& x : db.codes) {
    const Vector xd = x.dense();
    double s = 0.0;
    for (Index j = 0; j < yd.size(); ++j) {
      if (yd(j) == 0 || xd(j) == 0) continue;
      s += yd(j) == xd(j) ? vp.nu_plus : vp.nu_minus;
    }
    v.push_back(s);
  }
  return v;
}

}  // namespace

TEST(Index, ToyLookupTables) {
  const TernaryIndex idx = build_index({toy_set()}, {0.5});
  const auto& L = idx.layers[0];
  EXPECT_EQ(L.plus[0], (std::vector<ItemId>{0}));
  EXPECT_EQ(L.plus[1], (std::vector<ItemId>{1}));
  EXPECT_TRUE(L.plus[2].empty());
  EXPECT_TRUE(L.plus[3].empty());
  EXPECT_EQ(L.minus[3], (std::vector<ItemId>{0}));
  EXPECT_TRUE(L.minus[0].empty());
}

TEST(Index, VoteWeights) {
  EXPECT_EQ(vote_weights({0.5, 0.25}, 2), (std::vector<double>{0.5, 0.5}));
  const auto w = vote_weights({0.5, 0.4, 0.3, 0.2, 0.1, 0.05}, 4);
  EXPECT_GT(w[3], 0.0);
  EXPECT_EQ(w[4], 0.0);
  EXPECT_EQ(w[5], 0.0);
}

TEST(FastDecode, HandTraces) {
  const TernaryIndex idx = build_index({toy_set()}, {0.5});
  EXPECT_EQ(fast_decode(code({1, 0, 0, -1}), idx, 0), (std::vector<double>{2.0, 0.0}));
  EXPECT_EQ(fast_decode(code({-1, 0, 0, -1}), idx, 0)[0], -3.0);
  EXPECT_THROW(fast_decode(code({1, 0, 0, 0}), idx, 0, {1.0, 2.0}), ConfigError);
  EXPECT_THROW(fast_decode(code({1, 0, 0}), idx, 0), ConfigError);
}

TEST(FastDecode, MatchesDenseOracleAndCountsTouches) {
  Rng r(1);
  for (int t = 0; t < 20; ++t) {
    const TernaryCodeSet db = random_codes(r, 200, 64, 0.05);
    const TernaryIndex idx = build_index({db}, {0.5});
    const TernaryCode y = random_codes(r, 1, 64, 0.1).codes[0];
    const VoteParams vp{1.0, -4.0};
    SearchCounters c;
    EXPECT_EQ(fast_decode(y, idx, 0, vp, &c), dense_oracle(y, db, vp));
    // Touches equal the number of (item, position) pairs where both are nonzero.
    std::uint64_t expect = 0;
    const Vector yd = y.dense();
    for (const auto& x : db.codes)
      for (Index j : x.support) expect += yd(j) != 0.0;
    EXPECT_EQ(c.vote_touches, expect);
  }
}

TEST(Aggregate, SingleLayerEqualsFastDecodeRanking) {
  Rng r(2);
  const TernaryCodeSet db = random_codes(r, 100, 32, 0.1);
  const TernaryIndex idx = build_index({db}, {0.5}, 1);
  const TernaryCode y = db.codes[17];
  std::vector<double> votes;
  const SearchResult res = aggregate_search({y}, idx, {}, 10, nullptr, &votes);
  const auto fd = fast_decode(y, idx, 0);
  for (std::size_t i = 0; i < fd.size(); ++i) EXPECT_DOUBLE_EQ(votes[i], 0.5 * fd[i]);
  EXPECT_EQ(res.ids[0], 17);
}

TEST(Aggregate, DuplicatesTieByIdAndPermutationEquivariance) {
  Rng r(3);
  TernaryCodeSet db = random_codes(r, 50, 32, 0.1);
  db.codes[30] = db.codes[7];
  const TernaryIndex idx = build_index({db}, {1.0}, 1);
  const SearchResult res = aggregate_search({db.codes[7]}, idx, {}, 2);
  EXPECT_EQ(res.ids, (std::vector<Index>{7, 30}));

  // Reverse the database: scores follow the items.
  TernaryCodeSet rev = db;
  std::reverse(rev.codes.begin(), rev.codes.end());
  std::vector<double> v1, v2;
  aggregate_search({db.codes[3]}, idx, {}, 5, nullptr, &v1);
  aggregate_search({db.codes[3]}, build_index({rev}, {1.0}, 1), {}, 5, nullptr, &v2);
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(v1[i], v2[49 - i]);
}

TEST(Aggregate, NoiselessSelfQueries) {
  Rng r(4);
  const VectorSet s = generate({SourceKind::iid_gaussian, 32, 1.0}, 1000, r);
  const MlStcModel m = mlstc_train(s.data, 2, ThresholdPolicy::fixed(1.0));
  const auto codes = mlstc_encode(s.data, m);
  const TernaryIndex idx = build_index(codes, m.per_layer_distortion);
  int hits = 0;
  for (Index q = 0; q < 100; ++q) {
    std::vector<TernaryCode> y;
    for (const auto& set : codes) y.push_back(set.codes[static_cast<std::size_t>(q)]);
    const SearchResult res = aggregate_search(y, idx, {}, 1);
    const SearchResult ref = refine(s.data.col(q), aggregate_search(y, idx, {}, 50), m, codes, 1);
    hits += ref.ids[0] == q;
    EXPECT_GE(res.scores[0], 0.0);
  }
  EXPECT_EQ(hits, 100);
}

TEST(MlDecode, MatchesEnumeration) {
  Rng r(5);
  const TernaryCodeSet db = random_codes(r, 8, 6, 0.2);
  const TernaryCode y = random_codes(r, 1, 6, 0.2).codes[0];
  const TernaryChannel ch = build_channel(1.0, 0.3, 1.0, 0.8);
  const SearchResult res = ml_decode(y, db, ch, 8);
  auto sym = [](double v) { return v > 0 ? 0 : (v < 0 ? 2 : 1); };
  std::vector<double> s;
  for (const auto& x : db.codes) {
    double v = 0.0;
    for (Index j = 0; j < 6; ++j) v += std::log(std::max(ch.P(sym(x.dense()(j)), sym(y.dense()(j))), 1e-12));
    s.push_back(v);
  }
  for (std::size_t k = 0; k < res.ids.size(); ++k)
    EXPECT_NEAR(res.scores[k], s[static_cast<std::size_t>(res.ids[k])], 1e-12);
  for (std::size_t k = 1; k < res.ids.size(); ++k) EXPECT_GE(res.scores[k - 1], res.scores[k]);
}

TEST(MlDecode, NoiselessRanksSelfFirst) {
  Rng r(6);
  const TernaryCodeSet db = random_codes(r, 40, 16, 0.2);
  const TernaryChannel ch = build_channel(1.0, 0.0, 1.0, 1.0);
  EXPECT_EQ(ml_decode(db.codes[11], db, ch, 1).ids[0], 11);
}

TEST(Refine, FullShortlistEqualsExhaustiveScan) {
  Rng r(7);
  const VectorSet s = generate({SourceKind::ar1, 24, 1.0, 0.8}, 300, r);
  const MlStcModel m = mlstc_train(s.data, 3, ThresholdPolicy::relative(1.0));
  const auto codes = mlstc_encode(s.data, m);
  const Matrix rec = mlstc_decode(codes, m);
  SearchResult all;
  for (Index i = 0; i < 300; ++i) all.ids.push_back(i);
  all.scores.assign(300, 0.0);
  const Vector q = r.normal_matrix(24, 1);
  const SearchResult res = refine(q, all, m, codes, 300);
  std::vector<double> d;
  for (Index i = 0; i < 300; ++i) d.push_back((q - rec.col(i)).squaredNorm());
  const SearchResult oracle = detail::top_k(d, 300, false, SearchStage::refined);
  EXPECT_EQ(res.ids, oracle.ids);
  SearchResult one;
  one.ids = {5};
  one.scores = {0.0};
  EXPECT_EQ(refine(q, one, m, codes, 3).ids, (std::vector<Index>{5}));
}

TEST(BinaryBaseline, SelfQueryAndPopcountOracle) {
  Rng r(8);
  const VectorSet s = generate({SourceKind::iid_gaussian, 100, 1.0}, 200, r);
  const BinaryBaseline b = binary_baseline_train(s.data, 70, r);
  const BinaryCodeSet db = binary_baseline_encode(s.data, b);
  EXPECT_EQ(db.words, 2);
  EXPECT_EQ(hamming_distances(db, db, 9)[9], 0u);
  const Matrix X = binary_signs(s.data, b.A);
  for (Index q : {0, 50, 199}) {
    const auto d = hamming_distances(db, db, q);
    for (Index i = 0; i < 200; ++i) {
      std::uint32_t o = 0;
      for (Index j = 0; j < 70; ++j) o += X(j, i) != X(j, q);
      EXPECT_EQ(d[static_cast<std::size_t>(i)], o);
    }
  }
  // The optimal scale is no worse than scale 1.
  const Matrix R = b.A_pinv * X;
  EXPECT_LE((s.data - b.beta * R).squaredNorm(), (s.data - R).squaredNorm());
  EXPECT_LT((binary_baseline_reconstruct(db, 4, b) - b.beta * R.col(4)).norm(), 1e-12);
}

TEST(Metrics, Examples) {
  const std::vector<Index> gt = {3, 1, 4};
  EXPECT_DOUBLE_EQ(average_precision({3, 1, 4}, gt, 3), 1.0);
  EXPECT_DOUBLE_EQ(recall_at({3, 1, 4}, gt, 3, 3), 1.0);
  EXPECT_DOUBLE_EQ(average_precision({9, 3}, {3, 7}, 2), 0.25);
  EXPECT_DOUBLE_EQ(average_precision({9, 3}, {3}, 2), 0.5);
  EXPECT_DOUBLE_EQ(recall_at({9, 3}, gt, 1, 2), 1.0);
  EXPECT_DOUBLE_EQ(recall_at({9, 3}, gt, 1, 1), 0.0);
  SearchResult a, b;
  a.ids = {3, 1};
  b.ids = {0, 1};
  const SearchMetrics m = evaluate({a, b}, {{3, 1}, {1, 0}}, 2, 1);
  EXPECT_DOUBLE_EQ(m.p_id, 0.5);
  EXPECT_THROW(evaluate({}, {}, 1, 1), ConfigError);
}

TEST(Metrics, BruteForceKnn) {
  Rng r(9);
  const Matrix D = r.normal_matrix(5, 40);
  const auto gt = brute_force_knn(D, D.leftCols(3), 2);
  for (Index q = 0; q < 3; ++q) EXPECT_EQ(gt[static_cast<std::size_t>(q)][0], q);
}

TEST(Metrics, ExpectedTouchesOnRandomCodes) {
  Rng r(10);
  const Index N = 2000, m = 64;
  const double ax = 0.05, ay = 0.08;
  const TernaryCodeSet db = random_codes(r, N, m, ax);
  const TernaryIndex idx = build_index({db}, {0.5});
  SearchCounters c;
  const int Q = 50;
  for (int q = 0; q < Q; ++q) fast_decode(random_codes(r, 1, m, ay).codes[0], idx, 0, {}, &c);
  const double expect = expected_vote_touches(ax, ay, N, m, 1);
  EXPECT_NEAR(static_cast<double>(c.vote_touches) / Q, expect, 0.2 * expect);
}
