#include <gtest/gtest.h>

#include <cmath>

#include "stc/datasets.hpp"
#include "stc/rate_allocation.hpp"
#include "stc/vq.hpp"

using namespace stc;

namespace {

AssignmentSet brute_force_assign(const Matrix& F, const Matrix& C) {
  AssignmentSet a;
  for (Index i = 0; i < F.cols(); ++i) {
    Index best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (Index k = 0; k < C.cols(); ++k) {
      double d = 0.0;
      for (Index j = 0; j < F.rows(); ++j) d += (F(j, i) - C(j, k)) * (F(j, i) - C(j, k));
      if (d < bd) {
        bd = d;
        best = k;
      }
    }
    a.indices.push_back(best);
  }
  return a;
}

/// Plain Lloyd iterations written without the library's assignment path.
Matrix lloyd_oracle(const Matrix& F, Matrix C, int iters) {
  for (int it = 0; it < iters; ++it) {
    const AssignmentSet a = brute_force_assign(F, C);
    Matrix sums = Matrix::Zero(F.rows(), C.cols());
    Vector cnt = Vector::Zero(C.cols());
    for (Index i = 0; i < F.cols(); ++i) {
      sums.col(a.indices[static_cast<std::size_t>(i)]) += F.col(i);
      cnt(a.indices[static_cast<std::size_t>(i)]) += 1;
    }
    for (Index k = 0; k < C.cols(); ++k)
      if (cnt(k) > 0) C.col(k) = sums.col(k) / cnt(k);
  }
  return C;
}

VrRowProblem random_row_problem(Rng& r, Index m, double mu) {
  VrRowProblem p;
  p.N = 500.0;
  p.mu = mu;
  p.zeta = Vector(m);
  for (Index k = 0; k < m; ++k) p.zeta(k) = 0.05 + r.uniform();
  p.zeta /= p.zeta.sum();
  p.z = r.normal_matrix(m, 1, 20.0);
  p.target = static_cast<double>(m) * 0.7;
  return p;
}

}  // namespace

TEST(Assign, Examples) {
  Rng r(1);
  const Matrix C = r.normal_matrix(4, 6);
  EXPECT_EQ(assign(Matrix(C.col(3)), C).indices[0], 3);
  Matrix C2(1, 2);
  C2 << -1.0, 1.0;
  Matrix f = Matrix::Zero(1, 1);
  EXPECT_EQ(assign(f, C2).indices[0], 0);
  Matrix C3(1, 3);
  C3 << 5.0, 1.0, 1.0;
  f(0, 0) = 1.0;
  EXPECT_EQ(assign(f, C3).indices[0], 1);
}

TEST(Assign, MatchesBruteForce) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    Rng r(s);
    const Matrix F = r.normal_matrix(50, 20);
    const Matrix C = r.normal_matrix(50, 4);
    EXPECT_EQ(assign(F, C).indices, brute_force_assign(F, C).indices);
  }
}

TEST(Assign, EmptyCodebookIsConfigError) {
  EXPECT_THROW(assign(Matrix::Zero(2, 3), Matrix(2, 0)), ConfigError);
}

TEST(Kmeans, MEqualsNGivesZeroDistortion) {
  Rng r(2);
  const Matrix F = r.normal_matrix(5, 12);
  Rng r2(3);
  const KmeansResult k = kmeans(F, 12, r2);
  EXPECT_NEAR(k.distortion_trace.back(), 0.0, 1e-15);
}

TEST(Kmeans, SeparatedBlobs) {
  Rng r(4);
  Matrix F(2, 200);
  for (Index i = 0; i < 200; ++i) {
    const double cx = i < 100 ? -10.0 : 10.0;
    F.col(i) << cx + 0.1 * r.normal(), 0.1 * r.normal();
  }
  Rng r2(5);
  const KmeansResult k = kmeans(F, 2, r2);
  Vector m1 = F.leftCols(100).rowwise().mean(), m2 = F.rightCols(100).rowwise().mean();
  Vector c0 = k.codebook.C.col(0), c1 = k.codebook.C.col(1);
  if (c0(0) > 0) std::swap(c0, c1);
  EXPECT_LT((c0 - m1).norm(), 1e-6);
  EXPECT_LT((c1 - m2).norm(), 1e-6);
}

TEST(Kmeans, MatchesLloydOracleFromSameInit) {
  Rng r(6);
  const Matrix F = r.normal_matrix(5, 30);
  const Matrix C0 = F.leftCols(3);
  KmeansOptions opt;
  opt.max_iter = 7;
  opt.tol = 0.0;
  const KmeansResult k = kmeans_from(F, C0, opt);
  // No cluster empties on this instance, so the trajectories coincide.
  EXPECT_LT((k.codebook.C - lloyd_oracle(F, C0, 7)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Kmeans, DistortionNonIncreasing) {
  Rng r(7);
  const Matrix F = r.normal_matrix(8, 400);
  Rng r2(8);
  const KmeansResult k = kmeans(F, 16, r2);
  for (std::size_t i = 1; i < k.distortion_trace.size(); ++i)
    EXPECT_LE(k.distortion_trace[i], k.distortion_trace[i - 1] + 1e-12);
}

TEST(VrRowProblem, GradientMatchesFiniteDifferences) {
  Rng r(9);
  for (int trial = 0; trial < 10; ++trial) {
    const VrRowProblem p = random_row_problem(r, 8, 0.1);
    const Vector c = r.normal_matrix(8, 1);
    const Vector g = p.gradient(c);
    Vector fd(8);
    const double h = 1e-6;
    for (Index k = 0; k < 8; ++k) {
      Vector a = c, b = c;
      a(k) += h;
      b(k) -= h;
      fd(k) = (p.objective(a) - p.objective(b)) / (2 * h);
    }
    EXPECT_LT((g - fd).norm() / g.norm(), 1e-5);
  }
}

TEST(VrRowProblem, HessianMatchesFiniteDifferences) {
  Rng r(10);
  for (int trial = 0; trial < 10; ++trial) {
    const VrRowProblem p = random_row_problem(r, 6, 0.1);
    const Vector c = r.normal_matrix(6, 1);
    const Matrix H = p.hessian(c);
    Matrix fd(6, 6);
    const double h = 1e-5;
    for (Index k = 0; k < 6; ++k) {
      Vector a = c, b = c;
      a(k) += h;
      b(k) -= h;
      fd.col(k) = (p.gradient(a) - p.gradient(b)) / (2 * h);
    }
    EXPECT_LT((H - fd).norm() / H.norm(), 1e-4);
  }
}

TEST(VrRowProblem, ShermanMorrisonMatchesDirectInverse) {
  Rng r(11);
  for (int trial = 0; trial < 10; ++trial) {
    const VrRowProblem p = random_row_problem(r, 10, 0.3);
    Vector c = r.normal_matrix(10, 1);
    c *= std::sqrt(p.target) / c.norm();
    ASSERT_TRUE(p.positive_definite(c));
    const Matrix direct = p.hessian(c).inverse();
    EXPECT_LT((p.hessian_inverse(c) - direct).cwiseAbs().maxCoeff(), 1e-8 * direct.cwiseAbs().maxCoeff());
    EXPECT_LT((p.newton_direction(c) - direct * p.gradient(c)).norm(), 1e-8 * p.gradient(c).norm());
  }
}

TEST(VrKmeans, InactiveRowsAreZero) {
  Rng r(12);
  SourceSpec spec{SourceKind::var_decay, 20, 1.0, 0.0, 0.3};
  const VectorSet s = generate(spec, 400, r);
  const AllocationResult alloc = rev_wfiller(source_variances(spec), std::log2(16.0) / 20.0);
  ASSERT_LT(alloc.active_set.size(), 20u);
  VrKmeansOptions opt;
  opt.mu = 0.1;
  Rng r2(13);
  const VrKmeansResult v = vr_kmeans(s.data, 16, alloc, opt, r2);
  for (Index j = 0; j < 20; ++j)
    if (!alloc.is_active(j)) EXPECT_EQ(v.codebook.C.row(j).norm(), 0.0);
}

TEST(VrKmeans, MuZeroGivesClusterMeans) {
  Rng r(14);
  const Matrix F = r.normal_matrix(6, 300);
  const AllocationResult alloc = rev_wfiller(Vector::Ones(6), 2.0);
  ASSERT_EQ(alloc.active_set.size(), 6u);
  VrKmeansOptions opt;
  opt.mu = 0.0;
  opt.max_iter = 1;
  Rng r2(15);
  const VrKmeansResult v = vr_kmeans(F, 8, alloc, opt, r2);
  for (Index k = 0; k < 8; ++k) {
    Vector sum = Vector::Zero(6);
    double cnt = 0;
    for (Index i = 0; i < 300; ++i)
      if (v.assignment.indices[static_cast<std::size_t>(i)] == k) {
        sum += F.col(i);
        cnt += 1;
      }
    ASSERT_GT(cnt, 0);
    EXPECT_LT((v.codebook.C.col(k) - sum / cnt).norm(), 1e-9);
  }
}

TEST(VrKmeans, InfiniteMuDrawsFromTargetVariances) {
  Rng r(16);
  const Matrix F = r.normal_matrix(4, 5000);
  Vector var(4);
  var << 4.0, 3.0, 2.0, 1.0;
  const AllocationResult alloc = rev_wfiller(var, 0.6);
  VrKmeansOptions opt;
  opt.mu = kInfiniteMu;
  Rng r2(17);
  const VrKmeansResult v = vr_kmeans(F, 4096, alloc, opt, r2);
  for (Index j = 0; j < 4; ++j) {
    const double emp = v.codebook.C.row(j).squaredNorm() / 4096.0;
    EXPECT_NEAR(emp, alloc.target_variances(j), 5.0 * alloc.target_variances(j) * std::sqrt(2.0 / 4096.0) + 1e-15);
  }
}

TEST(VrKmeans, Deterministic) {
  Rng r(18);
  const Matrix F = r.normal_matrix(10, 200);
  const AllocationResult alloc = rev_wfiller(Vector::Ones(10), 0.4);
  VrKmeansOptions opt;
  opt.mu = 0.1;
  Rng a(3), b(3);
  EXPECT_EQ(vr_kmeans(F, 16, alloc, opt, a).codebook.C, vr_kmeans(F, 16, alloc, opt, b).codebook.C);
}

TEST(ResidualQuantizer, SingleLayerEqualsKmeans) {
  Rng r(19);
  const Matrix F = r.normal_matrix(6, 100);
  Rng a(5);
  const ResidualQuantizer q = rq_train(F, 1, 8, a);
  Rng b(5);
  Rng bl = b.fork(0);
  const KmeansResult k = kmeans(F, 8, bl);
  EXPECT_EQ(q.layers[0].C, k.codebook.C);
}

TEST(ResidualQuantizer, MEqualsNSecondLayerSeesZeros) {
  Rng r(20);
  const Matrix F = r.normal_matrix(4, 10);
  Rng a(1);
  const ResidualQuantizer q = rq_train(F, 2, 10, a);
  EXPECT_NEAR(q.per_layer_distortion[0], 0.0, 1e-15);
  EXPECT_NEAR(q.layers[1].C.norm(), 0.0, 1e-15);
}

TEST(ResidualQuantizer, CodewordReconstructsExactly) {
  Rng r(21);
  const Matrix F = r.normal_matrix(5, 50);
  Rng a(2);
  const ResidualQuantizer q = rq_train(F, 1, 4, a);
  const Vector f = q.layers[0].C.col(2);
  EXPECT_EQ(rq_decode(rq_encode(f, q), q), f);
}

TEST(ResidualQuantizer, TruncatedDecodeMatchesBookkeeping) {
  Rng r(22);
  const Matrix F = r.normal_matrix(8, 300);
  Rng a(3);
  const ResidualQuantizer q = rq_train(F, 4, 16, a);
  const auto codes = rq_encode(F, q);
  for (Index l = 1; l <= 4; ++l) {
    const Matrix rec = rq_decode(codes, q, l);
    EXPECT_NEAR((F - rec).squaredNorm() / F.squaredNorm(), q.per_layer_distortion[static_cast<std::size_t>(l - 1)],
                1e-12);
  }
  EXPECT_EQ(rq_decode(codes, q, 0).norm(), 0.0);
}

TEST(ResidualQuantizer, TestBatchMatchesRecomputation) {
  Rng r(23);
  const Matrix F = r.normal_matrix(8, 300);
  const Matrix G = r.normal_matrix(8, 50);
  Rng a(4);
  const ResidualQuantizer q = rq_train(F, 3, 8, a);
  const Matrix rec = rq_decode(rq_encode(G, q), q);
  // Oracle: recompute residuals by brute force.
  Matrix R = G;
  for (const Codebook& cb : q.layers) {
    const AssignmentSet s = brute_force_assign(R, cb.C);
    R -= reconstruct(cb.C, s);
  }
  EXPECT_LT(((G - rec) - R).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Rrq, ScheduleAndInactiveRows) {
  const auto s = default_mu_schedule(7, 0.1);
  EXPECT_EQ(s[4], 0.1);
  EXPECT_TRUE(std::isinf(s[5]));
  Rng r(24);
  SourceSpec spec{SourceKind::var_decay, 16, 1.0, 0.0, 0.3};
  const VectorSet data = generate(spec, 300, r);
  RrqOptions o;
  o.L = 3;
  o.m = 8;
  o.mu_schedule = default_mu_schedule(3, 0.1);
  Rng r2(5);
  const ResidualQuantizer q = rrq_train(data.data, o, r2);
  ASSERT_EQ(q.num_layers(), 3);
  for (Index l = 0; l < 3; ++l)
    for (Index j = 0; j < 16; ++j)
      if (!q.allocation[static_cast<std::size_t>(l)].is_active(j))
        EXPECT_EQ(q.layers[static_cast<std::size_t>(l)].C.row(j).norm(), 0.0);
}
