#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <utility>

#include "patchvlad/error.hpp"
#include "patchvlad/matching.hpp"
#include "patchvlad/synthetic.hpp"

namespace patchvlad {
namespace {

MatrixXfR random_rows(Eigen::Index n, Eigen::Index d, std::uint64_t seed, bool unit = true) {
  PortableRng rng(seed);
  MatrixXfR m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = static_cast<float>(rng.normal());
    if (unit) m.row(i).normalize();
  }
  return m;
}

double naive_distance(const MatrixXfR& a, Eigen::Index i, const MatrixXfR& b, Eigen::Index j) {
  long double s = 0;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const long double d = static_cast<long double>(a(i, c)) - b(j, c);
    s += d * d;
  }
  return static_cast<double>(std::sqrt(s));
}

// Mutual check applied literally to a precomputed distance matrix.
std::set<std::pair<std::size_t, std::size_t>> mutual_oracle(const MatrixXdR& dist) {
  std::set<std::pair<std::size_t, std::size_t>> out;
  for (Eigen::Index i = 0; i < dist.rows(); ++i) {
    for (Eigen::Index j = 0; j < dist.cols(); ++j) {
      bool row_min = true, col_min = true;
      for (Eigen::Index jj = 0; jj < dist.cols(); ++jj) {
        if (dist(i, jj) < dist(i, j) || (dist(i, jj) == dist(i, j) && jj < j)) row_min = false;
      }
      for (Eigen::Index ii = 0; ii < dist.rows(); ++ii) {
        if (dist(ii, j) < dist(i, j) || (dist(ii, j) == dist(i, j) && ii < i)) col_min = false;
      }
      if (row_min && col_min) out.emplace(i, j);
    }
  }
  return out;
}

std::set<std::pair<std::size_t, std::size_t>> as_set(const MatchSet& m) {
  std::set<std::pair<std::size_t, std::size_t>> out;
  for (const auto& p : m.pairs) out.emplace(p.ref, p.query);
  return out;
}

TEST(PairwiseDistances, SelfDistanceIsZeroOnDiagonal) {
  const MatrixXfR a = random_rows(6, 8, 1);
  const MatrixXdR d = pairwise_distances(a, a);
  for (Eigen::Index i = 0; i < 6; ++i) EXPECT_EQ(d(i, i), 0.0);
}

TEST(PairwiseDistances, OrthogonalUnitVectors) {
  MatrixXfR a = MatrixXfR::Zero(1, 3), b = MatrixXfR::Zero(1, 3);
  a(0, 0) = 1;
  b(0, 2) = 1;
  EXPECT_NEAR(pairwise_distances(a, b)(0, 0), std::sqrt(2.0), 1e-12);
}

TEST(PairwiseDistances, MatchesNaiveLoop) {
  const MatrixXfR a = random_rows(7, 5, 2, false);
  const MatrixXfR b = random_rows(9, 5, 3, false);
  const MatrixXdR d = pairwise_distances(a, b);
  ASSERT_EQ(d.rows(), 7);
  ASSERT_EQ(d.cols(), 9);
  for (Eigen::Index i = 0; i < 7; ++i) {
    for (Eigen::Index j = 0; j < 9; ++j) EXPECT_NEAR(d(i, j), naive_distance(a, i, b, j), 1e-6);
  }
}

TEST(PairwiseDistances, DimensionMismatchThrows) {
  try {
    pairwise_distances(MatrixXfR::Zero(2, 3), MatrixXfR::Zero(2, 4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
}

TEST(MutualNN, SelfMatchingIsIdentity) {
  const MatrixXfR a = random_rows(15, 6, 4);
  const MatchSet m = mutual_nn(a, a);
  ASSERT_EQ(m.size(), 15u);
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_EQ(m.pairs[i].ref, i);
    EXPECT_EQ(m.pairs[i].query, i);
  }
}

TEST(MutualNN, UniqueMutualPair) {
  MatrixXfR ref = MatrixXfR::Zero(2, 2), query = MatrixXfR::Zero(1, 2);
  ref(0, 0) = 1;
  ref(1, 1) = 1;
  query(0, 1) = 1;
  const MatchSet m = mutual_nn(ref, query);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m.pairs[0].ref, 1u);
  EXPECT_EQ(m.pairs[0].query, 0u);
  EXPECT_EQ(m.pairs[0].distance, 0.0);
}

TEST(MutualNN, RandomSetsMatchOracle) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const MatrixXfR ref = random_rows(20, 8, 100 + seed);
    const MatrixXfR query = random_rows(20, 8, 200 + seed);
    EXPECT_EQ(as_set(mutual_nn(ref, query)), mutual_oracle(pairwise_distances(ref, query)))
        << "seed " << seed;
  }
}

TEST(MutualNN, TiesGoToLowestIndex) {
  // Duplicated rows on both sides produce exact distance ties.
  MatrixXfR base = random_rows(4, 5, 7);
  MatrixXfR ref(6, 5), query(5, 5);
  ref << base.row(0), base.row(1), base.row(0), base.row(2), base.row(1), base.row(3);
  query << base.row(1), base.row(0), base.row(0), base.row(3), base.row(1);
  const MatchSet m = mutual_nn(ref, query);
  EXPECT_EQ(as_set(m), mutual_oracle(pairwise_distances(ref, query)));
  const std::set<std::pair<std::size_t, std::size_t>> expected{{0, 1}, {1, 0}, {5, 3}};
  EXPECT_EQ(as_set(m), expected);
}

TEST(MutualNN, SwappingRolesTransposesPairs) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const MatrixXfR a = random_rows(13, 6, 300 + seed);
    const MatrixXfR b = random_rows(17, 6, 400 + seed);
    std::set<std::pair<std::size_t, std::size_t>> transposed;
    for (const auto& p : mutual_nn(b, a).pairs) transposed.emplace(p.query, p.ref);
    EXPECT_EQ(as_set(mutual_nn(a, b)), transposed);
  }
}

TEST(MutualNN, PairsAreBoundedAndReverify) {
  const MatrixXfR ref = random_rows(11, 4, 9);
  const MatrixXfR query = random_rows(25, 4, 10);
  const MatchSet m = mutual_nn(ref, query);
  EXPECT_LE(m.size(), 11u);
  const MatrixXdR d = pairwise_distances(ref, query);
  for (const auto& p : m.pairs) {
    const auto i = static_cast<Eigen::Index>(p.ref);
    const auto j = static_cast<Eigen::Index>(p.query);
    EXPECT_EQ(d(i, j), d.row(i).minCoeff());
    EXPECT_EQ(d(i, j), d.col(j).minCoeff());
    EXPECT_EQ(p.distance, d(i, j));
  }
}

TEST(MutualNN, EmptySetThrows) {
  try {
    mutual_nn(MatrixXfR(0, 3), random_rows(2, 3, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
  }
}

TEST(MutualNN, DescriptorSetsTranslateToGridIndices) {
  PatchDescriptorSet a, b;
  a.patch_size = b.patch_size = 2;
  a.descriptors = random_rows(3, 4, 11);
  a.grid_index = {2, 5, 9};
  b.descriptors = a.descriptors.colwise().reverse();
  b.grid_index = {0, 1, 4};
  const MatchSet m = mutual_nn(a, b);
  EXPECT_EQ(m.patch_size, 2u);
  const std::set<std::pair<std::size_t, std::size_t>> expected{{2, 4}, {5, 1}, {9, 0}};
  EXPECT_EQ(as_set(m), expected);
}

TEST(MutualNN, DescriptorSetsOfDifferentSizesThrow) {
  PatchDescriptorSet a, b;
  a.patch_size = 2;
  b.patch_size = 5;
  a.descriptors = b.descriptors = random_rows(2, 3, 1);
  a.grid_index = b.grid_index = {0, 1};
  EXPECT_THROW(mutual_nn(a, b), Error);
}

}  // namespace
}  // namespace patchvlad
