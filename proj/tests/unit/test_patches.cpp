#include <gtest/gtest.h>

#include "patchvlad/error.hpp"
#include "patchvlad/patches.hpp"
#include "test_util.hpp"

namespace patchvlad {
namespace {

using testing::random_map;
using testing::random_test_model;

std::size_t eq2_count(std::size_t h, std::size_t w, std::size_t d, std::size_t s) {
  return ((h - d) / s + 1) * ((w - d) / s + 1);
}

double rel_frobenius(const RawVlad& a, const RawVlad& b) {
  const double scale = std::max(b.norm(), 1e-300);
  return (a - b).norm() / scale;
}

TEST(BuildGrid, DefaultScaleGridCounts) {
  EXPECT_EQ(build_grid(30, 40, 5, 1).count(), 936u);
  EXPECT_EQ(build_grid(30, 40, 2, 1).count(), 1131u);
  EXPECT_EQ(build_grid(30, 40, 8, 1).count(), 759u);
}

TEST(BuildGrid, WholeMapPatchIsSingle) {
  for (std::size_t s : {1u, 2u, 7u}) EXPECT_EQ(build_grid(6, 6, 6, s).count(), 1u);
}

TEST(BuildGrid, CountMatchesFormulaForManyShapes) {
  for (std::size_t h = 1; h <= 9; ++h) {
    for (std::size_t w = 1; w <= 9; ++w) {
      for (std::size_t d = 1; d <= std::min(h, w); ++d) {
        for (std::size_t s = 1; s <= 4; ++s) {
          const PatchGrid g = build_grid(h, w, d, s);
          EXPECT_EQ(g.count(), eq2_count(h, w, d, s));
          EXPECT_EQ(g.grid_rows * g.grid_cols, g.count());
        }
      }
    }
  }
}

TEST(BuildGrid, CentersAreOffsetByHalfPatch) {
  const PatchGrid g = build_grid(5, 7, 2, 2);
  ASSERT_EQ(g.count(), 2u * 3u);
  for (std::size_t i = 0; i < g.count(); ++i) {
    EXPECT_DOUBLE_EQ(g.centers[i].x, static_cast<double>(g.top_left[i].col) + 0.5);
    EXPECT_DOUBLE_EQ(g.centers[i].y, static_cast<double>(g.top_left[i].row) + 0.5);
    EXPECT_EQ(g.top_left[i].row % 2, 0u);
    EXPECT_EQ(g.top_left[i].col % 2, 0u);
  }
  EXPECT_EQ(g.top_left.back().row, 2u);
  EXPECT_EQ(g.top_left.back().col, 4u);
}

TEST(BuildGrid, NonSquarePatches) {
  const PatchGrid g = build_grid(6, 8, 2, 3, 1);
  EXPECT_EQ(g.count(), 5u * 6u);
  EXPECT_DOUBLE_EQ(g.centers[0].x, 1.0);
  EXPECT_DOUBLE_EQ(g.centers[0].y, 0.5);
}

TEST(BuildGrid, PatchLargerThanMap) {
  EXPECT_THROW(build_grid(4, 10, 5, 1), Error);
  EXPECT_THROW(build_grid(4, 4, 2, 0), Error);
}

// Prefix sums recomputed from scratch for every (i, j).
TEST(Integral, MatchesBruteForcePrefixSums) {
  const VladModel m = random_test_model(2, 3, 2, 1);
  const FeatureMap f = random_map(4, 5, 3, 2);
  const IntegralFeatureMap integral = build_integral(f, m);
  for (std::size_t i = 0; i <= 4; ++i) {
    for (std::size_t j = 0; j <= 5; ++j) {
      RawVlad want = RawVlad::Zero(2, 3);
      for (std::size_t a = 0; a < i; ++a) {
        for (std::size_t b = 0; b < j; ++b) {
          const std::vector<Location> one{{a, b}};
          want += vlad_aggregate(one, f, m);
        }
      }
      const RawVlad got = integral.at(i, j);
      EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-12) << i << "," << j;
    }
  }
}

TEST(Integral, BordersAreZeroAndCornerIsFullAggregate) {
  const VladModel m = random_test_model(3, 4, 2, 3);
  const FeatureMap f = random_map(5, 6, 4, 4);
  const IntegralFeatureMap integral = build_integral(f, m);
  for (std::size_t j = 0; j <= 6; ++j) EXPECT_EQ(integral.at(0, j).cwiseAbs().maxCoeff(), 0.0);
  for (std::size_t i = 0; i <= 5; ++i) EXPECT_EQ(integral.at(i, 0).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LT(rel_frobenius(integral.at(5, 6), vlad_aggregate_full(f, m)), 1e-12);
}

TEST(Integral, UnitAndWholePatches) {
  const VladModel m = random_test_model(2, 3, 2, 5);
  const FeatureMap f = random_map(4, 4, 3, 6);
  const IntegralFeatureMap integral = build_integral(f, m);
  EXPECT_LT(rel_frobenius(patch_raw_from_integral(integral, {0, 0}, 4), integral.at(4, 4)), 1e-15);
  const std::vector<Location> one{{2, 3}};
  EXPECT_LT(rel_frobenius(patch_raw_from_integral(integral, {2, 3}, 1), vlad_aggregate(one, f, m)), 1e-9);
  EXPECT_THROW(patch_raw_from_integral(integral, {2, 2}, 3), Error);
}

TEST(Integral, ExhaustiveAgreementWithDirectAggregation) {
  const VladModel m = random_test_model(4, 5, 3, 7);
  const FeatureMap f = random_map(6, 6, 5, 8);
  const IntegralFeatureMap integral = build_integral(f, m);
  for (std::size_t d = 1; d <= 6; ++d) {
    for (std::size_t r = 0; r + d <= 6; ++r) {
      for (std::size_t c = 0; c + d <= 6; ++c) {
        const RawVlad direct = vlad_aggregate(patch_locations({r, c}, d, d), f, m);
        EXPECT_LT(rel_frobenius(patch_raw_from_integral(integral, {r, c}, d), direct), 1e-6);
      }
    }
  }
}

TEST(ExtractMultiscale, DefaultScalesOn30x40Grid) {
  const VladModel m = random_test_model(4, 8, 16, 9);
  const FeatureMap f = random_map(30, 40, 8, 10);
  const auto sets = extract_multiscale(f, m, PatchConfig{});
  ASSERT_EQ(sets.size(), 3u);
  EXPECT_EQ(sets[0].size(), 1131u);
  EXPECT_EQ(sets[1].size(), 936u);
  EXPECT_EQ(sets[2].size(), 759u);
  for (const auto& s : sets) {
    for (Eigen::Index r = 0; r < s.descriptors.rows(); ++r) {
      EXPECT_NEAR(s.descriptors.row(r).norm(), 1.0f, 1e-5f);
    }
  }
}

TEST(ExtractMultiscale, IntegralPathEqualsDirectPath) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const VladModel m = random_test_model(2, 4, 6, seed);
    const FeatureMap f = random_map(3, 3, 4, seed + 20);
    PatchConfig cfg;
    cfg.patch_sizes = {1, 2, 3};
    cfg.fusion_weights = {0.2, 0.3, 0.5};
    const auto fast = extract_multiscale(f, m, cfg);
    const auto slow = extract_multiscale_direct(f, m, cfg);
    ASSERT_EQ(fast.size(), slow.size());
    for (std::size_t s = 0; s < fast.size(); ++s) {
      EXPECT_EQ(fast[s].grid_index, slow[s].grid_index);
      EXPECT_LT((fast[s].descriptors - slow[s].descriptors).cwiseAbs().maxCoeff(), 1e-5f);
    }
  }
}

TEST(ExtractMultiscale, IntegralEqualsDirectOnLargerMapsAllPoolings) {
  const VladModel m = random_test_model(4, 6, 12, 30);
  const FeatureMap f = random_map(16, 16, 6, 31);
  PatchConfig cfg;
  for (Pooling p : {Pooling::kVlad, Pooling::kAverage, Pooling::kMax}) {
    const auto fast = extract_multiscale(f, m, cfg, p);
    const auto slow = extract_multiscale_direct(f, m, cfg, p);
    for (std::size_t s = 0; s < fast.size(); ++s) {
      ASSERT_EQ(fast[s].descriptors.rows(), slow[s].descriptors.rows());
      EXPECT_LT((fast[s].descriptors - slow[s].descriptors).cwiseAbs().maxCoeff(), 1e-5f);
    }
  }
}

TEST(ExtractMultiscale, SoftAssignCountRatioMatchesAnalyticRatio) {
  const VladModel m = random_test_model(2, 4, 4, 40);
  const FeatureMap f = random_map(12, 14, 4, 41);
  const PatchConfig cfg;
  reset_soft_assign_count();
  extract_multiscale(f, m, cfg);
  const std::uint64_t integral_count = soft_assign_count();
  reset_soft_assign_count();
  extract_multiscale_direct(f, m, cfg);
  const std::uint64_t direct_count = soft_assign_count();

  std::uint64_t analytic = 0;
  for (std::size_t d : cfg.patch_sizes) analytic += eq2_count(12, 14, d, 1) * d * d;
  EXPECT_EQ(integral_count, 12u * 14u);
  EXPECT_EQ(direct_count, analytic);
}

TEST(ExtractMultiscale, DegeneratePatchesAreDropped) {
  VladModel m = random_test_model(1, 2, 2, 50);
  m.centers.setZero();
  // A zero feature at the single cluster centre contributes a zero residual.
  std::vector<float> data(3 * 3 * 2, 1.0f);
  data[0] = data[1] = 0.0f;
  const FeatureMap f("x", 3, 3, 2, data);
  PatchConfig cfg;
  cfg.patch_sizes = {1};
  cfg.fusion_weights = {1.0};
  const auto sets = extract_multiscale(f, m, cfg);
  EXPECT_EQ(sets[0].grid.count(), 9u);
  EXPECT_EQ(sets[0].size(), 8u);
  EXPECT_EQ(sets[0].grid_index.front(), 1u);
}

}  // namespace
}  // namespace patchvlad
