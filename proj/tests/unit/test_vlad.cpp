#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "patchvlad/error.hpp"
#include "patchvlad/vlad.hpp"
#include "test_util.hpp"

namespace patchvlad {
namespace {

using testing::random_map;
using testing::random_test_model;

// Softmax in extended precision with a log-sum-exp shift, as an oracle for
// the double implementation.
std::vector<long double> softmax_oracle(std::span<const float> x, const VladModel& m) {
  std::vector<long double> logits(m.num_clusters);
  for (std::size_t k = 0; k < m.num_clusters; ++k) {
    long double s = m.assign_bias[static_cast<Eigen::Index>(k)];
    for (std::size_t j = 0; j < m.dim; ++j) {
      s += static_cast<long double>(m.assign_weights(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j))) * x[j];
    }
    logits[k] = s;
  }
  const long double mx = *std::max_element(logits.begin(), logits.end());
  long double z = 0;
  for (auto& l : logits) z += std::exp(l - mx);
  for (auto& l : logits) l = std::exp(l - mx) / z;
  return logits;
}

// Soft-assigned residual sum transcribed literally: a double loop over locations and clusters.
RawVlad aggregate_oracle(const std::vector<Location>& locs, const FeatureMap& f, const VladModel& m) {
  RawVlad out = RawVlad::Zero(static_cast<Eigen::Index>(m.num_clusters), static_cast<Eigen::Index>(m.dim));
  for (const auto& loc : locs) {
    const auto x = f.at(loc);
    const auto a = softmax_oracle(x, m);
    for (std::size_t k = 0; k < m.num_clusters; ++k) {
      for (std::size_t j = 0; j < m.dim; ++j) {
        out(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) +=
            static_cast<double>(a[k]) * (static_cast<double>(x[j]) - m.centers(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)));
      }
    }
  }
  return out;
}

// The five projection steps, one at a time, in double.
Eigen::VectorXd project_oracle(const RawVlad& raw, const VladModel& m) {
  MatrixXdR intra = raw;
  for (Eigen::Index k = 0; k < intra.rows(); ++k) {
    const double n = intra.row(k).norm();
    if (n < 1e-12) intra.row(k).setZero(); else intra.row(k) /= n;
  }
  Eigen::VectorXd flat(intra.size());
  for (Eigen::Index k = 0; k < intra.rows(); ++k) {
    for (Eigen::Index j = 0; j < intra.cols(); ++j) flat[k * intra.cols() + j] = intra(k, j);
  }
  flat /= flat.norm();
  flat -= m.pca_mean.cast<double>();
  Eigen::VectorXd reduced = m.pca_basis.cast<double>() * flat;
  for (Eigen::Index i = 0; i < reduced.size(); ++i) reduced[i] *= m.pca_whiten[i];
  return reduced / reduced.norm();
}

VladModel identity_model(std::size_t k, std::size_t d) {
  VladModel m;
  m.num_clusters = k;
  m.dim = d;
  m.proj_dim = k * d;
  m.centers = MatrixXfR::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
  m.assign_weights = MatrixXfR::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
  m.assign_bias = Eigen::VectorXf::Zero(static_cast<Eigen::Index>(k));
  m.pca_mean = Eigen::VectorXf::Zero(static_cast<Eigen::Index>(k * d));
  m.pca_basis = MatrixXfR::Identity(static_cast<Eigen::Index>(k * d), static_cast<Eigen::Index>(k * d));
  m.pca_whiten = Eigen::VectorXf::Ones(static_cast<Eigen::Index>(k * d));
  return m;
}

TEST(SoftAssign, SingleClusterIsOne) {
  const VladModel m = random_test_model(1, 4, 2, 1);
  const std::vector<float> x{0.3f, -1.0f, 2.0f, 0.0f};
  const auto a = soft_assign(x, m);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_DOUBLE_EQ(a[0], 1.0);
}

TEST(SoftAssign, IdenticalRowsSplitEvenly) {
  VladModel m = random_test_model(2, 3, 2, 2);
  m.assign_weights.row(1) = m.assign_weights.row(0);
  m.assign_bias.setZero();
  const std::vector<float> x{1.0f, 2.0f, 3.0f};
  const auto a = soft_assign(x, m);
  EXPECT_DOUBLE_EQ(a[0], 0.5);
  EXPECT_DOUBLE_EQ(a[1], 0.5);
}

TEST(SoftAssign, MatchesExtendedPrecisionOracle) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const VladModel m = random_test_model(3, 6, 4, seed);
    const FeatureMap f = random_map(1, 1, 6, seed + 100);
    const auto got = soft_assign(f.at(0, 0), m);
    const auto want = softmax_oracle(f.at(0, 0), m);
    double sum = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_NEAR(got[k], static_cast<double>(want[k]), 1e-14);
      EXPECT_GE(got[k], 0.0);
      sum += got[k];
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(SoftAssign, ProbabilityVectorForExtremeLogits) {
  VladModel m = random_test_model(4, 2, 2, 3);
  m.assign_weights *= 1e4f;
  const std::vector<float> x{50.0f, -50.0f};
  const auto a = soft_assign(x, m);
  double sum = 0;
  for (double v : a) {
    EXPECT_TRUE(std::isfinite(v));
    sum += v;
  }
  EXPECT_NEAR(sum, 1.0, 1e-9);
}

TEST(SoftAssign, DimensionMismatch) {
  const VladModel m = random_test_model(2, 3, 2, 4);
  const std::vector<float> x{1.0f, 2.0f};
  try {
    soft_assign(x, m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
}

TEST(VladAggregate, SingleLocationSingleCluster) {
  const VladModel m = random_test_model(1, 3, 2, 5);
  const FeatureMap f = random_map(2, 2, 3, 6);
  const std::vector<Location> loc{{1, 0}};
  const RawVlad raw = vlad_aggregate(loc, f, m);
  for (Eigen::Index j = 0; j < 3; ++j) {
    EXPECT_NEAR(raw(0, j), static_cast<double>(f.at(1, 0)[static_cast<std::size_t>(j)]) - m.centers(0, j), 1e-12);
  }
}

TEST(VladAggregate, RepeatedFeatureScalesLinearly) {
  const VladModel m = random_test_model(3, 4, 2, 7);
  std::vector<float> data;
  const FeatureMap one = random_map(1, 1, 4, 8);
  for (int i = 0; i < 6; ++i) data.insert(data.end(), one.data().begin(), one.data().end());
  const FeatureMap f("x", 2, 3, 4, data);
  const std::vector<Location> single{{0, 0}};
  const RawVlad a = vlad_aggregate(single, f, m);
  const RawVlad all = vlad_aggregate_full(f, m);
  EXPECT_LT((all - 6.0 * a).norm(), 1e-12 * (1.0 + all.norm()));
}

TEST(VladAggregate, MatchesLiteralResidualSum) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const VladModel m = random_test_model(2, 5, 3, seed);
    const FeatureMap f = random_map(3, 3, 5, seed + 50);
    std::vector<Location> locs;
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t c = 0; c < 3; ++c) locs.push_back({r, c});
    }
    const RawVlad got = vlad_aggregate(locs, f, m);
    const RawVlad want = aggregate_oracle(locs, f, m);
    EXPECT_LT((got - want).norm(), 1e-10 * want.norm());
  }
}

TEST(VladAggregate, AdditiveOverDisjointSplits) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const VladModel m = random_test_model(4, 3, 2, static_cast<std::uint64_t>(trial));
    const FeatureMap f = random_map(5, 4, 3, static_cast<std::uint64_t>(trial) + 7);
    std::vector<Location> a, b, all;
    for (std::size_t r = 0; r < 5; ++r) {
      for (std::size_t c = 0; c < 4; ++c) {
        (rng() % 2 ? a : b).push_back({r, c});
        all.push_back({r, c});
      }
    }
    if (a.empty() || b.empty()) continue;
    const RawVlad sum = vlad_aggregate(a, f, m) + vlad_aggregate(b, f, m);
    EXPECT_LT((sum - vlad_aggregate(all, f, m)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(VladAggregate, OrderIndependent) {
  const VladModel m = random_test_model(3, 4, 2, 10);
  const FeatureMap f = random_map(4, 4, 4, 11);
  std::vector<Location> locs;
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) locs.push_back({r, c});
  }
  const RawVlad ref = vlad_aggregate(locs, f, m);
  std::mt19937_64 rng(12);
  for (int t = 0; t < 10; ++t) {
    std::shuffle(locs.begin(), locs.end(), rng);
    EXPECT_LE((vlad_aggregate(locs, f, m) - ref).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(VladAggregate, RejectsEmptyAndOutOfBounds) {
  const VladModel m = random_test_model(2, 2, 2, 13);
  const FeatureMap f = random_map(2, 2, 2, 14);
  try {
    vlad_aggregate({}, f, m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
  }
  const std::vector<Location> bad{{0, 0}, {2, 1}};
  try {
    vlad_aggregate(bad, f, m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kOutOfBounds);
  }
}

TEST(Project, IdentityModelNormalisesSingleRow) {
  const VladModel m = identity_model(3, 2);
  RawVlad raw = RawVlad::Zero(3, 2);
  raw(1, 0) = 3.0;
  raw(1, 1) = -4.0;
  const Descriptor d = project(raw, m);
  ASSERT_EQ(d.size(), 6);
  const std::vector<float> want{0, 0, 0.6f, -0.8f, 0, 0};
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(d[i], want[static_cast<std::size_t>(i)], 1e-7);
}

TEST(Project, MatchesFiveStepOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const VladModel m = random_test_model(4, 8, 12, seed);
    const FeatureMap f = random_map(3, 4, 8, seed + 1000);
    const RawVlad raw = vlad_aggregate_full(f, m);
    const Descriptor got = project(raw, m);
    const Eigen::VectorXd want = project_oracle(raw, m);
    EXPECT_NEAR(got.cast<double>().norm(), 1.0, 1e-5);
    EXPECT_LT((got.cast<double>() - want).cwiseAbs().maxCoeff(), 1e-5);
  }
}

TEST(Project, ZeroRowsPassThrough) {
  const VladModel m = random_test_model(3, 4, 6, 15);
  RawVlad raw = RawVlad::Zero(3, 4);
  raw.row(2) << 1, 2, 3, 4;
  const Eigen::VectorXd want = project_oracle(raw, m);
  EXPECT_LT((project(raw, m).cast<double>() - want).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Project, InvariantToPositiveScaling) {
  const VladModel m = random_test_model(3, 4, 6, 16);
  const RawVlad raw = vlad_aggregate_full(random_map(3, 3, 4, 17), m);
  const Descriptor a = project(raw, m);
  const Descriptor b = project(raw * 123.5, m);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Project, AllZeroIsDegenerate) {
  const VladModel m = random_test_model(2, 3, 4, 18);
  try {
    project(RawVlad::Zero(2, 3), m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerate);
  }
}

TEST(Project, BatchAgreesWithSingle) {
  const VladModel m = random_test_model(3, 5, 7, 19);
  std::vector<RawVlad> raws;
  for (std::uint64_t s = 0; s < 6; ++s) raws.push_back(vlad_aggregate_full(random_map(2, 2, 5, s + 40), m));
  raws.push_back(RawVlad::Zero(3, 5));
  std::vector<char> valid;
  const MatrixXfR batch = project_batch(raws, m, valid);
  ASSERT_EQ(batch.rows(), 7);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_TRUE(valid[i]);
    EXPECT_LT((batch.row(static_cast<Eigen::Index>(i)).transpose() - project(raws[i], m)).cwiseAbs().maxCoeff(), 1e-6);
  }
  EXPECT_FALSE(valid[6]);
}

TEST(PoolPatch, AverageOfCopies) {
  const VladModel m = random_test_model(1, 3, 1, 20);
  const std::vector<float> v{1.0f, 2.0f, 2.0f};
  const std::vector<std::span<const float>> feats(4, std::span<const float>(v));
  const Descriptor d = pool_patch(feats, Pooling::kAverage, m);
  EXPECT_NEAR(d[0], 1.0f / 3.0f, 1e-7);
  EXPECT_NEAR(d[1], 2.0f / 3.0f, 1e-7);
  EXPECT_NEAR(d[2], 2.0f / 3.0f, 1e-7);
}

TEST(PoolPatch, CoordinatewiseMax) {
  const VladModel m = random_test_model(1, 2, 1, 21);
  const std::vector<float> a{1.0f, 0.0f}, b{0.0f, 1.0f};
  const std::vector<std::span<const float>> feats{a, b};
  const Descriptor d = pool_patch(feats, Pooling::kMax, m);
  EXPECT_NEAR(d[0], 1.0 / std::sqrt(2.0), 1e-7);
  EXPECT_NEAR(d[1], 1.0 / std::sqrt(2.0), 1e-7);
}

TEST(PoolPatch, VladEqualsAggregateThenProject) {
  const VladModel m = random_test_model(3, 4, 5, 22);
  const FeatureMap f = random_map(3, 3, 4, 23);
  const std::vector<Location> locs{{1, 1}, {1, 2}, {2, 1}, {2, 2}};
  std::vector<std::span<const float>> feats;
  for (const auto& l : locs) feats.push_back(f.at(l));
  const Descriptor pooled = pool_patch(feats, Pooling::kVlad, m);
  const Descriptor direct = project(vlad_aggregate(locs, f, m), m);
  EXPECT_LT((pooled - direct).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(PoolPatch, EmptyPatch) {
  const VladModel m = random_test_model(1, 2, 1, 24);
  EXPECT_THROW(pool_patch({}, Pooling::kAverage, m), Error);
}

TEST(Pooling, NamesRoundTrip) {
  for (Pooling p : {Pooling::kVlad, Pooling::kAverage, Pooling::kMax}) {
    EXPECT_EQ(parse_pooling(pooling_name(p)), p);
  }
  EXPECT_THROW(parse_pooling("median"), Error);
}

}  // namespace
}  // namespace patchvlad
