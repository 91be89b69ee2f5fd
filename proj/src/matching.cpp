#include "patchvlad/matching.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "patchvlad/error.hpp"

namespace patchvlad {

namespace {

// Four independent accumulators, combined in a fixed order.
double dot(const float* a, const float* b, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    s0 += static_cast<double>(a[j]) * b[j];
    s1 += static_cast<double>(a[j + 1]) * b[j + 1];
    s2 += static_cast<double>(a[j + 2]) * b[j + 2];
    s3 += static_cast<double>(a[j + 3]) * b[j + 3];
  }
  for (; j < n; ++j) s0 += static_cast<double>(a[j]) * b[j];
  return (s0 + s1) + (s2 + s3);
}

std::vector<double> squared_norms(const MatrixXfR& m) {
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  const auto n = static_cast<std::size_t>(m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const float* r = m.row(i).data();
    out[static_cast<std::size_t>(i)] = dot(r, r, n);
  }
  return out;
}

}  // namespace

MatrixXdR pairwise_distances(const MatrixXfR& a, const MatrixXfR& b) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "descriptor dimensions differ: " + std::to_string(a.cols()) + " vs " +
                    std::to_string(b.cols()));
  }
  const auto na = squared_norms(a);
  const auto nb = squared_norms(b);
  const auto dim = static_cast<std::size_t>(a.cols());
  MatrixXdR out(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const float* ai = a.row(i).data();
    double* o = out.row(i).data();
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      const double sq = na[static_cast<std::size_t>(i)] + nb[static_cast<std::size_t>(j)] -
                        2.0 * dot(ai, b.row(j).data(), dim);
      o[j] = std::sqrt(std::max(sq, 0.0));
    }
  }
  return out;
}

MatchSet mutual_nn(const MatrixXfR& ref, const MatrixXfR& query, std::size_t patch_size) {
  if (ref.rows() == 0 || query.rows() == 0) {
    throw Error(ErrorCode::kInvalidArgument, "mutual nearest neighbours need non-empty sets");
  }
  const MatrixXdR dist = pairwise_distances(ref, query);
  const auto n_ref = static_cast<std::size_t>(dist.rows());
  const auto n_query = static_cast<std::size_t>(dist.cols());

  // Strict '<' keeps the first (lowest) index on ties.
  std::vector<std::size_t> nn_query(n_ref, 0);  // NN_q(f_i^r)
  std::vector<std::size_t> nn_ref(n_query, 0);  // NN_r(f_j^q)
  std::vector<double> col_best(n_query, 0.0);
  for (std::size_t i = 0; i < n_ref; ++i) {
    const double* row = dist.row(static_cast<Eigen::Index>(i)).data();
    std::size_t best = 0;
    for (std::size_t j = 0; j < n_query; ++j) {
      if (row[j] < row[best]) best = j;
      if (i == 0 || row[j] < col_best[j]) {
        col_best[j] = row[j];
        nn_ref[j] = i;
      }
    }
    nn_query[i] = best;
  }

  MatchSet out;
  out.patch_size = patch_size;
  for (std::size_t i = 0; i < n_ref; ++i) {
    const std::size_t j = nn_query[i];
    if (nn_ref[j] == i) {
      out.pairs.push_back({i, j, dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))});
    }
  }
  return out;
}

MatchSet mutual_nn(const PatchDescriptorSet& ref, const PatchDescriptorSet& query) {
  if (ref.patch_size != query.patch_size) {
    throw Error(ErrorCode::kInvalidArgument,
                "cannot match patch size " + std::to_string(ref.patch_size) + " against " +
                    std::to_string(query.patch_size));
  }
  MatchSet out = mutual_nn(ref.descriptors, query.descriptors, ref.patch_size);
  for (auto& m : out.pairs) {
    m.ref = ref.grid_index[m.ref];
    m.query = query.grid_index[m.query];
  }
  return out;
}

}  // namespace patchvlad
