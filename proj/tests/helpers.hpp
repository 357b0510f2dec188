#pragma once

#include <random>
#include <vector>

#include "gnnamg/sparse.hpp"

namespace testing {

using namespace gnnamg;

inline SparseMatrix path_laplacian(index_t n, double w = 1.0) {
  std::vector<Triplet> t;
  for (index_t i = 0; i + 1 < n; ++i) {
    t.push_back({i, i + 1, -w});
    t.push_back({i + 1, i, -w});
    t.push_back({i, i, w});
    t.push_back({i + 1, i + 1, w});
  }
  return SparseMatrix::from_coordinates(t, n, n);
}

inline DenseMatrix random_dense(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  DenseMatrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

inline Vector random_vector(Eigen::Index n, std::uint64_t seed) {
  return random_dense(n, 1, seed).col(0);
}

/// Sparse SPD: random symmetric pattern with a dominant diagonal.
inline SparseMatrix random_spd(index_t n, double density, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DenseMatrix m = DenseMatrix::Zero(n, n);
  for (index_t i = 0; i < n; ++i)
    for (index_t j = 0; j < i; ++j)
      if (u(rng) < density) m(i, j) = m(j, i) = -u(rng);
  for (index_t i = 0; i < n; ++i) m(i, i) = -m.row(i).sum() + m(i, i) + 0.1 + u(rng);
  return SparseMatrix::from_dense(m);
}

inline double rel_err(const DenseMatrix& a, const DenseMatrix& b) {
  const double s = b.norm();
  return s == 0.0 ? a.norm() : (a - b).norm() / s;
}

}  // namespace testing
