#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gnnamg/delaunay.hpp"
#include "gnnamg/sparse.hpp"

namespace gnnamg {

using Rng = std::mt19937_64;

/// Positive edge-weight distribution.
struct WeightDistribution {
  enum class Tag { Lognormal, Uniform };
  Tag tag = Tag::Lognormal;
  double first = 0.0;   // mu or lo
  double second = 1.0;  // sigma or hi

  static WeightDistribution lognormal(double mu = 0.0, double sigma = 1.0);
  static WeightDistribution uniform(double lo = 0.0, double hi = 1.0);
  /// Parses "lognormal", "lognormal:mu:sigma", "uniform", "uniform:lo:hi".
  static WeightDistribution parse(const std::string& text);
  std::string describe() const;

  /// Always returns a strictly positive value.
  double sample(Rng& rng) const;
};

/// Lattice offset between blocks of a doubly periodic tiling.
struct LatticeOffset {
  int x = 0;
  int y = 0;
  auto operator<=>(const LatticeOffset&) const = default;
  LatticeOffset operator-() const { return {-x, -y}; }
};

/// One periodic edge: local node u of a block couples to local node v of
/// the block at `offset`.
struct PeriodicEdge {
  index_t u = 0;
  index_t v = 0;
  LatticeOffset offset;
  double weight = 0.0;
};

/// Block-periodic operator on a b x b torus of identical c-node blocks.
/// Global id of local node u in block (bx, by) is (bx * b + by) * c + u.
struct BlockCirculantProblem {
  SparseMatrix a;
  int b = 0;
  index_t c = 0;
  std::vector<Point2> base_points;
  std::vector<PeriodicEdge> edges;  // empty for operators not built from a graph
  MatrixKind kind = MatrixKind::SPSDLaplacian;

  index_t size() const { return static_cast<index_t>(b) * b * c; }
  index_t global_index(int bx, int by, index_t u) const {
    return (static_cast<index_t>(wrap(bx)) * b + wrap(by)) * c + u;
  }
  int block_of(index_t node) const { return static_cast<int>(node / c); }
  int wrap(int k) const { return ((k % b) + b) % b; }
};

BlockCirculantProblem generate_periodic_delaunay(int b, index_t c, const WeightDistribution& dist,
                                                 std::uint64_t seed);

/// Exhaustive check of A(l, j) == A(l - k, j - k) (mod n) with k = b * c,
/// and of the matching shift by one block inside a block column.
bool validate_block_circulant(const BlockCirculantProblem& p);

struct GraphLaplacian {
  SparseMatrix a;
  std::vector<Point2> points;
  std::vector<std::array<index_t, 3>> triangles;
};

/// Weighted Laplacian of the Delaunay triangulation of n uniform points in
/// the unit square.
GraphLaplacian generate_delaunay_laplacian(index_t n, const WeightDistribution& dist,
                                           std::uint64_t seed);

/// Weighted graph Laplacian from an undirected edge list (i < j).
SparseMatrix laplacian_from_edges(index_t n, std::span<const std::array<index_t, 2>> edges,
                                  std::span<const double> weights);

struct MeshProblem {
  std::vector<Point2> points;
  std::vector<std::array<index_t, 3>> triangles;  // counter-clockwise
  std::vector<double> coefficients;               // one per triangle
  SparseMatrix stiffness;                         // before boundary elimination
  SparseMatrix a;                                 // interior block, SPD
  std::vector<index_t> boundary_nodes;
  std::vector<index_t> interior_nodes;  // row r of `a` is mesh node interior_nodes[r]
};

/// Linear-element stiffness of -div(g grad u) on one triangle.
Eigen::Matrix3d element_stiffness(const Point2& p0, const Point2& p1, const Point2& p2, double g);

/// Diffusion problem on a Delaunay mesh of n random points in the unit
/// square. Dirichlet nodes are the hull vertices; their rows and columns
/// are eliminated.
MeshProblem generate_fem_diffusion(index_t n, const WeightDistribution& g_dist,
                                   std::uint64_t seed);

enum class PointCloud { TwoGaussians, FiveGaussians, Moons, Circles };
PointCloud point_cloud_from_string(const std::string& s);
const char* to_string(PointCloud cloud);

struct KnnSpec {
  PointCloud cloud = PointCloud::TwoGaussians;
  index_t n_points = 1024;
  int k = 10;
  int dim = 2;              // 3 supported for the Gaussian clouds
  bool jitter = false;      // add U(0, 0.2) to the diagonal
};

struct KnnProblem {
  SparseMatrix a;
  DenseMatrix points;  // n x dim
  Vector degree;       // D_ii = sum_j S_ij
  bool jittered = false;
};

/// Normalized Laplacian I - D^{-1/2} S D^{-1/2} of the symmetrized kNN graph
/// with affinities exp(-d^2).
KnnProblem generate_knn_affinity_laplacian(const KnnSpec& spec, std::uint64_t seed);

/// Sidecar manifest and point CSV helpers.
void write_points_csv(const std::string& path, const DenseMatrix& points);
void write_points_csv(const std::string& path, std::span<const Point2> points);

}  // namespace gnnamg
