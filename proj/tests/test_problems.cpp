#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "gnnamg/delaunay.hpp"
#include "gnnamg/problems.hpp"

using namespace gnnamg;

namespace {

double max_abs_row_sum(const SparseMatrix& a) {
  return spmv(a, Vector::Ones(a.rows())).cwiseAbs().maxCoeff();
}

SparseMatrix with_entry_scaled(const SparseMatrix& a, std::size_t k, double factor) {
  std::vector<double> v(a.values().begin(), a.values().end());
  v[k] *= factor;
  return SparseMatrix(a.rows(), a.cols(), {a.row_offsets().begin(), a.row_offsets().end()},
                      {a.col_indices().begin(), a.col_indices().end()}, std::move(v));
}

double min_eigenvalue(const SparseMatrix& a) {
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(a.to_dense(), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace

TEST_CASE("weight distributions") {
  Rng rng(1);
  const auto ln = WeightDistribution::lognormal();
  const auto un = WeightDistribution::parse("uniform:0:1");
  for (int i = 0; i < 1000; ++i) {
    CHECK(ln.sample(rng) > 0.0);
    const double u = un.sample(rng);
    CHECK(u > 0.0);
    CHECK(u <= 1.0);
  }
  CHECK(WeightDistribution::parse("lognormal:0:0.5").second == 0.5);
  CHECK_THROWS_AS(WeightDistribution::parse("gamma"), std::invalid_argument);
}

TEST_CASE("periodic Delaunay problems are block-circulant") {
  for (const index_t c : {8, 16, 64}) {
    const BlockCirculantProblem p = generate_periodic_delaunay(4, c, WeightDistribution::lognormal(), 7);
    CHECK(p.size() == 16 * c);
    CHECK(p.a.rows() == 16 * c);
    CHECK(validate_block_circulant(p));
    CHECK(max_abs_row_sum(p.a) <= 1e-10);
    for (const auto& e : p.edges) CHECK(e.weight > 0.0);
    CHECK(check_kind(p.a, MatrixKind::SPSDLaplacian));
  }
  const BlockCirculantProblem q = generate_periodic_delaunay(4, 64, WeightDistribution::lognormal(), 1);
  CHECK(q.a.rows() == 1024);
}

TEST_CASE("perturbed periodic problem fails validation") {
  BlockCirculantProblem p = generate_periodic_delaunay(4, 8, WeightDistribution::lognormal(), 2);
  const auto cols = p.a.row_cols(5);
  std::size_t k = p.a.row_offsets()[5];
  while (p.a.col_indices()[k] == 5) ++k;
  REQUIRE(cols.size() > 1);
  p.a = with_entry_scaled(p.a, k, 1.0 + 1e-6);
  CHECK_FALSE(validate_block_circulant(p));
}

TEST_CASE("periodic generator preconditions") {
  CHECK_THROWS_AS(generate_periodic_delaunay(1, 8, WeightDistribution::lognormal(), 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(generate_periodic_delaunay(2, 8, WeightDistribution::lognormal(), 0),
                  std::invalid_argument);
}

TEST_CASE("Delaunay Laplacian") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const GraphLaplacian g = generate_delaunay_laplacian(512, WeightDistribution::lognormal(), seed);
    CHECK(max_abs_row_sum(g.a) <= 1e-10);
    CHECK(check_kind(g.a, MatrixKind::SPSDLaplacian));
    const double degree = static_cast<double>(g.a.nnz() - 512) / 512.0;
    CHECK(degree >= 4.0);
    CHECK(degree <= 8.0);
  }
}

TEST_CASE("Delaunay Laplacian on four points matches the triangulation") {
  const GraphLaplacian g = generate_delaunay_laplacian(4, WeightDistribution::uniform(), 11);
  const auto tris = delaunay_triangulate(g.points);
  const auto edges = triangle_edges(tris);
  DenseMatrix ref = DenseMatrix::Zero(4, 4);
  for (const auto& e : edges) {
    const double w = -g.a.coeff(e[0], e[1]);
    CHECK(w > 0.0);
    ref(e[0], e[1]) = ref(e[1], e[0]) = -w;
    ref(e[0], e[0]) += w;
    ref(e[1], e[1]) += w;
  }
  CHECK(g.a.nnz() == 4 + 2 * edges.size());
  CHECK((g.a.to_dense() - ref).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("element stiffness of the unit right triangle") {
  const Eigen::Matrix3d k = element_stiffness({0, 0}, {1, 0}, {0, 1}, 1.0);
  Eigen::Matrix3d ref;
  ref << 1.0, -0.5, -0.5, -0.5, 0.5, 0.0, -0.5, 0.0, 0.5;
  CHECK((k - ref).cwiseAbs().maxCoeff() <= 1e-15);
  const Eigen::Matrix3d k2 = element_stiffness({0, 0}, {1, 0}, {0, 1}, 3.0);
  CHECK((k2 - 3.0 * ref).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("FEM diffusion") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const MeshProblem m = generate_fem_diffusion(300, WeightDistribution::lognormal(0.0, 0.5), seed);
    CHECK(max_abs_row_sum(m.stiffness) <= 1e-9);
    CHECK(min_eigenvalue(m.a) > 0.0);
    CHECK(check_kind(m.a, MatrixKind::SPD));
    CHECK(m.boundary_nodes.size() + m.interior_nodes.size() == m.points.size());
    CHECK(m.a.rows() == static_cast<index_t>(m.interior_nodes.size()));
  }
}

TEST_CASE("kNN affinity Laplacians") {
  for (const auto cloud : {PointCloud::TwoGaussians, PointCloud::FiveGaussians, PointCloud::Moons,
                           PointCloud::Circles}) {
    KnnSpec spec;
    spec.cloud = cloud;
    spec.n_points = 300;
    const KnnProblem p = generate_knn_affinity_laplacian(spec, 3);
    Eigen::SelfAdjointEigenSolver<DenseMatrix> es(p.a.to_dense(), Eigen::EigenvaluesOnly);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
    CHECK(es.eigenvalues().maxCoeff() <= 2.0 + 1e-10);
    const Vector null = p.degree.cwiseSqrt();
    CHECK(spmv(p.a, null).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(p.a.is_symmetric());

    spec.jitter = true;
    const KnnProblem j = generate_knn_affinity_laplacian(spec, 3);
    CHECK(j.jittered);
    CHECK(min_eigenvalue(j.a) > 0.0);
  }
  KnnSpec three;
  three.dim = 3;
  three.n_points = 200;
  CHECK(generate_knn_affinity_laplacian(three, 1).points.cols() == 3);
  three.cloud = PointCloud::Moons;
  CHECK_THROWS_AS(generate_knn_affinity_laplacian(three, 1), std::invalid_argument);
  CHECK(point_cloud_from_string("circles") == PointCloud::Circles);
}

TEST_CASE("points CSV") {
  const auto path = std::filesystem::temp_directory_path() / "gnnamg_points.csv";
  const std::vector<Point2> pts{{0.25, 0.5}, {1.0, 0.0}};
  write_points_csv(path.string(), pts);
  std::ifstream in(path);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "x,y");
  CHECK(first == "0.25,0.5");
}
