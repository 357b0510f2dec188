#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "gnnamg/gnn.hpp"
#include "gnnamg/train.hpp"
#include "helpers.hpp"

using namespace gnnamg;
using testing::path_laplacian;
using testing::random_spd;

namespace {

ModelConfig small_model() {
  ModelConfig m;
  m.width = 16;
  m.mlp_depth = 2;
  return m;
}

GraphProblem path_graph() {
  const SparseMatrix a = path_laplacian(3);
  const Splitting split(std::vector<bool>{true, false, true});
  const SparsityPattern pattern = build_pattern(a, strength_of_connection(a, 0.25), split);
  return encode_features(a, split, pattern);
}

std::map<std::pair<index_t, index_t>, double> outputs_by_edge(const GraphProblem& gp,
                                                              const DenseMatrix& raw) {
  std::map<std::pair<index_t, index_t>, double> m;
  for (std::size_t k = 0; k < gp.pattern_edges.size(); ++k) {
    const index_t e = gp.pattern_edges[k];
    m[{gp.dst[e], gp.src[e]}] = raw(static_cast<Eigen::Index>(k), 0);
  }
  return m;
}

SparseMatrix permuted(const SparseMatrix& a, const std::vector<index_t>& perm) {
  std::vector<Triplet> t;
  for (index_t i = 0; i < a.rows(); ++i) {
    const auto cols = a.row_cols(i);
    const auto vals = a.row_values(i);
    for (std::size_t k = 0; k < cols.size(); ++k) t.push_back({perm[i], perm[cols[k]], vals[k]});
  }
  return SparseMatrix::from_coordinates(t, a.rows(), a.cols());
}

SparseMatrix block_diagonal(const SparseMatrix& a, const SparseMatrix& b) {
  std::vector<Triplet> t;
  for (index_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.row_cols(i).size(); ++k)
      t.push_back({i, a.row_cols(i)[k], a.row_values(i)[k]});
  const index_t o = a.rows();
  for (index_t i = 0; i < b.rows(); ++i)
    for (std::size_t k = 0; k < b.row_cols(i).size(); ++k)
      t.push_back({o + i, o + b.row_cols(i)[k], b.row_values(i)[k]});
  return SparseMatrix::from_coordinates(t, o + b.rows(), o + b.cols());
}

}  // namespace

TEST_CASE("features") {
  const SparseMatrix a = path_laplacian(3);
  const Splitting all(std::vector<bool>{true, true, true});
  const GraphProblem c = encode_features(a, all, build_pattern(a, strength_of_connection(a, 0.25), all));
  for (index_t i = 0; i < 3; ++i) CHECK(c.node_features.row(i) == Eigen::RowVector2d(1, 0));
  for (std::size_t e = 0; e < c.n_edges(); ++e)
    if (c.src[e] == c.dst[e])
      CHECK(c.edge_features.row(e) == Eigen::RowVector3d(a.coeff(c.dst[e], c.src[e]), 1, 0));

  const GraphProblem gp = path_graph();
  CHECK(gp.node_features.row(1) == Eigen::RowVector2d(0, 1));
  CHECK(gp.n_edges() == 7);
  CHECK(gp.n_coarse == 2);
  CHECK(gp.pattern_edges.size() == 4);
  for (std::size_t e = 0; e < gp.n_edges(); ++e) {
    const index_t i = gp.dst[e], j = gp.src[e];
    const bool in_pattern = (i != 1 && j == i) || (i == 1 && j != 1);
    const Eigen::RowVector3d expected(a.coeff(i, j), in_pattern ? 1 : 0, in_pattern ? 0 : 1);
    CHECK(gp.edge_features.row(e) == expected);
  }
  CHECK(gp.pattern_cols == std::vector<index_t>{0, 0, 1, 1});

  const GraphProblem plain = encode_features(a, all, build_pattern(a, strength_of_connection(a, 0.25), all), false);
  CHECK(plain.node_features.cols() == 1);
  CHECK(plain.edge_features.cols() == 1);

  std::stringstream ss;
  write_graph_problem(ss, gp);
  CHECK(read_graph_problem(ss) == gp);
}

TEST_CASE("parameters") {
  const ModelParameters p = ModelParameters::initialize(ModelConfig{}, 3);
  CHECK(p.parameter_count() == expected_parameter_count(ModelConfig{}));
  CHECK(p == ModelParameters::initialize(ModelConfig{}, 3));
  CHECK_FALSE(p == ModelParameters::initialize(ModelConfig{}, 4));
  CHECK(ModelConfig{}.hash() != small_model().hash());
  ModelConfig bad;
  bad.width = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("permutation equivariance") {
  const GraphLaplacian g = generate_delaunay_laplacian(120, WeightDistribution::lognormal(), 4);
  const Coarsening c = classical_coarsening(g.a);
  const ModelParameters params = ModelParameters::initialize(small_model(), 1);
  const auto base = outputs_by_edge(encode_features(g.a, c.splitting, c.pattern),
                                    forward(params, encode_features(g.a, c.splitting, c.pattern)));

  std::vector<index_t> perm(120);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(9));
  const SparseMatrix ap = permuted(g.a, perm);
  std::vector<bool> coarse(120);
  for (index_t i = 0; i < 120; ++i) coarse[perm[i]] = c.splitting.is_coarse(i);
  const Splitting sp(coarse);
  SparsityPattern pp;
  pp.allowed.resize(120);
  for (index_t i = 0; i < 120; ++i) {
    for (const index_t j : c.pattern.allowed[i]) pp.allowed[perm[i]].push_back(perm[j]);
    std::sort(pp.allowed[perm[i]].begin(), pp.allowed[perm[i]].end());
  }
  const GraphProblem gq = encode_features(ap, sp, pp);
  const auto out = outputs_by_edge(gq, forward(params, gq));
  REQUIRE(out.size() == base.size());
  for (const auto& [e, v] : base) CHECK(std::abs(out.at({perm[e.first], perm[e.second]}) - v) <= 1e-10);
}

TEST_CASE("receptive field") {
  const index_t n = 14;
  const SparseMatrix a = path_laplacian(n);
  std::vector<bool> coarse(n);
  for (index_t i = 0; i < n; ++i) coarse[i] = i % 2 == 0;
  const Splitting split(coarse);
  const SparsityPattern pattern = build_pattern(a, strength_of_connection(a, 0.25), split);
  const GraphProblem gp = encode_features(a, split, pattern);
  const ModelParameters params = ModelParameters::initialize(ModelConfig{}, 2);
  const DenseMatrix raw = forward(params, gp);
  for (index_t v = 0; v < n; ++v) {
    GraphProblem moved = gp;
    moved.node_features.row(v) *= -3.0;
    for (std::size_t e = 0; e < moved.n_edges(); ++e)
      if (moved.dst[e] == v) moved.edge_features(e, 0) += 0.7;
    const DenseMatrix out = forward(params, moved);
    for (std::size_t k = 0; k < gp.pattern_edges.size(); ++k) {
      const index_t e = gp.pattern_edges[k];
      const index_t hops = std::min(std::abs(v - gp.dst[e]), std::abs(v - gp.src[e]));
      if (hops > 4) CHECK(out(k, 0) == raw(k, 0));
    }
  }
}

TEST_CASE("disjoint union") {
  const GraphLaplacian g1 = generate_delaunay_laplacian(60, WeightDistribution::lognormal(), 1);
  const GraphLaplacian g2 = generate_delaunay_laplacian(80, WeightDistribution::lognormal(), 2);
  const Coarsening c1 = classical_coarsening(g1.a), c2 = classical_coarsening(g2.a);
  std::vector<bool> coarse;
  SparsityPattern pattern;
  for (index_t i = 0; i < 60; ++i) {
    coarse.push_back(c1.splitting.is_coarse(i));
    pattern.allowed.push_back(c1.pattern.allowed[i]);
  }
  for (index_t i = 0; i < 80; ++i) {
    coarse.push_back(c2.splitting.is_coarse(i));
    pattern.allowed.push_back(c2.pattern.allowed[i]);
    for (auto& j : pattern.allowed.back()) j += 60;
  }
  const ModelParameters params = ModelParameters::initialize(small_model(), 5);
  const DenseMatrix r1 = forward(params, encode_features(g1.a, c1.splitting, c1.pattern));
  const DenseMatrix r2 = forward(params, encode_features(g2.a, c2.splitting, c2.pattern));
  const DenseMatrix ru =
      forward(params, encode_features(block_diagonal(g1.a, g2.a), Splitting(coarse), pattern));
  REQUIRE(ru.rows() == r1.rows() + r2.rows());
  CHECK((ru.topRows(r1.rows()) - r1).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((ru.bottomRows(r2.rows()) - r2).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("assemble_prolongation") {
  const GraphProblem gp = path_graph();
  const SparseMatrix p = assemble_prolongation(DenseMatrix::Ones(4, 1), gp, Vector::Ones(3));
  CHECK(p.coeff(1, 0) == 0.5);
  CHECK(p.coeff(1, 1) == 0.5);
  CHECK(p.coeff(0, 0) == 1.0);
  CHECK(p.coeff(2, 1) == 1.0);

  DenseMatrix cancel(4, 1);
  cancel << 7.0, 1.0, -1.0, 7.0;
  CHECK_THROWS_AS(assemble_prolongation(cancel, gp, Vector::Ones(3)), DegenerateRowError);
  const SparseMatrix guarded = assemble_prolongation(cancel, gp, Vector::Ones(3), true);
  CHECK(std::isfinite(guarded.coeff(1, 0)));

  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const GraphLaplacian g = generate_delaunay_laplacian(300, WeightDistribution::lognormal(), seed);
    const Coarsening c = classical_coarsening(g.a);
    const GraphProblem gq = encode_features(g.a, c.splitting, c.pattern);
    const SparseMatrix base = direct_interpolation(g.a, c.splitting, c.pattern);
    REQUIRE(base.nnz() == gq.pattern_edges.size());
    const DenseMatrix raw = Eigen::Map<const Vector>(base.values().data(), base.nnz());
    const SparseMatrix again = assemble_prolongation(raw, gq, row_sums(base));
    CHECK((again.to_dense() - base.to_dense()).cwiseAbs().maxCoeff() <= 1e-15);

    const ModelParameters params = ModelParameters::initialize(ModelConfig{}, seed);
    const SparseMatrix learned = learned_prolongation(params, g.a, c);
    for (index_t i = 0; i < 300; ++i)
      if (c.splitting.is_coarse(i)) {
        CHECK(learned.row_cols(i).size() == 1);
        CHECK(learned.row_values(i)[0] == 1.0);
      }
    CHECK((row_sums(learned) - row_sums(base)).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("dense loss") {
  const SparseMatrix a = random_spd(64, 0.1, 3);
  const Coarsening c = classical_coarsening(a);
  ModelParameters params = ModelParameters::initialize(ModelConfig{}, 7);
  const LossOptions opt;
  const LossResult r = loss_dense(params, a, c, opt);
  const DenseMatrix p = learned_prolongation(params, a, c).to_dense();
  const double ref = error_propagation_matrix(a.to_dense(), p, 1, 1).squaredNorm();
  CHECK(std::abs(r.value - ref) <= 1e-10 * ref);

  for (int k = 0; k < 4; ++k) {
    const GradientCheck g = gradient_check(
        params, [&](const ModelParameters& q, bool grad) { return loss_dense(q, a, c, opt, grad); },
        random_direction(params, k));
    CHECK(g.rel_err <= 1e-4);
  }

  OptimizerState state = OptimizerState::for_parameters(params);
  state.lr = 1e-3;
  const double first = r.value;
  for (int step = 0; step < 200; ++step) adam_step(state, params, loss_dense(params, a, c, opt).grads);
  const double last = loss_dense(params, a, c, opt, false).value;
  MESSAGE("dense loss " << first << " -> " << last);
  CHECK(last < first);
}

TEST_CASE("Fourier loss") {
  const BlockCirculantProblem p = generate_periodic_delaunay(4, 8, WeightDistribution::lognormal(), 2);
  const TiledCoarsening tiled = tile_splitting(p);
  const ModelParameters params = ModelParameters::initialize(ModelConfig{}, 11);
  LossOptions opt;
  const LossResult r = loss_fourier(params, p, tiled, opt);
  const TiledProlongation tp = learned_tiled_prolongation(params, p, tiled, opt);
  const BlockCouplings a = extract_couplings(p.a, 4, 8, 8);
  CHECK(std::abs(r.value - fourier_loss(a, tp, FourierLossOptions{}).value) <= 1e-10 * r.value);

  const GraphProblem gp = encode_features(p.a, tiled.coarsening.splitting, tiled.coarsening.pattern);
  REQUIRE(r.raw_grad.rows() == static_cast<Eigen::Index>(gp.pattern_edges.size()));
  double inside = 0.0;
  for (std::size_t k = 0; k < gp.pattern_edges.size(); ++k) {
    if (gp.pattern_rows[k] >= 8) CHECK(r.raw_grad(k, 0) == 0.0);
    else inside += std::abs(r.raw_grad(k, 0));
  }
  CHECK(inside > 0.0);

  for (const int ref : {1, 5, 15}) {
    opt.ref_block = ref;
    CHECK(std::abs(loss_fourier(params, p, tiled, opt, false).value - r.value) <= 1e-9 * r.value);
  }
  opt.ref_block = 16;
  CHECK_THROWS(loss_fourier(params, p, tiled, opt, false));

  LossOptions avg;
  avg.average_replicas = true;
  const LossResult ra = loss_fourier(params, p, tiled, avg);
  CHECK(std::abs(ra.value - r.value) <= 1e-9 * r.value);
  double outside = 0.0;
  for (std::size_t k = 0; k < gp.pattern_edges.size(); ++k)
    if (gp.pattern_rows[k] >= 8) outside += std::abs(ra.raw_grad(k, 0));
  CHECK(outside > 0.0);
  const GradientCheck ga = gradient_check(
      params, [&](const ModelParameters& q, bool grad) { return loss_fourier(q, p, tiled, avg, grad); },
      random_direction(params, 31));
  CHECK(ga.rel_err <= 1e-4);

  const std::vector<DenseMatrix> zero = [&] {
    std::vector<DenseMatrix> z;
    for (const auto& t : params.tensors) z.push_back(DenseMatrix::Zero(t.rows(), t.cols()));
    return z;
  }();
  const GradientCheck g = gradient_check(
      params, [&](const ModelParameters& q, bool grad) { return loss_fourier(q, p, tiled, LossOptions{}, grad); },
      zero);
  CHECK(g.analytic == 0.0);
  CHECK(g.numeric == 0.0);
  CHECK(g.rel_err == 0.0);
  CHECK_THROWS_AS(gradient_check(params, [](const ModelParameters&, bool) { return LossResult{}; },
                                 zero, 1e-2),
                  std::invalid_argument);
}

TEST_CASE("checkpoints") {
  const auto dir = std::filesystem::temp_directory_path() / "gnnamg_ckpt";
  std::filesystem::remove_all(dir);
  const ModelParameters params = ModelParameters::initialize(small_model(), 21);
  save_model(dir.string(), params);
  CHECK(load_model(dir.string()) == params);
  CHECK(load_model(dir.string(), small_model()) == params);
  CHECK_THROWS_AS(load_model(dir.string(), ModelConfig{}), CheckpointError);

  const auto bin = dir / "params.bin";
  const auto size = std::filesystem::file_size(bin);
  std::filesystem::resize_file(bin, size - 8);
  CHECK_THROWS_AS(load_model(dir.string()), CheckpointError);
  std::filesystem::resize_file(bin, size + 8);
  CHECK_THROWS_AS(load_model(dir.string()), CheckpointError);
  CHECK_THROWS_AS(load_model((dir / "missing").string()), CheckpointError);
}
