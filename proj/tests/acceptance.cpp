// Acceptance run: one PASS/FAIL line per criterion. Oracles are computed
// here from dense matrices, independently of the library routines they
// check.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "gnnamg/cycle.hpp"
#include "gnnamg/fourier.hpp"
#include "gnnamg/gnn.hpp"
#include "gnnamg/problems.hpp"
#include "gnnamg/train.hpp"

using namespace gnnamg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

void progress(const std::string& s) { std::cerr << "  .. " << s << std::endl; }

// Dense Gauss-Seidel propagator I - L^{-1} A for a given lower part L. The
// lattice lower part is not triangular in the global numbering, so a general
// LU solve is used.
DenseMatrix gs_propagator(const DenseMatrix& a, const DenseMatrix& lower) {
  const Eigen::Index n = a.rows();
  return DenseMatrix::Identity(n, n) - lower.partialPivLu().solve(a);
}

// Tiled lower part: entry (i, j) is kept when block(j) precedes block(i) on the
// infinite lattice, or the blocks coincide and local(j) <= local(i).
DenseMatrix lattice_lower(const DenseMatrix& a, int b, index_t c) {
  DenseMatrix l = DenseMatrix::Zero(a.rows(), a.cols());
  auto wrap = [b](int d) {
    d = ((d % b) + b) % b;
    return d > b / 2 ? d - b : d;
  };
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (a(i, j) == 0.0) continue;
      const int bi = static_cast<int>(i / c), bj = static_cast<int>(j / c);
      const int sx = wrap(bj / b - bi / b), sy = wrap(bj % b - bi % b);
      const index_t u = static_cast<index_t>(i % c), v = static_cast<index_t>(j % c);
      if (sx < 0 || (sx == 0 && (sy < 0 || (sy == 0 && v <= u)))) l(i, j) = a(i, j);
    }
  return l;
}

// ||S^{s2} (I - P (P^T A P + 11^T / nc)^{-1} P^T A) S^{s1} Pi0||_F^2 where Pi0
// removes the block-constant (theta = 0) subspace.
double tiled_dense_loss(const DenseMatrix& a, const DenseMatrix& p, int b, index_t c, int s1,
                        int s2) {
  const Eigen::Index n = a.rows(), nc = p.cols();
  const DenseMatrix s = gs_propagator(a, lattice_lower(a, b, c));
  const DenseMatrix ac =
      p.transpose() * a * p + DenseMatrix::Constant(nc, nc, 1.0 / static_cast<double>(nc));
  const DenseMatrix cc = DenseMatrix::Identity(n, n) - p * ac.partialPivLu().solve(p.transpose() * a);
  DenseMatrix zero_mode = DenseMatrix::Zero(n, c);
  for (Eigen::Index i = 0; i < n; ++i) zero_mode(i, i % c) = 1.0 / b;
  DenseMatrix m = DenseMatrix::Identity(n, n) - zero_mode * zero_mode.transpose();
  for (int k = 0; k < s1; ++k) m = s * m;
  m = cc * m;
  for (int k = 0; k < s2; ++k) m = s * m;
  return m.squaredNorm();
}

double rel_asymmetry(const SparseMatrix& a) {
  const DenseMatrix d = a.to_dense();
  const double scale = d.cwiseAbs().maxCoeff();
  return scale == 0.0 ? 0.0 : (d - d.transpose()).cwiseAbs().maxCoeff() / scale;
}

struct Context {
  fs::path work;
  std::optional<TrainResult> trained;
  std::optional<EvalReport> report;
  double train_seconds = 0.0;
  double eval_seconds = 0.0;

  const TrainResult& model() {
    if (!trained) {
      TrainConfig cfg;
      cfg.seed = 0;
      progress("training the desk-scale schedule (seed 0)");
      const auto t0 = std::chrono::steady_clock::now();
      trained = train(cfg, 2, [](const BatchRecord& r) {
        if (r.batch % 25 == 0)
          progress("stage " + std::to_string(r.stage) + " batch " + std::to_string(r.batch) +
                   " loss " + fmt(r.mean_loss));
      });
      train_seconds = seconds_since(t0);
      fs::create_directories(work);
      save_model((work / "model").string(), trained->params);
      write_training_log((work / "training_log.csv").string(), trained->log);
    }
    return *trained;
  }

  const EvalReport& evaluation() {
    if (!report) {
      const ModelParameters& params = model().params;
      SuiteSpec spec;
      spec.sizes = {1024, 16384};
      spec.runs = 100;
      spec.seed = 1000;
      progress("evaluating 100 problems at n = 1024 and n = 16384");
      const auto t0 = std::chrono::steady_clock::now();
      std::size_t done = 0;
      report = evaluate_suite(params, spec, [&](const EvalRecord& r) {
        if (++done % 20 == 0)
          progress("evaluated " + std::to_string(done) + " (n = " + std::to_string(r.size) + ")");
      });
      eval_seconds = seconds_since(t0);
      write_eval_csv((work / "eval.csv").string(), *report);
      write_eval_summary_csv((work / "summary.csv").string(), *report);
      write_eval_svg((work / "factors.svg").string(), *report);
    }
    return *report;
  }
};

Outcome criterion1(Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  const ModelParameters params = ModelParameters::initialize(ModelConfig{}, 17);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const BlockCirculantProblem p =
        generate_periodic_delaunay(4, 8, WeightDistribution::lognormal(), derive_seed(1, 0, seed));
    const TiledCoarsening tiled = tile_splitting(p);
    const DenseMatrix a = p.a.to_dense();

    const LossResult learned = loss_fourier(params, p, tiled, LossOptions{}, false);
    const TiledProlongation tp = learned_tiled_prolongation(params, p, tiled, LossOptions{});
    const double dense_learned = tiled_dense_loss(a, tp.to_sparse().to_dense(), 4, 8, 1, 1);
    worst = std::max(worst, std::abs(learned.value - dense_learned) / dense_learned);

    const SparseMatrix base =
        direct_interpolation(p.a, tiled.coarsening.splitting, tiled.coarsening.pattern);
    const TiledProlongation bp = tile_prolongation(base, tiled.coarsening.splitting, 4, 8);
    const FourierLoss fb = fourier_loss(extract_couplings(p.a, 4, 8, 8), bp, FourierLossOptions{});
    const double dense_base = tiled_dense_loss(a, bp.to_sparse().to_dense(), 4, 8, 1, 1);
    worst = std::max(worst, std::abs(fb.value - dense_base) / dense_base);
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-8 && t <= 60.0,
          "max relative difference " + fmt(worst) + " over 20 problems x 2 prolongations (<= 1e-8), " +
              fmt(t) + " s (<= 60 s)"};
}

Outcome criterion2(Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelParameters params = ModelParameters::initialize(ModelConfig{}, 23);
  const GraphLaplacian g = generate_delaunay_laplacian(64, WeightDistribution::lognormal(), 5);
  const Coarsening c = classical_coarsening(g.a);
  const BlockCirculantProblem p = generate_periodic_delaunay(4, 8, WeightDistribution::lognormal(), 6);
  const TiledCoarsening tiled = tile_splitting(p);
  const LossFunction dense = [&](const ModelParameters& q, bool grad) {
    return loss_dense(q, g.a, c, LossOptions{}, grad);
  };
  const LossFunction fourier = [&](const ModelParameters& q, bool grad) {
    return loss_fourier(q, p, tiled, LossOptions{}, grad);
  };
  double worst_dense = 0.0, worst_fourier = 0.0;
  for (std::uint64_t k = 0; k < 10; ++k) {
    worst_dense = std::max(worst_dense,
                           gradient_check(params, dense, random_direction(params, 100 + k), 1e-5).rel_err);
    worst_fourier = std::max(
        worst_fourier, gradient_check(params, fourier, random_direction(params, 200 + k), 1e-5).rel_err);
  }
  const double t = seconds_since(t0);
  return {worst_dense <= 1e-4 && worst_fourier <= 1e-4 && t <= 120.0,
          "max relative error dense " + fmt(worst_dense) + ", Fourier " + fmt(worst_fourier) +
              " over 10 directions each (<= 1e-4), " + fmt(t) + " s (<= 120 s)"};
}

Outcome criterion3(Context&) {
  double worst = 0.0;
  index_t largest = 0;
  int instances = 0;
  const ModelParameters params = ModelParameters::initialize(ModelConfig{}, 29);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SparseMatrix a;
    if (seed % 2 == 0) {
      a = generate_fem_diffusion(150 + 2 * static_cast<index_t>(seed), WeightDistribution::lognormal(0.0, 0.5), seed).a;
    } else {
      KnnSpec spec;
      spec.n_points = 150 + 2 * static_cast<index_t>(seed);
      spec.cloud = static_cast<PointCloud>(seed % 4);
      spec.jitter = true;
      a = generate_knn_affinity_laplacian(spec, seed).a;
    }
    if (a.rows() > 256) continue;
    const Coarsening c = classical_coarsening(a);
    const DenseMatrix p = learned_prolongation(params, a, c).to_dense();
    const DenseMatrix ad = a.to_dense();
    const DenseMatrix pap = p.transpose() * ad * p;
    const DenseMatrix cp = p - p * pap.ldlt().solve(p.transpose() * ad * p);
    worst = std::max(worst, cp.norm() / p.norm());
    largest = std::max(largest, a.rows());
    ++instances;
  }
  return {instances == 50 && worst <= 1e-10,
          "max ||CP||/||P|| " + fmt(worst) + " over " + std::to_string(instances) +
              " SPD instances (<= 1e-10, need 50), largest n = " + std::to_string(largest)};
}

Outcome criterion4(Context&) {
  CycleConfig cfg;
  cfg.max_levels = 2;
  cfg.max_coarse_size = 8;
  double worst = 0.0;
  int problems = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const MeshProblem mesh = generate_fem_diffusion(300 + 40 * static_cast<index_t>(seed),
                                                    WeightDistribution::lognormal(0.0, 0.5), seed);
    const Hierarchy h = build_hierarchy(mesh.a, MatrixKind::SPD, cfg);
    if (h.n_levels() != 2 || mesh.a.rows() > 2048) continue;
    const DenseMatrix a = mesh.a.to_dense();
    const DenseMatrix p = h.levels[0].p.to_dense();
    const DenseMatrix s = gs_propagator(a, DenseMatrix(a.triangularView<Eigen::Lower>()));
    const DenseMatrix cc =
        DenseMatrix::Identity(a.rows(), a.cols()) - p * (p.transpose() * a * p).llt().solve(p.transpose() * a);
    const DenseMatrix m = s * cc * s;
    const double rho = Eigen::EigenSolver<DenseMatrix>(m, false).eigenvalues().cwiseAbs().maxCoeff();
    const double measured = asymptotic_convergence_factor(h, cfg, seed);
    worst = std::max(worst, std::abs(measured - rho));
    ++problems;
  }
  return {problems == 20 && worst <= 0.05,
          "max |measured - rho(M)| " + fmt(worst) + " over " + std::to_string(problems) +
              " two-level problems (<= 0.05, need 20)"};
}

Outcome criterion5(Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  CycleConfig cfg;
  double sum = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const GraphLaplacian g = generate_delaunay_laplacian(4096, WeightDistribution::lognormal(), 500 + seed);
    const Hierarchy h = build_hierarchy(g.a, MatrixKind::SPSDLaplacian, cfg);
    sum += asymptotic_convergence_factor(h, cfg, seed);
  }
  const double mean = sum / 20.0, t = seconds_since(t0);
  return {mean <= 0.4 && t <= 600.0,
          "mean classical W-cycle factor " + fmt(mean) + " at n = 4096 (<= 0.4), " + fmt(t) +
              " s (<= 600 s)"};
}

Outcome criterion6(Context&) {
  std::size_t checked = 0, mismatches = 0;
  for (const index_t c : {8, 16, 64})
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const BlockCirculantProblem p = generate_periodic_delaunay(4, c, WeightDistribution::lognormal(), seed);
      const DenseMatrix a = p.a.to_dense();
      const index_t n = 16 * c;
      if (a.rows() != n) {
        ++mismatches;
        continue;
      }
      auto shifted = [&](index_t i, int dx, int dy) {
        const index_t blk = i / c;
        const index_t bx = (blk / 4 + dx) % 4, by = (blk % 4 + dy) % 4;
        return (bx * 4 + by) * c + i % c;
      };
      for (int dx = 0; dx < 4; ++dx)
        for (int dy = 0; dy < 4; ++dy)
          for (index_t i = 0; i < n; ++i)
            for (index_t j = 0; j < n; ++j) {
              ++checked;
              if (a(shifted(i, dx, dy), shifted(j, dx, dy)) != a(i, j)) ++mismatches;
            }
    }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches in " + std::to_string(checked) +
                               " shifted-entry comparisons (60 problems)"};
}

Outcome criterion7(Context& ctx) {
  const EvalReport& report = ctx.evaluation();
  double asym = 0.0, rows = 0.0;
  for (const auto& r : report.records) {
    asym = std::max(asym, r.max_coarse_asymmetry);
    rows = std::max(rows, r.max_row_sum_deviation);
  }
  // Independent recheck on a subset: rebuild both hierarchies here.
  const ProlongationProvider learned = learned_provider(ctx.model().params);
  CycleConfig cfg;
  double asym_here = 0.0, rows_here = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const GraphLaplacian g = generate_delaunay_laplacian(1024, WeightDistribution::lognormal(), 900 + seed);
    const Hierarchy h = build_hierarchy(g.a, MatrixKind::SPSDLaplacian, cfg, learned);
    for (int l = 0; l + 1 < h.n_levels(); ++l) {
      const Level& lv = h.levels[l];
      const SparseMatrix base = direct_interpolation(lv.a, lv.splitting, lv.pattern);
      const Vector d = spmv(lv.p, Vector::Ones(lv.p.cols())) - spmv(base, Vector::Ones(base.cols()));
      rows_here = std::max(rows_here, d.cwiseAbs().maxCoeff());
      asym_here = std::max(asym_here, rel_asymmetry(h.levels[l + 1].a));
    }
  }
  const bool all_evaluated = report.failures.empty() && report.count() == 200;
  return {all_evaluated && asym <= 1e-12 && rows <= 1e-12 && asym_here <= 1e-12 && rows_here <= 1e-12,
          "coarse asymmetry " + fmt(std::max(asym, asym_here)) + ", row-sum deviation " +
              fmt(std::max(rows, rows_here)) + " (<= 1e-12) over " + std::to_string(report.count()) +
              " evaluation problems, " + std::to_string(report.failures.size()) + " failures"};
}

Outcome criterion8(Context&) {
  double worst_sum = 0.0, min_eig = std::numeric_limits<double>::infinity();
  index_t largest = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const MeshProblem m = generate_fem_diffusion(500, WeightDistribution::lognormal(0.0, 0.5), seed);
    const DenseMatrix k = m.stiffness.to_dense();
    worst_sum = std::max(worst_sum, (k * Vector::Ones(k.cols())).cwiseAbs().maxCoeff());
    const Eigen::SelfAdjointEigenSolver<DenseMatrix> es(m.a.to_dense(), Eigen::EigenvaluesOnly);
    min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
    largest = std::max(largest, m.a.rows());
  }
  return {worst_sum <= 1e-9 && min_eig > 0.0 && largest <= 512,
          "max |K 1| " + fmt(worst_sum) + " (<= 1e-9), min eigenvalue " + fmt(min_eig) +
              " (> 0), largest interior n = " + std::to_string(largest) + " (<= 512)"};
}

Outcome criterion9(Context& ctx) {
  const EvalReport& report = ctx.evaluation();
  const double s1 = report.success_rate(1024), s2 = report.success_rate(16384);
  const double hours = (ctx.train_seconds + ctx.eval_seconds) / 3600.0;
  std::size_t rank_deficient = 0;
  for (const auto& r : report.records) rank_deficient += r.rank_deficient_levels > 0;
  const bool pass = report.count(1024) == 100 && report.count(16384) == 100 && s1 >= 0.6 &&
                    s2 >= 0.5 && hours <= 4.0;
  return {pass, "success " + fmt(100 * s1) + "% at n = 1024 (>= 60%), " + fmt(100 * s2) +
                    "% at n = 16384 (>= 50%); mean factor classical/learned " +
                    fmt(report.mean_baseline(1024)) + "/" + fmt(report.mean_learned(1024)) + " and " +
                    fmt(report.mean_baseline(16384)) + "/" + fmt(report.mean_learned(16384)) + "; " +
                    std::to_string(report.count()) + " records, " +
                    std::to_string(rank_deficient) + " rank-deficient; " + fmt(hours) +
                    " h (<= 4 h)"};
}

Outcome criterion10(Context& ctx) {
  auto improvement = [](const TrainLog& log, double& first, double& last) {
    std::vector<double> losses;
    for (const auto& b : log.batches)
      if (b.stage == 1) losses.push_back(b.mean_loss);
    const std::size_t k = std::max<std::size_t>(1, losses.size() / 10);
    first = last = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      first += losses[i] / k;
      last += losses[losses.size() - k + i] / k;
    }
    return last < first;
  };
  bool pass = true;
  std::ostringstream detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    TrainLog log;
    if (seed == 0) {
      log = ctx.model().log;
    } else {
      TrainConfig cfg;
      cfg.seed = seed;
      progress("stage 1 with seed " + std::to_string(seed));
      log = train(cfg, 1).log;
    }
    double first = 0.0, last = 0.0;
    const bool ok = improvement(log, first, last);
    pass = pass && ok;
    detail << (seed ? "; " : "") << "seed " << seed << ": " << fmt(first) << " -> " << fmt(last);
  }
  return {pass, "stage-1 mean batch loss, first 10% -> last 10%: " + detail.str()};
}

Outcome criterion11(Context& ctx) {
  const ProlongationProvider learned = learned_provider(ctx.model().params);
  CycleConfig cfg;
  double worst = 0.0, worst_base = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    KnnSpec spec;
    spec.n_points = 1024;
    spec.k = 10;
    spec.cloud = static_cast<PointCloud>(seed % 4);
    spec.jitter = true;
    const KnnProblem p = generate_knn_affinity_laplacian(spec, 700 + seed);
    const Hierarchy h = build_hierarchy(p.a, MatrixKind::SPD, cfg, learned);
    const Hierarchy hb = build_hierarchy(p.a, MatrixKind::SPD, cfg);
    Vector r(p.a.rows());
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    for (auto& v : r) v = normal(rng);
    const double rn = r.norm();
    worst = std::max(worst, (r - spmv(p.a, preconditioner_apply(h, r, cfg))).norm() / rn);
    worst_base = std::max(worst_base, (r - spmv(p.a, preconditioner_apply(hb, r, cfg))).norm() / rn);
  }
  return {worst <= 0.5, "worst residual ratio after one learned W-cycle " + fmt(worst) +
                            " (<= 0.5); classical " + fmt(worst_base)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Acceptance criteria", "acceptance");
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work", work, "output directory")->capture_default_str();
  app.add_option("--only", only, "run these criteria only")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  Context ctx;
  ctx.work = work;
  fs::create_directories(ctx.work);
  const std::vector<std::pair<std::string, std::function<Outcome(Context&)>>> criteria{
      {"Fourier and dense losses agree", criterion1},
      {"loss gradients match finite differences", criterion2},
      {"coarse correction annihilates P", criterion3},
      {"two-level factor matches rho(M)", criterion4},
      {"classical W-cycle quality", criterion5},
      {"generator is block-circulant", criterion6},
      {"Galerkin symmetry and row-sum scaling", criterion7},
      {"FEM stiffness and interior operator", criterion8},
      {"learned solver beats classical", criterion9},
      {"training loss decreases", criterion10},
      {"preconditioner halves the residual", criterion11},
  };
  const std::set<int> selected(only.begin(), only.end());
  std::ofstream report(ctx.work / "acceptance.txt");
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[k].second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::ostringstream line;
    line << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << ": " << criteria[k].first << "; "
         << o.detail;
    std::cout << line.str() << std::endl;
    report << line.str() << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
