#include "gnnamg/cycle.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/QR>

namespace gnnamg {

const char* to_string(CycleType t) { return t == CycleType::V ? "V" : "W"; }

CycleType cycle_type_from_string(const std::string& s) {
  if (s == "v" || s == "V") return CycleType::V;
  if (s == "w" || s == "W") return CycleType::W;
  throw std::invalid_argument("cycle must be v or w, got " + s);
}

void CycleConfig::validate() const {
  if (s1 < 0 || s2 < 0) throw std::invalid_argument("sweep counts must be nonnegative");
  if (max_coarse_size < 1) throw std::invalid_argument("max_coarse_size must be >= 1");
  if (max_levels < 1) throw std::invalid_argument("max_levels must be >= 1");
  if (max_iterations < 0) throw std::invalid_argument("max_iterations must be >= 0");
}

ProlongationProvider baseline_provider() {
  return [](const SparseMatrix& a, const Coarsening& c, int) {
    return direct_interpolation(a, c.splitting, c.pattern);
  };
}

double Hierarchy::operator_complexity() const {
  if (levels.empty()) return 0.0;
  double total = 0.0;
  for (const auto& l : levels) total += static_cast<double>(l.a.nnz());
  return total / static_cast<double>(levels.front().a.nnz());
}

DenseMatrix symmetric_pinv(const DenseMatrix& a, double rel_tol) {
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(a);
  const Vector& lambda = es.eigenvalues();
  const double cutoff = rel_tol * lambda.cwiseAbs().maxCoeff();
  Vector inv(lambda.size());
  for (Eigen::Index i = 0; i < lambda.size(); ++i)
    inv[i] = std::abs(lambda[i]) > cutoff ? 1.0 / lambda[i] : 0.0;
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

namespace {

void factor_coarsest(Hierarchy& h) {
  const SparseMatrix& ac = h.levels.back().a;
  if (h.coarse_solver == CoarseSolver::RelaxOnly) return;
  const DenseMatrix dense = ac.to_dense();
  if (h.kind == MatrixKind::SPSDLaplacian) {
    h.coarse_pinv = symmetric_pinv(dense);
    return;
  }
  h.coarse_llt.compute(dense);
  bool ok = h.coarse_llt.info() == Eigen::Success;
  if (ok) {
    const Vector d = DenseMatrix(h.coarse_llt.matrixL()).diagonal();
    const double max_diag = dense.diagonal().cwiseAbs().maxCoeff();
    ok = d.minCoeff() * d.minCoeff() >
         static_cast<double>(dense.rows()) * std::numeric_limits<double>::epsilon() * max_diag;
  }
  if (!ok)
    throw HierarchyError("coarsest matrix (" + std::to_string(ac.rows()) +
                         " rows) is not numerically positive definite");
}

void coarse_solve(const Hierarchy& h, const Vector& b, Vector& x, const CycleConfig& cfg) {
  const SparseMatrix& ac = h.levels.back().a;
  if (h.coarse_solver == CoarseSolver::RelaxOnly) {
    for (int k = 0; k < std::max(1, cfg.s1 + cfg.s2); ++k) gauss_seidel_sweep_inplace(ac, b, x);
    return;
  }
  if (h.kind == MatrixKind::SPSDLaplacian)
    x.noalias() = h.coarse_pinv * b;
  else
    x = h.coarse_llt.solve(b);
}

double mean(const Vector& v) { return v.size() ? v.mean() : 0.0; }

}  // namespace

Hierarchy build_hierarchy(const SparseMatrix& a, MatrixKind kind, const CycleConfig& config,
                          const ProlongationProvider& provider) {
  config.validate();
  if (a.rows() != a.cols()) throw DimensionError("build_hierarchy: matrix must be square");
  Hierarchy h;
  h.kind = kind;
  h.coarse_solver = config.coarse_solver;
  h.levels.push_back({a, {}, {}, {}, {}});
  while (h.n_levels() < config.max_levels && h.levels.back().a.rows() > config.max_coarse_size) {
    const SparseMatrix& cur = h.levels.back().a;
    Coarsening co = classical_coarsening(cur, config.theta);
    const index_t nc = co.splitting.n_coarse();
    if (nc == 0 || nc >= cur.rows()) break;
    SparseMatrix p = provider(cur, co, h.n_levels() - 1);
    if (p.rows() != cur.rows() || p.cols() != nc)
      throw DimensionError("prolongation provider returned a " + std::to_string(p.rows()) + "x" +
                           std::to_string(p.cols()) + " matrix, expected " +
                           std::to_string(cur.rows()) + "x" + std::to_string(nc));
    SparseMatrix ac = triple_product(p, cur);
    Level& fine = h.levels.back();
    fine.r = p.transpose();
    fine.p = std::move(p);
    fine.splitting = std::move(co.splitting);
    fine.pattern = std::move(co.pattern);
    h.levels.push_back({std::move(ac), {}, {}, {}, {}});
  }
  factor_coarsest(h);
  return h;
}

Hierarchy build_hierarchy(const SparseMatrix& a, MatrixKind kind, const CycleConfig& config) {
  return build_hierarchy(a, kind, config, baseline_provider());
}

void cycle(const Hierarchy& h, int level, const Vector& b, Vector& x, const CycleConfig& config) {
  if (level < 0 || level >= h.n_levels()) throw std::out_of_range("cycle: invalid level");
  const Level& l = h.levels[level];
  if (b.size() != l.a.rows() || x.size() != l.a.rows())
    throw DimensionError("cycle: vector size does not match level");
  if (level == h.n_levels() - 1) {
    coarse_solve(h, b, x, config);
    return;
  }
  for (int k = 0; k < config.s1; ++k) gauss_seidel_sweep_inplace(l.a, b, x);
  const Vector rc = spmv(l.r, residual(l.a, b, x));
  Vector ec = Vector::Zero(rc.size());
  const bool next_exact = level + 1 == h.n_levels() - 1 &&
                          h.coarse_solver == CoarseSolver::DenseSolve;
  const int calls = config.cycle == CycleType::W && !next_exact ? 2 : 1;
  for (int k = 0; k < calls; ++k) cycle(h, level + 1, rc, ec, config);
  x += spmv(l.p, ec);
  for (int k = 0; k < config.s2; ++k) gauss_seidel_sweep_inplace(l.a, b, x);
}

SolveResult solve(const Hierarchy& h, const Vector& b, const Vector& x0,
                  const CycleConfig& config) {
  const SparseMatrix& a = h.levels.front().a;
  if (b.size() != a.rows() || x0.size() != a.rows()) throw DimensionError("solve: size mismatch");
  const bool singular = h.kind == MatrixKind::SPSDLaplacian;
  if (singular && b.size() > 0 &&
      std::abs(mean(b)) * std::sqrt(static_cast<double>(b.size())) > 1e-10 * (b.norm() + 1e-300))
    throw std::invalid_argument("solve: right-hand side of a Laplacian must have zero mean");
  SolveResult out;
  out.x = x0;
  if (singular) out.x.array() -= mean(out.x);
  const double r0 = residual(a, b, out.x).norm();
  out.residual_history.push_back(r0);
  if (r0 < config.tolerance) {
    out.converged = true;
    return out;
  }
  for (int it = 1; it <= config.max_iterations; ++it) {
    cycle(h, 0, b, out.x, config);
    if (singular) out.x.array() -= mean(out.x);
    const double r = residual(a, b, out.x).norm();
    out.residual_history.push_back(r);
    out.iterations = it;
    if (!std::isfinite(r) || r > 1e6 * r0)
      throw DivergenceError("residual grew from " + std::to_string(r0) + " to " +
                            std::to_string(r) + " after " + std::to_string(it) + " cycles");
    if (r < config.tolerance) {
      out.converged = true;
      break;
    }
  }
  return out;
}

void write_residual_history(const std::string& path, const std::vector<double>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "iteration,residual_2norm\n" << std::setprecision(17);
  for (std::size_t k = 0; k < history.size(); ++k) out << k << "," << history[k] << "\n";
}

namespace {

DenseMatrix dense_relaxation(const DenseMatrix& a) {
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    if (a(i, i) == 0.0) throw SingularRelaxationError("zero diagonal in row " + std::to_string(i));
  DenseMatrix s = -a.triangularView<Eigen::Lower>().solve(a);
  s.diagonal().array() += 1.0;
  return s;
}

void check_shapes(const DenseMatrix& a, const DenseMatrix& p) {
  if (a.rows() != a.cols() || p.rows() != a.rows())
    throw DimensionError("coarse correction: A must be n x n and P n x n_c");
}

}  // namespace

DenseMatrix coarse_correction_matrix(const DenseMatrix& a, const DenseMatrix& p) {
  check_shapes(a, p);
  const DenseMatrix pta = p.transpose() * a;
  const DenseMatrix ac = pta * p;
  Eigen::PartialPivLU<DenseMatrix> lu(ac);
  if (ac.rows() > 0 &&
      !(lu.rcond() > static_cast<double>(ac.rows()) * std::numeric_limits<double>::epsilon()))
    throw SingularMatrixError("P^T A P is singular");
  DenseMatrix c = -p * lu.solve(pta);
  c.diagonal().array() += 1.0;
  return c;
}

DenseMatrix coarse_correction_matrix_pinv(const DenseMatrix& a, const DenseMatrix& p) {
  check_shapes(a, p);
  const DenseMatrix pta = p.transpose() * a;
  const DenseMatrix ac = pta * p;
  DenseMatrix c = -p * (symmetric_pinv(0.5 * (ac + ac.transpose())) * pta);
  c.diagonal().array() += 1.0;
  return c;
}

DenseMatrix error_propagation_matrix(const DenseMatrix& a, const DenseMatrix& p, int s1, int s2,
                                     bool pseudo_inverse) {
  if (s1 < 0 || s2 < 0) throw std::invalid_argument("sweep counts must be nonnegative");
  DenseMatrix m = pseudo_inverse ? coarse_correction_matrix_pinv(a, p)
                                 : coarse_correction_matrix(a, p);
  if (s1 + s2 == 0) return m;
  const DenseMatrix s = dense_relaxation(a);
  for (int k = 0; k < s1; ++k) m = m * s;
  for (int k = 0; k < s2; ++k) m = s * m;
  return m;
}

SpectralRadius spectral_radius(const DenseMatrix& m, double tol, int max_iterations,
                               std::uint64_t seed) {
  if (m.rows() != m.cols()) throw DimensionError("spectral_radius: matrix must be square");
  SpectralRadius out;
  const Eigen::Index n = m.rows();
  if (n == 0) {
    out.converged = true;
    return out;
  }
  const Eigen::Index k = std::min<Eigen::Index>(n, 8);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  DenseMatrix q(n, k);
  for (Eigen::Index j = 0; j < k; ++j)
    for (Eigen::Index i = 0; i < n; ++i) q(i, j) = normal(rng);
  q = Eigen::HouseholderQR<DenseMatrix>(q).householderQ() * DenseMatrix::Identity(n, k);

  double prev = -1.0;
  int stable = 0;
  for (int it = 1; it <= max_iterations; ++it) {
    const DenseMatrix z = m * q;
    const DenseMatrix proj = q.transpose() * z;
    const double est = Eigen::EigenSolver<DenseMatrix>(proj, false).eigenvalues().cwiseAbs().maxCoeff();
    out.value = est;
    out.iterations = it;
    if (std::abs(est - prev) <= tol * std::max(est, 1e-300) || est == 0.0) {
      if (++stable >= 3) {
        out.converged = true;
        return out;
      }
    } else {
      stable = 0;
    }
    prev = est;
    const double zn = z.norm();
    if (zn == 0.0) {
      out.value = 0.0;
      out.converged = true;
      return out;
    }
    q = Eigen::HouseholderQR<DenseMatrix>(z).householderQ() * DenseMatrix::Identity(n, k);
  }
  return out;
}

double asymptotic_convergence_factor(const Hierarchy& h, const CycleConfig& config,
                                     std::uint64_t seed, int cycles) {
  const SparseMatrix& a = h.levels.front().a;
  const bool singular = h.kind == MatrixKind::SPSDLaplacian;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Vector x(a.rows());
  for (auto& v : x) v = normal(rng);
  if (singular) x.array() -= mean(x);
  const Vector b = Vector::Zero(a.rows());
  double prev = spmv(a, x).norm();
  double ratio = 0.0;
  for (int k = 0; k < cycles; ++k) {
    if (prev < 1e-280) break;
    cycle(h, 0, b, x, config);
    if (singular) x.array() -= mean(x);
    const double r = spmv(a, x).norm();
    ratio = r / prev;
    prev = r;
  }
  return ratio;
}

Vector preconditioner_apply(const Hierarchy& h, const Vector& r, const CycleConfig& config) {
  Vector x = Vector::Zero(r.size());
  cycle(h, 0, r, x, config);
  return x;
}

}  // namespace gnnamg
