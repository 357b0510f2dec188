#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "gnnamg/amg.hpp"
#include "gnnamg/sparse.hpp"

namespace gnnamg {

enum class CycleType { V, W };
const char* to_string(CycleType t);
CycleType cycle_type_from_string(const std::string& s);

enum class CoarseSolver { DenseSolve, RelaxOnly };

struct CycleConfig {
  int s1 = 1;
  int s2 = 1;
  CycleType cycle = CycleType::W;
  int max_levels = 25;
  index_t max_coarse_size = 64;
  double tolerance = 1e-8;
  int max_iterations = 500;
  double theta = 0.25;
  CoarseSolver coarse_solver = CoarseSolver::DenseSolve;

  void validate() const;
};

/// Supplies P for one level from the matrix and its classical coarsening.
using ProlongationProvider =
    std::function<SparseMatrix(const SparseMatrix& a, const Coarsening& coarsening, int level)>;

/// Classical direct interpolation.
ProlongationProvider baseline_provider();

struct Level {
  SparseMatrix a;
  SparseMatrix p;  // empty on the coarsest level
  SparseMatrix r;  // p transposed
  Splitting splitting;
  SparsityPattern pattern;
};

struct Hierarchy {
  std::vector<Level> levels;
  MatrixKind kind = MatrixKind::SPD;
  CoarseSolver coarse_solver = CoarseSolver::DenseSolve;
  Eigen::LLT<DenseMatrix> coarse_llt;  // SPD coarsest level
  DenseMatrix coarse_pinv;             // SPSD coarsest level

  int n_levels() const { return static_cast<int>(levels.size()); }
  /// Sum of nnz over levels divided by nnz of the finest matrix.
  double operator_complexity() const;
};

/// Galerkin hierarchy. Coarsening stops when a level is no larger than
/// max_coarse_size, when max_levels is reached, or when the splitting
/// would not shrink the level. Throws HierarchyError when the coarsest SPD
/// matrix cannot be factored.
Hierarchy build_hierarchy(const SparseMatrix& a, MatrixKind kind, const CycleConfig& config,
                          const ProlongationProvider& provider);
Hierarchy build_hierarchy(const SparseMatrix& a, MatrixKind kind, const CycleConfig& config);

/// One V or W cycle starting at `level`, updating x in place.
void cycle(const Hierarchy& h, int level, const Vector& b, Vector& x, const CycleConfig& config);

struct SolveResult {
  Vector x;
  std::vector<double> residual_history;  // entry k is ||b - A x_k||
  int iterations = 0;
  bool converged = false;
};

/// Repeats cycles until ||b - A x|| < tolerance or max_iterations. For
/// SPSD-Laplacian hierarchies the iterate is kept at zero mean. Throws
/// DivergenceError when the residual exceeds 1e6 times the initial one.
SolveResult solve(const Hierarchy& h, const Vector& b, const Vector& x0, const CycleConfig& config);

void write_residual_history(const std::string& path, const std::vector<double>& history);

/// C = I - P (P^T A P)^{-1} P^T A. Throws SingularMatrixError when P^T A P
/// is singular.
DenseMatrix coarse_correction_matrix(const DenseMatrix& a, const DenseMatrix& p);
/// Same with the Moore-Penrose inverse of P^T A P, for singular operators.
DenseMatrix coarse_correction_matrix_pinv(const DenseMatrix& a, const DenseMatrix& p);

/// M = S^{s2} C S^{s1} with S the forward Gauss-Seidel error propagator.
DenseMatrix error_propagation_matrix(const DenseMatrix& a, const DenseMatrix& p, int s1, int s2,
                                     bool pseudo_inverse = false);

/// Pseudo-inverse of a symmetric matrix, dropping eigenvalues below
/// rel_tol * max |eigenvalue|.
DenseMatrix symmetric_pinv(const DenseMatrix& a, double rel_tol = 1e-10);

struct SpectralRadius {
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

/// Dominant eigenvalue magnitude by block power iteration with a small
/// Rayleigh-Ritz projection, so complex-conjugate dominant pairs converge.
SpectralRadius spectral_radius(const DenseMatrix& m, double tol = 1e-8, int max_iterations = 10000,
                               std::uint64_t seed = 0);

/// Residual ratio ||r_80|| / ||r_79|| of 80 cycles on A x = 0 from a
/// unit-normal start. SPSD-Laplacian iterates are kept at zero mean.
double asymptotic_convergence_factor(const Hierarchy& h, const CycleConfig& config,
                                     std::uint64_t seed, int cycles = 80);

/// One cycle on A x = r from x = 0.
Vector preconditioner_apply(const Hierarchy& h, const Vector& r, const CycleConfig& config);

}  // namespace gnnamg
