#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gnnamg/errors.hpp"

namespace gnnamg {

using index_t = std::int32_t;
using Vector = Eigen::VectorXd;
using DenseMatrix = Eigen::MatrixXd;

/// Complex matrix stored as a pair of real matrices of identical shape.
struct ComplexDenseMatrix {
  DenseMatrix re;
  DenseMatrix im;

  ComplexDenseMatrix() = default;
  ComplexDenseMatrix(DenseMatrix real, DenseMatrix imag);
  static ComplexDenseMatrix zeros(Eigen::Index rows, Eigen::Index cols);

  Eigen::Index rows() const { return re.rows(); }
  Eigen::Index cols() const { return re.cols(); }
  Eigen::MatrixXcd to_complex() const;
  static ComplexDenseMatrix from_complex(const Eigen::MatrixXcd& z);
};

enum class MatrixKind { SPD, SPSDLaplacian };

const char* to_string(MatrixKind kind);
MatrixKind matrix_kind_from_string(const std::string& s);

struct Triplet {
  index_t row;
  index_t col;
  double value;
};

/// Compressed sparse row matrix. Immutable after construction.
///
/// Column indices are strictly increasing within each row. Explicit zeros
/// may be stored; they are kept so a prolongation weight of exactly zero
/// does not change the sparsity pattern.
class SparseMatrix {
 public:
  SparseMatrix() = default;
  /// Takes ownership of CSR arrays; throws ConstructionError if they are
  /// not canonical.
  SparseMatrix(index_t n_rows, index_t n_cols, std::vector<index_t> row_offsets,
               std::vector<index_t> col_indices, std::vector<double> values);

  /// Builds a canonical matrix from coordinates. Duplicates are summed.
  static SparseMatrix from_coordinates(std::span<const Triplet> triples, index_t n_rows,
                                       index_t n_cols);
  static SparseMatrix identity(index_t n);
  /// Keeps entries with |a_ij| > drop_tolerance.
  static SparseMatrix from_dense(const DenseMatrix& dense, double drop_tolerance = 0.0);

  index_t rows() const { return n_rows_; }
  index_t cols() const { return n_cols_; }
  std::size_t nnz() const { return values_.size(); }

  std::span<const index_t> row_offsets() const { return row_offsets_; }
  std::span<const index_t> col_indices() const { return col_indices_; }
  std::span<const double> values() const { return values_; }

  std::span<const index_t> row_cols(index_t i) const {
    return {col_indices_.data() + row_offsets_[i],
            static_cast<std::size_t>(row_offsets_[i + 1] - row_offsets_[i])};
  }
  std::span<const double> row_values(index_t i) const {
    return {values_.data() + row_offsets_[i],
            static_cast<std::size_t>(row_offsets_[i + 1] - row_offsets_[i])};
  }

  /// Value at (i, j), zero when not stored.
  double coeff(index_t i, index_t j) const;
  bool contains(index_t i, index_t j) const;

  DenseMatrix to_dense() const;
  SparseMatrix transpose() const;
  std::vector<Triplet> to_triplets() const;

  /// Maximum |a_ij - a_ji| relative to the largest |a_ij|.
  double asymmetry() const;
  bool is_symmetric(double rel_tol = 1e-12) const { return asymmetry() <= rel_tol; }
  double frobenius_norm() const;
  Vector diagonal() const;

  friend bool operator==(const SparseMatrix&, const SparseMatrix&) = default;

 private:
  index_t n_rows_ = 0;
  index_t n_cols_ = 0;
  std::vector<index_t> row_offsets_{0};
  std::vector<index_t> col_indices_;
  std::vector<double> values_;
};

Vector spmv(const SparseMatrix& a, const Vector& x);
/// y = b - A x
Vector residual(const SparseMatrix& a, const Vector& b, const Vector& x);

SparseMatrix multiply(const SparseMatrix& a, const SparseMatrix& b);
SparseMatrix add(const SparseMatrix& a, const SparseMatrix& b, double alpha = 1.0,
                 double beta = 1.0);

/// Galerkin product P^T A P. The result is symmetrized, so it is exactly
/// symmetric whenever A is symmetric up to rounding.
SparseMatrix triple_product(const SparseMatrix& p, const SparseMatrix& a);

struct LowerUpper {
  SparseMatrix lower;  // col <= row
  SparseMatrix upper;  // col > row
};
LowerUpper split_lower(const SparseMatrix& a);

/// One forward Gauss-Seidel sweep: x + L^{-1}(b - A x).
Vector gauss_seidel_sweep(const SparseMatrix& a, const Vector& b, const Vector& x);
void gauss_seidel_sweep_inplace(const SparseMatrix& a, const Vector& b, Vector& x);

/// S = I - L^{-1} A, densified.
DenseMatrix build_relaxation_dense(const SparseMatrix& a);

bool check_kind(const SparseMatrix& a, MatrixKind kind);

/// Matrix Market coordinate I/O ("general" or "symmetric" real matrices).
SparseMatrix read_matrix_market(const std::string& path);
void write_matrix_market(const std::string& path, const SparseMatrix& a, bool symmetric = false);

}  // namespace gnnamg
