#pragma once

#include <complex>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "gnnamg/sparse.hpp"

namespace gnnamg {

/// Forward kernels shared by the tape and by untaped evaluation, so both
/// paths produce identical bits.
namespace kernels {
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix add_bias(const DenseMatrix& x, const DenseMatrix& bias);
DenseMatrix relu(const DenseMatrix& x);
DenseMatrix gather_rows(const DenseMatrix& x, std::span<const index_t> idx);
DenseMatrix scatter_add_rows(const DenseMatrix& x, std::span<const index_t> idx, index_t n_out);
DenseMatrix concat_cols(std::span<const DenseMatrix* const> parts);
}  // namespace kernels

class Tape;

/// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  const DenseMatrix& value() const;
  const DenseMatrix& grad() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape over dense real matrices. Nodes are stored in creation
/// order, which is a topological order; backward walks it once in reverse.
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Var leaf(DenseMatrix value, bool requires_grad = true);
  Var constant(DenseMatrix value) { return leaf(std::move(value), false); }
  Var record(DenseMatrix value, std::initializer_list<Var> inputs, Backward backward);
  Var record(DenseMatrix value, std::span<const Var> inputs, Backward backward);

  /// Seeds d(output)/d(output) = 1 for a 1x1 output and propagates.
  void backward(const Var& output);

  const DenseMatrix& value(int id) const { return nodes_[id].value; }
  /// Gradient buffer, allocated as zeros on first use.
  DenseMatrix& grad(int id);
  bool has_grad(int id) const { return nodes_[id].grad_ready; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    DenseMatrix value;
    DenseMatrix grad;
    Backward backward;
    bool requires_grad = false;
    bool grad_ready = false;
  };
  std::deque<Node> nodes_;  // stable references while recording
};

namespace ad {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var relu(const Var& a);
Var hadamard(const Var& a, const Var& b);
Var reciprocal(const Var& a);
/// Elementwise a / b.
Var divide(const Var& a, const Var& b);
/// sign(x) * max(|x|, eps); the gradient is zero where the clamp is active.
Var clamp_magnitude(const Var& a, double eps);
Var sum(const Var& a);
Var frobenius_sq(const Var& a);
/// LU-based inverse; d(X^{-1}) = -X^{-1} dX X^{-1}. Throws
/// SingularMatrixError when X is numerically singular.
Var inverse(const Var& a);
Var concat_cols(std::span<const Var> parts);
/// x + 1 * bias with bias a 1 x k row.
Var add_bias(const Var& x, const Var& bias);
Var gather_rows(const Var& x, std::span<const index_t> idx);
Var scatter_add_rows(const Var& x, std::span<const index_t> idx, index_t n_out);
/// Places the entries of a k x 1 column at (rows[k], cols[k]) of a zero
/// matrix of the given shape; repeated positions add.
Var scatter_to_dense(const Var& column, std::span<const index_t> rows,
                     std::span<const index_t> cols, Eigen::Index n_rows, Eigen::Index n_cols);
/// Real 2m x 2k embedding [[Re, -Im], [Im, Re]] of sum_k phase_k * block_k
/// for real blocks.
Var complex_embed(std::span<const Var> blocks, std::span<const std::complex<double>> phases);
/// Rows [r, r + nr) and columns [c, c + nc).
Var slice(const Var& a, Eigen::Index r, Eigen::Index c, Eigen::Index nr, Eigen::Index nc);

}  // namespace ad

/// Real 2m x 2k embedding of a complex matrix.
DenseMatrix embed_complex(const Eigen::MatrixXcd& z);

}  // namespace gnnamg
