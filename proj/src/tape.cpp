#include "gnnamg/tape.hpp"

#include <cmath>
#include <limits>

#include <Eigen/LU>

namespace gnnamg {

namespace kernels {

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions disagree");
  DenseMatrix c(a.rows(), b.cols());
  c.noalias() = a * b;
  return c;
}

DenseMatrix add_bias(const DenseMatrix& x, const DenseMatrix& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) throw DimensionError("add_bias: bad bias shape");
  DenseMatrix y = x;
  y.rowwise() += bias.row(0);
  return y;
}

DenseMatrix relu(const DenseMatrix& x) { return x.cwiseMax(0.0); }

DenseMatrix gather_rows(const DenseMatrix& x, std::span<const index_t> idx) {
  DenseMatrix y(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) y.row(k) = x.row(idx[k]);
  return y;
}

DenseMatrix scatter_add_rows(const DenseMatrix& x, std::span<const index_t> idx, index_t n_out) {
  if (static_cast<std::size_t>(x.rows()) != idx.size())
    throw DimensionError("scatter_add_rows: one index per row required");
  DenseMatrix y = DenseMatrix::Zero(n_out, x.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) y.row(idx[k]) += x.row(k);
  return y;
}

DenseMatrix concat_cols(std::span<const DenseMatrix* const> parts) {
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts.empty() ? 0 : parts[0]->rows();
  for (const auto* p : parts) {
    if (p->rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p->cols();
  }
  DenseMatrix y(rows, cols);
  Eigen::Index at = 0;
  for (const auto* p : parts) {
    y.middleCols(at, p->cols()) = *p;
    at += p->cols();
  }
  return y;
}

}  // namespace kernels

const DenseMatrix& Var::value() const { return tape_->value(id_); }

const DenseMatrix& Var::grad() const { return tape_->grad(id_); }

Var Tape::leaf(DenseMatrix value, bool requires_grad) {
  nodes_.push_back({std::move(value), {}, nullptr, requires_grad, false});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(DenseMatrix value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(DenseMatrix value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape() != this) throw std::invalid_argument("mixing variables from different tapes");
    needs = needs || nodes_[v.id()].requires_grad;
  }
  nodes_.push_back({std::move(value), {}, needs ? std::move(backward) : nullptr, needs, false});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

DenseMatrix& Tape::grad(int id) {
  Node& n = nodes_[id];
  if (!n.grad_ready) {
    n.grad = DenseMatrix::Zero(n.value.rows(), n.value.cols());
    n.grad_ready = true;
  }
  return n.grad;
}

void Tape::backward(const Var& output) {
  if (output.tape() != this) throw std::invalid_argument("backward: variable from another tape");
  if (output.value().size() != 1) throw DimensionError("backward needs a scalar output");
  for (auto& n : nodes_) n.grad_ready = false;
  grad(output.id())(0, 0) = 1.0;
  for (int id = output.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && n.grad_ready) n.backward(*this, id);
  }
}

DenseMatrix embed_complex(const Eigen::MatrixXcd& z) {
  const Eigen::Index m = z.rows(), k = z.cols();
  DenseMatrix e(2 * m, 2 * k);
  e.topLeftCorner(m, k) = z.real();
  e.topRightCorner(m, k) = -z.imag();
  e.bottomLeftCorner(m, k) = z.imag();
  e.bottomRightCorner(m, k) = z.real();
  return e;
}

namespace ad {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shapes differ");
}

void accumulate(Tape& t, int id, const DenseMatrix& g) {
  if (t.requires_grad(id)) t.grad(id) += g;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, int self) {
    const DenseMatrix& g = t.grad(self);
    accumulate(t, ia, g);
    accumulate(t, ib, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, int self) {
    const DenseMatrix& g = t.grad(self);
    accumulate(t, ia, g);
    if (t.requires_grad(ib)) t.grad(ib) -= g;
  });
}

Var scale(const Var& a, double s) {
  const int ia = a.id();
  return a.tape()->record(s * a.value(), {a}, [ia, s](Tape& t, int self) {
    t.grad(ia) += s * t.grad(self);
  });
}

Var matmul(const Var& a, const Var& b) {
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(kernels::matmul(a.value(), b.value()), {a, b},
                          [ia, ib](Tape& t, int self) {
                            const DenseMatrix& g = t.grad(self);
                            if (t.requires_grad(ia)) t.grad(ia).noalias() += g * t.value(ib).transpose();
                            if (t.requires_grad(ib)) t.grad(ib).noalias() += t.value(ia).transpose() * g;
                          });
}

Var transpose(const Var& a) {
  const int ia = a.id();
  return a.tape()->record(a.value().transpose(), {a}, [ia](Tape& t, int self) {
    t.grad(ia) += t.grad(self).transpose();
  });
}

Var relu(const Var& a) {
  const int ia = a.id();
  return a.tape()->record(kernels::relu(a.value()), {a}, [ia](Tape& t, int self) {
    t.grad(ia).array() += (t.value(ia).array() > 0.0).select(t.grad(self).array(), 0.0);
  });
}

Var hadamard(const Var& a, const Var& b) {
  require_same_shape(a, b, "hadamard");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& t, int self) {
    const DenseMatrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia) += g.cwiseProduct(t.value(ib));
    if (t.requires_grad(ib)) t.grad(ib) += g.cwiseProduct(t.value(ia));
  });
}

Var reciprocal(const Var& a) {
  const int ia = a.id();
  return a.tape()->record(a.value().cwiseInverse(), {a}, [ia](Tape& t, int self) {
    const DenseMatrix& y = t.value(self);
    t.grad(ia).array() -= t.grad(self).array() * y.array().square();
  });
}

Var divide(const Var& a, const Var& b) {
  require_same_shape(a, b, "divide");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value().cwiseQuotient(b.value()), {a, b}, [ia, ib](Tape& t, int self) {
    const DenseMatrix& g = t.grad(self);
    const DenseMatrix& bv = t.value(ib);
    if (t.requires_grad(ia)) t.grad(ia) += g.cwiseQuotient(bv);
    if (t.requires_grad(ib))
      t.grad(ib).array() -= g.array() * t.value(self).array() / bv.array();
  });
}

Var clamp_magnitude(const Var& a, double eps) {
  const int ia = a.id();
  DenseMatrix y = a.value().unaryExpr([eps](double x) {
    if (std::abs(x) >= eps) return x;
    return x < 0.0 ? -eps : eps;
  });
  return a.tape()->record(std::move(y), {a}, [ia, eps](Tape& t, int self) {
    t.grad(ia).array() +=
        (t.value(ia).array().abs() >= eps).select(t.grad(self).array(), 0.0);
  });
}

Var sum(const Var& a) {
  const int ia = a.id();
  return a.tape()->record(DenseMatrix::Constant(1, 1, a.value().sum()), {a},
                          [ia](Tape& t, int self) {
                            t.grad(ia).array() += t.grad(self)(0, 0);
                          });
}

Var frobenius_sq(const Var& a) {
  const int ia = a.id();
  return a.tape()->record(DenseMatrix::Constant(1, 1, a.value().squaredNorm()), {a},
                          [ia](Tape& t, int self) {
                            t.grad(ia) += (2.0 * t.grad(self)(0, 0)) * t.value(ia);
                          });
}

Var inverse(const Var& a) {
  if (a.rows() != a.cols()) throw DimensionError("inverse of a non-square matrix");
  Eigen::PartialPivLU<DenseMatrix> lu(a.value());
  if (a.rows() > 0 &&
      !(lu.rcond() > static_cast<double>(a.rows()) * std::numeric_limits<double>::epsilon()))
    throw SingularMatrixError("inverse: matrix is numerically singular");
  const int ia = a.id();
  return a.tape()->record(lu.inverse(), {a}, [ia](Tape& t, int self) {
    const DenseMatrix& y = t.value(self);
    t.grad(ia).noalias() -= y.transpose() * t.grad(self) * y.transpose();
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  std::vector<const DenseMatrix*> values;
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    values.push_back(&p.value());
    layout.push_back({p.id(), at});
    at += p.cols();
  }
  return parts[0].tape()->record(kernels::concat_cols(values), parts,
                                 [layout](Tape& t, int self) {
                                   const DenseMatrix& g = t.grad(self);
                                   for (const auto& [id, offset] : layout)
                                     if (t.requires_grad(id))
                                       t.grad(id) += g.middleCols(offset, t.value(id).cols());
                                 });
}

Var add_bias(const Var& x, const Var& bias) {
  const int ix = x.id(), ib = bias.id();
  return x.tape()->record(kernels::add_bias(x.value(), bias.value()), {x, bias},
                          [ix, ib](Tape& t, int self) {
                            const DenseMatrix& g = t.grad(self);
                            accumulate(t, ix, g);
                            if (t.requires_grad(ib)) t.grad(ib) += g.colwise().sum();
                          });
}

Var gather_rows(const Var& x, std::span<const index_t> idx) {
  for (const index_t i : idx)
    if (i < 0 || i >= x.rows()) throw DimensionError("gather_rows: index out of range");
  const int ix = x.id();
  std::vector<index_t> copy(idx.begin(), idx.end());
  return x.tape()->record(kernels::gather_rows(x.value(), idx), {x},
                          [ix, copy = std::move(copy)](Tape& t, int self) {
                            const DenseMatrix& g = t.grad(self);
                            DenseMatrix& gx = t.grad(ix);
                            for (std::size_t k = 0; k < copy.size(); ++k) gx.row(copy[k]) += g.row(k);
                          });
}

Var scatter_add_rows(const Var& x, std::span<const index_t> idx, index_t n_out) {
  for (const index_t i : idx)
    if (i < 0 || i >= n_out) throw DimensionError("scatter_add_rows: index out of range");
  const int ix = x.id();
  std::vector<index_t> copy(idx.begin(), idx.end());
  return x.tape()->record(kernels::scatter_add_rows(x.value(), idx, n_out), {x},
                          [ix, copy = std::move(copy)](Tape& t, int self) {
                            const DenseMatrix& g = t.grad(self);
                            DenseMatrix& gx = t.grad(ix);
                            for (std::size_t k = 0; k < copy.size(); ++k) gx.row(k) += g.row(copy[k]);
                          });
}

Var scatter_to_dense(const Var& column, std::span<const index_t> rows,
                     std::span<const index_t> cols, Eigen::Index n_rows, Eigen::Index n_cols) {
  if (column.cols() != 1 || static_cast<std::size_t>(column.rows()) != rows.size() ||
      rows.size() != cols.size())
    throw DimensionError("scatter_to_dense: one position per entry required");
  DenseMatrix y = DenseMatrix::Zero(n_rows, n_cols);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= n_rows || cols[k] < 0 || cols[k] >= n_cols)
      throw DimensionError("scatter_to_dense: position out of range");
    y(rows[k], cols[k]) += column.value()(k, 0);
  }
  const int ic = column.id();
  std::vector<index_t> r(rows.begin(), rows.end()), c(cols.begin(), cols.end());
  return column.tape()->record(std::move(y), {column},
                               [ic, r = std::move(r), c = std::move(c)](Tape& t, int self) {
                                 const DenseMatrix& g = t.grad(self);
                                 DenseMatrix& gc = t.grad(ic);
                                 for (std::size_t k = 0; k < r.size(); ++k) gc(k, 0) += g(r[k], c[k]);
                               });
}

Var complex_embed(std::span<const Var> blocks, std::span<const std::complex<double>> phases) {
  if (blocks.empty() || blocks.size() != phases.size())
    throw DimensionError("complex_embed: one phase per block required");
  const Eigen::Index m = blocks[0].rows(), k = blocks[0].cols();
  DenseMatrix re = DenseMatrix::Zero(m, k), im = DenseMatrix::Zero(m, k);
  for (std::size_t q = 0; q < blocks.size(); ++q) {
    if (blocks[q].rows() != m || blocks[q].cols() != k)
      throw DimensionError("complex_embed: block shapes differ");
    re += phases[q].real() * blocks[q].value();
    im += phases[q].imag() * blocks[q].value();
  }
  DenseMatrix e(2 * m, 2 * k);
  e.topLeftCorner(m, k) = re;
  e.topRightCorner(m, k) = -im;
  e.bottomLeftCorner(m, k) = im;
  e.bottomRightCorner(m, k) = re;
  std::vector<std::pair<int, std::complex<double>>> items;
  for (std::size_t q = 0; q < blocks.size(); ++q) items.push_back({blocks[q].id(), phases[q]});
  return blocks[0].tape()->record(std::move(e), blocks, [items, m, k](Tape& t, int self) {
    const DenseMatrix& g = t.grad(self);
    const DenseMatrix diag = g.topLeftCorner(m, k) + g.bottomRightCorner(m, k);
    const DenseMatrix anti = g.bottomLeftCorner(m, k) - g.topRightCorner(m, k);
    for (const auto& [id, phase] : items)
      if (t.requires_grad(id)) t.grad(id) += phase.real() * diag + phase.imag() * anti;
  });
}

Var slice(const Var& a, Eigen::Index r, Eigen::Index c, Eigen::Index nr, Eigen::Index nc) {
  if (r < 0 || c < 0 || r + nr > a.rows() || c + nc > a.cols())
    throw DimensionError("slice out of range");
  const int ia = a.id();
  return a.tape()->record(a.value().block(r, c, nr, nc), {a}, [ia, r, c, nr, nc](Tape& t, int self) {
    t.grad(ia).block(r, c, nr, nc) += t.grad(self);
  });
}

}  // namespace ad

}  // namespace gnnamg
