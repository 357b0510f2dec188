#include "gnnamg/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>

namespace gnnamg {

ComplexDenseMatrix::ComplexDenseMatrix(DenseMatrix real, DenseMatrix imag)
    : re(std::move(real)), im(std::move(imag)) {
  if (re.rows() != im.rows() || re.cols() != im.cols())
    throw DimensionError("complex matrix parts differ in shape");
}

ComplexDenseMatrix ComplexDenseMatrix::zeros(Eigen::Index rows, Eigen::Index cols) {
  return {DenseMatrix::Zero(rows, cols), DenseMatrix::Zero(rows, cols)};
}

Eigen::MatrixXcd ComplexDenseMatrix::to_complex() const {
  Eigen::MatrixXcd z(re.rows(), re.cols());
  z.real() = re;
  z.imag() = im;
  return z;
}

ComplexDenseMatrix ComplexDenseMatrix::from_complex(const Eigen::MatrixXcd& z) {
  return {z.real(), z.imag()};
}

const char* to_string(MatrixKind kind) {
  return kind == MatrixKind::SPD ? "spd" : "spsd-laplacian";
}

MatrixKind matrix_kind_from_string(const std::string& s) {
  if (s == "spd" || s == "SPD") return MatrixKind::SPD;
  if (s == "spsd" || s == "spsd-laplacian" || s == "SPSD-Laplacian") return MatrixKind::SPSDLaplacian;
  throw std::invalid_argument("unknown matrix kind: " + s);
}

SparseMatrix::SparseMatrix(index_t n_rows, index_t n_cols, std::vector<index_t> row_offsets,
                           std::vector<index_t> col_indices, std::vector<double> values)
    : n_rows_(n_rows),
      n_cols_(n_cols),
      row_offsets_(std::move(row_offsets)),
      col_indices_(std::move(col_indices)),
      values_(std::move(values)) {
  if (n_rows_ < 0 || n_cols_ < 0) throw ConstructionError("negative dimension");
  if (row_offsets_.size() != static_cast<std::size_t>(n_rows_) + 1)
    throw ConstructionError("row_offsets must have n_rows + 1 entries");
  if (row_offsets_.front() != 0) throw ConstructionError("row_offsets[0] must be 0");
  if (static_cast<std::size_t>(row_offsets_.back()) != col_indices_.size() ||
      col_indices_.size() != values_.size())
    throw ConstructionError("row_offsets[n_rows] must equal the number of stored entries");
  for (index_t i = 0; i < n_rows_; ++i) {
    if (row_offsets_[i + 1] < row_offsets_[i])
      throw ConstructionError("row_offsets must be non-decreasing");
    for (index_t k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) {
      const index_t j = col_indices_[k];
      if (j < 0 || j >= n_cols_) throw ConstructionError("column index out of range");
      if (k > row_offsets_[i] && col_indices_[k - 1] >= j)
        throw ConstructionError("column indices must be strictly increasing within a row");
    }
  }
}

SparseMatrix SparseMatrix::from_coordinates(std::span<const Triplet> triples, index_t n_rows,
                                            index_t n_cols) {
  if (n_rows < 0 || n_cols < 0) throw ConstructionError("negative dimension");
  std::vector<index_t> counts(static_cast<std::size_t>(n_rows) + 1, 0);
  for (const auto& t : triples) {
    if (t.row < 0 || t.row >= n_rows || t.col < 0 || t.col >= n_cols) {
      std::ostringstream msg;
      msg << "coordinate (" << t.row << ", " << t.col << ") out of range for " << n_rows << "x"
          << n_cols;
      throw ConstructionError(msg.str());
    }
    ++counts[t.row + 1];
  }
  std::partial_sum(counts.begin(), counts.end(), counts.begin());

  // Bucket by row keeping input order, then sort each row by column. The
  // stable sort keeps duplicate summation in input order.
  std::vector<index_t> cols(triples.size());
  std::vector<double> vals(triples.size());
  {
    std::vector<index_t> cursor(counts.begin(), counts.end() - 1);
    for (const auto& t : triples) {
      const index_t k = cursor[t.row]++;
      cols[k] = t.col;
      vals[k] = t.value;
    }
  }

  std::vector<index_t> offsets(static_cast<std::size_t>(n_rows) + 1, 0);
  std::vector<index_t> out_cols;
  std::vector<double> out_vals;
  out_cols.reserve(triples.size());
  out_vals.reserve(triples.size());
  std::vector<index_t> order;
  for (index_t i = 0; i < n_rows; ++i) {
    const index_t begin = counts[i];
    const index_t end = counts[i + 1];
    order.resize(end - begin);
    std::iota(order.begin(), order.end(), begin);
    std::stable_sort(order.begin(), order.end(),
                     [&](index_t a, index_t b) { return cols[a] < cols[b]; });
    for (std::size_t r = 0; r < order.size(); ++r) {
      const index_t k = order[r];
      if (r > 0 && cols[order[r - 1]] == cols[k]) {
        out_vals.back() += vals[k];
      } else {
        out_cols.push_back(cols[k]);
        out_vals.push_back(vals[k]);
      }
    }
    offsets[i + 1] = static_cast<index_t>(out_cols.size());
  }
  return SparseMatrix(n_rows, n_cols, std::move(offsets), std::move(out_cols),
                      std::move(out_vals));
}

SparseMatrix SparseMatrix::identity(index_t n) {
  std::vector<index_t> offsets(static_cast<std::size_t>(n) + 1);
  std::iota(offsets.begin(), offsets.end(), 0);
  std::vector<index_t> cols(n);
  std::iota(cols.begin(), cols.end(), 0);
  return SparseMatrix(n, n, std::move(offsets), std::move(cols), std::vector<double>(n, 1.0));
}

SparseMatrix SparseMatrix::from_dense(const DenseMatrix& dense, double drop_tolerance) {
  const auto rows = static_cast<index_t>(dense.rows());
  const auto cols = static_cast<index_t>(dense.cols());
  std::vector<index_t> offsets(static_cast<std::size_t>(rows) + 1, 0);
  std::vector<index_t> ci;
  std::vector<double> vals;
  for (index_t i = 0; i < rows; ++i) {
    for (index_t j = 0; j < cols; ++j) {
      if (std::abs(dense(i, j)) > drop_tolerance) {
        ci.push_back(j);
        vals.push_back(dense(i, j));
      }
    }
    offsets[i + 1] = static_cast<index_t>(ci.size());
  }
  return SparseMatrix(rows, cols, std::move(offsets), std::move(ci), std::move(vals));
}

double SparseMatrix::coeff(index_t i, index_t j) const {
  const auto c = row_cols(i);
  const auto it = std::lower_bound(c.begin(), c.end(), j);
  if (it == c.end() || *it != j) return 0.0;
  return values_[row_offsets_[i] + (it - c.begin())];
}

bool SparseMatrix::contains(index_t i, index_t j) const {
  const auto c = row_cols(i);
  return std::binary_search(c.begin(), c.end(), j);
}

DenseMatrix SparseMatrix::to_dense() const {
  DenseMatrix d = DenseMatrix::Zero(n_rows_, n_cols_);
  for (index_t i = 0; i < n_rows_; ++i)
    for (index_t k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k)
      d(i, col_indices_[k]) += values_[k];
  return d;
}

SparseMatrix SparseMatrix::transpose() const {
  std::vector<index_t> offsets(static_cast<std::size_t>(n_cols_) + 1, 0);
  for (const index_t j : col_indices_) ++offsets[j + 1];
  std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
  std::vector<index_t> cursor(offsets.begin(), offsets.end() - 1);
  std::vector<index_t> cols(nnz());
  std::vector<double> vals(nnz());
  for (index_t i = 0; i < n_rows_; ++i) {
    for (index_t k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) {
      const index_t dst = cursor[col_indices_[k]]++;
      cols[dst] = i;
      vals[dst] = values_[k];
    }
  }
  return SparseMatrix(n_cols_, n_rows_, std::move(offsets), std::move(cols), std::move(vals));
}

std::vector<Triplet> SparseMatrix::to_triplets() const {
  std::vector<Triplet> out;
  out.reserve(nnz());
  for (index_t i = 0; i < n_rows_; ++i)
    for (index_t k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k)
      out.push_back({i, col_indices_[k], values_[k]});
  return out;
}

double SparseMatrix::asymmetry() const {
  if (n_rows_ != n_cols_) return std::numeric_limits<double>::infinity();
  double max_abs = 0.0;
  double max_diff = 0.0;
  for (index_t i = 0; i < n_rows_; ++i) {
    for (index_t k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) {
      const index_t j = col_indices_[k];
      max_abs = std::max(max_abs, std::abs(values_[k]));
      max_diff = std::max(max_diff, std::abs(values_[k] - coeff(j, i)));
    }
  }
  return max_abs == 0.0 ? 0.0 : max_diff / max_abs;
}

double SparseMatrix::frobenius_norm() const {
  double s = 0.0;
  for (const double v : values_) s += v * v;
  return std::sqrt(s);
}

Vector SparseMatrix::diagonal() const {
  Vector d = Vector::Zero(std::min(n_rows_, n_cols_));
  for (index_t i = 0; i < d.size(); ++i) d(i) = coeff(i, i);
  return d;
}

Vector spmv(const SparseMatrix& a, const Vector& x) {
  if (x.size() != a.cols()) throw DimensionError("spmv: vector length does not match columns");
  Vector y(a.rows());
  const auto off = a.row_offsets();
  const auto ci = a.col_indices();
  const auto v = a.values();
  for (index_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (index_t k = off[i]; k < off[i + 1]; ++k) s += v[k] * x[ci[k]];
    y[i] = s;
  }
  return y;
}

Vector residual(const SparseMatrix& a, const Vector& b, const Vector& x) {
  if (b.size() != a.rows()) throw DimensionError("residual: rhs length does not match rows");
  Vector r = spmv(a, x);
  return b - r;
}

SparseMatrix multiply(const SparseMatrix& a, const SparseMatrix& b) {
  if (a.cols() != b.rows()) throw DimensionError("multiply: inner dimensions differ");
  const index_t n = a.rows();
  const index_t m = b.cols();
  std::vector<index_t> offsets(static_cast<std::size_t>(n) + 1, 0);
  std::vector<index_t> cols;
  std::vector<double> vals;
  std::vector<index_t> marker(m, -1);
  std::vector<double> acc(m, 0.0);
  std::vector<index_t> touched;
  for (index_t i = 0; i < n; ++i) {
    touched.clear();
    const auto acols = a.row_cols(i);
    const auto avals = a.row_values(i);
    for (std::size_t ka = 0; ka < acols.size(); ++ka) {
      const index_t k = acols[ka];
      const auto bcols = b.row_cols(k);
      const auto bvals = b.row_values(k);
      for (std::size_t kb = 0; kb < bcols.size(); ++kb) {
        const index_t j = bcols[kb];
        if (marker[j] != i) {
          marker[j] = i;
          acc[j] = 0.0;
          touched.push_back(j);
        }
        acc[j] += avals[ka] * bvals[kb];
      }
    }
    std::sort(touched.begin(), touched.end());
    for (const index_t j : touched) {
      cols.push_back(j);
      vals.push_back(acc[j]);
    }
    offsets[i + 1] = static_cast<index_t>(cols.size());
  }
  return SparseMatrix(n, m, std::move(offsets), std::move(cols), std::move(vals));
}

SparseMatrix add(const SparseMatrix& a, const SparseMatrix& b, double alpha, double beta) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("add: shapes differ");
  std::vector<Triplet> t;
  t.reserve(a.nnz() + b.nnz());
  for (auto x : a.to_triplets()) t.push_back({x.row, x.col, alpha * x.value});
  for (auto x : b.to_triplets()) t.push_back({x.row, x.col, beta * x.value});
  return SparseMatrix::from_coordinates(t, a.rows(), a.cols());
}

SparseMatrix triple_product(const SparseMatrix& p, const SparseMatrix& a) {
  if (a.rows() != a.cols()) throw DimensionError("triple_product: A must be square");
  if (p.rows() != a.rows()) throw DimensionError("triple_product: P rows must match A");
  const SparseMatrix ap = multiply(a, p);
  const SparseMatrix pt = p.transpose();
  const SparseMatrix c = multiply(pt, ap);
  // (C + C^T) / 2 on the union pattern.
  const SparseMatrix ct = c.transpose();
  std::vector<index_t> offsets(static_cast<std::size_t>(c.rows()) + 1, 0);
  std::vector<index_t> cols;
  std::vector<double> vals;
  for (index_t i = 0; i < c.rows(); ++i) {
    const auto c1 = c.row_cols(i);
    const auto v1 = c.row_values(i);
    const auto c2 = ct.row_cols(i);
    const auto v2 = ct.row_values(i);
    std::size_t k1 = 0;
    std::size_t k2 = 0;
    while (k1 < c1.size() || k2 < c2.size()) {
      if (k2 == c2.size() || (k1 < c1.size() && c1[k1] < c2[k2])) {
        cols.push_back(c1[k1]);
        vals.push_back(0.5 * v1[k1]);
        ++k1;
      } else if (k1 == c1.size() || c2[k2] < c1[k1]) {
        cols.push_back(c2[k2]);
        vals.push_back(0.5 * v2[k2]);
        ++k2;
      } else {
        cols.push_back(c1[k1]);
        vals.push_back(0.5 * (v1[k1] + v2[k2]));
        ++k1;
        ++k2;
      }
    }
    offsets[i + 1] = static_cast<index_t>(cols.size());
  }
  return SparseMatrix(c.rows(), c.cols(), std::move(offsets), std::move(cols), std::move(vals));
}

LowerUpper split_lower(const SparseMatrix& a) {
  if (a.rows() != a.cols()) throw DimensionError("split_lower: matrix must be square");
  std::vector<index_t> lo{0}, uo{0}, lc, uc;
  std::vector<double> lv, uv;
  lo.reserve(a.rows() + 1);
  uo.reserve(a.rows() + 1);
  for (index_t i = 0; i < a.rows(); ++i) {
    const auto c = a.row_cols(i);
    const auto v = a.row_values(i);
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (c[k] <= i) {
        lc.push_back(c[k]);
        lv.push_back(v[k]);
      } else {
        uc.push_back(c[k]);
        uv.push_back(v[k]);
      }
    }
    lo.push_back(static_cast<index_t>(lc.size()));
    uo.push_back(static_cast<index_t>(uc.size()));
  }
  return {SparseMatrix(a.rows(), a.cols(), std::move(lo), std::move(lc), std::move(lv)),
          SparseMatrix(a.rows(), a.cols(), std::move(uo), std::move(uc), std::move(uv))};
}

void gauss_seidel_sweep_inplace(const SparseMatrix& a, const Vector& b, Vector& x) {
  if (a.rows() != a.cols() || b.size() != a.rows() || x.size() != a.rows())
    throw DimensionError("gauss_seidel_sweep: dimensions disagree");
  const auto off = a.row_offsets();
  const auto ci = a.col_indices();
  const auto v = a.values();
  for (index_t i = 0; i < a.rows(); ++i) {
    double diag = 0.0;
    double s = b[i];
    for (index_t k = off[i]; k < off[i + 1]; ++k) {
      const index_t j = ci[k];
      if (j == i)
        diag = v[k];
      else
        s -= v[k] * x[j];
    }
    if (diag == 0.0)
      throw SingularRelaxationError("zero diagonal entry in row " + std::to_string(i));
    x[i] = s / diag;
  }
}

Vector gauss_seidel_sweep(const SparseMatrix& a, const Vector& b, const Vector& x) {
  Vector y = x;
  gauss_seidel_sweep_inplace(a, b, y);
  return y;
}

DenseMatrix build_relaxation_dense(const SparseMatrix& a) {
  if (a.rows() != a.cols()) throw DimensionError("build_relaxation_dense: matrix must be square");
  const DenseMatrix dense = a.to_dense();
  for (index_t i = 0; i < a.rows(); ++i)
    if (dense(i, i) == 0.0)
      throw SingularRelaxationError("zero diagonal entry in row " + std::to_string(i));
  const DenseMatrix lower = dense.triangularView<Eigen::Lower>();
  DenseMatrix linv_a = lower.triangularView<Eigen::Lower>().solve(dense);
  return DenseMatrix::Identity(a.rows(), a.cols()) - linv_a;
}

bool check_kind(const SparseMatrix& a, MatrixKind kind) {
  if (a.rows() != a.cols() || a.rows() == 0) return false;
  if (!a.is_symmetric(1e-12)) return false;
  if (kind == MatrixKind::SPSDLaplacian) {
    for (index_t i = 0; i < a.rows(); ++i) {
      const auto c = a.row_cols(i);
      const auto v = a.row_values(i);
      double sum = 0.0;
      double max_abs = 0.0;
      for (std::size_t k = 0; k < c.size(); ++k) {
        if (c[k] != i && v[k] > 0.0) return false;
        sum += v[k];
        max_abs = std::max(max_abs, std::abs(v[k]));
      }
      if (std::abs(sum) > 1e-10 * max_abs) return false;
    }
    return true;
  }
  const DenseMatrix dense = a.to_dense();
  if (a.rows() <= 1024) {
    Eigen::SelfAdjointEigenSolver<DenseMatrix> eig(dense, Eigen::EigenvaluesOnly);
    const double lmin = eig.eigenvalues().minCoeff();
    const double lmax = eig.eigenvalues().cwiseAbs().maxCoeff();
    return lmin > static_cast<double>(a.rows()) * std::numeric_limits<double>::epsilon() * lmax;
  }
  Eigen::LLT<DenseMatrix> llt(dense);
  return llt.info() == Eigen::Success;
}

SparseMatrix read_matrix_market(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty Matrix Market file " + path);
  std::istringstream header(line);
  std::string banner, object, format, field, symmetry;
  header >> banner >> object >> format >> field >> symmetry;
  std::transform(symmetry.begin(), symmetry.end(), symmetry.begin(), ::tolower);
  std::transform(format.begin(), format.end(), format.begin(), ::tolower);
  if (banner != "%%MatrixMarket" || format != "coordinate")
    throw IoError("unsupported Matrix Market header in " + path);
  if (symmetry != "general" && symmetry != "symmetric")
    throw IoError("unsupported Matrix Market symmetry '" + symmetry + "'");
  const bool symmetric = symmetry == "symmetric";
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '%') break;
  std::istringstream sizes(line);
  long rows = 0, cols = 0, entries = 0;
  if (!(sizes >> rows >> cols >> entries)) throw IoError("bad Matrix Market size line");
  std::vector<Triplet> t;
  t.reserve(symmetric ? 2 * entries : entries);
  for (long e = 0; e < entries; ++e) {
    long i = 0, j = 0;
    double v = 0.0;
    if (!(in >> i >> j >> v)) throw IoError("truncated Matrix Market file " + path);
    t.push_back({static_cast<index_t>(i - 1), static_cast<index_t>(j - 1), v});
    if (symmetric && i != j)
      t.push_back({static_cast<index_t>(j - 1), static_cast<index_t>(i - 1), v});
  }
  return SparseMatrix::from_coordinates(t, static_cast<index_t>(rows),
                                        static_cast<index_t>(cols));
}

void write_matrix_market(const std::string& path, const SparseMatrix& a, bool symmetric) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "%%MatrixMarket matrix coordinate real " << (symmetric ? "symmetric" : "general")
      << "\n";
  std::size_t count = 0;
  for (index_t i = 0; i < a.rows(); ++i)
    for (const index_t j : a.row_cols(i))
      if (!symmetric || j <= i) ++count;
  out << a.rows() << " " << a.cols() << " " << count << "\n";
  out << std::setprecision(17);
  for (index_t i = 0; i < a.rows(); ++i) {
    const auto c = a.row_cols(i);
    const auto v = a.row_values(i);
    for (std::size_t k = 0; k < c.size(); ++k)
      if (!symmetric || c[k] <= i) out << i + 1 << " " << c[k] + 1 << " " << v[k] << "\n";
  }
}

}  // namespace gnnamg
