#include "gnnamg/fourier.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <tuple>

#include <Eigen/LU>

namespace gnnamg {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;

int signed_wrap(int k, int b) {
  const int m = ((k % b) + b) % b;
  return 2 * m > b ? m - b : m;
}

namespace {

std::pair<int, int> block_coords(index_t block, int b) {
  return {static_cast<int>(block / b), static_cast<int>(block % b)};
}

index_t block_id(int bx, int by, int b) {
  const int x = ((bx % b) + b) % b, y = ((by % b) + b) % b;
  return static_cast<index_t>(x) * b + y;
}

LatticeOffset offset_between(index_t from_block, index_t to_block, int b) {
  const auto [fx, fy] = block_coords(from_block, b);
  const auto [tx, ty] = block_coords(to_block, b);
  const LatticeOffset s{signed_wrap(tx - fx, b), signed_wrap(ty - fy, b)};
  if (std::abs(s.x) > 1 || std::abs(s.y) > 1)
    throw StructureError("coupling at lattice offset (" + std::to_string(s.x) + ", " +
                         std::to_string(s.y) + ") outside {-1,0,1}^2");
  return s;
}

// exp(2 pi i m / b) with table[b - m] exactly conj(table[m]).
std::vector<Complex> phase_table(int b) {
  std::vector<Complex> t(b);
  for (int m = 0; 2 * m <= b; ++m) {
    const double phi = 2.0 * std::numbers::pi * m / b;
    t[m] = {std::cos(phi), std::sin(phi)};
  }
  for (int m = b / 2 + 1; m < b; ++m) t[m] = std::conj(t[b - m]);
  t[0] = {1.0, 0.0};
  if (b % 2 == 0) t[b / 2] = {-1.0, 0.0};
  return t;
}

}  // namespace

std::complex<double> lattice_phase(int b, int k1, int k2, LatticeOffset s) {
  const auto table = phase_table(b);
  return table[(((k1 * s.x + k2 * s.y) % b) + b) % b];
}

DenseMatrix BlockCouplings::tile_dense() const {
  const index_t nb = static_cast<index_t>(b) * b;
  DenseMatrix d = DenseMatrix::Zero(nb * rows_per_block, nb * cols_per_block);
  for (index_t src = 0; src < nb; ++src) {
    const auto [bx, by] = block_coords(src, b);
    for (const auto& [s, m] : blocks) {
      const index_t tgt = block_id(bx + s.x, by + s.y, b);
      d.block(src * rows_per_block, tgt * cols_per_block, rows_per_block, cols_per_block) += m;
    }
  }
  return d;
}

SparseMatrix BlockCouplings::tile_sparse() const {
  const index_t nb = static_cast<index_t>(b) * b;
  std::vector<Triplet> t;
  for (index_t src = 0; src < nb; ++src) {
    const auto [bx, by] = block_coords(src, b);
    for (const auto& [s, m] : blocks) {
      const index_t tgt = block_id(bx + s.x, by + s.y, b);
      for (index_t u = 0; u < rows_per_block; ++u)
        for (index_t v = 0; v < cols_per_block; ++v)
          if (m(u, v) != 0.0)
            t.push_back({src * rows_per_block + u, tgt * cols_per_block + v, m(u, v)});
    }
  }
  return SparseMatrix::from_coordinates(t, nb * rows_per_block, nb * cols_per_block);
}

BlockCouplings extract_couplings(const SparseMatrix& m, int b, index_t rows_per_block,
                                 index_t cols_per_block, int ref_x, int ref_y) {
  if (b < 3) throw StructureError("block-periodic operators need b >= 3");
  const index_t nb = static_cast<index_t>(b) * b;
  if (m.rows() != nb * rows_per_block || m.cols() != nb * cols_per_block)
    throw DimensionError("extract_couplings: matrix shape does not match the block layout");
  BlockCouplings out{b, rows_per_block, cols_per_block, {}};
  const index_t src = block_id(ref_x, ref_y, b);
  for (index_t u = 0; u < rows_per_block; ++u) {
    const index_t row = src * rows_per_block + u;
    const auto cols = m.row_cols(row);
    const auto vals = m.row_values(row);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const LatticeOffset s = offset_between(src, cols[k] / cols_per_block, b);
      auto it = out.blocks.find(s);
      if (it == out.blocks.end())
        it = out.blocks.emplace(s, DenseMatrix::Zero(rows_per_block, cols_per_block)).first;
      it->second(u, cols[k] % cols_per_block) += vals[k];
    }
  }
  return out;
}

std::size_t FourierSymbolSet::mode_index(int k1, int k2) const {
  const int x = ((k1 % b) + b) % b, y = ((k2 % b) + b) % b;
  return static_cast<std::size_t>(x) * b + y;
}

double FourierSymbolSet::frobenius_sq() const {
  double s = 0.0;
  for (const auto& z : blocks) s += z.re.squaredNorm() + z.im.squaredNorm();
  return s;
}

namespace {

std::vector<ComplexMatrix> symbol_blocks(const BlockCouplings& c) {
  const auto table = phase_table(c.b);
  std::vector<ComplexMatrix> out;
  out.reserve(static_cast<std::size_t>(c.b) * c.b);
  for (int k1 = 0; k1 < c.b; ++k1)
    for (int k2 = 0; k2 < c.b; ++k2) {
      ComplexMatrix z = ComplexMatrix::Zero(c.rows_per_block, c.cols_per_block);
      for (const auto& [s, m] : c.blocks) {
        const int idx = (((k1 * s.x + k2 * s.y) % c.b) + c.b) % c.b;
        z += table[idx] * m.cast<Complex>();
      }
      out.push_back(std::move(z));
    }
  return out;
}

FourierSymbolSet to_symbol_set(int b, const std::vector<ComplexMatrix>& blocks) {
  FourierSymbolSet s;
  s.b = b;
  for (int k1 = 0; k1 < b; ++k1)
    for (int k2 = 0; k2 < b; ++k2) s.modes.push_back({k1, k2});
  for (const auto& z : blocks) s.blocks.push_back(ComplexDenseMatrix::from_complex(z));
  return s;
}

std::vector<ComplexMatrix> relaxation_blocks(const BlockCouplings& a) {
  if (a.rows_per_block != a.cols_per_block)
    throw SymbolError("relaxation symbol needs square couplings");
  const auto zero = a.blocks.find(LatticeOffset{0, 0});
  if (zero == a.blocks.end()) throw SymbolError("operator has no diagonal block");
  for (index_t u = 0; u < a.rows_per_block; ++u)
    if (zero->second(u, u) == 0.0)
      throw SymbolError("zero diagonal at local node " + std::to_string(u));
  const auto ah = symbol_blocks(a);
  const auto lh = symbol_blocks(lower_couplings(a));
  std::vector<ComplexMatrix> out;
  out.reserve(ah.size());
  const auto c = a.rows_per_block;
  for (std::size_t m = 0; m < ah.size(); ++m) {
    Eigen::PartialPivLU<ComplexMatrix> lu(lh[m]);
    if (!(lu.rcond() > std::numeric_limits<double>::epsilon()))
      throw SymbolError("singular lower-triangular symbol at mode " + std::to_string(m));
    ComplexMatrix s = ComplexMatrix::Identity(c, c) - lu.solve(ah[m]);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

FourierSymbolSet block_diagonalize(const BlockCouplings& couplings) {
  return to_symbol_set(couplings.b, symbol_blocks(couplings));
}

FourierSymbolSet block_diagonalize(const BlockCirculantProblem& p) {
  return block_diagonalize(extract_couplings(p.a, p.b, p.c, p.c));
}

TiledCoarsening tile_splitting(const BlockCirculantProblem& p, double theta) {
  StrengthGraph strength = strength_of_connection(p.a, theta);
  const Splitting classical = ruge_stuben_split(strength);
  const index_t nb = static_cast<index_t>(p.b) * p.b;
  std::map<std::vector<bool>, std::pair<int, index_t>> counts;
  for (index_t blk = 0; blk < nb; ++blk) {
    std::vector<bool> local(p.c);
    for (index_t u = 0; u < p.c; ++u) local[u] = classical.is_coarse(blk * p.c + u);
    auto [it, inserted] = counts.try_emplace(std::move(local), 0, blk);
    ++it->second.first;
  }
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it)
    if (it->second.first > best->second.first ||
        (it->second.first == best->second.first && it->second.second < best->second.second))
      best = it;
  const std::vector<bool>& local = best->first;
  if (std::none_of(local.begin(), local.end(), [](bool x) { return x; }))
    throw TilingError("modal block has no C-nodes");

  std::vector<bool> mask(p.size());
  for (index_t blk = 0; blk < nb; ++blk)
    for (index_t u = 0; u < p.c; ++u) mask[blk * p.c + u] = local[u];

  TiledCoarsening out;
  out.source_block = static_cast<int>(best->second.second);
  out.modal_fraction = static_cast<double>(best->second.first) / nb;
  out.coarsening = complete_coarsening(p.a, std::move(strength), Splitting(std::move(mask)));
  const Splitting& s = out.coarsening.splitting;
  for (index_t u = 0; u < p.c; ++u)
    if (s.is_coarse(u)) out.coarse_positions.push_back(u);
  for (index_t blk = 1; blk < nb; ++blk)
    for (index_t u = 0; u < p.c; ++u)
      if (s.is_coarse(blk * p.c + u) != s.is_coarse(u))
        throw TilingError("promotion broke the periodic C/F splitting");
  return out;
}

BlockCouplings TiledProlongation::restricted() const {
  BlockCouplings out{b, c, static_cast<index_t>(coarse_positions.size()), {}};
  for (const auto& [s, m] : couplings) {
    DenseMatrix r(c, coarse_positions.size());
    for (std::size_t k = 0; k < coarse_positions.size(); ++k) r.col(k) = m.col(coarse_positions[k]);
    out.blocks.emplace(s, std::move(r));
  }
  return out;
}

SparseMatrix TiledProlongation::to_sparse() const { return restricted().tile_sparse(); }

TiledProlongation tile_prolongation(const SparseMatrix& p, const Splitting& splitting, int b,
                                    index_t c) {
  const index_t nb = static_cast<index_t>(b) * b;
  const index_t n = nb * c;
  if (b < 3) throw TilingError("tiling needs b >= 3");
  if (p.rows() != n || splitting.size() != n || p.cols() != splitting.n_coarse())
    throw DimensionError("tile_prolongation: shapes do not match the block layout");
  const std::vector<index_t> coarse_nodes = splitting.coarse_nodes();

  struct Entry {
    index_t u;
    LatticeOffset s;
    index_t v;
    double value;
  };
  std::map<std::vector<int>, std::pair<int, index_t>> counts;
  std::vector<std::vector<int>> signatures(nb);
  auto block_entries = [&](index_t blk) {
    std::vector<Entry> e;
    for (index_t u = 0; u < c; ++u) {
      const index_t row = blk * c + u;
      const auto cols = p.row_cols(row);
      const auto vals = p.row_values(row);
      for (std::size_t k = 0; k < cols.size(); ++k) {
        const index_t node = coarse_nodes[cols[k]];
        e.push_back({u, offset_between(blk, node / c, b), node % c, vals[k]});
      }
    }
    std::sort(e.begin(), e.end(), [](const Entry& l, const Entry& r) {
      return std::tie(l.u, l.s, l.v) < std::tie(r.u, r.s, r.v);
    });
    return e;
  };
  for (index_t blk = 0; blk < nb; ++blk) {
    std::vector<int> sig;
    for (index_t u = 0; u < c; ++u) sig.push_back(splitting.is_coarse(blk * c + u) ? 1 : 0);
    for (const auto& e : block_entries(blk)) {
      sig.push_back(static_cast<int>(e.u));
      sig.push_back(e.s.x);
      sig.push_back(e.s.y);
      sig.push_back(static_cast<int>(e.v));
    }
    auto [it, inserted] = counts.try_emplace(std::move(sig), 0, blk);
    ++it->second.first;
  }
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it)
    if (it->second.first > best->second.first ||
        (it->second.first == best->second.first && it->second.second < best->second.second))
      best = it;
  const index_t src = best->second.second;

  TiledProlongation out;
  out.b = b;
  out.c = c;
  out.source_block = static_cast<int>(src);
  out.modal_fraction = static_cast<double>(best->second.first) / nb;
  std::vector<char> local_c(c, 0);
  for (index_t u = 0; u < c; ++u)
    if (splitting.is_coarse(src * c + u)) {
      local_c[u] = 1;
      out.coarse_positions.push_back(u);
    }
  if (out.coarse_positions.empty()) throw TilingError("selected block has an empty C-set");
  for (const auto& e : block_entries(src)) {
    if (!local_c[e.v])
      throw TilingError("coupling of local node " + std::to_string(e.u) +
                        " targets local position " + std::to_string(e.v) +
                        ", which is not coarse in the selected block");
    auto it = out.couplings.find(e.s);
    if (it == out.couplings.end()) it = out.couplings.emplace(e.s, DenseMatrix::Zero(c, c)).first;
    it->second(e.u, e.v) += e.value;
  }
  return out;
}

BlockCouplings lower_couplings(const BlockCouplings& a) {
  BlockCouplings out{a.b, a.rows_per_block, a.cols_per_block, {}};
  for (const auto& [s, m] : a.blocks) {
    DenseMatrix l = DenseMatrix::Zero(m.rows(), m.cols());
    for (index_t u = 0; u < m.rows(); ++u)
      for (index_t v = 0; v < m.cols(); ++v) {
        const bool lower = s.x < 0 || (s.x == 0 && (s.y < 0 || (s.y == 0 && v <= u)));
        if (lower) l(u, v) = m(u, v);
      }
    out.blocks.emplace(s, std::move(l));
  }
  return out;
}

FourierSymbolSet relaxation_symbol(const BlockCouplings& a) {
  return to_symbol_set(a.b, relaxation_blocks(a));
}

FourierSymbolSet relaxation_symbol(const BlockCirculantProblem& p) {
  return relaxation_symbol(extract_couplings(p.a, p.b, p.c, p.c));
}

FourierLoss fourier_loss(const FourierSymbolSet& a_hat, const FourierSymbolSet& p_hat,
                         const FourierSymbolSet& s_hat, const FourierLossOptions& options) {
  if (a_hat.b != p_hat.b || a_hat.b != s_hat.b || a_hat.blocks.size() != p_hat.blocks.size() ||
      a_hat.blocks.size() != s_hat.blocks.size())
    throw DimensionError("fourier_loss: symbol sets disagree");
  if (options.s1 < 0 || options.s2 < 0) throw std::invalid_argument("negative sweep count");
  FourierLoss out;
  out.b = a_hat.b;
  out.per_mode.assign(a_hat.blocks.size(), std::numeric_limits<double>::quiet_NaN());
  const bool singular = options.kind == MatrixKind::SPSDLaplacian;
  for (std::size_t m = 0; m < a_hat.blocks.size(); ++m) {
    const bool zero_mode = a_hat.modes[m][0] == 0 && a_hat.modes[m][1] == 0;
    if (singular && zero_mode && !options.regularize_zero_mode) continue;
    const ComplexMatrix a = a_hat.blocks[m].to_complex();
    const ComplexMatrix p = p_hat.blocks[m].to_complex();
    const ComplexMatrix s = s_hat.blocks[m].to_complex();
    if (p.cols() == 0) throw LossError("empty coarse set");
    const ComplexMatrix pa = p.adjoint() * a;
    ComplexMatrix ac = pa * p;
    if (singular && zero_mode)
      ac.array() += Complex(1.0 / static_cast<double>(p.cols()), 0.0);
    Eigen::PartialPivLU<ComplexMatrix> lu(ac);
    if (!(lu.rcond() > static_cast<double>(ac.rows()) * std::numeric_limits<double>::epsilon()))
      throw LossError("singular coarse block at mode (" + std::to_string(a_hat.modes[m][0]) +
                      ", " + std::to_string(a_hat.modes[m][1]) + ")");
    ComplexMatrix mm = ComplexMatrix::Identity(a.rows(), a.cols()) - p * lu.solve(pa);
    for (int k = 0; k < options.s1; ++k) mm = mm * s;
    for (int k = 0; k < options.s2; ++k) mm = s * mm;
    out.per_mode[m] = mm.squaredNorm();
    out.value += out.per_mode[m];
  }
  return out;
}

FourierLoss fourier_loss(const BlockCouplings& a, const TiledProlongation& p,
                         const FourierLossOptions& options) {
  return fourier_loss(block_diagonalize(a), block_diagonalize(p.restricted()),
                      relaxation_symbol(a), options);
}

void write_mode_losses_csv(const std::string& path, const FourierLoss& loss) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "k1,k2,value\n" << std::setprecision(17);
  for (std::size_t m = 0; m < loss.per_mode.size(); ++m) {
    out << m / loss.b << "," << m % loss.b << ",";
    if (std::isnan(loss.per_mode[m]))
      out << "skipped";
    else
      out << loss.per_mode[m];
    out << "\n";
  }
}

double dense_tiled_loss(const BlockCouplings& a, const TiledProlongation& p,
                        const FourierLossOptions& options) {
  const DenseMatrix at = a.tile_dense();
  const DenseMatrix pt = p.restricted().tile_dense();
  const DenseMatrix lt = lower_couplings(a).tile_dense();
  const Eigen::Index n = at.rows(), nc = pt.cols();
  const bool singular = options.kind == MatrixKind::SPSDLaplacian;

  DenseMatrix s = -Eigen::PartialPivLU<DenseMatrix>(lt).solve(at);
  s.diagonal().array() += 1.0;
  const DenseMatrix pta = pt.transpose() * at;
  DenseMatrix ac = pta * pt;
  if (singular) ac.array() += 1.0 / static_cast<double>(nc);
  Eigen::PartialPivLU<DenseMatrix> lu(ac);
  if (!(lu.rcond() > static_cast<double>(nc) * std::numeric_limits<double>::epsilon()))
    throw LossError("singular tiled coarse matrix");
  DenseMatrix m = -pt * lu.solve(pta);
  m.diagonal().array() += 1.0;
  for (int k = 0; k < options.s1; ++k) m = m * s;
  for (int k = 0; k < options.s2; ++k) m = s * m;
  if (singular && !options.regularize_zero_mode) {
    const index_t nb = static_cast<index_t>(a.b) * a.b;
    const index_t c = a.rows_per_block;
    // M (I - (1/b^2) J (x) I_c): subtract the block-averaged columns.
    DenseMatrix avg = DenseMatrix::Zero(n, c);
    for (index_t blk = 0; blk < nb; ++blk) avg += m.middleCols(blk * c, c);
    avg /= static_cast<double>(nb);
    for (index_t blk = 0; blk < nb; ++blk) m.middleCols(blk * c, c) -= avg;
  }
  return m.squaredNorm();
}

}  // namespace gnnamg
