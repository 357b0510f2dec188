#pragma once

#include <array>
#include <complex>
#include <map>
#include <string>
#include <vector>

#include "gnnamg/amg.hpp"
#include "gnnamg/problems.hpp"
#include "gnnamg/sparse.hpp"

namespace gnnamg {

/// Real coupling blocks of a block-periodic operator, keyed by the lattice
/// offset from the source block to the target block. Each block is
/// rows_per_block x cols_per_block.
struct BlockCouplings {
  int b = 0;
  index_t rows_per_block = 0;
  index_t cols_per_block = 0;
  std::map<LatticeOffset, DenseMatrix> blocks;

  /// Dense n_r x n_c operator obtained by replicating the couplings to every
  /// block. Column block ordering matches the row block ordering.
  DenseMatrix tile_dense() const;
  SparseMatrix tile_sparse() const;
};

/// Offset in (-b/2, b/2] equivalent to k modulo b.
int signed_wrap(int k, int b);

/// exp(i theta . s) with theta = 2 pi (k1, k2) / b, exactly conjugate for
/// opposite modes.
std::complex<double> lattice_phase(int b, int k1, int k2, LatticeOffset s);

/// Couplings of the rows of the block at (ref_x, ref_y). Column j belongs to
/// block j / cols_per_block. Throws StructureError for offsets outside
/// {-1, 0, 1}^2.
BlockCouplings extract_couplings(const SparseMatrix& m, int b, index_t rows_per_block,
                                 index_t cols_per_block, int ref_x = 0, int ref_y = 0);

struct FourierSymbolSet {
  int b = 0;
  std::vector<std::array<int, 2>> modes;  // (k1, k2); theta_i = 2 pi k_i / b
  std::vector<ComplexDenseMatrix> blocks;

  std::size_t mode_index(int k1, int k2) const;
  /// Sum of squared Frobenius norms over all modes.
  double frobenius_sq() const;
};

/// hat A(theta) = sum_s A_s exp(i theta . s). Modes are ordered k1-major.
FourierSymbolSet block_diagonalize(const BlockCouplings& couplings);
FourierSymbolSet block_diagonalize(const BlockCirculantProblem& p);

/// Local C-set of one block tiled to every block. The block whose local
/// C-set is most common under the classical splitting is used (lowest block
/// index on ties). F-nodes left without a strong C-neighbor are promoted in
/// every block alike.
struct TiledCoarsening {
  Coarsening coarsening;
  std::vector<index_t> coarse_positions;  // local ids, ascending
  int source_block = 0;
  double modal_fraction = 0.0;  // share of blocks whose classical C-set matched
};
TiledCoarsening tile_splitting(const BlockCirculantProblem& p, double theta = 0.25);

struct TiledProlongation {
  int b = 0;
  index_t c = 0;
  std::vector<index_t> coarse_positions;
  /// c x c couplings with zero columns at F positions.
  std::map<LatticeOffset, DenseMatrix> couplings;
  int source_block = 0;
  double modal_fraction = 0.0;

  /// Couplings restricted to the coarse columns (c x n_coarse_local).
  BlockCouplings restricted() const;
  /// Full n x (b^2 * |coarse_positions|) prolongation.
  SparseMatrix to_sparse() const;
};

/// Selects the block whose sparsity signature (local C-set and coupling
/// structure) is most common, lowest block index on ties, and replicates its
/// couplings. Throws TilingError on an empty C-set or when a coupling lands
/// on a position that is not coarse in the selected block.
TiledProlongation tile_prolongation(const SparseMatrix& p, const Splitting& splitting, int b,
                                    index_t c);

/// Couplings of the lower-triangular part L, classified on the interior
/// reference block (b/2, b/2) without wrap-around.
BlockCouplings lower_couplings(const BlockCouplings& a);

/// hat S(theta) = I - hat L(theta)^{-1} hat A(theta). Throws SymbolError if
/// a hat L block is singular.
FourierSymbolSet relaxation_symbol(const BlockCouplings& a);
FourierSymbolSet relaxation_symbol(const BlockCirculantProblem& p);

struct FourierLossOptions {
  int s1 = 1;
  int s2 = 1;
  MatrixKind kind = MatrixKind::SPSDLaplacian;
  /// Evaluate the zero mode of a singular operator with the rank-one
  /// regularized coarse block instead of skipping it.
  bool regularize_zero_mode = false;
};

struct FourierLoss {
  double value = 0.0;
  std::vector<double> per_mode;  // ||hat M(theta)||_F^2, NaN for a skipped mode
  int b = 0;
};

/// Sum over modes of ||hat M(theta)||_F^2 with hat P restricted to coarse
/// columns. Mode (0, 0) is skipped for SPSD-Laplacian operators.
FourierLoss fourier_loss(const FourierSymbolSet& a_hat, const FourierSymbolSet& p_hat,
                         const FourierSymbolSet& s_hat, const FourierLossOptions& options);
FourierLoss fourier_loss(const BlockCouplings& a, const TiledProlongation& p,
                         const FourierLossOptions& options);

void write_mode_losses_csv(const std::string& path, const FourierLoss& loss);

/// Dense counterpart computed on the tiled operators: ||M~ Pi||_F^2 where
/// Pi removes the zero Fourier mode for singular operators, and the coarse
/// inverse is regularized by the normalized coarse constant vector.
double dense_tiled_loss(const BlockCouplings& a, const TiledProlongation& p,
                        const FourierLossOptions& options);

}  // namespace gnnamg
