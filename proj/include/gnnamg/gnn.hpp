#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gnnamg/amg.hpp"
#include "gnnamg/cycle.hpp"
#include "gnnamg/fourier.hpp"
#include "gnnamg/problems.hpp"
#include "gnnamg/tape.hpp"

namespace gnnamg {

/// Architecture knobs. Defaults: three message-passing rounds, four affine
/// layers per MLP, width 64, encoder features concatenated into every
/// round, C/F and pattern indicator features on.
struct ModelConfig {
  int mp_layers = 3;
  int mlp_depth = 4;
  int width = 64;
  bool encoder_concat = true;
  bool indicators = true;

  int node_in() const { return indicators ? 2 : 1; }
  int edge_in() const { return indicators ? 3 : 1; }
  std::string describe() const;
  std::uint64_t hash() const;
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Graph view of A. Edge k is the k-th stored entry (i, j) of A in CSR
/// order, sent from node j to node i; its output becomes P(i, j).
struct GraphProblem {
  index_t n_nodes = 0;
  std::vector<index_t> src;
  std::vector<index_t> dst;
  DenseMatrix node_features;  // n x 2: [1, 0] for C-nodes, [0, 1] otherwise
  DenseMatrix edge_features;  // E x 3: [a_ij, 1, 0] on pattern edges, [a_ij, 0, 1] otherwise
  std::vector<index_t> pattern_edges;  // edge ids in P's CSR order
  std::vector<index_t> pattern_rows;   // row i of each pattern edge
  std::vector<index_t> pattern_cols;   // coarse column of each pattern edge
  std::vector<char> pattern_is_f;      // pattern edge belongs to an F-row
  index_t n_coarse = 0;

  std::size_t n_edges() const { return src.size(); }
  friend bool operator==(const GraphProblem&, const GraphProblem&) = default;
};

GraphProblem encode_features(const SparseMatrix& a, const Splitting& splitting,
                             const SparsityPattern& pattern, bool indicators = true);

/// Exact text round trip (hexadecimal floating point).
void write_graph_problem(std::ostream& out, const GraphProblem& gp);
GraphProblem read_graph_problem(std::istream& in);

struct ModelParameters {
  ModelConfig config;
  std::uint64_t seed = 0;
  std::vector<std::string> names;
  std::vector<DenseMatrix> tensors;

  /// Glorot-uniform weights, zero biases.
  static ModelParameters initialize(const ModelConfig& config, std::uint64_t seed);
  std::size_t parameter_count() const;
  friend bool operator==(const ModelParameters&, const ModelParameters&) = default;
};

std::size_t expected_parameter_count(const ModelConfig& config);

/// Raw network output on the pattern edges (k x 1), untaped.
DenseMatrix forward(const ModelParameters& params, const GraphProblem& gp);
/// Taped forward; `param_vars` must be leaves holding params.tensors.
Var forward(Tape& tape, std::span<const Var> param_vars, const ModelConfig& config,
            const GraphProblem& gp);

/// C-rows are unit rows; F-row i takes the raw pattern values scaled so the
/// row sums to target_row_sums[i]. With guard, raw row sums are clamped
/// away from zero by 1e-8; without, a zero raw row sum throws
/// DegenerateRowError.
SparseMatrix assemble_prolongation(const DenseMatrix& raw, const GraphProblem& gp,
                                   const Vector& target_row_sums, bool guard = false);

/// Prolongation provider that applies the network on every level.
ProlongationProvider learned_provider(const ModelParameters& params);
/// Learned P for one matrix and coarsening.
SparseMatrix learned_prolongation(const ModelParameters& params, const SparseMatrix& a,
                                  const Coarsening& coarsening);

struct LossOptions {
  int s1 = 1;
  int s2 = 1;
  bool guard = true;
  int ref_block = 0;  // Fourier head: block whose outputs are tiled
  /// Fourier head: replace each reference-block output by its mean over the
  /// corresponding edges of all b^2 blocks before tiling.
  bool average_replicas = false;
};

struct LossResult {
  double value = 0.0;
  std::vector<DenseMatrix> grads;  // one per parameter tensor, when requested
  DenseMatrix raw_grad;            // d loss / d raw pattern outputs, when requested
};

/// ||S^{s2} (I - P (P^T A P)^{-1} P^T A) S^{s1}||_F^2 with the learned P.
/// For zero-row-sum A the coarse matrix gets 1/n_c on every entry and the
/// constant vector is projected out on the right.
LossResult loss_dense(const ModelParameters& params, const SparseMatrix& a,
                      const Coarsening& coarsening, const LossOptions& options,
                      bool with_grad = true);

/// Sum over Fourier modes of ||hat M(theta)||_F^2 with P tiled from the
/// outputs of one block; mode (0, 0) skipped for Laplacians.
LossResult loss_fourier(const ModelParameters& params, const BlockCirculantProblem& p,
                        const TiledCoarsening& tiled, const LossOptions& options,
                        bool with_grad = true);

/// The tiled learned prolongation used by loss_fourier, computed untaped.
TiledProlongation learned_tiled_prolongation(const ModelParameters& params,
                                             const BlockCirculantProblem& p,
                                             const TiledCoarsening& tiled,
                                             const LossOptions& options);

struct GradientCheck {
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

using LossFunction = std::function<LossResult(const ModelParameters&, bool with_grad)>;

/// Central difference (L(p + h d) - L(p - h d)) / 2h against grad . d.
GradientCheck gradient_check(const ModelParameters& params, const LossFunction& loss,
                             const std::vector<DenseMatrix>& direction, double h = 1e-5);
/// Unit-norm random direction shaped like the parameters.
std::vector<DenseMatrix> random_direction(const ModelParameters& params, std::uint64_t seed);

/// Checkpoint: <dir>/manifest.txt and <dir>/params.bin (little-endian
/// float64 tensors in manifest order).
void save_model(const std::string& dir, const ModelParameters& params);
ModelParameters load_model(const std::string& dir);
/// Also checks the architecture hash against `expected`.
ModelParameters load_model(const std::string& dir, const ModelConfig& expected);

}  // namespace gnnamg
