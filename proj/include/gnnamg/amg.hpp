#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gnnamg/sparse.hpp"

namespace gnnamg {

/// strong[i] holds, in ascending order, the neighbors i strongly depends on.
struct StrengthGraph {
  std::vector<std::vector<index_t>> strong;

  index_t size() const { return static_cast<index_t>(strong.size()); }
  /// influences[i] = nodes that strongly depend on i.
  std::vector<std::vector<index_t>> transpose() const;
};

/// C/F partition. Coarse columns of P are numbered by ascending node id.
class Splitting {
 public:
  Splitting() = default;
  explicit Splitting(std::vector<bool> is_coarse);

  index_t size() const { return static_cast<index_t>(is_coarse_.size()); }
  index_t n_coarse() const { return n_coarse_; }
  bool is_coarse(index_t i) const { return is_coarse_[i]; }
  /// Column of C-node i in P, -1 for F-nodes.
  index_t coarse_index(index_t i) const { return coarse_index_[i]; }
  const std::vector<bool>& mask() const { return is_coarse_; }
  std::vector<index_t> coarse_nodes() const;

  friend bool operator==(const Splitting&, const Splitting&) = default;

 private:
  std::vector<bool> is_coarse_;
  std::vector<index_t> coarse_index_;
  index_t n_coarse_ = 0;
};

/// allowed[i]: C-nodes that may contribute to row i of P, ascending.
struct SparsityPattern {
  std::vector<std::vector<index_t>> allowed;

  index_t size() const { return static_cast<index_t>(allowed.size()); }
  std::size_t entry_count() const;
  friend bool operator==(const SparsityPattern&, const SparsityPattern&) = default;
};

/// Classical criterion: j is strong for i iff -a_ij >= theta * max_{k != i}(-a_ik).
StrengthGraph strength_of_connection(const SparseMatrix& a, double theta);

/// Ruge-Stuben first pass (greedy by influence count, ties to the lowest
/// node id) followed by the second pass that gives every strong F-F pair a
/// common C-neighbor. The seed is accepted for interface stability; the
/// algorithm has no random choices.
Splitting ruge_stuben_split(const StrengthGraph& strength, std::uint64_t seed = 0);

/// Throws PatternError naming the first F-node without a strong C-neighbor.
SparsityPattern build_pattern(const SparseMatrix& a, const StrengthGraph& strength,
                              const Splitting& splitting);

struct Coarsening {
  StrengthGraph strength;
  Splitting splitting;
  SparsityPattern pattern;
  index_t promoted = 0;  // F-nodes promoted to C for lack of C-neighbors
};

/// Strength, splitting and pattern in one go, promoting isolated F-nodes.
Coarsening classical_coarsening(const SparseMatrix& a, double theta = 0.25,
                                std::uint64_t seed = 0);
/// Builds the pattern for a fixed splitting, promoting isolated F-nodes.
Coarsening complete_coarsening(const SparseMatrix& a, StrengthGraph strength,
                               Splitting splitting);

/// Direct interpolation w_ij = -(a_ij / a_ii) * (sum_{k!=i} a_ik / sum_{m in C_i} a_im).
SparseMatrix direct_interpolation(const SparseMatrix& a, const Splitting& splitting,
                                  const SparsityPattern& pattern);

Vector row_sums(const SparseMatrix& p);

std::string to_json(const Splitting& splitting);
std::string to_json(const SparsityPattern& pattern);

}  // namespace gnnamg
