#include "gnnamg/amg.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace gnnamg {

std::vector<std::vector<index_t>> StrengthGraph::transpose() const {
  std::vector<std::vector<index_t>> t(strong.size());
  for (index_t i = 0; i < size(); ++i)
    for (const index_t j : strong[i]) t[j].push_back(i);
  return t;
}

Splitting::Splitting(std::vector<bool> is_coarse)
    : is_coarse_(std::move(is_coarse)), coarse_index_(is_coarse_.size(), -1) {
  for (std::size_t i = 0; i < is_coarse_.size(); ++i)
    if (is_coarse_[i]) coarse_index_[i] = n_coarse_++;
}

std::vector<index_t> Splitting::coarse_nodes() const {
  std::vector<index_t> c;
  c.reserve(n_coarse_);
  for (index_t i = 0; i < size(); ++i)
    if (is_coarse_[i]) c.push_back(i);
  return c;
}

std::size_t SparsityPattern::entry_count() const {
  std::size_t n = 0;
  for (const auto& row : allowed) n += row.size();
  return n;
}

StrengthGraph strength_of_connection(const SparseMatrix& a, double theta) {
  if (theta < 0.0 || theta > 1.0) throw std::invalid_argument("theta must lie in [0, 1]");
  StrengthGraph g;
  g.strong.resize(a.rows());
  for (index_t i = 0; i < a.rows(); ++i) {
    const auto c = a.row_cols(i);
    const auto v = a.row_values(i);
    double max_neg = 0.0;
    bool has_offdiag = false;
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (c[k] == i || v[k] == 0.0) continue;
      if (!has_offdiag || -v[k] > max_neg) max_neg = -v[k];
      has_offdiag = true;
    }
    if (!has_offdiag) continue;
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (c[k] == i || v[k] == 0.0) continue;
      if (-v[k] >= theta * max_neg && -v[k] >= 0.0) g.strong[i].push_back(c[k]);
    }
  }
  return g;
}

Splitting ruge_stuben_split(const StrengthGraph& strength, std::uint64_t /*seed*/) {
  enum State : char { Undecided, Coarse, Fine };
  const index_t n = strength.size();
  const auto influences = strength.transpose();
  std::vector<State> state(n, Undecided);
  std::vector<index_t> lambda(n);
  // Ordered by descending lambda, then ascending id.
  std::set<std::pair<index_t, index_t>> queue;
  for (index_t i = 0; i < n; ++i) {
    lambda[i] = static_cast<index_t>(influences[i].size());
    queue.insert({-lambda[i], i});
  }
  auto bump = [&](index_t k, index_t delta) {
    queue.erase({-lambda[k], k});
    lambda[k] += delta;
    queue.insert({-lambda[k], k});
  };

  while (!queue.empty()) {
    const index_t i = queue.begin()->second;
    queue.erase(queue.begin());
    state[i] = Coarse;
    for (const index_t j : influences[i]) {
      if (state[j] != Undecided) continue;
      state[j] = Fine;
      queue.erase({-lambda[j], j});
      for (const index_t k : strength.strong[j])
        if (state[k] == Undecided) bump(k, 1);
    }
    for (const index_t k : strength.strong[i])
      if (state[k] == Undecided) bump(k, -1);
  }

  // Second pass: strong F-F pairs must share a C-node.
  std::vector<char> in_ci(n, 0);
  for (index_t i = 0; i < n; ++i) {
    if (state[i] != Fine) continue;
    index_t tentative = -1;
    for (const index_t k : strength.strong[i])
      if (state[k] == Coarse) in_ci[k] = 1;
    for (const index_t j : strength.strong[i]) {
      if (state[j] != Fine) continue;
      bool shared = false;
      for (const index_t k : strength.strong[j])
        if (in_ci[k]) {
          shared = true;
          break;
        }
      if (shared) continue;
      if (tentative >= 0) {
        state[i] = Coarse;
        tentative = -1;
        break;
      }
      tentative = j;
      in_ci[j] = 1;
    }
    if (tentative >= 0) state[tentative] = Coarse;
    for (const index_t k : strength.strong[i]) in_ci[k] = 0;
  }

  std::vector<bool> coarse(n);
  for (index_t i = 0; i < n; ++i) coarse[i] = state[i] == Coarse;
  return Splitting(std::move(coarse));
}

SparsityPattern build_pattern(const SparseMatrix& a, const StrengthGraph& strength,
                              const Splitting& splitting) {
  if (strength.size() != a.rows() || splitting.size() != a.rows())
    throw DimensionError("build_pattern: sizes disagree");
  SparsityPattern p;
  p.allowed.resize(a.rows());
  for (index_t i = 0; i < a.rows(); ++i) {
    if (splitting.is_coarse(i)) {
      p.allowed[i] = {i};
      continue;
    }
    for (const index_t j : strength.strong[i])
      if (splitting.is_coarse(j)) p.allowed[i].push_back(j);
    if (p.allowed[i].empty())
      throw PatternError("F-node " + std::to_string(i) + " has no strong C-neighbor");
  }
  return p;
}

Coarsening complete_coarsening(const SparseMatrix& a, StrengthGraph strength,
                               Splitting splitting) {
  Coarsening out;
  std::vector<bool> mask = splitting.mask();
  for (index_t i = 0; i < a.rows(); ++i) {
    if (mask[i]) continue;
    const bool has_c = std::any_of(strength.strong[i].begin(), strength.strong[i].end(),
                                   [&](index_t j) { return mask[j]; });
    if (!has_c) {
      mask[i] = true;
      ++out.promoted;
    }
  }
  out.splitting = out.promoted ? Splitting(std::move(mask)) : std::move(splitting);
  out.pattern = build_pattern(a, strength, out.splitting);
  out.strength = std::move(strength);
  return out;
}

Coarsening classical_coarsening(const SparseMatrix& a, double theta, std::uint64_t seed) {
  StrengthGraph s = strength_of_connection(a, theta);
  Splitting split = ruge_stuben_split(s, seed);
  return complete_coarsening(a, std::move(s), std::move(split));
}

SparseMatrix direct_interpolation(const SparseMatrix& a, const Splitting& splitting,
                                  const SparsityPattern& pattern) {
  const index_t n = a.rows();
  if (splitting.size() != n || pattern.size() != n)
    throw DimensionError("direct_interpolation: sizes disagree");
  std::vector<index_t> offsets(static_cast<std::size_t>(n) + 1, 0);
  std::vector<index_t> cols;
  std::vector<double> vals;
  cols.reserve(pattern.entry_count());
  vals.reserve(pattern.entry_count());
  for (index_t i = 0; i < n; ++i) {
    if (splitting.is_coarse(i)) {
      cols.push_back(splitting.coarse_index(i));
      vals.push_back(1.0);
      offsets[i + 1] = static_cast<index_t>(cols.size());
      continue;
    }
    double diag = 0.0;
    double sum_all = 0.0;
    const auto c = a.row_cols(i);
    const auto v = a.row_values(i);
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (c[k] == i)
        diag = v[k];
      else
        sum_all += v[k];
    }
    if (diag == 0.0) throw DegenerateRowError("zero diagonal in row " + std::to_string(i));
    double sum_c = 0.0;
    for (const index_t j : pattern.allowed[i]) {
      if (!splitting.is_coarse(j))
        throw PatternError("pattern of row " + std::to_string(i) + " names F-node " +
                           std::to_string(j));
      sum_c += a.coeff(i, j);
    }
    if (sum_c == 0.0)
      throw DegenerateRowError("row " + std::to_string(i) +
                               " has zero coupling to its interpolatory set");
    const double scale = -(sum_all / sum_c) / diag;
    for (const index_t j : pattern.allowed[i]) {
      cols.push_back(splitting.coarse_index(j));
      vals.push_back(scale * a.coeff(i, j));
    }
    offsets[i + 1] = static_cast<index_t>(cols.size());
  }
  return SparseMatrix(n, splitting.n_coarse(), std::move(offsets), std::move(cols),
                      std::move(vals));
}

Vector row_sums(const SparseMatrix& p) {
  Vector s(p.rows());
  for (index_t i = 0; i < p.rows(); ++i) {
    double acc = 0.0;
    for (const double v : p.row_values(i)) acc += v;
    s[i] = acc;
  }
  return s;
}

std::string to_json(const Splitting& splitting) {
  std::ostringstream out;
  out << "{\"n\": " << splitting.size() << ", \"coarse\": [";
  bool first = true;
  for (const index_t c : splitting.coarse_nodes()) {
    out << (first ? "" : ", ") << c;
    first = false;
  }
  out << "]}";
  return out.str();
}

std::string to_json(const SparsityPattern& pattern) {
  std::ostringstream out;
  out << "[";
  for (index_t i = 0; i < pattern.size(); ++i) {
    out << (i ? ", " : "") << "[";
    for (std::size_t k = 0; k < pattern.allowed[i].size(); ++k)
      out << (k ? ", " : "") << pattern.allowed[i][k];
    out << "]";
  }
  out << "]";
  return out.str();
}

}  // namespace gnnamg
