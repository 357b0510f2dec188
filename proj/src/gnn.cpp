#include "gnnamg/gnn.hpp"

#include <algorithm>
#include <bit>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace gnnamg {

std::string ModelConfig::describe() const {
  std::ostringstream out;
  out << "mp_layers=" << mp_layers << " mlp_depth=" << mlp_depth << " width=" << width
      << " encoder_concat=" << (encoder_concat ? 1 : 0) << " indicators=" << (indicators ? 1 : 0);
  return out.str();
}

std::uint64_t ModelConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const unsigned char ch : describe()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

void ModelConfig::validate() const {
  if (mp_layers < 1) throw std::invalid_argument("mp_layers must be >= 1");
  if (mlp_depth < 1) throw std::invalid_argument("mlp_depth must be >= 1");
  if (width < 1) throw std::invalid_argument("width must be >= 1");
}

namespace {

ModelConfig parse_config(const std::string& text) {
  ModelConfig c;
  std::istringstream in(text);
  for (std::string kv; in >> kv;) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw CheckpointError("bad architecture field: " + kv);
    const std::string key = kv.substr(0, eq);
    const int value = std::stoi(kv.substr(eq + 1));
    if (key == "mp_layers")
      c.mp_layers = value;
    else if (key == "mlp_depth")
      c.mlp_depth = value;
    else if (key == "width")
      c.width = value;
    else if (key == "encoder_concat")
      c.encoder_concat = value != 0;
    else if (key == "indicators")
      c.indicators = value != 0;
    else
      throw CheckpointError("unknown architecture field: " + key);
  }
  return c;
}

struct MlpShape {
  std::string name;
  int in;
  int out;
};

std::vector<MlpShape> mlp_shapes(const ModelConfig& c) {
  const int w = c.width;
  std::vector<MlpShape> s;
  s.push_back({"enc_node", c.node_in(), w});
  s.push_back({"enc_edge", c.edge_in(), w});
  for (int r = 0; r < c.mp_layers; ++r) {
    s.push_back({"mp" + std::to_string(r) + ".edge", (c.encoder_concat ? 4 : 3) * w, w});
    s.push_back({"mp" + std::to_string(r) + ".node", (c.encoder_concat ? 3 : 2) * w, w});
  }
  s.push_back({"decoder", w, 1});
  return s;
}

}  // namespace

std::size_t expected_parameter_count(const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& m : mlp_shapes(config))
    for (int l = 0; l < config.mlp_depth; ++l) {
      const int fi = l == 0 ? m.in : config.width;
      const int fo = l + 1 == config.mlp_depth ? m.out : config.width;
      n += static_cast<std::size_t>(fi) * fo + fo;
    }
  return n;
}

ModelParameters ModelParameters::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParameters p;
  p.config = config;
  p.seed = seed;
  std::mt19937_64 rng(seed);
  for (const auto& m : mlp_shapes(config))
    for (int l = 0; l < config.mlp_depth; ++l) {
      const int fi = l == 0 ? m.in : config.width;
      const int fo = l + 1 == config.mlp_depth ? m.out : config.width;
      const double limit = std::sqrt(6.0 / (fi + fo));
      std::uniform_real_distribution<double> u(-limit, limit);
      DenseMatrix w(fi, fo);
      for (Eigen::Index i = 0; i < fi; ++i)
        for (Eigen::Index j = 0; j < fo; ++j) w(i, j) = u(rng);
      p.names.push_back(m.name + "." + std::to_string(l) + ".w");
      p.tensors.push_back(std::move(w));
      p.names.push_back(m.name + "." + std::to_string(l) + ".b");
      p.tensors.push_back(DenseMatrix::Zero(1, fo));
    }
  return p;
}

std::size_t ModelParameters::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
  return n;
}

GraphProblem encode_features(const SparseMatrix& a, const Splitting& splitting,
                             const SparsityPattern& pattern, bool indicators) {
  const index_t n = a.rows();
  if (a.cols() != n || splitting.size() != n || pattern.size() != n)
    throw DimensionError("encode_features: sizes disagree");
  GraphProblem gp;
  gp.n_nodes = n;
  gp.n_coarse = splitting.n_coarse();
  const std::size_t e = a.nnz();
  gp.src.resize(e);
  gp.dst.resize(e);
  gp.node_features = DenseMatrix::Zero(n, indicators ? 2 : 1);
  gp.edge_features = DenseMatrix::Zero(static_cast<Eigen::Index>(e), indicators ? 3 : 1);
  const auto offsets = a.row_offsets();
  const auto cols = a.col_indices();
  const auto vals = a.values();
  for (index_t i = 0; i < n; ++i) {
    if (indicators)
      gp.node_features(i, splitting.is_coarse(i) ? 0 : 1) = 1.0;
    else
      gp.node_features(i, 0) = 1.0;
    for (index_t k = offsets[i]; k < offsets[i + 1]; ++k) {
      gp.dst[k] = i;
      gp.src[k] = cols[k];
      gp.edge_features(k, 0) = vals[k];
      if (indicators) gp.edge_features(k, 2) = 1.0;
    }
  }
  auto edge_of = [&](index_t i, index_t j) {
    const auto rc = a.row_cols(i);
    const auto it = std::lower_bound(rc.begin(), rc.end(), j);
    if (it == rc.end() || *it != j)
      throw PatternError("pattern entry (" + std::to_string(i) + ", " + std::to_string(j) +
                         ") is not an entry of A");
    return static_cast<index_t>(offsets[i] + (it - rc.begin()));
  };
  for (index_t i = 0; i < n; ++i) {
    const bool coarse = splitting.is_coarse(i);
    if (coarse && (pattern.allowed[i].size() != 1 || pattern.allowed[i][0] != i))
      throw PatternError("C-row " + std::to_string(i) + " must list only itself");
    for (const index_t j : pattern.allowed[i]) {
      if (!splitting.is_coarse(j))
        throw PatternError("pattern of row " + std::to_string(i) + " names F-node " +
                           std::to_string(j));
      const index_t k = edge_of(i, j);
      gp.pattern_edges.push_back(k);
      gp.pattern_rows.push_back(i);
      gp.pattern_cols.push_back(splitting.coarse_index(j));
      gp.pattern_is_f.push_back(coarse ? 0 : 1);
      if (indicators) {
        gp.edge_features(k, 1) = 1.0;
        gp.edge_features(k, 2) = 0.0;
      }
    }
  }
  return gp;
}

namespace {

void write_doubles(std::ostream& out, const DenseMatrix& m) {
  out << m.rows() << " " << m.cols() << "\n";
  char buf[64];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%a", m(i, j));
      out << (j ? " " : "") << buf;
    }
    out << "\n";
  }
}

DenseMatrix read_doubles(std::istream& in) {
  Eigen::Index r = 0, c = 0;
  if (!(in >> r >> c) || r < 0 || c < 0) throw IoError("graph problem: bad matrix header");
  DenseMatrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) {
      std::string tok;
      if (!(in >> tok)) throw IoError("graph problem: truncated matrix");
      m(i, j) = std::strtod(tok.c_str(), nullptr);
    }
  return m;
}

template <class T>
void write_list(std::ostream& out, const std::vector<T>& v) {
  out << v.size();
  for (const auto& x : v) out << " " << static_cast<long long>(x);
  out << "\n";
}

template <class T>
std::vector<T> read_list(std::istream& in) {
  std::size_t n = 0;
  if (!(in >> n)) throw IoError("graph problem: bad list header");
  std::vector<T> v(n);
  for (auto& x : v) {
    long long y;
    if (!(in >> y)) throw IoError("graph problem: truncated list");
    x = static_cast<T>(y);
  }
  return v;
}

}  // namespace

void write_graph_problem(std::ostream& out, const GraphProblem& gp) {
  out << "gnnamg-graph 1\n" << gp.n_nodes << " " << gp.n_coarse << "\n";
  write_list(out, gp.src);
  write_list(out, gp.dst);
  write_doubles(out, gp.node_features);
  write_doubles(out, gp.edge_features);
  write_list(out, gp.pattern_edges);
  write_list(out, gp.pattern_rows);
  write_list(out, gp.pattern_cols);
  write_list(out, gp.pattern_is_f);
}

GraphProblem read_graph_problem(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "gnnamg-graph" || version != 1)
    throw IoError("not a graph problem file");
  GraphProblem gp;
  if (!(in >> gp.n_nodes >> gp.n_coarse)) throw IoError("graph problem: bad header");
  gp.src = read_list<index_t>(in);
  gp.dst = read_list<index_t>(in);
  gp.node_features = read_doubles(in);
  gp.edge_features = read_doubles(in);
  gp.pattern_edges = read_list<index_t>(in);
  gp.pattern_rows = read_list<index_t>(in);
  gp.pattern_cols = read_list<index_t>(in);
  gp.pattern_is_f = read_list<char>(in);
  return gp;
}

namespace {

struct EagerOps {
  using T = DenseMatrix;
  const std::vector<DenseMatrix>& params;

  const DenseMatrix& param(int k) const { return params[k]; }
  T input(const DenseMatrix& m) const { return m; }
  T affine(const T& h, int k) const {
    return kernels::add_bias(kernels::matmul(h, params[k]), params[k + 1]);
  }
  T relu(const T& h) const { return kernels::relu(h); }
  T gather(const T& x, std::span<const index_t> idx) const { return kernels::gather_rows(x, idx); }
  T scatter(const T& x, std::span<const index_t> idx, index_t n) const {
    return kernels::scatter_add_rows(x, idx, n);
  }
  T concat(const std::vector<const T*>& parts) const { return kernels::concat_cols(parts); }
};

struct TapeOps {
  using T = Var;
  Tape& tape;
  std::span<const Var> params;

  T input(const DenseMatrix& m) const { return tape.constant(m); }
  T affine(const T& h, int k) const {
    return ad::add_bias(ad::matmul(h, params[k]), params[k + 1]);
  }
  T relu(const T& h) const { return ad::relu(h); }
  T gather(const T& x, std::span<const index_t> idx) const { return ad::gather_rows(x, idx); }
  T scatter(const T& x, std::span<const index_t> idx, index_t n) const {
    return ad::scatter_add_rows(x, idx, n);
  }
  T concat(const std::vector<const T*>& parts) const {
    std::vector<Var> v;
    for (const auto* p : parts) v.push_back(*p);
    return ad::concat_cols(v);
  }
};

template <class Ops>
typename Ops::T mlp(const Ops& ops, int& cursor, int depth, typename Ops::T h) {
  for (int l = 0; l < depth; ++l) {
    h = ops.affine(h, cursor);
    cursor += 2;
    if (l + 1 < depth) h = ops.relu(h);
  }
  return h;
}

template <class Ops>
typename Ops::T forward_generic(const Ops& ops, const ModelConfig& cfg, const GraphProblem& gp) {
  using T = typename Ops::T;
  if (gp.node_features.cols() != cfg.node_in() || gp.edge_features.cols() != cfg.edge_in())
    throw DimensionError("graph features do not match the model's indicator setting");
  int cursor = 0;
  const int depth = cfg.mlp_depth;
  const T x0 = mlp(ops, cursor, depth, ops.input(gp.node_features));
  const T e0 = mlp(ops, cursor, depth, ops.input(gp.edge_features));
  T x = x0;
  T e = e0;
  for (int r = 0; r < cfg.mp_layers; ++r) {
    const T xs = ops.gather(x, gp.src);
    const T xd = ops.gather(x, gp.dst);
    std::vector<const T*> edge_parts{&e, &xs, &xd};
    if (cfg.encoder_concat) edge_parts.push_back(&e0);
    e = mlp(ops, cursor, depth, ops.concat(edge_parts));
    const T agg = ops.scatter(e, gp.dst, gp.n_nodes);
    std::vector<const T*> node_parts{&x, &agg};
    if (cfg.encoder_concat) node_parts.push_back(&x0);
    x = mlp(ops, cursor, depth, ops.concat(node_parts));
  }
  return mlp(ops, cursor, depth, ops.gather(e, gp.pattern_edges));
}

void check_params(const ModelParameters& p) {
  if (p.tensors.size() != 2 * mlp_shapes(p.config).size() * p.config.mlp_depth)
    throw DimensionError("parameter list does not match the architecture");
}

}  // namespace

DenseMatrix forward(const ModelParameters& params, const GraphProblem& gp) {
  check_params(params);
  return forward_generic(EagerOps{params.tensors}, params.config, gp);
}

Var forward(Tape& tape, std::span<const Var> param_vars, const ModelConfig& config,
            const GraphProblem& gp) {
  return forward_generic(TapeOps{tape, param_vars}, config, gp);
}

SparseMatrix assemble_prolongation(const DenseMatrix& raw, const GraphProblem& gp,
                                   const Vector& target_row_sums, bool guard) {
  const std::size_t k = gp.pattern_edges.size();
  if (static_cast<std::size_t>(raw.rows()) != k || raw.cols() != 1)
    throw DimensionError("assemble_prolongation: one raw value per pattern edge required");
  if (target_row_sums.size() != gp.n_nodes)
    throw DimensionError("assemble_prolongation: one target per row required");
  Vector sums = Vector::Zero(gp.n_nodes);
  for (std::size_t q = 0; q < k; ++q)
    if (gp.pattern_is_f[q]) sums[gp.pattern_rows[q]] += raw(q, 0);
  std::vector<Triplet> t;
  t.reserve(k);
  for (std::size_t q = 0; q < k; ++q) {
    const index_t i = gp.pattern_rows[q];
    if (!gp.pattern_is_f[q]) {
      t.push_back({i, gp.pattern_cols[q], 1.0});
      continue;
    }
    double s = sums[i];
    if (guard) {
      if (std::abs(s) < 1e-8) s = s < 0.0 ? -1e-8 : 1e-8;
    } else if (s == 0.0) {
      throw DegenerateRowError("raw outputs of row " + std::to_string(i) + " sum to zero");
    }
    t.push_back({i, gp.pattern_cols[q], raw(q, 0) * (target_row_sums[i] / s)});
  }
  return SparseMatrix::from_coordinates(t, gp.n_nodes, gp.n_coarse);
}

SparseMatrix learned_prolongation(const ModelParameters& params, const SparseMatrix& a,
                                  const Coarsening& coarsening) {
  const GraphProblem gp =
      encode_features(a, coarsening.splitting, coarsening.pattern, params.config.indicators);
  const DenseMatrix raw = forward(params, gp);
  const Vector targets =
      row_sums(direct_interpolation(a, coarsening.splitting, coarsening.pattern));
  return assemble_prolongation(raw, gp, targets, false);
}

ProlongationProvider learned_provider(const ModelParameters& params) {
  return [&params](const SparseMatrix& a, const Coarsening& c, int) {
    return learned_prolongation(params, a, c);
  };
}

namespace {

std::vector<Var> parameter_leaves(Tape& tape, const ModelParameters& params) {
  check_params(params);
  std::vector<Var> v;
  v.reserve(params.tensors.size());
  for (const auto& t : params.tensors) v.push_back(tape.leaf(t, true));
  return v;
}

// F entries of the pattern restricted to the given rows, scaled to the
// target row sums. `local_row` maps a node to its row in `targets`.
struct ScaledEntries {
  Var values;
  std::vector<std::size_t> positions;  // indices into the pattern arrays
  std::vector<index_t> rows;           // local rows
};

ScaledEntries scale_rows(Tape& tape, const Var& raw, const GraphProblem& gp, index_t row_begin,
                         index_t row_end, const Vector& targets, bool guard) {
  ScaledEntries s;
  std::vector<index_t> ids;
  for (std::size_t q = 0; q < gp.pattern_edges.size(); ++q) {
    const index_t i = gp.pattern_rows[q];
    if (!gp.pattern_is_f[q] || i < row_begin || i >= row_end) continue;
    s.positions.push_back(q);
    s.rows.push_back(i - row_begin);
    ids.push_back(static_cast<index_t>(q));
  }
  const index_t m = row_end - row_begin;
  if (ids.empty()) return s;
  const Var fraw = ad::gather_rows(raw, ids);
  Var sums = ad::scatter_add_rows(fraw, s.rows, m);
  if (guard) {
    sums = ad::clamp_magnitude(sums, 1e-8);
  } else {
    std::vector<char> has(m, 0);
    for (const index_t r : s.rows) has[r] = 1;
    for (index_t r = 0; r < m; ++r)
      if (has[r] && sums.value()(r, 0) == 0.0)
        throw DegenerateRowError("raw outputs of row " + std::to_string(r + row_begin) +
                                 " sum to zero");
  }
  const Var factor = ad::divide(tape.constant(targets), sums);
  s.values = ad::hadamard(fraw, ad::gather_rows(factor, s.rows));
  return s;
}

bool zero_row_sums(const SparseMatrix& a) {
  const Vector rs = spmv(a, Vector::Ones(a.rows()));
  double scale = 0.0;
  for (const double v : a.values()) scale = std::max(scale, std::abs(v));
  return rs.lpNorm<Eigen::Infinity>() <= 1e-12 * scale;
}

DenseMatrix dense_relaxation(const DenseMatrix& a) {
  DenseMatrix s = -a.triangularView<Eigen::Lower>().solve(a);
  s.diagonal().array() += 1.0;
  return s;
}

LossResult finish(Tape& tape, const Var& loss, const std::vector<Var>& leaves, const Var& raw,
                  bool with_grad) {
  LossResult r;
  r.value = loss.value()(0, 0);
  if (!with_grad) return r;
  tape.backward(loss);
  for (const auto& v : leaves)
    r.grads.push_back(tape.has_grad(v.id()) ? tape.grad(v.id())
                                             : DenseMatrix::Zero(v.rows(), v.cols()));
  r.raw_grad = tape.has_grad(raw.id()) ? tape.grad(raw.id()) : DenseMatrix::Zero(raw.rows(), 1);
  return r;
}

}  // namespace

LossResult loss_dense(const ModelParameters& params, const SparseMatrix& a,
                      const Coarsening& coarsening, const LossOptions& options, bool with_grad) {
  const GraphProblem gp =
      encode_features(a, coarsening.splitting, coarsening.pattern, params.config.indicators);
  const Vector targets =
      row_sums(direct_interpolation(a, coarsening.splitting, coarsening.pattern));
  const index_t n = a.rows(), nc = coarsening.splitting.n_coarse();
  for (index_t i = 0; i < n; ++i)
    if (a.coeff(i, i) == 0.0) throw SingularRelaxationError("zero diagonal in row " + std::to_string(i));

  Tape tape;
  const std::vector<Var> leaves = parameter_leaves(tape, params);
  const Var raw = forward(tape, leaves, params.config, gp);
  const ScaledEntries f = scale_rows(tape, raw, gp, 0, n, targets, options.guard);

  DenseMatrix c_part = DenseMatrix::Zero(n, nc);
  for (index_t i = 0; i < n; ++i)
    if (coarsening.splitting.is_coarse(i)) c_part(i, coarsening.splitting.coarse_index(i)) = 1.0;
  Var p = tape.constant(std::move(c_part));
  if (!f.positions.empty()) {
    std::vector<index_t> cols;
    for (const auto q : f.positions) cols.push_back(gp.pattern_cols[q]);
    p = ad::add(p, ad::scatter_to_dense(f.values, f.rows, cols, n, nc));
  }
  const DenseMatrix ad_ = a.to_dense();
  const Var av = tape.constant(ad_);
  const Var sv = tape.constant(dense_relaxation(ad_));
  const bool singular = zero_row_sums(a);
  const Var pta = ad::matmul(ad::transpose(p), av);
  Var ac = ad::matmul(pta, p);
  if (singular) ac = ad::add(ac, tape.constant(DenseMatrix::Constant(nc, nc, 1.0 / nc)));
  Var inv;
  try {
    inv = ad::inverse(ac);
  } catch (const SingularMatrixError&) {
    throw LossError("P^T A P is singular");
  }
  Var m = ad::sub(tape.constant(DenseMatrix::Identity(n, n)),
                  ad::matmul(p, ad::matmul(inv, pta)));
  for (int k = 0; k < options.s1; ++k) m = ad::matmul(m, sv);
  for (int k = 0; k < options.s2; ++k) m = ad::matmul(sv, m);
  if (singular) {
    DenseMatrix proj = DenseMatrix::Identity(n, n);
    proj.array() -= 1.0 / n;
    m = ad::matmul(m, tape.constant(std::move(proj)));
  }
  return finish(tape, ad::frobenius_sq(m), leaves, raw, with_grad);
}

namespace {

struct BlockLayout {
  index_t c = 0;
  index_t cc = 0;
  std::vector<index_t> rank;  // local coarse rank, -1 for F positions
  Vector targets;             // target row sums of the reference block
  index_t row_begin = 0;
};

// Raw outputs with every reference-block entry replaced by the mean of its
// translated copies; other entries are zero.
Var replica_average(const Var& raw, const BlockCirculantProblem& p, const GraphProblem& gp,
                    int ref_block) {
  std::map<std::pair<index_t, index_t>, index_t> lookup;
  for (std::size_t q = 0; q < gp.pattern_edges.size(); ++q)
    lookup[{gp.pattern_rows[q], gp.src[gp.pattern_edges[q]]}] = static_cast<index_t>(q);
  const index_t lo = static_cast<index_t>(ref_block) * p.c, hi = lo + p.c;
  auto shift = [&](index_t i, int dx, int dy) {
    const index_t blk = i / p.c;
    return p.global_index(static_cast<int>(blk / p.b) + dx, static_cast<int>(blk % p.b) + dy, i % p.c);
  };
  std::vector<index_t> ref_ids;
  for (std::size_t q = 0; q < gp.pattern_edges.size(); ++q)
    if (gp.pattern_rows[q] >= lo && gp.pattern_rows[q] < hi) ref_ids.push_back(static_cast<index_t>(q));
  Var sum;
  for (int dx = 0; dx < p.b; ++dx)
    for (int dy = 0; dy < p.b; ++dy) {
      std::vector<index_t> ids;
      for (const index_t q : ref_ids) {
        const auto it = lookup.find({shift(gp.pattern_rows[q], dx, dy),
                                     shift(gp.src[gp.pattern_edges[q]], dx, dy)});
        if (it == lookup.end()) throw StructureError("pattern is not block-periodic");
        ids.push_back(it->second);
      }
      const Var g = ad::gather_rows(raw, ids);
      sum = sum.valid() ? ad::add(sum, g) : g;
    }
  const Var mean = ad::scale(sum, 1.0 / (static_cast<double>(p.b) * p.b));
  return ad::scatter_add_rows(mean, ref_ids, static_cast<index_t>(gp.pattern_edges.size()));
}

BlockLayout block_layout(const BlockCirculantProblem& p, const TiledCoarsening& tiled,
                         int ref_block) {
  const index_t nb = static_cast<index_t>(p.b) * p.b;
  if (ref_block < 0 || ref_block >= nb) throw std::out_of_range("reference block out of range");
  BlockLayout l;
  l.c = p.c;
  l.cc = static_cast<index_t>(tiled.coarse_positions.size());
  l.rank.assign(p.c, -1);
  for (std::size_t r = 0; r < tiled.coarse_positions.size(); ++r)
    l.rank[tiled.coarse_positions[r]] = static_cast<index_t>(r);
  l.row_begin = static_cast<index_t>(ref_block) * p.c;
  const Vector all = row_sums(direct_interpolation(p.a, tiled.coarsening.splitting,
                                                   tiled.coarsening.pattern));
  l.targets = all.segment(l.row_begin, p.c);
  return l;
}

// Offset and local coarse rank of each scaled F entry.
struct EntryPlacement {
  std::vector<LatticeOffset> offset;
  std::vector<index_t> rank;
};

EntryPlacement place_entries(const BlockCirculantProblem& p, const TiledCoarsening& tiled,
                             const GraphProblem& gp, const std::vector<std::size_t>& positions,
                             const BlockLayout& l, int ref_block) {
  const std::vector<index_t> coarse_nodes = tiled.coarsening.splitting.coarse_nodes();
  EntryPlacement e;
  const int rx = ref_block / p.b, ry = ref_block % p.b;
  for (const auto q : positions) {
    const index_t node = coarse_nodes[gp.pattern_cols[q]];
    const int blk = static_cast<int>(node / p.c);
    const LatticeOffset s{signed_wrap(blk / p.b - rx, p.b), signed_wrap(blk % p.b - ry, p.b)};
    if (std::abs(s.x) > 1 || std::abs(s.y) > 1)
      throw StructureError("prolongation coupling outside {-1,0,1}^2");
    const index_t r = l.rank[node % p.c];
    if (r < 0) throw TilingError("coupling targets a non-coarse local position");
    e.offset.push_back(s);
    e.rank.push_back(r);
  }
  return e;
}

}  // namespace

LossResult loss_fourier(const ModelParameters& params, const BlockCirculantProblem& p,
                        const TiledCoarsening& tiled, const LossOptions& options,
                        bool with_grad) {
  const Splitting& split = tiled.coarsening.splitting;
  const GraphProblem gp =
      encode_features(p.a, split, tiled.coarsening.pattern, params.config.indicators);
  const BlockLayout l = block_layout(p, tiled, options.ref_block);
  if (l.cc == 0) throw TilingError("empty coarse set");
  const BlockCouplings a_couplings = extract_couplings(p.a, p.b, p.c, p.c);
  const FourierSymbolSet a_hat = block_diagonalize(a_couplings);
  const FourierSymbolSet s_hat = relaxation_symbol(a_couplings);

  Tape tape;
  const std::vector<Var> leaves = parameter_leaves(tape, params);
  const Var raw = forward(tape, leaves, params.config, gp);
  const Var used = options.average_replicas ? replica_average(raw, p, gp, options.ref_block) : raw;
  const ScaledEntries f =
      scale_rows(tape, used, gp, l.row_begin, l.row_begin + p.c, l.targets, options.guard);
  const EntryPlacement place = place_entries(p, tiled, gp, f.positions, l, options.ref_block);

  std::map<LatticeOffset, std::vector<index_t>> by_offset;
  for (std::size_t k = 0; k < f.positions.size(); ++k)
    by_offset[place.offset[k]].push_back(static_cast<index_t>(k));
  by_offset.try_emplace(LatticeOffset{0, 0});

  std::vector<LatticeOffset> offsets;
  std::vector<Var> blocks;
  for (const auto& [s, ids] : by_offset) {
    Var blk;
    if (!ids.empty()) {
      std::vector<index_t> rows, cols;
      for (const index_t k : ids) {
        rows.push_back(f.rows[k]);
        cols.push_back(place.rank[k]);
      }
      blk = ad::scatter_to_dense(ad::gather_rows(f.values, ids), rows, cols, p.c, l.cc);
    }
    if (s == LatticeOffset{0, 0}) {
      DenseMatrix cpart = DenseMatrix::Zero(p.c, l.cc);
      for (index_t u = 0; u < p.c; ++u)
        if (l.rank[u] >= 0) cpart(u, l.rank[u]) = 1.0;
      const Var cv = tape.constant(std::move(cpart));
      blk = blk.valid() ? ad::add(blk, cv) : cv;
    }
    offsets.push_back(s);
    blocks.push_back(blk);
  }

  const bool singular = p.kind == MatrixKind::SPSDLaplacian;
  const Var eye = tape.constant(DenseMatrix::Identity(2 * p.c, 2 * p.c));
  Var total;
  for (std::size_t m = 0; m < a_hat.modes.size(); ++m) {
    const auto [k1, k2] = a_hat.modes[m];
    if (singular && k1 == 0 && k2 == 0) continue;
    std::vector<std::complex<double>> phases;
    for (const auto& s : offsets) phases.push_back(lattice_phase(p.b, k1, k2, s));
    const Var pe = ad::complex_embed(blocks, phases);
    const Var ae = tape.constant(embed_complex(a_hat.blocks[m].to_complex()));
    const Var se = tape.constant(embed_complex(s_hat.blocks[m].to_complex()));
    const Var pta = ad::matmul(ad::transpose(pe), ae);
    Var inv;
    try {
      inv = ad::inverse(ad::matmul(pta, pe));
    } catch (const SingularMatrixError&) {
      throw LossError("singular coarse block at mode (" + std::to_string(k1) + ", " +
                      std::to_string(k2) + ")");
    }
    Var mm = ad::sub(eye, ad::matmul(pe, ad::matmul(inv, pta)));
    for (int k = 0; k < options.s1; ++k) mm = ad::matmul(mm, se);
    for (int k = 0; k < options.s2; ++k) mm = ad::matmul(se, mm);
    const Var term = ad::frobenius_sq(mm);
    total = total.valid() ? ad::add(total, term) : term;
  }
  if (!total.valid()) total = tape.constant(DenseMatrix::Zero(1, 1));
  return finish(tape, ad::scale(total, 0.5), leaves, raw, with_grad);
}

TiledProlongation learned_tiled_prolongation(const ModelParameters& params,
                                             const BlockCirculantProblem& p,
                                             const TiledCoarsening& tiled,
                                             const LossOptions& options) {
  const GraphProblem gp = encode_features(p.a, tiled.coarsening.splitting,
                                          tiled.coarsening.pattern, params.config.indicators);
  const BlockLayout l = block_layout(p, tiled, options.ref_block);
  Tape tape;
  Var raw = tape.constant(forward(params, gp));
  if (options.average_replicas) raw = replica_average(raw, p, gp, options.ref_block);
  const ScaledEntries f =
      scale_rows(tape, raw, gp, l.row_begin, l.row_begin + p.c, l.targets, options.guard);
  const EntryPlacement place = place_entries(p, tiled, gp, f.positions, l, options.ref_block);

  TiledProlongation out;
  out.b = p.b;
  out.c = p.c;
  out.coarse_positions = tiled.coarse_positions;
  out.source_block = options.ref_block;
  out.modal_fraction = 1.0;
  DenseMatrix& zero = out.couplings[LatticeOffset{0, 0}];
  zero = DenseMatrix::Zero(p.c, p.c);
  for (const index_t u : tiled.coarse_positions) zero(u, u) = 1.0;
  for (std::size_t k = 0; k < f.positions.size(); ++k) {
    auto it = out.couplings.find(place.offset[k]);
    if (it == out.couplings.end())
      it = out.couplings.emplace(place.offset[k], DenseMatrix::Zero(p.c, p.c)).first;
    it->second(f.rows[k], tiled.coarse_positions[place.rank[k]]) += f.values.value()(k, 0);
  }
  return out;
}

GradientCheck gradient_check(const ModelParameters& params, const LossFunction& loss,
                             const std::vector<DenseMatrix>& direction, double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) throw std::invalid_argument("h must lie in [1e-7, 1e-3]");
  if (direction.size() != params.tensors.size())
    throw DimensionError("direction must match the parameter list");
  GradientCheck g;
  double dnorm = 0.0;
  for (const auto& d : direction) dnorm += d.squaredNorm();
  if (dnorm == 0.0) return g;
  const LossResult base = loss(params, true);
  for (std::size_t k = 0; k < direction.size(); ++k)
    g.analytic += base.grads[k].cwiseProduct(direction[k]).sum();
  ModelParameters plus = params, minus = params;
  for (std::size_t k = 0; k < direction.size(); ++k) {
    plus.tensors[k] += h * direction[k];
    minus.tensors[k] -= h * direction[k];
  }
  g.numeric = (loss(plus, false).value - loss(minus, false).value) / (2.0 * h);
  const double scale = std::max(std::abs(g.analytic), std::abs(g.numeric));
  g.rel_err = scale == 0.0 ? 0.0 : std::abs(g.analytic - g.numeric) / scale;
  return g;
}

std::vector<DenseMatrix> random_direction(const ModelParameters& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<DenseMatrix> d;
  double norm = 0.0;
  for (const auto& t : params.tensors) {
    DenseMatrix x(t.rows(), t.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
    norm += x.squaredNorm();
    d.push_back(std::move(x));
  }
  for (auto& x : d) x /= std::sqrt(norm);
  return d;
}

namespace {

constexpr const char* kMagic = "gnnamg-checkpoint";
constexpr int kVersion = 1;

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

}  // namespace

void save_model(const std::string& dir, const ModelParameters& params) {
  check_params(params);
  std::filesystem::create_directories(dir);
  {
    std::ofstream m(dir + "/manifest.txt");
    if (!m) throw CheckpointError("cannot write " + dir + "/manifest.txt");
    char hash[32];
    std::snprintf(hash, sizeof hash, "%016" PRIx64, params.config.hash());
    m << kMagic << " " << kVersion << "\n"
      << "architecture " << params.config.describe() << "\n"
      << "architecture_hash " << hash << "\n"
      << "seed " << params.seed << "\n"
      << "tensors " << params.tensors.size() << "\n";
    for (std::size_t k = 0; k < params.tensors.size(); ++k)
      m << params.names[k] << " " << params.tensors[k].rows() << " " << params.tensors[k].cols()
        << "\n";
  }
  std::ofstream b(dir + "/params.bin", std::ios::binary);
  if (!b) throw CheckpointError("cannot write " + dir + "/params.bin");
  for (const auto& t : params.tensors)
    for (Eigen::Index i = 0; i < t.rows(); ++i)
      for (Eigen::Index j = 0; j < t.cols(); ++j) {
        const std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(t(i, j)));
        b.write(reinterpret_cast<const char*>(&bits), sizeof bits);
      }
  if (!b) throw CheckpointError("failed writing parameters");
}

ModelParameters load_model(const std::string& dir) {
  std::ifstream m(dir + "/manifest.txt");
  if (!m) throw CheckpointError("cannot open " + dir + "/manifest.txt");
  std::string magic, key, line;
  int version = 0;
  if (!(m >> magic >> version) || magic != kMagic) throw CheckpointError("not a checkpoint");
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version");
  std::getline(m, line);
  std::getline(m, line);
  if (line.rfind("architecture ", 0) != 0) throw CheckpointError("missing architecture line");
  ModelParameters p;
  p.config = parse_config(line.substr(13));
  std::string hash_text;
  std::size_t count = 0;
  if (!(m >> key >> hash_text) || key != "architecture_hash")
    throw CheckpointError("missing architecture hash");
  char expected[32];
  std::snprintf(expected, sizeof expected, "%016" PRIx64, p.config.hash());
  if (hash_text != expected) throw CheckpointError("architecture hash does not match manifest");
  if (!(m >> key >> p.seed) || key != "seed") throw CheckpointError("missing seed");
  if (!(m >> key >> count) || key != "tensors") throw CheckpointError("missing tensor count");
  const ModelParameters shape = ModelParameters::initialize(p.config, 0);
  if (count != shape.tensors.size()) throw CheckpointError("tensor count does not match");
  std::ifstream b(dir + "/params.bin", std::ios::binary);
  if (!b) throw CheckpointError("cannot open " + dir + "/params.bin");
  for (std::size_t k = 0; k < count; ++k) {
    std::string name;
    Eigen::Index rows = 0, cols = 0;
    if (!(m >> name >> rows >> cols)) throw CheckpointError("truncated manifest");
    if (name != shape.names[k] || rows != shape.tensors[k].rows() ||
        cols != shape.tensors[k].cols())
      throw CheckpointError("tensor " + name + " does not match the architecture");
    DenseMatrix t(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) {
        std::uint64_t bits = 0;
        if (!b.read(reinterpret_cast<char*>(&bits), sizeof bits))
          throw CheckpointError("parameter file is truncated");
        t(i, j) = std::bit_cast<double>(to_little_endian(bits));
      }
    p.names.push_back(name);
    p.tensors.push_back(std::move(t));
  }
  if (b.peek() != std::char_traits<char>::eof())
    throw CheckpointError("parameter file has trailing data");
  return p;
}

ModelParameters load_model(const std::string& dir, const ModelConfig& expected) {
  ModelParameters p = load_model(dir);
  if (p.config.hash() != expected.hash())
    throw CheckpointError("checkpoint architecture (" + p.config.describe() +
                          ") does not match the requested one (" + expected.describe() + ")");
  return p;
}

}  // namespace gnnamg
