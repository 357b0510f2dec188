#include "gnnamg/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "gnnamg/fourier.hpp"

namespace gnnamg {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ stream) ^ index);
}

OptimizerState OptimizerState::for_parameters(const ModelParameters& params) {
  OptimizerState s;
  for (const auto& t : params.tensors) {
    s.first_moment.push_back(DenseMatrix::Zero(t.rows(), t.cols()));
    s.second_moment.push_back(DenseMatrix::Zero(t.rows(), t.cols()));
  }
  return s;
}

void adam_step(OptimizerState& state, ModelParameters& params,
               const std::vector<DenseMatrix>& grads) {
  const std::size_t n = params.tensors.size();
  if (grads.size() != n || state.first_moment.size() != n || state.second_moment.size() != n)
    throw DimensionError("adam_step: parameter, gradient and moment lists differ");
  for (std::size_t k = 0; k < n; ++k)
    if (grads[k].rows() != params.tensors[k].rows() || grads[k].cols() != params.tensors[k].cols())
      throw DimensionError("adam_step: gradient shape mismatch for " + params.names[k]);
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < n; ++k) {
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    m = state.beta1 * m + (1.0 - state.beta1) * grads[k];
    v = state.beta2 * v + (1.0 - state.beta2) * grads[k].cwiseAbs2();
    params.tensors[k].array() -=
        state.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
  }
}

std::string to_string(LossHead h) { return h == LossHead::Fourier ? "fourier" : "dense"; }

LossHead loss_head_from_string(const std::string& s) {
  if (s == "fourier") return LossHead::Fourier;
  if (s == "dense") return LossHead::Dense;
  throw std::invalid_argument("unknown loss head '" + s + "' (expected fourier or dense)");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (b < 3) throw std::invalid_argument("b must be >= 3");
  if (c < 1 || c_stage2_source < 1) throw std::invalid_argument("block sizes must be >= 1");
  if (s1 < 0 || s2 < 0) throw std::invalid_argument("sweep counts must be >= 0");
  model.validate();
}

std::vector<TrainingProblem> generate_training_set(const TrainConfig& config, std::size_t count,
                                                   index_t c, std::uint64_t stream) {
  std::vector<TrainingProblem> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t seed = derive_seed(config.seed, stream, i);
    out.push_back({generate_periodic_delaunay(config.b, c, config.distribution, seed), "fresh",
                   seed});
  }
  return out;
}

LossResult problem_loss(const ModelParameters& params, const BlockCirculantProblem& p,
                        const TrainConfig& config, bool with_grad) {
  LossOptions opt;
  opt.s1 = config.s1;
  opt.s2 = config.s2;
  opt.average_replicas = config.average_replicas;
  const TiledCoarsening tiled = tile_splitting(p, config.theta);
  if (config.loss_head == LossHead::Fourier) return loss_fourier(params, p, tiled, opt, with_grad);
  return loss_dense(params, p.a, tiled.coarsening, opt, with_grad);
}

void train_stage(ModelParameters& params, OptimizerState& state,
                 const std::vector<TrainingProblem>& problems, const TrainConfig& config,
                 int stage, TrainLog& log, const BatchCallback& on_batch) {
  config.validate();
  std::size_t batch_index = 0;
  for (std::size_t start = 0; start < problems.size(); start += config.batch_size, ++batch_index) {
    const std::size_t end = std::min(problems.size(), start + config.batch_size);
    BatchRecord rec;
    rec.stage = stage;
    rec.batch = batch_index;
    rec.problems = end - start;
    std::vector<DenseMatrix> grads;
    double loss_sum = 0.0;
    std::size_t ok = 0;
    for (std::size_t i = start; i < end; ++i) {
      try {
        LossResult r = problem_loss(params, problems[i].problem, config, true);
        if (!std::isfinite(r.value)) throw LossError("non-finite loss");
        if (grads.empty()) {
          grads = std::move(r.grads);
        } else {
          for (std::size_t k = 0; k < grads.size(); ++k) grads[k] += r.grads[k];
        }
        loss_sum += r.value;
        ++ok;
      } catch (const Error& e) {
        ++rec.failures;
        log.failures.push_back({stage, i, problems[i].origin, e.what()});
      }
    }
    if (ok > 0) {
      rec.mean_loss = loss_sum / static_cast<double>(ok);
      for (auto& g : grads) g /= static_cast<double>(ok);
      adam_step(state, params, grads);
    } else {
      rec.mean_loss = std::numeric_limits<double>::quiet_NaN();
    }
    log.batches.push_back(rec);
    if (on_batch) on_batch(rec);
  }
}

BlockCirculantProblem coarsen_block_circulant(const BlockCirculantProblem& p,
                                              const TiledProlongation& tp) {
  if (tp.b != p.b || tp.c != p.c) throw DimensionError("tiled prolongation does not match problem");
  const index_t cc = static_cast<index_t>(tp.coarse_positions.size());
  if (cc == 0) throw TilingError("empty coarse set");
  const SparseMatrix ac = triple_product(tp.to_sparse(), p.a);
  BlockCouplings raw = extract_couplings(ac, p.b, cc, cc);
  BlockCouplings sym = raw;
  for (auto& [s, m] : sym.blocks) {
    const LatticeOffset neg{-s.x, -s.y};
    const auto it = raw.blocks.find(neg);
    const DenseMatrix other =
        it == raw.blocks.end() ? DenseMatrix::Zero(cc, cc) : DenseMatrix(it->second.transpose());
    m = 0.5 * (raw.blocks.at(s) + other);
  }
  for (const auto& [s, m] : raw.blocks) {
    const LatticeOffset neg{-s.x, -s.y};
    if (!sym.blocks.count(neg)) sym.blocks[neg] = 0.5 * DenseMatrix(m.transpose());
  }

  BlockCirculantProblem out;
  out.a = sym.tile_sparse();
  out.b = p.b;
  out.c = cc;
  out.kind = p.kind;
  for (const index_t u : tp.coarse_positions)
    if (u < static_cast<index_t>(p.base_points.size())) out.base_points.push_back(p.base_points[u]);
  for (const auto& [s, m] : sym.blocks)
    for (index_t u = 0; u < cc; ++u)
      for (index_t v = 0; v < cc; ++v) {
        const bool forward = s.x > 0 || (s.x == 0 && s.y > 0) || (s.x == 0 && s.y == 0 && v > u);
        if (forward && m(u, v) != 0.0) out.edges.push_back({u, v, s, -m(u, v)});
      }

  // Nullity one for a singular operator, none otherwise.
  const FourierSymbolSet hat = block_diagonalize(sym);
  double scale = 0.0;
  std::vector<Eigen::VectorXd> eig;
  for (const auto& blk : hat.blocks) {
    const Eigen::MatrixXcd z = blk.to_complex();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(0.5 * (z + z.adjoint()), Eigen::EigenvaluesOnly);
    eig.push_back(es.eigenvalues());
    scale = std::max(scale, es.eigenvalues().cwiseAbs().maxCoeff());
  }
  int zeros = 0;
  for (const auto& e : eig)
    for (Eigen::Index k = 0; k < e.size(); ++k) {
      if (e[k] < -1e-10 * scale) throw SingularMatrixError("coarse operator is indefinite");
      if (e[k] <= 1e-10 * scale) ++zeros;
    }
  const int expected = p.kind == MatrixKind::SPSDLaplacian ? 1 : 0;
  if (zeros != expected)
    throw SingularMatrixError("coarse operator has nullity " + std::to_string(zeros));
  return out;
}

std::vector<TrainingProblem> build_coarsened_set(const ModelParameters& params,
                                                 const TrainConfig& config, TrainLog& log) {
  std::vector<TrainingProblem> out;
  LossOptions opt;
  opt.s1 = config.s1;
  opt.s2 = config.s2;
  opt.average_replicas = config.average_replicas;
  for (std::size_t i = 0; i < config.stage2_coarsened_source_count; ++i) {
    const std::uint64_t seed = derive_seed(config.seed, 3, i);
    try {
      const BlockCirculantProblem src =
          generate_periodic_delaunay(config.b, config.c_stage2_source, config.distribution, seed);
      const TiledCoarsening tiled = tile_splitting(src, config.theta);
      const TiledProlongation tp = learned_tiled_prolongation(params, src, tiled, opt);
      out.push_back({coarsen_block_circulant(src, tp), "coarsened", seed});
    } catch (const Error& e) {
      log.failures.push_back({2, i, "coarsened-source", e.what()});
    }
  }
  return out;
}

TrainResult train(const TrainConfig& config, int stages, const BatchCallback& on_batch) {
  config.validate();
  if (stages < 1 || stages > 2) throw std::invalid_argument("stages must be 1 or 2");
  TrainResult r;
  r.params = ModelParameters::initialize(config.model, derive_seed(config.seed, 0, 0));
  r.optimizer = OptimizerState::for_parameters(r.params);
  r.optimizer.lr = config.lr;
  {
    const auto stage1 = generate_training_set(config, config.stage1_count, config.c, 1);
    train_stage(r.params, r.optimizer, stage1, config, 1, r.log, on_batch);
  }
  if (stages == 2) {
    auto stage2 = generate_training_set(config, config.stage2_fresh_count, config.c, 2);
    auto coarse = build_coarsened_set(r.params, config, r.log);
    r.coarsened_built = coarse.size();
    for (auto& p : coarse) stage2.push_back(std::move(p));
    std::mt19937_64 rng(derive_seed(config.seed, 4, 0));
    for (std::size_t i = stage2.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(stage2[i - 1], stage2[j]);
    }
    train_stage(r.params, r.optimizer, stage2, config, 2, r.log, on_batch);
  }
  return r;
}

void write_training_log(const std::string& path, const TrainLog& log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.precision(17);
  out << "stage,batch,mean_loss,problems,failures\n";
  for (const auto& b : log.batches)
    out << b.stage << "," << b.batch << "," << b.mean_loss << "," << b.problems << ","
        << b.failures << "\n";
}

// Evaluation

namespace {

template <class F>
double mean_over(const EvalReport& r, index_t size, F f) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& rec : r.records)
    if (size == 0 || rec.size == size) {
      s += f(rec);
      ++n;
    }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(n);
}

double coarse_asymmetry(const SparseMatrix& a) {
  double scale = 0.0, worst = 0.0;
  for (index_t i = 0; i < a.rows(); ++i) {
    const auto cols = a.row_cols(i);
    const auto vals = a.row_values(i);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      scale = std::max(scale, std::abs(vals[k]));
      worst = std::max(worst, std::abs(vals[k] - a.coeff(cols[k], i)));
    }
  }
  return scale == 0.0 ? 0.0 : worst / scale;
}

}  // namespace

double EvalReport::success_rate(index_t size) const {
  return mean_over(*this, size, [](const EvalRecord& r) {
    return r.learned_factor < r.baseline_factor ? 1.0 : 0.0;
  });
}
double EvalReport::mean_baseline(index_t size) const {
  return mean_over(*this, size, [](const EvalRecord& r) { return r.baseline_factor; });
}
double EvalReport::mean_learned(index_t size) const {
  return mean_over(*this, size, [](const EvalRecord& r) { return r.learned_factor; });
}
std::size_t EvalReport::count(index_t size) const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [&](const auto& r) {
    return size == 0 || r.size == size;
  }));
}
std::vector<index_t> EvalReport::sizes() const {
  std::set<index_t> s;
  for (const auto& r : records) s.insert(r.size);
  return {s.begin(), s.end()};
}

ProlongationProvider frozen_baseline_provider() {
  return [](const SparseMatrix& a, const Coarsening& c, int) {
    const GraphProblem gp = encode_features(a, c.splitting, c.pattern, true);
    const SparseMatrix base = direct_interpolation(a, c.splitting, c.pattern);
    DenseMatrix raw(static_cast<Eigen::Index>(gp.pattern_edges.size()), 1);
    for (std::size_t q = 0; q < gp.pattern_edges.size(); ++q)
      raw(q, 0) = base.coeff(gp.pattern_rows[q], gp.pattern_cols[q]);
    return assemble_prolongation(raw, gp, row_sums(base), false);
  };
}

EvalReport evaluate_suite(const ProlongationProvider& learned, const SuiteSpec& spec,
                          const EvalCallback& on_record) {
  spec.cycle.validate();
  EvalReport report;
  for (std::size_t si = 0; si < spec.sizes.size(); ++si) {
    const index_t n = spec.sizes[si];
    for (std::size_t run = 0; run < spec.runs; ++run) {
      const std::uint64_t seed = derive_seed(spec.seed, static_cast<std::uint64_t>(n), run);
      try {
        const GraphLaplacian g = generate_delaunay_laplacian(n, spec.distribution, seed);
        EvalRecord rec;
        rec.size = n;
        rec.seed = seed;
        rec.cycle = spec.cycle.cycle;
        const Hierarchy base =
            build_hierarchy(g.a, MatrixKind::SPSDLaplacian, spec.cycle, baseline_provider());
        double dev = 0.0;
        int deficient = 0;
        const ProlongationProvider checked = [&](const SparseMatrix& a, const Coarsening& c,
                                                 int level) {
          SparseMatrix p = learned(a, c, level);
          const Vector target = row_sums(direct_interpolation(a, c.splitting, c.pattern));
          dev = std::max(dev, (row_sums(p) - target).lpNorm<Eigen::Infinity>());
          if (p.rows() <= 2048) {
            Eigen::ColPivHouseholderQR<DenseMatrix> qr(p.to_dense());
            if (qr.rank() < p.cols()) ++deficient;
          }
          return p;
        };
        const Hierarchy mine = build_hierarchy(g.a, MatrixKind::SPSDLaplacian, spec.cycle, checked);
        if (!(base.levels[0].splitting == mine.levels[0].splitting))
          throw HierarchyError("finest-level splittings differ");
        const std::uint64_t x0_seed = derive_seed(seed, 5, 0);
        rec.baseline_factor =
            asymptotic_convergence_factor(base, spec.cycle, x0_seed, spec.factor_cycles);
        rec.learned_factor =
            asymptotic_convergence_factor(mine, spec.cycle, x0_seed, spec.factor_cycles);
        rec.baseline_levels = base.n_levels();
        rec.learned_levels = mine.n_levels();
        rec.max_row_sum_deviation = dev;
        rec.rank_deficient_levels = deficient;
        for (const auto* h : {&base, &mine})
          for (std::size_t l = 1; l < h->levels.size(); ++l)
            rec.max_coarse_asymmetry =
                std::max(rec.max_coarse_asymmetry, coarse_asymmetry(h->levels[l].a));
        report.records.push_back(rec);
        if (on_record) on_record(rec);
      } catch (const Error& e) {
        report.failures.push_back({n, seed, e.what()});
      }
    }
  }
  return report;
}

EvalReport evaluate_suite(const ModelParameters& params, const SuiteSpec& spec,
                          const EvalCallback& on_record) {
  return evaluate_suite(learned_provider(params), spec, on_record);
}

void write_eval_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.precision(17);
  out << "size,seed,cycle,baseline_factor,learned_factor,learned_better\n";
  for (const auto& r : report.records)
    out << r.size << "," << r.seed << "," << to_string(r.cycle) << "," << r.baseline_factor << ","
        << r.learned_factor << "," << (r.learned_factor < r.baseline_factor ? 1 : 0) << "\n";
}

void write_eval_summary_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.precision(17);
  out << "size,runs,failures,mean_baseline,mean_learned,success_rate\n";
  for (const index_t n : report.sizes()) {
    const auto failures = std::count_if(report.failures.begin(), report.failures.end(),
                                        [&](const auto& f) { return f.size == n; });
    out << n << "," << report.count(n) << "," << failures << "," << report.mean_baseline(n) << ","
        << report.mean_learned(n) << "," << report.success_rate(n) << "\n";
  }
}

void write_eval_svg(const std::string& path, const EvalReport& report) {
  const auto sizes = report.sizes();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  const double w = 640, h = 400, left = 60, right = 20, top = 20, bottom = 50;
  double ymax = 0.0;
  for (const index_t n : sizes)
    ymax = std::max({ymax, report.mean_baseline(n), report.mean_learned(n)});
  ymax = ymax > 0.0 ? ymax * 1.1 : 1.0;
  const double lx0 = sizes.empty() ? 0.0 : std::log2(static_cast<double>(sizes.front()));
  const double lx1 = sizes.empty() ? 1.0 : std::log2(static_cast<double>(sizes.back()));
  auto px = [&](index_t n) {
    const double t = lx1 > lx0 ? (std::log2(static_cast<double>(n)) - lx0) / (lx1 - lx0) : 0.5;
    return left + t * (w - left - right);
  };
  auto py = [&](double v) { return top + (1.0 - v / ymax) * (h - top - bottom); };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\""
      << h - bottom << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << h - bottom << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = ymax * k / 4.0;
    out << "<text x=\"" << left - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">"
        << std::round(v * 1000.0) / 1000.0 << "</text>\n";
  }
  for (const index_t n : sizes)
    out << "<text x=\"" << px(n) << "\" y=\"" << h - bottom + 18 << "\" text-anchor=\"middle\">"
        << n << "</text>\n";
  out << "<text x=\"" << (left + w - right) / 2 << "\" y=\"" << h - 10
      << "\" text-anchor=\"middle\">problem size</text>\n";
  auto series = [&](const char* color, auto value, const char* label, double ly) {
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const index_t n : sizes) out << px(n) << "," << py(value(n)) << " ";
    out << "\"/>\n";
    for (const index_t n : sizes)
      out << "<circle cx=\"" << px(n) << "\" cy=\"" << py(value(n)) << "\" r=\"3\" fill=\"" << color
          << "\"/>\n";
    out << "<text x=\"" << w - right - 120 << "\" y=\"" << ly << "\" fill=\"" << color << "\">"
        << label << "</text>\n";
  };
  series("#1f77b4", [&](index_t n) { return report.mean_baseline(n); }, "classical", top + 14);
  series("#d62728", [&](index_t n) { return report.mean_learned(n); }, "learned", top + 30);
  out << "</svg>\n";
}

}  // namespace gnnamg
