#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "gnnamg/cycle.hpp"
#include "gnnamg/fourier.hpp"
#include "gnnamg/gnn.hpp"
#include "gnnamg/problems.hpp"
#include "gnnamg/train.hpp"

namespace fs = std::filesystem;
using namespace gnnamg;

namespace {

struct ModelFlags {
  int mp_layers = 3;
  int mlp_depth = 4;
  int width = 64;
  bool no_encoder_concat = false;
  bool no_indicators = false;

  void add(CLI::App* app) {
    app->add_option("--mp-layers", mp_layers, "message-passing rounds")->capture_default_str();
    app->add_option("--mlp-depth", mlp_depth, "affine layers per MLP")->capture_default_str();
    app->add_option("--width", width, "hidden width")->capture_default_str();
    app->add_flag("--no-encoder-concat", no_encoder_concat,
                  "do not feed encoder features into every round");
    app->add_flag("--no-indicators", no_indicators, "drop C/F and pattern indicator features");
  }
  ModelConfig config() const {
    ModelConfig c;
    c.mp_layers = mp_layers;
    c.mlp_depth = mlp_depth;
    c.width = width;
    c.encoder_concat = !no_encoder_concat;
    c.indicators = !no_indicators;
    return c;
  }
};

struct CycleFlags {
  std::string cycle = "w";
  int s1 = 1;
  int s2 = 1;
  double theta = 0.25;

  void add(CLI::App* app) {
    app->add_option("--cycle", cycle, "cycle type (v or w)")
        ->check(CLI::IsMember({"v", "w", "V", "W"}))
        ->capture_default_str();
    app->add_option("--s1", s1, "pre-smoothing sweeps")->capture_default_str();
    app->add_option("--s2", s2, "post-smoothing sweeps")->capture_default_str();
    app->add_option("--theta", theta, "strength threshold")->capture_default_str();
  }
  CycleConfig config() const {
    CycleConfig c;
    c.cycle = cycle_type_from_string(cycle);
    c.s1 = s1;
    c.s2 = s2;
    c.theta = theta;
    return c;
  }
};

void add_config(CLI::App* app) {
  static std::string unused;
  app->add_option("--config", unused, "key=value file of long option names; command-line flags win");
}

// Splices the items of a --config file in front of the subcommand's own
// arguments, so later command-line values take precedence.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<long>(i));
      break;
    }
  }
  if (path.empty() || args.empty()) return args;
  if (!fs::exists(path)) throw CLI::FileError::Missing(path);
  std::vector<std::string> injected;
  for (const auto& item : CLI::ConfigTOML().from_file(path)) {
    if (!item.parents.empty()) throw CLI::ConversionError("sections are not supported in " + path);
    std::string name = item.name;
    std::replace(name.begin(), name.end(), '_', '-');
    std::string value;
    for (std::size_t k = 0; k < item.inputs.size(); ++k) value += (k ? "," : "") + item.inputs[k];
    injected.push_back("--" + name + "=" + value);
  }
  args.insert(args.begin() + 1, injected.begin(), injected.end());
  return args;
}

std::string pad(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return buf;
}

Vector random_rhs(index_t n, std::uint64_t seed, bool zero_mean) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Vector b(n);
  for (index_t i = 0; i < n; ++i) b[i] = normal(rng);
  if (zero_mean) b.array() -= b.mean();
  return b;
}

// generate

struct GenerateArgs {
  std::string kind = "delaunay";
  index_t n = 1024;
  int b = 4;
  index_t c = 16;
  std::size_t count = 1;
  std::string distribution = "lognormal";
  std::string cloud = "two-gaussians";
  int k = 10;
  bool jitter = false;
  std::uint64_t seed = 0;
  std::string out = "problems";
};

int run_generate(const GenerateArgs& g) {
  fs::create_directories(g.out);
  const WeightDistribution dist = WeightDistribution::parse(g.distribution);
  std::ofstream manifest(g.out + "/manifest.txt");
  manifest << "kind " << g.kind << "\ndistribution " << dist.describe() << "\nseed " << g.seed
           << "\ncount " << g.count << "\n";
  for (std::size_t i = 0; i < g.count; ++i) {
    const std::uint64_t seed = derive_seed(g.seed, 0, i);
    const std::string stem = g.out + "/problem_" + pad(i);
    if (g.kind == "delaunay") {
      const GraphLaplacian p = generate_delaunay_laplacian(g.n, dist, seed);
      write_matrix_market(stem + ".mtx", p.a, true);
      write_points_csv(stem + "_points.csv", p.points);
      manifest << "problem_" << pad(i) << " spsd n=" << p.a.rows() << " seed=" << seed << "\n";
    } else if (g.kind == "periodic") {
      const BlockCirculantProblem p = generate_periodic_delaunay(g.b, g.c, dist, seed);
      write_matrix_market(stem + ".mtx", p.a, true);
      write_points_csv(stem + "_points.csv", p.base_points);
      manifest << "problem_" << pad(i) << " spsd n=" << p.a.rows() << " b=" << g.b << " c=" << g.c
               << " seed=" << seed << "\n";
    } else if (g.kind == "fem") {
      const MeshProblem p = generate_fem_diffusion(g.n, dist, seed);
      write_matrix_market(stem + ".mtx", p.a, true);
      write_points_csv(stem + "_points.csv", p.points);
      manifest << "problem_" << pad(i) << " spd n=" << p.a.rows() << " seed=" << seed << "\n";
    } else if (g.kind == "knn") {
      KnnSpec spec;
      spec.cloud = point_cloud_from_string(g.cloud);
      spec.n_points = g.n;
      spec.k = g.k;
      spec.jitter = g.jitter;
      const KnnProblem p = generate_knn_affinity_laplacian(spec, seed);
      write_matrix_market(stem + ".mtx", p.a, true);
      write_points_csv(stem + "_points.csv", p.points);
      manifest << "problem_" << pad(i) << (g.jitter ? " spd" : " spsd") << " n=" << p.a.rows()
               << " seed=" << seed << "\n";
    } else {
      throw std::invalid_argument("unknown problem kind " + g.kind);
    }
  }
  std::cout << "wrote " << g.count << " " << g.kind << " problems to " << g.out << "\n";
  return 0;
}

// train

struct TrainArgs {
  TrainConfig cfg;
  std::string distribution = "lognormal";
  std::string loss_head = "fourier";
  int stages = 2;
  std::string out = "model";
};

int run_train(TrainArgs t, const ModelFlags& model, const CycleFlags& cyc) {
  t.cfg.distribution = WeightDistribution::parse(t.distribution);
  t.cfg.loss_head = loss_head_from_string(t.loss_head);
  t.cfg.model = model.config();
  t.cfg.s1 = cyc.s1;
  t.cfg.s2 = cyc.s2;
  t.cfg.theta = cyc.theta;
  const auto start = std::chrono::steady_clock::now();
  const TrainResult r = train(t.cfg, t.stages, [&](const BatchRecord& b) {
    if (b.batch % 10 != 0) return;
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << "stage " << b.stage << " batch " << b.batch << " loss " << b.mean_loss
              << " failures " << b.failures << " elapsed " << std::round(secs) << "s\n"
              << std::flush;
  });
  save_model(t.out, r.params);
  write_training_log(t.out + "/training_log.csv", r.log);
  {
    std::ofstream f(t.out + "/failures.csv");
    f << "stage,index,origin,message\n";
    for (const auto& e : r.log.failures)
      f << e.stage << "," << e.index << "," << e.origin << ",\"" << e.message << "\"\n";
  }
  std::cout << "saved " << t.out << " (" << r.params.parameter_count() << " parameters, "
            << r.log.failures.size() << " skipped problems, " << r.coarsened_built
            << " coarsened problems)\n";
  return 0;
}

// eval

struct EvalArgs {
  std::string model;
  bool frozen = false;
  std::vector<index_t> sizes{1024, 4096, 16384, 65536};
  std::size_t runs = 100;
  std::string distribution = "lognormal";
  std::uint64_t seed = 0;
  int cycles = 80;
  std::string out = "eval";
  bool svg = true;
};

int run_eval(const EvalArgs& e, const ModelFlags& model, const CycleFlags& cyc) {
  SuiteSpec spec;
  spec.sizes = e.sizes;
  spec.runs = e.runs;
  spec.distribution = WeightDistribution::parse(e.distribution);
  spec.cycle = cyc.config();
  spec.seed = e.seed;
  spec.factor_cycles = e.cycles;
  ModelParameters params;
  ProlongationProvider provider;
  if (e.frozen) {
    provider = frozen_baseline_provider();
  } else {
    if (e.model.empty()) throw std::invalid_argument("eval needs --model or --frozen-baseline");
    params = load_model(e.model, model.config());
    provider = learned_provider(params);
  }
  const EvalReport report = evaluate_suite(provider, spec, [](const EvalRecord& r) {
    std::cout << "n=" << r.size << " baseline " << r.baseline_factor << " learned "
              << r.learned_factor << "\n"
              << std::flush;
  });
  fs::create_directories(e.out);
  write_eval_csv(e.out + "/eval.csv", report);
  write_eval_summary_csv(e.out + "/summary.csv", report);
  if (e.svg) write_eval_svg(e.out + "/factors.svg", report);
  for (const index_t n : report.sizes())
    std::cout << "size " << n << ": runs " << report.count(n) << ", mean baseline "
              << report.mean_baseline(n) << ", mean learned " << report.mean_learned(n)
              << ", success rate " << report.success_rate(n) << "\n";
  for (const auto& f : report.failures)
    std::cout << "failed n=" << f.size << " seed=" << f.seed << ": " << f.message << "\n";
  return 0;
}

// solve

struct SolveArgs {
  std::string matrix;
  std::string rhs;
  std::string kind = "spd";
  std::string model;
  double tol = 1e-8;
  int max_iterations = 500;
  std::uint64_t seed = 0;
  std::string out = "solve";
};

int run_solve(const SolveArgs& s, const ModelFlags& model, const CycleFlags& cyc) {
  const SparseMatrix a = read_matrix_market(s.matrix);
  const MatrixKind kind = s.kind == "spd" ? MatrixKind::SPD : MatrixKind::SPSDLaplacian;
  if (s.kind != "spd" && s.kind != "spsd") throw std::invalid_argument("--kind must be spd or spsd");
  CycleConfig cfg = cyc.config();
  cfg.tolerance = s.tol;
  cfg.max_iterations = s.max_iterations;
  Vector b;
  if (s.rhs.empty()) {
    b = random_rhs(a.rows(), s.seed, kind == MatrixKind::SPSDLaplacian);
  } else {
    const SparseMatrix r = read_matrix_market(s.rhs);
    if (r.rows() != a.rows() || r.cols() != 1)
      throw DimensionError("right-hand side must be an n x 1 matrix");
    b = r.to_dense().col(0);
  }
  ModelParameters params;
  const Hierarchy h =
      s.model.empty()
          ? build_hierarchy(a, kind, cfg)
          : build_hierarchy(a, kind, cfg,
                            learned_provider(params = load_model(s.model, model.config())));
  const SolveResult r = solve(h, b, Vector::Zero(a.rows()), cfg);
  fs::create_directories(s.out);
  write_residual_history(s.out + "/residuals.csv", r.residual_history);
  const double final_res = r.residual_history.back();
  std::cout << "levels " << h.n_levels() << ", iterations " << r.iterations
            << ", final residual " << final_res << (r.converged ? " (converged)" : " (not converged)")
            << "\n";
  return r.converged ? 0 : 1;
}

// fourier-check

struct FourierArgs {
  std::size_t count = 20;
  int b = 4;
  index_t c = 8;
  std::string distribution = "lognormal";
  std::uint64_t seed = 0;
  std::string model;
  std::string out = "fourier_check";
  double tolerance = 1e-8;
};

int run_fourier(const FourierArgs& f, const ModelFlags& model, const CycleFlags& cyc) {
  const WeightDistribution dist = WeightDistribution::parse(f.distribution);
  ModelParameters params;
  if (!f.model.empty()) params = load_model(f.model, model.config());
  FourierLossOptions opt;
  opt.s1 = cyc.s1;
  opt.s2 = cyc.s2;
  fs::create_directories(f.out);
  std::ofstream report(f.out + "/report.csv");
  report.precision(17);
  report << "seed,fourier_loss,dense_loss,relative_error\n";
  double worst = 0.0;
  for (std::size_t i = 0; i < f.count; ++i) {
    const std::uint64_t seed = derive_seed(f.seed, 0, i);
    const BlockCirculantProblem p = generate_periodic_delaunay(f.b, f.c, dist, seed);
    const TiledCoarsening tiled = tile_splitting(p, cyc.theta);
    TiledProlongation tp;
    if (f.model.empty()) {
      const SparseMatrix base =
          direct_interpolation(p.a, tiled.coarsening.splitting, tiled.coarsening.pattern);
      tp = tile_prolongation(base, tiled.coarsening.splitting, f.b, f.c);
    } else {
      LossOptions lo;
      lo.s1 = cyc.s1;
      lo.s2 = cyc.s2;
      tp = learned_tiled_prolongation(params, p, tiled, lo);
    }
    const BlockCouplings a = extract_couplings(p.a, f.b, f.c, f.c);
    const FourierLoss fl = fourier_loss(a, tp, opt);
    const double dl = dense_tiled_loss(a, tp, opt);
    const double rel = std::abs(fl.value - dl) / std::abs(dl);
    worst = std::max(worst, rel);
    report << seed << "," << fl.value << "," << dl << "," << rel << "\n";
    if (i == 0) write_mode_losses_csv(f.out + "/modes_first.csv", fl);
  }
  std::cout << "max relative error " << worst << " over " << f.count << " problems\n";
  return worst <= f.tolerance ? 0 : 1;
}

// gradcheck

struct GradArgs {
  std::string head = "fourier";
  std::size_t directions = 10;
  index_t n = 64;
  int b = 4;
  index_t c = 8;
  double h = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
};

int run_gradcheck(const GradArgs& g, const ModelFlags& model, const CycleFlags& cyc) {
  const ModelParameters params = ModelParameters::initialize(model.config(), g.seed);
  LossOptions opt;
  opt.s1 = cyc.s1;
  opt.s2 = cyc.s2;
  LossFunction fn;
  const LossHead head = loss_head_from_string(g.head);
  BlockCirculantProblem periodic;
  TiledCoarsening tiled;
  GraphLaplacian graph;
  Coarsening coarse;
  if (head == LossHead::Fourier) {
    periodic = generate_periodic_delaunay(g.b, g.c, WeightDistribution::lognormal(), g.seed);
    tiled = tile_splitting(periodic, cyc.theta);
    fn = [&](const ModelParameters& q, bool wg) { return loss_fourier(q, periodic, tiled, opt, wg); };
  } else {
    graph = generate_delaunay_laplacian(g.n, WeightDistribution::lognormal(), g.seed);
    coarse = classical_coarsening(graph.a, cyc.theta);
    fn = [&](const ModelParameters& q, bool wg) { return loss_dense(q, graph.a, coarse, opt, wg); };
  }
  double worst = 0.0;
  for (std::size_t d = 0; d < g.directions; ++d) {
    const GradientCheck r = gradient_check(params, fn, random_direction(params, derive_seed(g.seed, 1, d)), g.h);
    worst = std::max(worst, r.rel_err);
    std::cout << "direction " << d << ": analytic " << r.analytic << ", numeric " << r.numeric
              << ", relative error " << r.rel_err << "\n";
  }
  std::cout << "max relative error " << worst << "\n";
  return worst <= g.tolerance ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned AMG prolongation: problem generation, training and evaluation", "gnnamg"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  ModelFlags model;
  CycleFlags cyc;

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "write problem corpora as Matrix Market files");
  add_config(g);
  g->add_option("--kind", gen.kind, "delaunay, periodic, fem or knn")
      ->check(CLI::IsMember({"delaunay", "periodic", "fem", "knn"}))
      ->capture_default_str();
  g->add_option("--n", gen.n, "number of points")->capture_default_str();
  g->add_option("--b", gen.b, "blocks per side (periodic)")->capture_default_str();
  g->add_option("--c", gen.c, "nodes per block (periodic)")->capture_default_str();
  g->add_option("--count", gen.count, "number of problems")->capture_default_str();
  g->add_option("--distribution", gen.distribution, "weight distribution")->capture_default_str();
  g->add_option("--cloud", gen.cloud, "kNN point cloud")->capture_default_str();
  g->add_option("--k", gen.k, "kNN neighbors")->capture_default_str();
  g->add_flag("--jitter", gen.jitter, "jitter the kNN diagonal");
  g->add_option("--seed", gen.seed, "random seed")->capture_default_str();
  g->add_option("--out", gen.out, "output directory")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "two-stage training");
  add_config(t);
  t->add_option("--stage1", tr.cfg.stage1_count, "stage-1 problems")->capture_default_str();
  t->add_option("--stage2-fresh", tr.cfg.stage2_fresh_count, "stage-2 fresh problems")
      ->capture_default_str();
  t->add_option("--stage2-coarsened", tr.cfg.stage2_coarsened_source_count,
                "stage-2 coarsened source problems")
      ->capture_default_str();
  t->add_option("--stages", tr.stages, "1 or 2")->check(CLI::Range(1, 2))->capture_default_str();
  t->add_option("--batch-size", tr.cfg.batch_size, "problems per batch")->capture_default_str();
  t->add_option("--lr", tr.cfg.lr, "Adam learning rate")->capture_default_str();
  t->add_option("--b", tr.cfg.b, "blocks per side")->capture_default_str();
  t->add_option("--c", tr.cfg.c, "nodes per block")->capture_default_str();
  t->add_option("--c-stage2-source", tr.cfg.c_stage2_source, "block size of coarsened sources")
      ->capture_default_str();
  t->add_option("--distribution", tr.distribution, "weight distribution")->capture_default_str();
  t->add_option("--loss-head", tr.loss_head, "fourier or dense")
      ->check(CLI::IsMember({"fourier", "dense"}))
      ->capture_default_str();
  t->add_option("--seed", tr.cfg.seed, "random seed")->capture_default_str();
  t->add_flag("--average-replicas", tr.cfg.average_replicas,
              "Fourier head: average raw outputs over all blocks before tiling");
  t->add_option("--out", tr.out, "checkpoint directory")->capture_default_str();
  model.add(t);
  cyc.add(t);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "compare learned and classical W/V-cycles");
  add_config(e);
  e->add_option("--model", ev.model, "checkpoint directory");
  e->add_flag("--frozen-baseline", ev.frozen, "use classical weights through the learned path");
  e->add_option("--sizes", ev.sizes, "problem sizes")->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
      ->capture_default_str();
  e->add_option("--runs", ev.runs, "problems per size")->capture_default_str();
  e->add_option("--distribution", ev.distribution, "weight distribution")->capture_default_str();
  e->add_option("--factor-cycles", ev.cycles, "cycles for the asymptotic factor")
      ->capture_default_str();
  e->add_option("--seed", ev.seed, "random seed")->capture_default_str();
  e->add_option("--out", ev.out, "output directory")->capture_default_str();
  e->add_flag("!--no-svg", ev.svg, "skip the SVG chart");
  model.add(e);
  cyc.add(e);

  SolveArgs so;
  auto* s = app.add_subcommand("solve", "solve one system to tolerance");
  add_config(s);
  s->add_option("--matrix", so.matrix, "Matrix Market file")->required()->check(CLI::ExistingFile);
  s->add_option("--rhs", so.rhs, "n x 1 Matrix Market right-hand side")->check(CLI::ExistingFile);
  s->add_option("--kind", so.kind, "spd or spsd")
      ->check(CLI::IsMember({"spd", "spsd"}))
      ->capture_default_str();
  s->add_option("--model", so.model, "checkpoint directory (classical if omitted)");
  s->add_option("--tol", so.tol, "residual 2-norm tolerance")->capture_default_str();
  s->add_option("--max-iterations", so.max_iterations, "iteration cap")->capture_default_str();
  s->add_option("--seed", so.seed, "seed of the random right-hand side")->capture_default_str();
  s->add_option("--out", so.out, "output directory")->capture_default_str();
  model.add(s);
  cyc.add(s);

  FourierArgs fo;
  auto* f = app.add_subcommand("fourier-check", "Fourier against dense loss on tiled problems");
  add_config(f);
  f->add_option("--count", fo.count, "number of problems")->capture_default_str();
  f->add_option("--b", fo.b, "blocks per side")->capture_default_str();
  f->add_option("--c", fo.c, "nodes per block")->capture_default_str();
  f->add_option("--distribution", fo.distribution, "weight distribution")->capture_default_str();
  f->add_option("--model", fo.model, "checkpoint directory (classical P if omitted)");
  f->add_option("--tolerance", fo.tolerance, "maximum relative error")->capture_default_str();
  f->add_option("--seed", fo.seed, "random seed")->capture_default_str();
  f->add_option("--out", fo.out, "output directory")->capture_default_str();
  model.add(f);
  cyc.add(f);

  GradArgs gr;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the loss gradients");
  add_config(gc);
  gc->add_option("--loss-head", gr.head, "fourier or dense")
      ->check(CLI::IsMember({"fourier", "dense"}))
      ->capture_default_str();
  gc->add_option("--directions", gr.directions, "random directions")->capture_default_str();
  gc->add_option("--n", gr.n, "points of the dense-head problem")->capture_default_str();
  gc->add_option("--b", gr.b, "blocks per side")->capture_default_str();
  gc->add_option("--c", gr.c, "nodes per block")->capture_default_str();
  gc->add_option("--step", gr.h, "finite-difference step")->capture_default_str();
  gc->add_option("--tolerance", gr.tolerance, "maximum relative error")->capture_default_str();
  gc->add_option("--seed", gr.seed, "random seed")->capture_default_str();
  model.add(gc);
  cyc.add(gc);

  if (argc < 2) {
    std::cout << app.help();
    return 2;
  }
  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    std::cerr << err.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*g) return run_generate(gen);
    if (*t) return run_train(tr, model, cyc);
    if (*e) return run_eval(ev, model, cyc);
    if (*s) return run_solve(so, model, cyc);
    if (*f) return run_fourier(fo, model, cyc);
    if (*gc) return run_gradcheck(gr, model, cyc);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 2;
}
