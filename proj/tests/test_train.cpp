#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "gnnamg/train.hpp"

using namespace gnnamg;

namespace {

TrainConfig smoke_config() {
  TrainConfig cfg;
  cfg.stage1_count = 64;
  cfg.stage2_fresh_count = 0;
  cfg.stage2_coarsened_source_count = 0;
  cfg.batch_size = 8;
  cfg.c = 8;
  cfg.c_stage2_source = 16;
  cfg.model.width = 16;
  cfg.model.mlp_depth = 2;
  cfg.seed = 3;
  return cfg;
}

std::string first_line(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::string s;
  std::getline(in, s);
  return s;
}

}  // namespace

TEST_CASE("seed derivation") {
  CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 2, 4));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(2, 2, 3));
}

TEST_CASE("Adam") {
  const ModelParameters init = ModelParameters::initialize(smoke_config().model, 1);
  ModelParameters p = init;
  OptimizerState s = OptimizerState::for_parameters(p);
  std::vector<DenseMatrix> zero, grads;
  for (const auto& t : p.tensors) {
    zero.push_back(DenseMatrix::Zero(t.rows(), t.cols()));
    grads.push_back(DenseMatrix::Constant(t.rows(), t.cols(), -0.3));
  }
  adam_step(s, p, zero);
  CHECK(p == init);

  ModelParameters q = init;
  OptimizerState s2 = OptimizerState::for_parameters(q);
  grads[0](0, 0) = 2.0;
  adam_step(s2, q, grads);
  CHECK(s2.step == 1);
  for (std::size_t k = 0; k < q.tensors.size(); ++k) {
    const DenseMatrix delta = q.tensors[k] - init.tensors[k];
    const DenseMatrix expected = -s2.lr * grads[k].array().sign();
    CHECK((delta - expected).cwiseAbs().maxCoeff() <= 1e-6);
  }

  ModelParameters r = init;
  OptimizerState s3 = OptimizerState::for_parameters(r);
  adam_step(s3, r, grads);
  CHECK(r == q);
  CHECK_THROWS_AS(adam_step(s3, r, std::vector<DenseMatrix>{}), DimensionError);
}

TEST_CASE("config validation and names") {
  TrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK(loss_head_from_string(to_string(LossHead::Dense)) == LossHead::Dense);
  CHECK_THROWS_AS(loss_head_from_string("sparse"), std::invalid_argument);
}

TEST_CASE("empty stage leaves parameters unchanged") {
  const TrainConfig cfg = smoke_config();
  ModelParameters p = ModelParameters::initialize(cfg.model, 1);
  const ModelParameters before = p;
  OptimizerState s = OptimizerState::for_parameters(p);
  TrainLog log;
  train_stage(p, s, {}, cfg, 1, log);
  CHECK(p == before);
  CHECK(log.batches.empty());
}

TEST_CASE("smoke training run") {
  const TrainConfig cfg = smoke_config();
  const TrainResult a = train(cfg, 1);
  REQUIRE(a.log.batches.size() == 8);
  double first = 0.0, second = 0.0;
  for (std::size_t k = 0; k < 4; ++k) first += a.log.batches[k].mean_loss;
  for (std::size_t k = 4; k < 8; ++k) second += a.log.batches[k].mean_loss;
  MESSAGE("first half " << first / 4 << ", second half " << second / 4);
  CHECK(second < first);
  std::size_t accounted = 0;
  for (const auto& b : a.log.batches) accounted += b.problems;
  CHECK(accounted == 64);

  const TrainResult b = train(cfg, 1);
  CHECK(a.params == b.params);

  const auto dir = std::filesystem::temp_directory_path();
  write_training_log((dir / "gnnamg_log.csv").string(), a.log);
  CHECK(first_line(dir / "gnnamg_log.csv") == "stage,batch,mean_loss,problems,failures");
}

TEST_CASE("two-stage run accounts for every problem") {
  TrainConfig cfg = smoke_config();
  cfg.stage1_count = 8;
  cfg.stage2_fresh_count = 8;
  cfg.stage2_coarsened_source_count = 8;
  const TrainResult r = train(cfg, 2);
  std::size_t stage2 = 0;
  for (const auto& b : r.log.batches)
    if (b.stage == 2) stage2 += b.problems;
  std::size_t source_failures = 0;
  for (const auto& f : r.log.failures)
    if (f.origin == "coarsened-source") ++source_failures;
  CHECK(r.coarsened_built + source_failures == 8);
  CHECK(stage2 == 8 + r.coarsened_built);
}

TEST_CASE("coarsened problems") {
  TrainConfig cfg = smoke_config();
  const ModelParameters params = ModelParameters::initialize(cfg.model, 4);
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const BlockCirculantProblem src = generate_periodic_delaunay(4, 32, WeightDistribution::lognormal(), seed);
    const TiledCoarsening tiled = tile_splitting(src);
    const TiledProlongation tp = learned_tiled_prolongation(params, src, tiled, LossOptions{});
    const BlockCirculantProblem c = coarsen_block_circulant(src, tp);
    CHECK(validate_block_circulant(c));
    const double ratio = static_cast<double>(c.c) / 32.0;
    CHECK(ratio >= 0.3);
    CHECK(ratio <= 0.7);
    CHECK(spmv(c.a, Vector::Ones(c.a.rows())).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(c.a.is_symmetric(1e-12));
  }
}

TEST_CASE("frozen baseline evaluation") {
  SuiteSpec spec;
  spec.sizes = {256};
  spec.runs = 3;
  spec.factor_cycles = 30;
  const EvalReport r = evaluate_suite(frozen_baseline_provider(), spec);
  REQUIRE(r.count() == 3);
  CHECK(r.failures.empty());
  CHECK(r.success_rate() == 0.0);
  for (const auto& rec : r.records) {
    CHECK(std::abs(rec.baseline_factor - rec.learned_factor) <= 1e-12);
    CHECK(rec.rank_deficient_levels == 0);
    CHECK(rec.max_row_sum_deviation <= 1e-12);
  }
  const auto dir = std::filesystem::temp_directory_path();
  write_eval_csv((dir / "gnnamg_eval.csv").string(), r);
  write_eval_summary_csv((dir / "gnnamg_summary.csv").string(), r);
  write_eval_svg((dir / "gnnamg_eval.svg").string(), r);
  CHECK(first_line(dir / "gnnamg_eval.csv") == "size,seed,cycle,baseline_factor,learned_factor,learned_better");
  CHECK(first_line(dir / "gnnamg_summary.csv") == "size,runs,failures,mean_baseline,mean_learned,success_rate");
  CHECK(first_line(dir / "gnnamg_eval.svg").find("<svg") != std::string::npos);
}

TEST_CASE("report arithmetic") {
  EvalReport r;
  CHECK(std::isnan(r.success_rate()));
  auto rec = [](index_t n, double base, double learned) {
    EvalRecord e;
    e.size = n;
    e.baseline_factor = base;
    e.learned_factor = learned;
    return e;
  };
  r.records = {rec(10, 0.5, 0.4), rec(10, 0.5, 0.5), rec(10, 0.5, 0.6), rec(20, 0.3, 0.1)};
  CHECK(r.success_rate(10) == doctest::Approx(1.0 / 3.0));
  CHECK(r.success_rate(20) == 1.0);
  CHECK(r.success_rate() == 0.5);
  CHECK(r.mean_learned(10) == doctest::Approx(0.5));
  CHECK(r.mean_baseline() == doctest::Approx(0.45));
  CHECK(r.count(20) == 1);
  CHECK(r.sizes() == std::vector<index_t>{10, 20});
}
