#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gnnamg/cycle.hpp"
#include "gnnamg/gnn.hpp"
#include "gnnamg/problems.hpp"

namespace gnnamg {

/// Independent stream of seeds: mixes (base, stream, index) with splitmix64.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index);

struct OptimizerState {
  long step = 0;
  std::vector<DenseMatrix> first_moment;
  std::vector<DenseMatrix> second_moment;
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static OptimizerState for_parameters(const ModelParameters& params);
};

/// Bias-corrected Adam.
void adam_step(OptimizerState& state, ModelParameters& params,
               const std::vector<DenseMatrix>& grads);

enum class LossHead { Fourier, Dense };
std::string to_string(LossHead h);
LossHead loss_head_from_string(const std::string& s);

struct TrainConfig {
  std::size_t stage1_count = 4000;
  std::size_t stage2_fresh_count = 2000;
  std::size_t stage2_coarsened_source_count = 2000;
  std::size_t batch_size = 32;
  double lr = 3e-3;
  int b = 4;
  index_t c = 16;
  index_t c_stage2_source = 32;
  WeightDistribution distribution = WeightDistribution::lognormal();
  std::uint64_t seed = 0;
  LossHead loss_head = LossHead::Fourier;
  ModelConfig model;  // ablation knobs
  int s1 = 1;
  int s2 = 1;
  double theta = 0.25;
  bool average_replicas = false;  // Fourier head, see LossOptions

  void validate() const;
};

struct TrainingProblem {
  BlockCirculantProblem problem;
  std::string origin;  // "fresh" or "coarsened"
  std::uint64_t seed = 0;
};

std::vector<TrainingProblem> generate_training_set(const TrainConfig& config, std::size_t count,
                                                   index_t c, std::uint64_t stream);

struct BatchRecord {
  int stage = 0;
  std::size_t batch = 0;
  double mean_loss = 0.0;  // NaN when every problem of the batch failed
  std::size_t problems = 0;
  std::size_t failures = 0;
};

struct ProblemFailure {
  int stage = 0;
  std::size_t index = 0;
  std::string origin;
  std::string message;
};

struct TrainLog {
  std::vector<BatchRecord> batches;
  std::vector<ProblemFailure> failures;
};

using BatchCallback = std::function<void(const BatchRecord&)>;

/// Loss (and optionally gradient) of one training problem under the
/// configured head.
LossResult problem_loss(const ModelParameters& params, const BlockCirculantProblem& p,
                        const TrainConfig& config, bool with_grad = true);

/// One pass over `problems` in order, in batches of config.batch_size. The
/// batch loss and gradient are means over the problems that did not fail.
void train_stage(ModelParameters& params, OptimizerState& state,
                 const std::vector<TrainingProblem>& problems, const TrainConfig& config,
                 int stage, TrainLog& log, const BatchCallback& on_batch = {});

/// Coarse operator of a block-circulant problem under a tiled prolongation,
/// repackaged as a block-circulant problem with c = number of coarse
/// positions. Couplings are symmetrized on the reference block and tiled,
/// so the result is exactly block-circulant.
BlockCirculantProblem coarsen_block_circulant(const BlockCirculantProblem& p,
                                              const TiledProlongation& tp);

/// Learned coarse problems from fresh c_stage2_source sources. Failures
/// are logged and skipped.
std::vector<TrainingProblem> build_coarsened_set(const ModelParameters& params,
                                                 const TrainConfig& config, TrainLog& log);

struct TrainResult {
  ModelParameters params;
  OptimizerState optimizer;
  TrainLog log;
  std::size_t coarsened_built = 0;
};

/// Stage 1 on fresh problems, then stage 2 on fresh plus coarsened problems
/// shuffled together with the run seed. `stages` may be 1 or 2.
TrainResult train(const TrainConfig& config, int stages = 2, const BatchCallback& on_batch = {});

/// stage,batch,mean_loss,problems,failures
void write_training_log(const std::string& path, const TrainLog& log);

// Evaluation

struct SuiteSpec {
  std::vector<index_t> sizes{1024, 4096, 16384, 65536};
  std::size_t runs = 100;
  WeightDistribution distribution = WeightDistribution::lognormal();
  CycleConfig cycle;
  std::uint64_t seed = 0;
  int factor_cycles = 80;
};

struct EvalRecord {
  index_t size = 0;
  std::uint64_t seed = 0;
  CycleType cycle = CycleType::W;
  double baseline_factor = 0.0;
  double learned_factor = 0.0;
  int baseline_levels = 0;
  int learned_levels = 0;
  double max_row_sum_deviation = 0.0;  // learned vs baseline, over all levels
  double max_coarse_asymmetry = 0.0;   // relative, over all coarse operators
  int rank_deficient_levels = 0;       // learned P without full column rank (n <= 2048)
};

struct EvalFailure {
  index_t size = 0;
  std::uint64_t seed = 0;
  std::string message;
};

struct EvalReport {
  std::vector<EvalRecord> records;
  std::vector<EvalFailure> failures;

  /// Fraction of records with learned factor < baseline factor; NaN when
  /// there are no records. Restricted to one size when size > 0.
  double success_rate(index_t size = 0) const;
  double mean_baseline(index_t size = 0) const;
  double mean_learned(index_t size = 0) const;
  std::size_t count(index_t size = 0) const;
  std::vector<index_t> sizes() const;
};

using EvalCallback = std::function<void(const EvalRecord&)>;

/// Baseline and learned hierarchies built from the same matrix and the same
/// classical splitting on the finest level; the learned provider also
/// records its row sums against the baseline targets.
EvalReport evaluate_suite(const ProlongationProvider& learned, const SuiteSpec& spec,
                          const EvalCallback& on_record = {});
EvalReport evaluate_suite(const ModelParameters& params, const SuiteSpec& spec,
                          const EvalCallback& on_record = {});

/// Learned weights replaced by the baseline ones, routed through the same
/// row scaling; used to check the evaluation plumbing.
ProlongationProvider frozen_baseline_provider();

/// size,seed,cycle,baseline_factor,learned_factor,learned_better
void write_eval_csv(const std::string& path, const EvalReport& report);
/// size,runs,failures,mean_baseline,mean_learned,success_rate
void write_eval_summary_csv(const std::string& path, const EvalReport& report);
/// Line chart of mean factor against size for both solvers.
void write_eval_svg(const std::string& path, const EvalReport& report);

}  // namespace gnnamg
