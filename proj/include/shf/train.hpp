#ifndef SHF_TRAIN_HPP
#define SHF_TRAIN_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "shf/grad.hpp"

namespace shf {

enum class Optimizer { adam, sgd };

struct TrainConfig {
  int n_iters = 1000;
  Optimizer optimizer = Optimizer::adam;
  double learning_rate = 1e-3;
  std::pair<double, double> adam_betas = {0.9, 0.999};
  double adam_epsilon = 1e-8;
  Index minibatch = 100;                 // S
  int eval_every = 250;
  std::uint64_t rng_seed = 0;
  Vec initial_step_sizes;                // length 1 (broadcast) or d
  int n_blocks = 1;                      // R
  int leapfrogs_per_block = 1;           // L
  RefreshKind refresh_kind = RefreshKind::marginal;
  Index warm_start_batch = 100;
  Index n_mc_eval = 100;
  int elbo_draws_per_step = 1;           // reference draws averaged per gradient step
  bool train_weights = true;
  void validate() const;
};

struct TrainEvalRecord {
  int iteration = 0;
  double elbo_mean = 0.0;
  double elbo_stderr = 0.0;
  double wall_time_s = 0.0;
  int snapshot_id = 0;
};

struct TrainTrace {
  std::vector<TrainEvalRecord> evals;
  int skipped_steps = 0;        // divergent gradient steps (parameters kept)
  int best_snapshot_id = 0;
  void write_csv(const std::string& path) const;
};

// Bias-corrected ADAM ascent state over a flat parameter vector.
struct AdamState {
  Vec m;
  Vec v;
  long t = 0;
  explicit AdamState(Index n) : m(Vec::Zero(n)), v(Vec::Zero(n)) {}
};

// Returns the ascent step delta (to be added to the parameters).
Vec adam_step(AdamState& state, const Vec& grad, double lr,
              std::pair<double, double> betas, double eps);

// Batch moment fit for one marginal refreshment: shift = mean, precision =
// reciprocal per-coordinate variance. Variances are floored at 1e-8, so a
// degenerate constant batch yields precision 1e8 (with a warning).
MarginalRefresh fit_marginal_refresh(const Mat& momenta);

// Sequential moment-matching initialization of the refreshment parameters
// (marginal shifts/precisions, or conditional moment estimates).
FlowParams warm_start(const TargetModel& model, FlowParams params,
                      const Coreset& coreset, const ReferenceDistribution& q,
                      Index batch, std::uint64_t rng_seed);

// Full training loop: initialize, warm start, stochastic ascent. Returns the
// best-ELBO parameter snapshot (window-10 smoothed eval ELBO) and the trace.
std::pair<FlowParams, TrainTrace> fit(const TargetModel& model,
                                      const Coreset& coreset,
                                      const ReferenceDistribution& q,
                                      const TrainConfig& config);

}  // namespace shf

#endif
