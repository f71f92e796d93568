#ifndef SHF_BASELINES_HPP
#define SHF_BASELINES_HPP

#include "shf/metrics.hpp"
#include "shf/train.hpp"

namespace shf {

// Uniform subsample with weights frozen at N/M (never trained).
Coreset uniform_coreset(Index n_data, Index m, std::uint64_t seed);

// Unconstrained reparametrization of a monotone tempering schedule
// 0 <= beta_1 <= ... <= beta_R = 1 via consecutive-ratio logits.
struct TemperingSchedule {
  Vec alphas;  // length R-1, unconstrained
  int n_blocks() const { return static_cast<int>(alphas.size()) + 1; }
  // beta_r = sigmoid(alpha_r) * beta_{r+1}, beta_R = 1.
  Vec betas() const;
  // momentum factor applied after block r: sqrt(beta_r / beta_{r+1}) for
  // r < R, and 1 after the final block.
  Vec factors() const;
};

struct TemperedParams {
  Vec log_weights;      // frozen coreset weights (not trained)
  Vec log_step_sizes;   // trained
  TemperingSchedule schedule;  // trained
  int leapfrogs_per_block = 1;
  int n_blocks() const { return schedule.n_blocks(); }
};

// R blocks of L leapfrogs; after block r the momentum is multiplied by the
// schedule factor. Log-Jacobian accumulates d*log(factor) per block.
FlowOutput tempered_flow_forward(const TargetModel& model,
                                 const Coreset& coreset, const Vec& weights,
                                 const Vec& step_sizes, const Vec& factors,
                                 int leapfrogs_per_block,
                                 const PhaseState& initial,
                                 Trajectory* traj = nullptr);

FlowOutput tempered_flow_forward(const TargetModel& model,
                                 const Coreset& coreset,
                                 const TemperedParams& params,
                                 const PhaseState& initial,
                                 Trajectory* traj = nullptr);

// Single-draw ELBO estimate and its gradient w.r.t. (log_step_sizes, alphas).
struct TemperedGradient {
  Vec d_log_step_sizes;
  Vec d_alphas;
};
std::pair<double, TemperedGradient> tempered_elbo_gradient(
    const TargetModel& model, const TemperedParams& params,
    const Coreset& coreset, const ReferenceDistribution& q, Index s,
    std::uint64_t rng_seed, const ElboOptions& opts = {});

std::pair<double, double> tempered_exact_elbo(const TargetModel& model,
                                              const TemperedParams& params,
                                              const Coreset& coreset,
                                              const ReferenceDistribution& q,
                                              Index n_mc, std::uint64_t rng_seed);

// Trains step sizes and tempering schedule with the shared ADAM machinery;
// weights stay frozen at the coreset's values.
std::pair<TemperedParams, TrainTrace> fit_tempered(
    const TargetModel& model, const Coreset& coreset,
    const ReferenceDistribution& q, const TrainConfig& config);

// Mode finding by backtracking gradient ascent plus a finite-difference
// Hessian at the mode.
GaussianSummary laplace_approx(const TargetModel& model, const Vec& init,
                               int max_iters = 1000, double tol = 1e-8);

}  // namespace shf

#endif
