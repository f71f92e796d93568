#ifndef SHF_FLOW_HPP
#define SHF_FLOW_HPP

#include <optional>
#include <vector>

#include "shf/common.hpp"
#include "shf/model.hpp"

namespace shf {

struct PhaseState {
  Vec position;  // theta
  Vec momentum;  // rho
};

enum class RefreshKind { marginal, conditional };

// Shift-and-scale momentum standardization: rho <- Lambda (rho - mu) with
// Lambda = diag(exp(log_diag_precision)). Trainable.
struct MarginalRefresh {
  Vec shift;
  Vec log_diag_precision;
};

// Joint-Gaussian conditional standardization (estimated from samples and
// held fixed). rho <- Sigma^{-1/2} (rho - mu_rho - S_tr^T S_tt^{-1} (theta - mu_theta)).
struct ConditionalRefresh {
  Vec mu_theta;
  Vec mu_rho;
  Mat sigma_tt;   // Cov(theta)
  Mat sigma_tr;   // Cov(theta, rho)
  Mat sigma_rr;   // Cov(rho)
};

// Precomputed apply/invert form of a conditional refreshment.
struct ConditionalRefreshOps {
  Mat gain;        // Sigma^{-1/2} (symmetric)
  Mat gain_inv;    // Sigma^{1/2}
  Mat cross;       // S_tr^T S_tt^{-1}
  Vec mu_theta;
  Vec mu_rho;
  double log_jacobian = 0.0;  // -1/2 log det Sigma
};

ConditionalRefreshOps prepare_conditional(const ConditionalRefresh& r);

struct FlowParams {
  Vec log_weights;                              // length M
  Vec log_step_sizes;                           // length d
  std::vector<MarginalRefresh> refreshments;    // length R
  int leapfrogs_per_block = 1;                  // L
  RefreshKind refresh_kind = RefreshKind::marginal;
  std::vector<ConditionalRefresh> conditional;  // length R when conditional

  int n_blocks() const { return static_cast<int>(refreshments.size()); }
  void validate(Index m, Index d) const;
};

struct FlowOutput {
  PhaseState final_state;
  double log_jacobian = 0.0;
};

// States recorded along a forward pass for the reverse-mode sweep.
struct Trajectory {
  std::vector<Vec> theta;     // R*L+1 positions
  std::vector<Vec> rho_hat;   // R*L intermediate momenta
  std::vector<Vec> grad_at;   // R*L+1 coreset gradients, grad_at[k] at theta[k]
  std::vector<Vec> rho_after_refresh;  // R momenta just after each refreshment
};

// One leapfrog step of the coreset Hamiltonian: half kick, coordinate-wise
// drift, half kick. grad_in, when given, must equal the coreset gradient at
// state.position (kick caching); grad_out receives the gradient at the new
// position.
PhaseState leapfrog_step(const TargetModel& model, const Coreset& coreset,
                         const Vec& weights, const Vec& step_sizes,
                         const PhaseState& state, const Vec* grad_in = nullptr,
                         Vec* grad_out = nullptr);

// Marginal quasi-refreshment; returns new state and log-Jacobian increment.
std::pair<PhaseState, double> quasi_refresh(const MarginalRefresh& r,
                                            const PhaseState& state);

std::pair<PhaseState, double> conditional_refresh(const ConditionalRefresh& r,
                                                  const PhaseState& state);
std::pair<PhaseState, double> conditional_refresh(const ConditionalRefreshOps& ops,
                                                  const PhaseState& state);

// R blocks of (L leapfrogs, one quasi-refreshment). Throws divergence_error
// with block/step coordinates when the state leaves [-1e10, 1e10] or a
// gradient is non-finite. When traj is non-null the full trajectory is
// recorded for a subsequent reverse pass.
FlowOutput forward(const TargetModel& model, const FlowParams& params,
                   const Coreset& coreset, const PhaseState& initial,
                   Trajectory* traj = nullptr);

// Exact algebraic inverse; returns the same total log-Jacobian as the
// forward pass through the matched trajectory.
FlowOutput inverse(const TargetModel& model, const FlowParams& params,
                   const Coreset& coreset, const PhaseState& final_state);

}  // namespace shf

#endif
