#include "shf/flow.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>

namespace shf {

void FlowParams::validate(Index m, Index d) const {
  if (log_weights.size() != m)
    throw invalid_parameter("log_weights length does not match coreset size");
  if (log_step_sizes.size() != d)
    throw invalid_parameter("log_step_sizes length does not match dimension");
  if (n_blocks() < 1) throw invalid_parameter("need at least one block (R >= 1)");
  if (leapfrogs_per_block < 1)
    throw invalid_parameter("need at least one leapfrog per block (L >= 1)");
  if (!log_weights.allFinite() || !log_step_sizes.allFinite())
    throw invalid_parameter("non-finite unconstrained parameters");
  for (const auto& r : refreshments) {
    if (r.shift.size() != d || r.log_diag_precision.size() != d)
      throw invalid_parameter("refreshment parameter length does not match dimension");
    if (!r.shift.allFinite() || !r.log_diag_precision.allFinite())
      throw invalid_parameter("non-finite refreshment parameters");
  }
  if (refresh_kind == RefreshKind::conditional &&
      conditional.size() != refreshments.size())
    throw invalid_parameter("conditional refreshment count does not match blocks");
}

namespace {

void check_state(const PhaseState& s, int block, int step) {
  const bool bad = !s.position.allFinite() || !s.momentum.allFinite() ||
                   s.position.cwiseAbs().maxCoeff() > kDivergenceThreshold ||
                   s.momentum.cwiseAbs().maxCoeff() > kDivergenceThreshold;
  if (bad)
    throw divergence_error("flow state diverged at block " +
                               std::to_string(block) + ", step " +
                               std::to_string(step),
                           block, step);
}

Vec coreset_grad_checked(const TargetModel& model, const Coreset& coreset,
                         const Vec& weights, const Vec& theta, int block,
                         int step) {
  Vec g = coreset_grad_log_potential(model, coreset, weights, theta);
  if (!g.allFinite())
    throw divergence_error("non-finite coreset gradient at block " +
                               std::to_string(block) + ", step " +
                               std::to_string(step),
                           block, step);
  return g;
}

// Symmetric square root and inverse square root via eigendecomposition.
void sym_sqrt_pair(const Mat& a, Mat& sqrt_out, Mat& inv_sqrt_out,
                   double& log_det_out) {
  Eigen::SelfAdjointEigenSolver<Mat> es(a);
  if (es.info() != Eigen::Success)
    throw decomposition_error("eigendecomposition failed");
  const Vec& ev = es.eigenvalues();
  if ((ev.array() <= 0).any())
    throw decomposition_error("matrix is not positive definite");
  sqrt_out = es.eigenvectors() * ev.cwiseSqrt().asDiagonal() *
             es.eigenvectors().transpose();
  inv_sqrt_out = es.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal() *
                 es.eigenvectors().transpose();
  log_det_out = ev.array().log().sum();
}

}  // namespace

ConditionalRefreshOps prepare_conditional(const ConditionalRefresh& r) {
  Eigen::LLT<Mat> llt_tt(r.sigma_tt);
  if (llt_tt.info() != Eigen::Success)
    throw decomposition_error("Sigma_theta_theta is not positive definite");
  const Mat tt_inv_tr = llt_tt.solve(r.sigma_tr);       // S_tt^{-1} S_tr
  const Mat schur = r.sigma_rr - r.sigma_tr.transpose() * tt_inv_tr;
  ConditionalRefreshOps ops;
  double log_det = 0.0;
  sym_sqrt_pair(schur, ops.gain_inv, ops.gain, log_det);
  ops.cross = tt_inv_tr.transpose();                    // S_tr^T S_tt^{-1}
  ops.mu_theta = r.mu_theta;
  ops.mu_rho = r.mu_rho;
  ops.log_jacobian = -0.5 * log_det;
  return ops;
}

PhaseState leapfrog_step(const TargetModel& model, const Coreset& coreset,
                         const Vec& weights, const Vec& step_sizes,
                         const PhaseState& state, const Vec* grad_in,
                         Vec* grad_out) {
  const Vec half = 0.5 * step_sizes;
  Vec g0 = grad_in ? *grad_in
                   : coreset_grad_checked(model, coreset, weights,
                                          state.position, -1, -1);
  PhaseState next;
  Vec rho_hat = state.momentum + half.cwiseProduct(g0);
  next.position = state.position + step_sizes.cwiseProduct(rho_hat);
  Vec g1 = coreset_grad_checked(model, coreset, weights, next.position, -1, -1);
  next.momentum = rho_hat + half.cwiseProduct(g1);
  if (grad_out) *grad_out = std::move(g1);
  return next;
}

std::pair<PhaseState, double> quasi_refresh(const MarginalRefresh& r,
                                            const PhaseState& state) {
  if (!r.shift.allFinite() || !r.log_diag_precision.allFinite())
    throw invalid_parameter("non-finite refreshment parameters");
  PhaseState next;
  next.position = state.position;
  const Vec lambda = r.log_diag_precision.array().exp();
  next.momentum = lambda.cwiseProduct(state.momentum - r.shift);
  return {std::move(next), r.log_diag_precision.sum()};
}

std::pair<PhaseState, double> conditional_refresh(const ConditionalRefreshOps& ops,
                                                  const PhaseState& state) {
  PhaseState next;
  next.position = state.position;
  next.momentum = ops.gain * (state.momentum - ops.mu_rho -
                              ops.cross * (state.position - ops.mu_theta));
  return {std::move(next), ops.log_jacobian};
}

std::pair<PhaseState, double> conditional_refresh(const ConditionalRefresh& r,
                                                  const PhaseState& state) {
  return conditional_refresh(prepare_conditional(r), state);
}

FlowOutput forward(const TargetModel& model, const FlowParams& params,
                   const Coreset& coreset, const PhaseState& initial,
                   Trajectory* traj) {
  const int R = params.n_blocks();
  const int L = params.leapfrogs_per_block;
  const Vec weights = params.log_weights.array().exp();
  const Vec eps = params.log_step_sizes.array().exp();
  const Vec half = 0.5 * eps;

  std::vector<ConditionalRefreshOps> cond_ops;
  if (params.refresh_kind == RefreshKind::conditional)
    for (const auto& c : params.conditional) cond_ops.push_back(prepare_conditional(c));

  if (traj) {
    traj->theta.clear();
    traj->rho_hat.clear();
    traj->grad_at.clear();
    traj->rho_after_refresh.clear();
  }

  PhaseState state = initial;
  check_state(state, 0, 0);
  double log_jac = 0.0;

  // One gradient per position visited: the closing half-kick of step k and
  // the opening half-kick of step k+1 share grad_at theta_{k+1}, including
  // across refreshments (which leave theta untouched).
  Vec grad;
  bool have_grad = false;
  if (traj) traj->theta.push_back(state.position);

  for (int r = 0; r < R; ++r) {
    for (int l = 0; l < L; ++l) {
      if (!have_grad) {
        grad = coreset_grad_checked(model, coreset, weights, state.position, r, l);
        have_grad = true;
        if (traj) traj->grad_at.push_back(grad);
      }
      Vec rho_hat = state.momentum + half.cwiseProduct(grad);
      state.position += eps.cwiseProduct(rho_hat);
      grad = coreset_grad_checked(model, coreset, weights, state.position, r, l);
      state.momentum = rho_hat + half.cwiseProduct(grad);
      check_state(state, r, l);
      if (traj) {
        traj->rho_hat.push_back(std::move(rho_hat));
        traj->theta.push_back(state.position);
        traj->grad_at.push_back(grad);
      }
    }
    double inc = 0.0;
    if (params.refresh_kind == RefreshKind::conditional) {
      std::tie(state, inc) = conditional_refresh(cond_ops[r], state);
    } else {
      std::tie(state, inc) = quasi_refresh(params.refreshments[r], state);
    }
    log_jac += inc;
    check_state(state, r, L);
    if (traj) traj->rho_after_refresh.push_back(state.momentum);
  }

  return {std::move(state), log_jac};
}

FlowOutput inverse(const TargetModel& model, const FlowParams& params,
                   const Coreset& coreset, const PhaseState& final_state) {
  const int R = params.n_blocks();
  const int L = params.leapfrogs_per_block;
  const Vec weights = params.log_weights.array().exp();
  const Vec eps = params.log_step_sizes.array().exp();
  const Vec half = 0.5 * eps;

  std::vector<ConditionalRefreshOps> cond_ops;
  if (params.refresh_kind == RefreshKind::conditional)
    for (const auto& c : params.conditional) cond_ops.push_back(prepare_conditional(c));

  PhaseState state = final_state;
  check_state(state, R - 1, L);

  // accumulate J in forward block order so it matches forward() bitwise
  double log_jac = 0.0;
  for (int r = 0; r < R; ++r)
    log_jac += params.refresh_kind == RefreshKind::conditional
                   ? cond_ops[r].log_jacobian
                   : params.refreshments[r].log_diag_precision.sum();

  Vec grad;
  bool have_grad = false;

  for (int r = R - 1; r >= 0; --r) {
    // invert the refreshment affinely
    if (params.refresh_kind == RefreshKind::conditional) {
      const auto& ops = cond_ops[r];
      state.momentum = ops.gain_inv * state.momentum + ops.mu_rho +
                       ops.cross * (state.position - ops.mu_theta);
    } else {
      const auto& ref = params.refreshments[r];
      const Vec inv_lambda = (-ref.log_diag_precision).array().exp();
      state.momentum = inv_lambda.cwiseProduct(state.momentum) + ref.shift;
    }
    // run the three leapfrog sub-steps backwards with subtraction; the cached
    // gradient stays valid across refreshments since theta is untouched
    for (int l = L - 1; l >= 0; --l) {
      if (!have_grad) {
        grad = coreset_grad_checked(model, coreset, weights, state.position, r, l);
        have_grad = true;
      }
      Vec rho_hat = state.momentum - half.cwiseProduct(grad);
      state.position -= eps.cwiseProduct(rho_hat);
      grad = coreset_grad_checked(model, coreset, weights, state.position, r, l);
      state.momentum = rho_hat - half.cwiseProduct(grad);
      check_state(state, r, l);
    }
  }

  return {std::move(state), log_jac};
}

}  // namespace shf
