#ifndef SHF_DETAIL_LEAPFROG_ADJOINT_HPP
#define SHF_DETAIL_LEAPFROG_ADJOINT_HPP

#include "shf/flow.hpp"

namespace shf::detail {

// Adjoint of one leapfrog step, shared by the sparse-flow and tempered-flow
// reverse passes. On entry theta_bar/rho_bar hold the adjoints of the step's
// outputs; on exit they hold the adjoints of its inputs. eps_bar and
// weight_bar accumulate the step-size and coreset-weight contributions
// (weight_bar in the constrained w parametrization).
inline void leapfrog_adjoint_step(const TargetModel& model,
                                  const Coreset& coreset, const Vec& weights,
                                  const Vec& eps, const Trajectory& traj, int k,
                                  Vec& theta_bar, Vec& rho_bar, Vec& eps_bar,
                                  Vec& weight_bar) {
  const Vec& theta0 = traj.theta[k];
  const Vec& theta1 = traj.theta[k + 1];
  const Vec& g0 = traj.grad_at[k];
  const Vec& g1 = traj.grad_at[k + 1];

  // rho' = rho_hat + (eps/2) g(theta')
  const Vec ghat1 = 0.5 * eps.cwiseProduct(rho_bar);
  eps_bar += 0.5 * g1.cwiseProduct(rho_bar);
  theta_bar += coreset_hvp_log_potential(model, coreset, weights, theta1, ghat1);
  for (Index m = 0; m < coreset.size(); ++m)
    weight_bar(m) += model.grad_potential(coreset.indices[m], theta1).dot(ghat1);

  // theta' = theta + eps .* rho_hat
  Vec rho_hat_bar = rho_bar + eps.cwiseProduct(theta_bar);
  eps_bar += traj.rho_hat[k].cwiseProduct(theta_bar);

  // rho_hat = rho + (eps/2) g(theta)
  const Vec ghat0 = 0.5 * eps.cwiseProduct(rho_hat_bar);
  eps_bar += 0.5 * g0.cwiseProduct(rho_hat_bar);
  theta_bar += coreset_hvp_log_potential(model, coreset, weights, theta0, ghat0);
  for (Index m = 0; m < coreset.size(); ++m)
    weight_bar(m) += model.grad_potential(coreset.indices[m], theta0).dot(ghat0);

  rho_bar = std::move(rho_hat_bar);
}

}  // namespace shf::detail

#endif
