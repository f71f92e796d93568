#include "shf/grad.hpp"

#include <cmath>

#include "shf/detail/leapfrog_adjoint.hpp"

namespace shf {

ParameterGradient ParameterGradient::zeros_like(const FlowParams& params) {
  ParameterGradient g;
  g.d_log_weights = Vec::Zero(params.log_weights.size());
  g.d_log_step_sizes = Vec::Zero(params.log_step_sizes.size());
  g.d_refreshments.resize(params.refreshments.size());
  const Index d = params.log_step_sizes.size();
  for (auto& r : g.d_refreshments) {
    r.shift = Vec::Zero(d);
    r.log_diag_precision = Vec::Zero(d);
  }
  return g;
}

bool ParameterGradient::all_finite() const {
  if (!d_log_weights.allFinite() || !d_log_step_sizes.allFinite()) return false;
  for (const auto& r : d_refreshments)
    if (!r.shift.allFinite() || !r.log_diag_precision.allFinite()) return false;
  return true;
}

std::pair<double, ParameterGradient> elbo_gradient(
    const TargetModel& model, const FlowParams& params, const Coreset& coreset,
    const ReferenceDistribution& q, Index s, std::uint64_t rng_seed,
    const GradOptions& opts) {
  q.validate();
  if (s < 1) throw invalid_parameter("minibatch size must be at least 1");
  const int R = params.n_blocks();
  const int L = params.leapfrogs_per_block;
  const Index d = params.log_step_sizes.size();
  const Vec weights = params.log_weights.array().exp();
  const Vec eps = params.log_step_sizes.array().exp();

  // The seed fully determines the reference draw and minibatch; parameters
  // never touch the randomness (reparameterization).
  std::mt19937_64 rng(rng_seed);
  const PhaseState initial = q.sample(rng);
  std::vector<Index> indices;
  if (!opts.elbo.full_sum) {
    if (!opts.elbo.with_replacement && s > model.n_data)
      throw invalid_parameter("S > N requires sampling with replacement");
    std::uniform_int_distribution<Index> pick(0, model.n_data - 1);
    if (opts.elbo.with_replacement) {
      indices.resize(s);
      for (Index i = 0; i < s; ++i) indices[i] = pick(rng);
    } else {
      std::vector<Index> pool(model.n_data);
      for (Index i = 0; i < model.n_data; ++i) pool[i] = i;
      for (Index i = 0; i < s; ++i) {
        std::uniform_int_distribution<Index> pos(i, model.n_data - 1);
        std::swap(pool[i], pool[pos(rng)]);
        indices.push_back(pool[i]);
      }
    }
  }

  Trajectory traj;
  FlowOutput out = forward(model, params, coreset, initial, &traj);
  const Vec& theta_final = out.final_state.position;
  const Vec& rho_final = out.final_state.momentum;

  // objective value
  double data_term = 0.0;
  Vec data_grad = Vec::Zero(d);
  if (opts.elbo.full_sum) {
    for (Index n = 0; n < model.n_data; ++n) {
      data_term += model.potential(n, theta_final);
      data_grad += model.grad_potential(n, theta_final);
    }
  } else {
    const double scale = static_cast<double>(model.n_data) / s;
    for (Index n : indices) {
      data_term += model.potential(n, theta_final);
      data_grad += model.grad_potential(n, theta_final);
    }
    data_term *= scale;
    data_grad *= scale;
  }
  const double log_pbar = model.log_prior(theta_final) + data_term -
                          0.5 * d * kLogTwoPi - 0.5 * rho_final.squaredNorm();
  const double elbo = log_pbar - (q.log_density(initial) - out.log_jacobian);

  // reverse sweep
  ParameterGradient grad = ParameterGradient::zeros_like(params);
  Vec weight_bar = Vec::Zero(coreset.size());  // d elbo / d w (constrained)
  Vec eps_bar = Vec::Zero(d);                  // d elbo / d eps (constrained)
  Vec theta_bar = model.grad_log_prior(theta_final) + data_grad;
  Vec rho_bar = -rho_final;

  std::vector<ConditionalRefreshOps> cond_ops;
  if (params.refresh_kind == RefreshKind::conditional)
    for (const auto& c : params.conditional) cond_ops.push_back(prepare_conditional(c));

  for (int r = R - 1; r >= 0; --r) {
    if (params.refresh_kind == RefreshKind::conditional) {
      // fixed map: adjoints flow through, no parameter gradients
      const auto& ops = cond_ops[r];
      theta_bar -= ops.cross.transpose() * (ops.gain * rho_bar);
      rho_bar = ops.gain * rho_bar;
    } else {
      const auto& ref = params.refreshments[r];
      const Vec lambda = ref.log_diag_precision.array().exp();
      const Vec& rho_out = traj.rho_after_refresh[r];
      // J term contributes +1 per coordinate; path term rho_out_i * rho_bar_i
      grad.d_refreshments[r].log_diag_precision =
          rho_bar.cwiseProduct(rho_out) + Vec::Ones(d);
      grad.d_refreshments[r].shift = -lambda.cwiseProduct(rho_bar);
      rho_bar = lambda.cwiseProduct(rho_bar);
    }
    for (int l = L - 1; l >= 0; --l) {
      const int k = r * L + l;
      detail::leapfrog_adjoint_step(model, coreset, weights, eps, traj, k,
                                    theta_bar, rho_bar, eps_bar, weight_bar);
    }
  }

  // chain to the unconstrained log parametrization
  grad.d_log_weights = weights.cwiseProduct(weight_bar);
  grad.d_log_step_sizes = eps.cwiseProduct(eps_bar);

  if (!grad.all_finite() || !std::isfinite(elbo))
    throw divergence_error("non-finite adjoint in reverse pass", -1, -1);

  if (opts.objective_scale != 1.0) {
    const double k = opts.objective_scale;
    grad.d_log_weights *= k;
    grad.d_log_step_sizes *= k;
    for (auto& ref : grad.d_refreshments) {
      ref.shift *= k;
      ref.log_diag_precision *= k;
    }
    return {k * elbo, std::move(grad)};
  }
  return {elbo, std::move(grad)};
}

Vec flatten(const FlowParams& params) {
  const Index m = params.log_weights.size();
  const Index d = params.log_step_sizes.size();
  const Index r = static_cast<Index>(params.refreshments.size());
  Vec flat(m + d + 2 * r * d);
  flat.head(m) = params.log_weights;
  flat.segment(m, d) = params.log_step_sizes;
  Index off = m + d;
  for (const auto& ref : params.refreshments) {
    flat.segment(off, d) = ref.shift;
    flat.segment(off + d, d) = ref.log_diag_precision;
    off += 2 * d;
  }
  return flat;
}

Vec flatten(const ParameterGradient& grad) {
  const Index m = grad.d_log_weights.size();
  const Index d = grad.d_log_step_sizes.size();
  const Index r = static_cast<Index>(grad.d_refreshments.size());
  Vec flat(m + d + 2 * r * d);
  flat.head(m) = grad.d_log_weights;
  flat.segment(m, d) = grad.d_log_step_sizes;
  Index off = m + d;
  for (const auto& ref : grad.d_refreshments) {
    flat.segment(off, d) = ref.shift;
    flat.segment(off + d, d) = ref.log_diag_precision;
    off += 2 * d;
  }
  return flat;
}

void unflatten(const Vec& flat, FlowParams& params) {
  const Index m = params.log_weights.size();
  const Index d = params.log_step_sizes.size();
  const Index r = static_cast<Index>(params.refreshments.size());
  if (flat.size() != m + d + 2 * r * d)
    throw invalid_parameter("flat parameter vector has wrong length");
  params.log_weights = flat.head(m);
  params.log_step_sizes = flat.segment(m, d);
  Index off = m + d;
  for (auto& ref : params.refreshments) {
    ref.shift = flat.segment(off, d);
    ref.log_diag_precision = flat.segment(off + d, d);
    off += 2 * d;
  }
}

}  // namespace shf
