#ifndef SHF_GRAD_HPP
#define SHF_GRAD_HPP

#include <cstdint>

#include "shf/elbo.hpp"

namespace shf {

// Gradient of the ELBO estimate with respect to the unconstrained flow
// parameters; shapes mirror FlowParams.
struct ParameterGradient {
  Vec d_log_weights;
  Vec d_log_step_sizes;
  std::vector<MarginalRefresh> d_refreshments;  // d_shift / d_log_diag_precision

  static ParameterGradient zeros_like(const FlowParams& params);
  bool all_finite() const;
};

struct GradOptions {
  ElboOptions elbo;
  // Scaled-objective hook: the returned (elbo, gradient) are multiplied by
  // this factor after accumulation.
  double objective_scale = 1.0;
};

// Reverse-mode gradient of the Algorithm-2 scalar for the fixed reference
// draw and minibatch determined by rng_seed. Deterministic fixed-order
// accumulation.
std::pair<double, ParameterGradient> elbo_gradient(
    const TargetModel& model, const FlowParams& params, const Coreset& coreset,
    const ReferenceDistribution& q, Index s, std::uint64_t rng_seed,
    const GradOptions& opts = {});

// Flat packing of the unconstrained parameters, order:
// log_weights, log_step_sizes, then per refreshment (shift, log_diag_precision).
Vec flatten(const FlowParams& params);
Vec flatten(const ParameterGradient& grad);
void unflatten(const Vec& flat, FlowParams& params);

}  // namespace shf

#endif
