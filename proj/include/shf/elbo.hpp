#ifndef SHF_ELBO_HPP
#define SHF_ELBO_HPP

#include <cstdint>
#include <random>
#include <vector>

#include "shf/flow.hpp"

namespace shf {

// Fixed reference over (theta, rho): diagonal Gaussian on position,
// standard normal on momentum.
struct ReferenceDistribution {
  Vec position_mean;
  Vec position_diag_cov;  // entries > 0
  void validate() const;
  double log_density(const PhaseState& s) const;
  PhaseState sample(std::mt19937_64& rng) const;
};

struct ElboSample {
  double elbo_value = 0.0;
  PhaseState final_state;
  double log_flow_density = 0.0;     // log q(theta0, rho0) - J
  double log_target_estimate = 0.0;  // log p-bar
};

struct ElboOptions {
  bool with_replacement = true;  // minibatch index draws
  bool full_sum = false;         // replace the minibatch term with the exact sum
};

// Minibatch data term (N/S) sum_s f_{n_s}(theta); exposed so enumeration
// oracles can drive it with explicit index tuples.
double minibatch_data_term(const TargetModel& model,
                           const std::vector<Index>& indices, const Vec& theta);

// Unbiased single-draw estimate of the augmented ELBO (one reference draw,
// one minibatch of S indices).
ElboSample estimate_elbo(const TargetModel& model, const FlowParams& params,
                         const Coreset& coreset, const ReferenceDistribution& q,
                         Index s, std::uint64_t rng_seed,
                         const ElboOptions& opts = {});

// Monte-Carlo mean and standard error of the full-sum ELBO integrand.
std::pair<double, double> exact_elbo(const TargetModel& model,
                                     const FlowParams& params,
                                     const Coreset& coreset,
                                     const ReferenceDistribution& q, Index n_mc,
                                     std::uint64_t rng_seed);

// Density of the flow's pushforward at an arbitrary phase point.
double flow_log_density(const TargetModel& model, const FlowParams& params,
                        const Coreset& coreset, const ReferenceDistribution& q,
                        const PhaseState& state);

// Full-sum augmented target log-density at a phase point (no subsampling).
double augmented_target_log_density(const TargetModel& model,
                                    const PhaseState& state);

struct StepTracePoint {
  int step_index = 0;
  char kind = 'i';  // 'i' initial, 'l' leapfrog, 'r' refreshment
  double elbo_mean = 0.0;
  double elbo_stderr = 0.0;
};

// ELBO of the truncated flow after every leapfrog/refreshment step,
// estimated with common random numbers and the full-sum target term.
std::vector<StepTracePoint> elbo_step_trace(const TargetModel& model,
                                            const FlowParams& params,
                                            const Coreset& coreset,
                                            const ReferenceDistribution& q,
                                            Index n_mc, std::uint64_t rng_seed);

}  // namespace shf

#endif
