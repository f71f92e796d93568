#include "shf/elbo.hpp"

#include <cmath>

namespace shf {

void ReferenceDistribution::validate() const {
  if (position_mean.size() != position_diag_cov.size())
    throw invalid_parameter("reference mean/cov length mismatch");
  if ((position_diag_cov.array() <= 0).any())
    throw invalid_parameter("reference diagonal covariance must be positive");
}

double ReferenceDistribution::log_density(const PhaseState& s) const {
  const Index d = position_mean.size();
  const Vec diff = s.position - position_mean;
  double lp = -0.5 * d * kLogTwoPi - 0.5 * position_diag_cov.array().log().sum() -
              0.5 * (diff.array().square() / position_diag_cov.array()).sum();
  lp += -0.5 * d * kLogTwoPi - 0.5 * s.momentum.squaredNorm();
  return lp;
}

PhaseState ReferenceDistribution::sample(std::mt19937_64& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index d = position_mean.size();
  PhaseState s;
  s.position.resize(d);
  s.momentum.resize(d);
  for (Index i = 0; i < d; ++i)
    s.position(i) = position_mean(i) + std::sqrt(position_diag_cov(i)) * normal(rng);
  for (Index i = 0; i < d; ++i) s.momentum(i) = normal(rng);
  return s;
}

double augmented_target_log_density(const TargetModel& model,
                                    const PhaseState& state) {
  double lp = model.log_prior(state.position);
  for (Index n = 0; n < model.n_data; ++n)
    lp += model.potential(n, state.position);
  const Index d = state.momentum.size();
  lp += -0.5 * d * kLogTwoPi - 0.5 * state.momentum.squaredNorm();
  return lp;
}

double minibatch_data_term(const TargetModel& model,
                           const std::vector<Index>& indices, const Vec& theta) {
  if (indices.empty()) throw invalid_parameter("minibatch must be nonempty");
  double sum = 0.0;
  for (Index n : indices) sum += model.potential(n, theta);
  return static_cast<double>(model.n_data) / indices.size() * sum;
}

namespace {

std::vector<Index> draw_minibatch(Index n_data, Index s, bool with_replacement,
                                  std::mt19937_64& rng) {
  std::vector<Index> idx(s);
  if (with_replacement) {
    std::uniform_int_distribution<Index> pick(0, n_data - 1);
    for (Index i = 0; i < s; ++i) idx[i] = pick(rng);
  } else {
    if (s > n_data)
      throw invalid_parameter("S > N requires sampling with replacement");
    std::vector<Index> pool(n_data);
    for (Index i = 0; i < n_data; ++i) pool[i] = i;
    for (Index i = 0; i < s; ++i) {
      std::uniform_int_distribution<Index> pick(i, n_data - 1);
      std::swap(pool[i], pool[pick(rng)]);
      idx[i] = pool[i];
    }
  }
  return idx;
}

double momentum_log_density(const Vec& rho) {
  return -0.5 * rho.size() * kLogTwoPi - 0.5 * rho.squaredNorm();
}

}  // namespace

ElboSample estimate_elbo(const TargetModel& model, const FlowParams& params,
                         const Coreset& coreset, const ReferenceDistribution& q,
                         Index s, std::uint64_t rng_seed,
                         const ElboOptions& opts) {
  q.validate();
  if (s < 1) throw invalid_parameter("minibatch size must be at least 1");
  if (!opts.with_replacement && s > model.n_data)
    throw invalid_parameter("S > N requires sampling with replacement");

  std::mt19937_64 rng(rng_seed);
  const PhaseState initial = q.sample(rng);
  std::vector<Index> indices;
  if (!opts.full_sum) indices = draw_minibatch(model.n_data, s, opts.with_replacement, rng);

  FlowOutput out = forward(model, params, coreset, initial);

  double data_term;
  if (opts.full_sum) {
    data_term = 0.0;
    for (Index n = 0; n < model.n_data; ++n)
      data_term += model.potential(n, out.final_state.position);
  } else {
    data_term = minibatch_data_term(model, indices, out.final_state.position);
  }

  ElboSample result;
  result.log_target_estimate = model.log_prior(out.final_state.position) +
                               data_term +
                               momentum_log_density(out.final_state.momentum);
  result.log_flow_density = q.log_density(initial) - out.log_jacobian;
  result.elbo_value = result.log_target_estimate - result.log_flow_density;
  result.final_state = std::move(out.final_state);
  return result;
}

std::pair<double, double> exact_elbo(const TargetModel& model,
                                     const FlowParams& params,
                                     const Coreset& coreset,
                                     const ReferenceDistribution& q, Index n_mc,
                                     std::uint64_t rng_seed) {
  if (n_mc < 2) throw invalid_parameter("exact_elbo requires n_mc >= 2");
  ElboOptions opts;
  opts.full_sum = true;
  double sum = 0.0, sum_sq = 0.0;
  for (Index i = 0; i < n_mc; ++i) {
    const auto sample =
        estimate_elbo(model, params, coreset, q, 1, split_seed(rng_seed, i), opts);
    sum += sample.elbo_value;
    sum_sq += sample.elbo_value * sample.elbo_value;
  }
  const double mean = sum / n_mc;
  const double var = std::max(0.0, (sum_sq - n_mc * mean * mean) / (n_mc - 1));
  return {mean, std::sqrt(var / n_mc)};
}

double flow_log_density(const TargetModel& model, const FlowParams& params,
                        const Coreset& coreset, const ReferenceDistribution& q,
                        const PhaseState& state) {
  q.validate();
  FlowOutput pre = inverse(model, params, coreset, state);
  return q.log_density(pre.final_state) - pre.log_jacobian;
}

std::vector<StepTracePoint> elbo_step_trace(const TargetModel& model,
                                            const FlowParams& params,
                                            const Coreset& coreset,
                                            const ReferenceDistribution& q,
                                            Index n_mc, std::uint64_t rng_seed) {
  q.validate();
  if (n_mc < 2) throw invalid_parameter("step trace requires n_mc >= 2");
  const int R = params.n_blocks();
  const int L = params.leapfrogs_per_block;
  const Vec weights = params.log_weights.array().exp();
  const Vec eps = params.log_step_sizes.array().exp();

  std::vector<ConditionalRefreshOps> cond_ops;
  if (params.refresh_kind == RefreshKind::conditional)
    for (const auto& c : params.conditional) cond_ops.push_back(prepare_conditional(c));

  std::mt19937_64 rng(rng_seed);
  std::vector<PhaseState> states(n_mc);
  std::vector<double> log_q0(n_mc);
  std::vector<Vec> grads(n_mc);
  for (Index i = 0; i < n_mc; ++i) {
    states[i] = q.sample(rng);
    log_q0[i] = q.log_density(states[i]);
  }

  std::vector<StepTracePoint> trace;
  double log_jac = 0.0;  // shared by all draws: refresh Jacobians are state-free

  auto record = [&](int step, char kind) {
    double sum = 0.0, sum_sq = 0.0;
    for (Index i = 0; i < n_mc; ++i) {
      const double v =
          augmented_target_log_density(model, states[i]) - (log_q0[i] - log_jac);
      sum += v;
      sum_sq += v * v;
    }
    const double mean = sum / n_mc;
    const double var = std::max(0.0, (sum_sq - n_mc * mean * mean) / (n_mc - 1));
    trace.push_back({step, kind, mean, std::sqrt(var / n_mc)});
  };

  int step = 0;
  record(step, 'i');
  for (int r = 0; r < R; ++r) {
    for (int l = 0; l < L; ++l) {
      for (Index i = 0; i < n_mc; ++i) {
        const Vec* cached = (r == 0 && l == 0) ? nullptr : &grads[i];
        Vec g_out;
        states[i] = leapfrog_step(model, coreset, weights, eps, states[i],
                                  cached, &g_out);
        grads[i] = std::move(g_out);
      }
      record(++step, 'l');
    }
    double inc = 0.0;
    for (Index i = 0; i < n_mc; ++i) {
      std::pair<PhaseState, double> res =
          params.refresh_kind == RefreshKind::conditional
              ? conditional_refresh(cond_ops[r], states[i])
              : quasi_refresh(params.refreshments[r], states[i]);
      states[i] = std::move(res.first);
      inc = res.second;
    }
    log_jac += inc;
    record(++step, 'r');
  }
  return trace;
}

}  // namespace shf
