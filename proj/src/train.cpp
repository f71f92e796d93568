#include "shf/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>

namespace shf {

void TrainConfig::validate() const {
  if (n_iters < 0) throw invalid_parameter("n_iters must be nonnegative");
  if (learning_rate <= 0) throw invalid_parameter("learning rate must be positive");
  const auto [b1, b2] = adam_betas;
  if (b1 < 0 || b1 >= 1 || b2 < 0 || b2 >= 1)
    throw invalid_parameter("adam betas must lie in [0, 1)");
  if (adam_epsilon <= 0) throw invalid_parameter("adam epsilon must be positive");
  if (minibatch < 1) throw invalid_parameter("minibatch size must be >= 1");
  if (eval_every < 1) throw invalid_parameter("eval_every must be >= 1");
  if (n_blocks < 1 || leapfrogs_per_block < 1)
    throw invalid_parameter("need R >= 1 and L >= 1");
  if (warm_start_batch < 2) throw invalid_parameter("warm start batch must be >= 2");
  if (n_mc_eval < 2) throw invalid_parameter("n_mc_eval must be >= 2");
  if (elbo_draws_per_step < 1)
    throw invalid_parameter("elbo_draws_per_step must be >= 1");
  if (initial_step_sizes.size() < 1 || (initial_step_sizes.array() <= 0).any())
    throw invalid_parameter("initial step sizes must be positive");
}

void TrainTrace::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw invalid_parameter("cannot open trace file for writing: " + path);
  out.precision(17);
  out << "iteration,elbo,stderr,wall_time\n";
  for (const auto& rec : evals)
    out << rec.iteration << "," << rec.elbo_mean << "," << rec.elbo_stderr << ","
        << rec.wall_time_s << "\n";
}

Vec adam_step(AdamState& state, const Vec& grad, double lr,
              std::pair<double, double> betas, double eps) {
  const auto [b1, b2] = betas;
  state.t += 1;
  state.m = b1 * state.m + (1.0 - b1) * grad;
  state.v = b2 * state.v + (1.0 - b2) * grad.cwiseProduct(grad);
  const double mc = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double vc = 1.0 - std::pow(b2, static_cast<double>(state.t));
  const Vec m_hat = state.m / mc;
  const Vec v_hat = state.v / vc;
  return lr * m_hat.cwiseQuotient(v_hat.cwiseSqrt() +
                                  Vec::Constant(grad.size(), eps));
}

MarginalRefresh fit_marginal_refresh(const Mat& momenta) {
  const Index batch = momenta.rows();
  const Index d = momenta.cols();
  if (batch < 2) throw invalid_parameter("need at least two momenta");
  constexpr double kVarFloor = 1e-8;
  MarginalRefresh r;
  r.shift = momenta.colwise().mean().transpose();
  Vec var = (momenta.rowwise() - r.shift.transpose())
                .array()
                .square()
                .colwise()
                .sum()
                .transpose() /
            static_cast<double>(batch - 1);
  bool floored = false;
  for (Index j = 0; j < d; ++j)
    if (var(j) < kVarFloor) {
      var(j) = kVarFloor;
      floored = true;
    }
  if (floored)
    std::cerr << "warm_start: degenerate momentum batch, variance floored at "
              << kVarFloor << "\n";
  r.log_diag_precision = -var.array().log();
  return r;
}

FlowParams warm_start(const TargetModel& model, FlowParams params,
                      const Coreset& coreset, const ReferenceDistribution& q,
                      Index batch, std::uint64_t rng_seed) {
  q.validate();
  if (batch < 2) throw invalid_parameter("warm start batch must be >= 2");
  const int R = params.n_blocks();
  const int L = params.leapfrogs_per_block;
  const Index d = params.log_step_sizes.size();
  const Vec weights = params.log_weights.array().exp();
  const Vec eps = params.log_step_sizes.array().exp();

  std::mt19937_64 rng(rng_seed);
  std::vector<PhaseState> states(batch);
  std::vector<Vec> grads(batch);
  for (Index i = 0; i < batch; ++i) states[i] = q.sample(rng);

  if (params.refresh_kind == RefreshKind::conditional)
    params.conditional.assign(R, ConditionalRefresh{});

  constexpr double kVarFloor = 1e-8;
  for (int r = 0; r < R; ++r) {
    for (int l = 0; l < L; ++l) {
      for (Index i = 0; i < batch; ++i) {
        const Vec* cached = (r == 0 && l == 0) ? nullptr : &grads[i];
        Vec g_out;
        states[i] = leapfrog_step(model, coreset, weights, eps, states[i],
                                  cached, &g_out);
        grads[i] = std::move(g_out);
      }
    }
    Vec mu = Vec::Zero(d);
    for (Index i = 0; i < batch; ++i) mu += states[i].momentum;
    mu /= static_cast<double>(batch);

    if (params.refresh_kind == RefreshKind::conditional) {
      // joint moment estimates over (theta, rho)
      Vec mu_theta = Vec::Zero(d);
      for (Index i = 0; i < batch; ++i) mu_theta += states[i].position;
      mu_theta /= static_cast<double>(batch);
      Mat s_tt = Mat::Zero(d, d), s_tr = Mat::Zero(d, d), s_rr = Mat::Zero(d, d);
      for (Index i = 0; i < batch; ++i) {
        const Vec dt = states[i].position - mu_theta;
        const Vec dr = states[i].momentum - mu;
        s_tt += dt * dt.transpose();
        s_tr += dt * dr.transpose();
        s_rr += dr * dr.transpose();
      }
      s_tt /= batch - 1.0;
      s_tr /= batch - 1.0;
      s_rr /= batch - 1.0;
      s_tt += kVarFloor * Mat::Identity(d, d);
      s_rr += kVarFloor * Mat::Identity(d, d);
      auto& c = params.conditional[r];
      c.mu_theta = mu_theta;
      c.mu_rho = mu;
      c.sigma_tt = s_tt;
      c.sigma_tr = s_tr;
      c.sigma_rr = s_rr;
      const auto ops = prepare_conditional(c);
      for (Index i = 0; i < batch; ++i)
        states[i] = conditional_refresh(ops, states[i]).first;
    } else {
      Mat momenta(batch, d);
      for (Index i = 0; i < batch; ++i)
        momenta.row(i) = states[i].momentum.transpose();
      params.refreshments[r] = fit_marginal_refresh(momenta);
      for (Index i = 0; i < batch; ++i)
        states[i] = quasi_refresh(params.refreshments[r], states[i]).first;
    }
  }
  return params;
}

namespace {

FlowParams initial_params(const TrainConfig& config, Index m, Index d, Index n) {
  FlowParams params;
  params.log_weights =
      Vec::Constant(m, std::log(static_cast<double>(n) / static_cast<double>(m)));
  Vec eps0;
  if (config.initial_step_sizes.size() == 1)
    eps0 = Vec::Constant(d, config.initial_step_sizes(0));
  else if (config.initial_step_sizes.size() == d)
    eps0 = config.initial_step_sizes;
  else
    throw invalid_parameter("initial step sizes must be scalar or length d");
  params.log_step_sizes = eps0.array().log();
  params.leapfrogs_per_block = config.leapfrogs_per_block;
  params.refresh_kind = config.refresh_kind;
  params.refreshments.assign(
      config.n_blocks, MarginalRefresh{Vec::Zero(d), Vec::Zero(d)});
  return params;
}

}  // namespace

std::pair<FlowParams, TrainTrace> fit(const TargetModel& model,
                                      const Coreset& coreset,
                                      const ReferenceDistribution& q,
                                      const TrainConfig& config) {
  config.validate();
  q.validate();
  coreset.validate(model.n_data);
  const Index m = coreset.size();
  const Index d = model.dim;

  FlowParams params = initial_params(config, m, d, model.n_data);
  params = warm_start(model, params, coreset, q,
                      config.warm_start_batch, split_seed(config.rng_seed, 1));

  TrainTrace trace;
  std::vector<FlowParams> snapshots;
  const std::uint64_t eval_seed = split_seed(config.rng_seed, 2);
  const auto t_start = std::chrono::steady_clock::now();

  auto record_eval = [&](int iteration) {
    const auto [mean, se] =
        exact_elbo(model, params, coreset, q, config.n_mc_eval, eval_seed);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
            .count();
    const int id = static_cast<int>(snapshots.size());
    snapshots.push_back(params);
    trace.evals.push_back({iteration, mean, se, wall, id});
  };

  record_eval(0);

  Vec flat = flatten(params);
  AdamState adam(flat.size());
  // plain-SGD fallback shares the loop; adam state unused then
  int consecutive_failures = 0;
  GradOptions gopts;

  for (int iter = 1; iter <= config.n_iters; ++iter) {
    Vec grad_flat;
    bool ok = true;
    try {
      ParameterGradient acc;
      for (int rep = 0; rep < config.elbo_draws_per_step; ++rep) {
        const std::uint64_t step_seed =
            split_seed(config.rng_seed,
                       16 + static_cast<std::uint64_t>(iter) *
                                config.elbo_draws_per_step + rep);
        auto [elbo, g] =
            elbo_gradient(model, params, coreset, q, config.minibatch,
                          step_seed, gopts);
        (void)elbo;
        if (rep == 0)
          acc = std::move(g);
        else {
          acc.d_log_weights += g.d_log_weights;
          acc.d_log_step_sizes += g.d_log_step_sizes;
          for (std::size_t rr = 0; rr < acc.d_refreshments.size(); ++rr) {
            acc.d_refreshments[rr].shift += g.d_refreshments[rr].shift;
            acc.d_refreshments[rr].log_diag_precision +=
                g.d_refreshments[rr].log_diag_precision;
          }
        }
      }
      grad_flat = flatten(acc) / config.elbo_draws_per_step;
      if (!config.train_weights) grad_flat.head(m).setZero();
    } catch (const divergence_error&) {
      ok = false;
    }

    if (!ok) {
      ++trace.skipped_steps;
      if (++consecutive_failures > 50)
        throw divergence_error(
            "training aborted: more than 50 consecutive divergent passes "
            "(iteration " + std::to_string(iter) + ")", -1, -1);
    } else {
      consecutive_failures = 0;
      if (config.optimizer == Optimizer::adam) {
        flat += adam_step(adam, grad_flat, config.learning_rate,
                          config.adam_betas, config.adam_epsilon);
      } else {
        flat += config.learning_rate * grad_flat;
      }
      unflatten(flat, params);
    }

    if (iter % config.eval_every == 0 || iter == config.n_iters)
      record_eval(iter);
  }

  // best snapshot by window-10 smoothed eval ELBO
  int best = 0;
  double best_smoothed = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < trace.evals.size(); ++i) {
    const std::size_t lo = i >= 9 ? i - 9 : 0;
    double sum = 0.0;
    for (std::size_t j = lo; j <= i; ++j) sum += trace.evals[j].elbo_mean;
    const double smoothed = sum / (i - lo + 1);
    if (smoothed > best_smoothed) {
      best_smoothed = smoothed;
      best = static_cast<int>(i);
    }
  }
  trace.best_snapshot_id = trace.evals[best].snapshot_id;
  return {snapshots[trace.best_snapshot_id], std::move(trace)};
}

}  // namespace shf
