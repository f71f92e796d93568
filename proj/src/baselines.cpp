#include "shf/baselines.hpp"

#include <Eigen/Cholesky>
#include <chrono>
#include <cmath>

#include "shf/detail/leapfrog_adjoint.hpp"

namespace shf {

Coreset uniform_coreset(Index n_data, Index m, std::uint64_t seed) {
  return select_coreset(n_data, m, seed);
}

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Vec TemperingSchedule::betas() const {
  const int r = n_blocks();
  Vec beta(r);
  beta(r - 1) = 1.0;
  for (int i = r - 2; i >= 0; --i) beta(i) = sigmoid(alphas(i)) * beta(i + 1);
  return beta;
}

Vec TemperingSchedule::factors() const {
  const int r = n_blocks();
  Vec f(r);
  // sqrt(beta_r / beta_{r+1}) = sqrt(sigmoid(alpha_r)); final block untouched
  for (int i = 0; i < r - 1; ++i) f(i) = std::sqrt(sigmoid(alphas(i)));
  f(r - 1) = 1.0;
  return f;
}

FlowOutput tempered_flow_forward(const TargetModel& model,
                                 const Coreset& coreset, const Vec& weights,
                                 const Vec& step_sizes, const Vec& factors,
                                 int leapfrogs_per_block,
                                 const PhaseState& initial, Trajectory* traj) {
  if ((factors.array() <= 0).any())
    throw invalid_parameter("tempering factors must be positive");
  const int r_blocks = static_cast<int>(factors.size());
  const int l_steps = leapfrogs_per_block;
  const Index d = step_sizes.size();
  const Vec half = 0.5 * step_sizes;

  if (traj) {
    traj->theta.clear();
    traj->rho_hat.clear();
    traj->grad_at.clear();
    traj->rho_after_refresh.clear();
  }

  PhaseState state = initial;
  double log_jac = 0.0;
  Vec grad;
  bool have_grad = false;
  if (traj) traj->theta.push_back(state.position);

  for (int r = 0; r < r_blocks; ++r) {
    for (int l = 0; l < l_steps; ++l) {
      if (!have_grad) {
        grad = coreset_grad_log_potential(model, coreset, weights, state.position);
        if (!grad.allFinite())
          throw divergence_error("non-finite gradient", r, l);
        have_grad = true;
        if (traj) traj->grad_at.push_back(grad);
      }
      Vec rho_hat = state.momentum + half.cwiseProduct(grad);
      state.position += step_sizes.cwiseProduct(rho_hat);
      grad = coreset_grad_log_potential(model, coreset, weights, state.position);
      if (!grad.allFinite()) throw divergence_error("non-finite gradient", r, l);
      state.momentum = rho_hat + half.cwiseProduct(grad);
      if (!state.position.allFinite() || !state.momentum.allFinite() ||
          state.position.cwiseAbs().maxCoeff() > kDivergenceThreshold ||
          state.momentum.cwiseAbs().maxCoeff() > kDivergenceThreshold)
        throw divergence_error("tempered flow diverged", r, l);
      if (traj) {
        traj->rho_hat.push_back(std::move(rho_hat));
        traj->theta.push_back(state.position);
        traj->grad_at.push_back(grad);
      }
    }
    state.momentum *= factors(r);
    log_jac += d * std::log(factors(r));
    if (traj) traj->rho_after_refresh.push_back(state.momentum);
  }
  return {std::move(state), log_jac};
}

FlowOutput tempered_flow_forward(const TargetModel& model,
                                 const Coreset& coreset,
                                 const TemperedParams& params,
                                 const PhaseState& initial, Trajectory* traj) {
  return tempered_flow_forward(
      model, coreset, params.log_weights.array().exp(),
      params.log_step_sizes.array().exp(), params.schedule.factors(),
      params.leapfrogs_per_block, initial, traj);
}

std::pair<double, TemperedGradient> tempered_elbo_gradient(
    const TargetModel& model, const TemperedParams& params,
    const Coreset& coreset, const ReferenceDistribution& q, Index s,
    std::uint64_t rng_seed, const ElboOptions& opts) {
  q.validate();
  const int r_blocks = params.n_blocks();
  const int l_steps = params.leapfrogs_per_block;
  const Index d = params.log_step_sizes.size();
  const Vec weights = params.log_weights.array().exp();
  const Vec eps = params.log_step_sizes.array().exp();
  const Vec factors = params.schedule.factors();

  std::mt19937_64 rng(rng_seed);
  const PhaseState initial = q.sample(rng);
  std::vector<Index> indices;
  if (!opts.full_sum) {
    std::uniform_int_distribution<Index> pick(0, model.n_data - 1);
    indices.resize(s);
    for (Index i = 0; i < s; ++i) indices[i] = pick(rng);
  }

  Trajectory traj;
  FlowOutput out = tempered_flow_forward(model, coreset, weights, eps, factors,
                                         l_steps, initial, &traj);
  const Vec& theta_final = out.final_state.position;
  const Vec& rho_final = out.final_state.momentum;

  double data_term = 0.0;
  Vec data_grad = Vec::Zero(d);
  if (opts.full_sum) {
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

  Vec theta_bar = model.grad_log_prior(theta_final) + data_grad;
  Vec rho_bar = -rho_final;
  Vec eps_bar = Vec::Zero(d);
  Vec weight_bar = Vec::Zero(coreset.size());
  Vec factor_bar = Vec::Zero(r_blocks);

  for (int r = r_blocks - 1; r >= 0; --r) {
    // rho_out = a * rho_in; J term adds d * log a
    const Vec& rho_out = traj.rho_after_refresh[r];
    factor_bar(r) += rho_bar.dot(rho_out) / factors(r) + d / factors(r);
    rho_bar *= factors(r);
    for (int l = l_steps - 1; l >= 0; --l) {
      const int k = r * l_steps + l;
      detail::leapfrog_adjoint_step(model, coreset, weights, eps, traj, k,
                                    theta_bar, rho_bar, eps_bar, weight_bar);
    }
  }

  TemperedGradient grad;
  grad.d_log_step_sizes = eps.cwiseProduct(eps_bar);
  grad.d_alphas = Vec::Zero(params.schedule.alphas.size());
  for (Index i = 0; i < grad.d_alphas.size(); ++i) {
    const double sg = sigmoid(params.schedule.alphas(i));
    // factor_i = sqrt(sigmoid(alpha_i))
    grad.d_alphas(i) = factor_bar(i) * 0.5 * factors(i) * (1.0 - sg);
  }
  if (!grad.d_log_step_sizes.allFinite() || !grad.d_alphas.allFinite() ||
      !std::isfinite(elbo))
    throw divergence_error("non-finite adjoint in tempered reverse pass", -1, -1);
  return {elbo, std::move(grad)};
}

std::pair<double, double> tempered_exact_elbo(const TargetModel& model,
                                              const TemperedParams& params,
                                              const Coreset& coreset,
                                              const ReferenceDistribution& q,
                                              Index n_mc, std::uint64_t rng_seed) {
  if (n_mc < 2) throw invalid_parameter("n_mc must be >= 2");
  double sum = 0.0, sum_sq = 0.0;
  for (Index i = 0; i < n_mc; ++i) {
    std::mt19937_64 draw_rng(split_seed(rng_seed, i));
    const PhaseState initial = q.sample(draw_rng);
    const FlowOutput out = tempered_flow_forward(model, coreset, params, initial);
    double lp = model.log_prior(out.final_state.position);
    for (Index n = 0; n < model.n_data; ++n)
      lp += model.potential(n, out.final_state.position);
    lp += -0.5 * out.final_state.momentum.size() * kLogTwoPi -
          0.5 * out.final_state.momentum.squaredNorm();
    const double v = lp - (q.log_density(initial) - out.log_jacobian);
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / n_mc;
  const double var = std::max(0.0, (sum_sq - n_mc * mean * mean) / (n_mc - 1));
  return {mean, std::sqrt(var / n_mc)};
}

std::pair<TemperedParams, TrainTrace> fit_tempered(
    const TargetModel& model, const Coreset& coreset,
    const ReferenceDistribution& q, const TrainConfig& config) {
  config.validate();
  q.validate();
  coreset.validate(model.n_data);
  const Index d = model.dim;

  TemperedParams params;
  params.log_weights = coreset.weights.array().max(1e-300).log();
  Vec eps0 = config.initial_step_sizes.size() == 1
                 ? Vec::Constant(d, config.initial_step_sizes(0))
                 : config.initial_step_sizes;
  if (eps0.size() != d)
    throw invalid_parameter("initial step sizes must be scalar or length d");
  params.log_step_sizes = eps0.array().log();
  params.leapfrogs_per_block = config.leapfrogs_per_block;
  params.schedule.alphas = Vec::Ones(std::max(config.n_blocks - 1, 0));

  TrainTrace trace;
  std::vector<TemperedParams> snapshots;
  const std::uint64_t eval_seed = split_seed(config.rng_seed, 2);
  const auto t_start = std::chrono::steady_clock::now();

  auto record_eval = [&](int iteration) {
    const auto [mean, se] =
        tempered_exact_elbo(model, params, coreset, q, config.n_mc_eval, eval_seed);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
            .count();
    const int id = static_cast<int>(snapshots.size());
    snapshots.push_back(params);
    trace.evals.push_back({iteration, mean, se, wall, id});
  };

  record_eval(0);

  const Index n_alpha = params.schedule.alphas.size();
  Vec flat(d + n_alpha);
  flat.head(d) = params.log_step_sizes;
  flat.tail(n_alpha) = params.schedule.alphas;
  AdamState adam(flat.size());
  int consecutive_failures = 0;

  for (int iter = 1; iter <= config.n_iters; ++iter) {
    bool ok = true;
    Vec grad_flat(flat.size());
    try {
      const std::uint64_t step_seed =
          split_seed(config.rng_seed, 16 + static_cast<std::uint64_t>(iter));
      auto [elbo, g] = tempered_elbo_gradient(model, params, coreset, q,
                                              config.minibatch, step_seed);
      (void)elbo;
      grad_flat.head(d) = g.d_log_step_sizes;
      grad_flat.tail(n_alpha) = g.d_alphas;
    } catch (const divergence_error&) {
      ok = false;
    }
    if (!ok) {
      ++trace.skipped_steps;
      if (++consecutive_failures > 50)
        throw divergence_error("tempered training aborted after 50 consecutive "
                               "divergent passes", -1, -1);
    } else {
      consecutive_failures = 0;
      if (config.optimizer == Optimizer::adam)
        flat += adam_step(adam, grad_flat, config.learning_rate,
                          config.adam_betas, config.adam_epsilon);
      else
        flat += config.learning_rate * grad_flat;
      params.log_step_sizes = flat.head(d);
      params.schedule.alphas = flat.tail(n_alpha);
    }
    if (iter % config.eval_every == 0 || iter == config.n_iters)
      record_eval(iter);
  }

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

GaussianSummary laplace_approx(const TargetModel& model, const Vec& init,
                               int max_iters, double tol) {
  const Index d = model.dim;
  if (init.size() != d) throw invalid_parameter("init dimension mismatch");

  auto objective = [&](const Vec& theta) {
    double v = model.log_prior(theta);
    for (Index n = 0; n < model.n_data; ++n) v += model.potential(n, theta);
    return v;
  };
  auto gradient = [&](const Vec& theta) {
    Vec g = model.grad_log_prior(theta);
    for (Index n = 0; n < model.n_data; ++n) g += model.grad_potential(n, theta);
    return g;
  };

  auto fd_hessian = [&](const Vec& at) {
    Mat hess(d, d);
    for (Index j = 0; j < d; ++j) {
      const double h = 1e-5 * std::max(1.0, std::abs(at(j)));
      Vec tp = at, tm = at;
      tp(j) += h;
      tm(j) -= h;
      hess.col(j) = (gradient(tp) - gradient(tm)) / (2.0 * h);
    }
    return Mat(0.5 * (hess + hess.transpose()));
  };

  // Phase 1: backtracking gradient ascent. The objective-based line search
  // bottoms out once per-step improvements fall under the float resolution
  // of f, around |g| ~ sqrt(eps |f| curvature), so only push it to a coarse
  // tolerance here.
  Vec theta = init;
  double f = objective(theta);
  const double coarse_tol = std::max(tol, 1e-4);
  for (int it = 0; it < max_iters; ++it) {
    const Vec g = gradient(theta);
    if (g.cwiseAbs().maxCoeff() < coarse_tol) break;
    double alpha = 1.0;
    bool stepped = false;
    for (int bt = 0; bt < 60; ++bt) {
      const Vec cand = theta + alpha * g;
      const double fc = objective(cand);
      if (std::isfinite(fc) && fc >= f + 1e-4 * alpha * g.squaredNorm()) {
        theta = cand;
        f = fc;
        stepped = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!stepped) break;  // at the float resolution wall; Newton takes over
  }

  // Phase 2: Newton polish on the gradient, which keeps full precision near
  // the mode.
  bool converged = gradient(theta).cwiseAbs().maxCoeff() < tol;
  for (int it = 0; it < 50 && !converged; ++it) {
    const Vec g = gradient(theta);
    const Mat neg_h = -fd_hessian(theta);
    Eigen::LLT<Mat> llt(neg_h);
    if (llt.info() != Eigen::Success) break;
    Vec step = llt.solve(g);
    double damp = 1.0;
    Vec cand = theta + damp * step;
    while (!std::isfinite(objective(cand)) && damp > 1e-8) {
      damp *= 0.5;
      cand = theta + damp * step;
    }
    theta = cand;
    converged = gradient(theta).cwiseAbs().maxCoeff() < tol;
  }
  if (!converged)
    throw convergence_error("laplace_approx: no stationary point within max_iters");

  Mat hess = fd_hessian(theta);

  GaussianSummary out;
  out.mean = theta;
  const Mat neg_hess = -hess;
  Eigen::LLT<Mat> llt(neg_hess);
  if (llt.info() != Eigen::Success)
    throw decomposition_error("laplace_approx: negative Hessian is not PD");
  out.covariance = llt.solve(Mat::Identity(d, d));
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  return out;
}

}  // namespace shf
