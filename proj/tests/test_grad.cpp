#include <doctest.h>

#include "shf/grad.hpp"
#include "test_helpers.hpp"

using namespace shf;
using namespace shf::testing;

namespace {

struct Problem {
  Dataset data;
  TargetModel model;
  Coreset coreset;
  FlowParams params;
  ReferenceDistribution q;
};

Problem random_problem(const std::string& kind, Index n, Index m, int r, int l,
                       std::uint64_t seed) {
  Problem p;
  std::mt19937_64 rng(seed);
  if (kind == "gaussian") {
    p.data = make_synthetic_gaussian(n, 2, 1.5, seed + 1);
    p.model = make_gaussian_location(p.data, 1.5);
  } else if (kind == "linreg") {
    p.data = make_synthetic_linreg(n, 2, seed + 1);
    p.model = make_linreg(p.data);
  } else {
    p.data = make_synthetic_logreg(n, 2, seed + 1);
    p.model = make_logreg(p.data);
  }
  const Index d = p.model.dim;
  p.coreset = select_coreset(n, m, seed + 2);
  p.params.log_weights =
      p.coreset.weights.array().log() + 0.2 * random_vec(m, rng).array();
  p.params.log_step_sizes =
      Vec::Constant(d, std::log(0.02)) + 0.2 * random_vec(d, rng);
  p.params.leapfrogs_per_block = l;
  p.params.refreshments.clear();
  for (int i = 0; i < r; ++i)
    p.params.refreshments.push_back(
        MarginalRefresh{random_vec(d, rng, 0.3), random_vec(d, rng, 0.3)});
  p.q.position_mean = Vec::Zero(d);
  p.q.position_diag_cov = Vec::Ones(d);
  return p;
}

// deterministic objective used by the finite-difference oracle
double objective(const Problem& p, const Vec& flat, Index s, std::uint64_t seed) {
  FlowParams params = p.params;
  unflatten(flat, params);
  return estimate_elbo(p.model, params, p.coreset, p.q, s, seed).elbo_value;
}

}  // namespace

TEST_CASE("dead parameters: no leapfrogs means zero step-size gradient") {
  Problem p = random_problem("gaussian", 10, 3, 1, 1, 101);
  // L = 0 blocks: the machinery tolerates zero leapfrogs even though fitted
  // flows always use L >= 1
  p.params.leapfrogs_per_block = 0;
  p.params.refreshments = {MarginalRefresh{Vec::Zero(p.model.dim),
                                           Vec::Zero(p.model.dim)}};
  const auto [elbo, grad] = elbo_gradient(p.model, p.params, p.coreset, p.q, 4, 3);
  CHECK(std::isfinite(elbo));
  CHECK(grad.d_log_step_sizes.cwiseAbs().maxCoeff() == 0.0);
  CHECK(grad.d_log_weights.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("reverse-mode gradient matches finite differences (frozen example)") {
  // 1-D Gaussian location, L=2, R=1, M=1
  Problem p = random_problem("gaussian", 6, 1, 1, 2, 113);
  Dataset d1;
  d1.features = Mat::Constant(1, 1, 0.7);
  d1.response = Vec::Zero(1);
  p.data = d1;
  p.model = make_gaussian_location(d1, 1.0);
  p.coreset = Coreset{{0}, Vec::Constant(1, 1.0)};
  p.params.log_weights = Vec::Zero(1);
  p.params.log_step_sizes = Vec::Constant(1, std::log(0.1));
  p.params.leapfrogs_per_block = 2;
  p.params.refreshments = {
      MarginalRefresh{Vec::Constant(1, 0.2), Vec::Constant(1, -0.1)}};
  p.q.position_mean = Vec::Zero(1);
  p.q.position_diag_cov = Vec::Ones(1);

  const Index s = 1;
  const std::uint64_t seed = 5;
  const auto [elbo, grad] = elbo_gradient(p.model, p.params, p.coreset, p.q, s, seed);
  const Vec flat = flatten(p.params);
  const Vec gflat = flatten(grad);
  CHECK(std::isfinite(elbo));
  for (Index i = 0; i < flat.size(); ++i) {
    const double fd = central_diff(
        [&](const Vec& x) { return objective(p, x, s, seed); }, flat, i, 1e-5);
    CHECK(rel_error(gflat(i), fd) < 1e-5);
  }
}

TEST_CASE("gradient check: 20 random configurations per model") {
  const std::vector<std::string> kinds = {"gaussian", "linreg", "logreg"};
  for (const auto& kind : kinds) {
    for (int cfg = 0; cfg < 20; ++cfg) {
      const std::uint64_t seed = 1000 + 37 * cfg;
      Problem p = random_problem(kind, 12, 4, 2, 2, seed);
      const Index s = 3;
      const auto [elbo, grad] =
          elbo_gradient(p.model, p.params, p.coreset, p.q, s, seed + 5);
      CHECK(std::isfinite(elbo));
      const Vec flat = flatten(p.params);
      const Vec gflat = flatten(grad);
      for (Index i = 0; i < flat.size(); ++i) {
        const double h = 1e-5 * std::max(1.0, std::abs(flat(i)));
        const double fd = central_diff(
            [&](const Vec& x) { return objective(p, x, s, seed + 5); }, flat, i, h);
        CHECK(rel_error(gflat(i), fd) < 1e-5);
      }
    }
  }
}

TEST_CASE("gradients flow through fixed conditional refreshments") {
  Problem p = random_problem("gaussian", 10, 3, 2, 2, 131);
  const Index d = p.model.dim;
  p.params.refresh_kind = RefreshKind::conditional;
  std::mt19937_64 rng(7);
  p.params.conditional.clear();
  for (int r = 0; r < 2; ++r) {
    ConditionalRefresh c;
    c.mu_theta = random_vec(d, rng, 0.2);
    c.mu_rho = random_vec(d, rng, 0.2);
    Mat a = 0.3 * Mat::Random(2 * d, 2 * d);
    Mat cov = a * a.transpose() + Mat::Identity(2 * d, 2 * d);
    c.sigma_tt = cov.topLeftCorner(d, d);
    c.sigma_tr = cov.topRightCorner(d, d);
    c.sigma_rr = cov.bottomRightCorner(d, d);
    p.params.conditional.push_back(std::move(c));
  }
  const Index s = 3;
  const std::uint64_t seed = 77;
  const auto [elbo, grad] = elbo_gradient(p.model, p.params, p.coreset, p.q, s, seed);
  CHECK(std::isfinite(elbo));
  // trainable coordinates (weights, step sizes) still match finite differences
  const Index m = p.params.log_weights.size();
  const Vec flat = flatten(p.params);
  const Vec gflat = flatten(grad);
  for (Index i = 0; i < m + d; ++i) {
    const double fd = central_diff(
        [&](const Vec& x) { return objective(p, x, s, seed); }, flat, i, 1e-5);
    CHECK(rel_error(gflat(i), fd) < 1e-5);
  }
  // marginal refreshment parameters are dead under the conditional kind
  for (Index i = m + d; i < flat.size(); ++i) CHECK(gflat(i) == 0.0);
}

TEST_CASE("identical seeds give bitwise-identical gradients") {
  Problem p = random_problem("linreg", 15, 5, 2, 3, 149);
  const auto [e1, g1] = elbo_gradient(p.model, p.params, p.coreset, p.q, 5, 99);
  const auto [e2, g2] = elbo_gradient(p.model, p.params, p.coreset, p.q, 5, 99);
  CHECK(e1 == e2);
  const Vec f1 = flatten(g1), f2 = flatten(g2);
  for (Index i = 0; i < f1.size(); ++i) CHECK(f1(i) == f2(i));
}

TEST_CASE("scaled objective scales every gradient entry exactly") {
  Problem p = random_problem("logreg", 12, 4, 2, 2, 151);
  GradOptions unit;
  GradOptions scaled;
  scaled.objective_scale = 2.5;
  const auto [e1, g1] = elbo_gradient(p.model, p.params, p.coreset, p.q, 4, 13, unit);
  const auto [e2, g2] =
      elbo_gradient(p.model, p.params, p.coreset, p.q, 4, 13, scaled);
  CHECK(e2 == 2.5 * e1);
  const Vec f1 = flatten(g1), f2 = flatten(g2);
  for (Index i = 0; i < f1.size(); ++i) CHECK(f2(i) == 2.5 * f1(i));
}

TEST_CASE("paper synthetic config: weight gradient has coreset length") {
  Dataset data = make_synthetic_gaussian(10000, 10, 100.0, 7);
  auto model = make_gaussian_location(data, 100.0);
  Coreset cs = select_coreset(10000, 30, 8);
  FlowParams params;
  params.log_weights = cs.weights.array().log();
  params.log_step_sizes = Vec::Constant(10, std::log(0.01));
  params.leapfrogs_per_block = 2;
  params.refreshments.assign(2, MarginalRefresh{Vec::Zero(10), Vec::Zero(10)});
  ReferenceDistribution q{Vec::Zero(10), Vec::Ones(10)};
  const auto [elbo, grad] = elbo_gradient(model, params, cs, q, 30, 3);
  CHECK(std::isfinite(elbo));
  CHECK(grad.d_log_weights.size() == 30);
}
