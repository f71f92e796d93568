#ifndef SHF_THEORY_HPP
#define SHF_THEORY_HPP

#include <cstdint>
#include <vector>

#include "shf/metrics.hpp"

namespace shf {

// Closed-form posteriors of the Gaussian location model with prior N(0, I)
// and observation covariance cI: the full-data posterior and the posterior
// under a weighted subsample.
struct GaussianPosteriorPair {
  GaussianSummary exact;
  GaussianSummary coreset;
};

// points: N x d data matrix (N may be 0, giving the prior), indices/weights
// describe the coreset support.
GaussianPosteriorPair exact_gaussian_posteriors(const Mat& points, double c,
                                                const std::vector<Index>& indices,
                                                const Vec& weights);

// Marginal likelihood log Z of the Gaussian location model.
double gaussian_location_log_evidence(const Mat& points, double c);

struct OptimalCoresetResult {
  double kl = 0.0;
  Vec weights;          // scaled to sum to N
  double hull_gap = 0.0;  // || Xbar - sum_m v_m x_m || at the optimum
};

// Minimizes || Xbar - sum_m v_m x_{i_m} ||^2 over the simplex (projected
// gradient on a convex quadratic) and reports the KL of the resulting
// coreset posterior.
OptimalCoresetResult optimal_coreset_kl(const Mat& points, double c,
                                        const std::vector<Index>& indices);

// Linear-feasibility decision: target in conv(points rows)? Solved with a
// phase-1 simplex method, independent of the projected-gradient route above.
bool hull_contains(const Mat& points, const Vec& target, double tol = 1e-9);

struct ExactnessCurvePoint {
  Index m = 0;
  double probability = 0.0;
  double wilson_low = 0.0;
  double wilson_high = 0.0;
  Index n_trials = 0;
};

// Monte-Carlo probability that the data mean lies in the convex hull of a
// uniform subsample of size M, for X_n iid N(0, I).
std::vector<ExactnessCurvePoint> subsample_exactness_curve(
    Index d, Index n, const std::vector<Index>& m_list, Index n_trials,
    std::uint64_t seed);

// 1-D tempered Hamiltonian dynamics in closed form.
struct TemperedDynamicsSpec {
  double sigma = 1.0;  // target std
  double mu0 = 0.0;    // initial position center
  double beta = 1.0;   // initial momentum scale
  double gamma = 0.0;  // constant tempering coefficient, g(t) = -gamma t
  void validate() const;
};

// exp of B(t) = [[0, t], [-t/sigma^2, g]]; robust across the degenerate
// coincident-eigenvalue case via the series limit.
Mat tempered_expm(double t, double g, double sigma);

// KL(q_t || pi-bar) with q_0 = N((mu, 0), diag(1, beta^2)),
// pi-bar = N(0, diag(sigma^2, 1)). Log-determinants are taken analytically
// (det e^B = e^g) so extreme grid corners stay finite.
double tempered_kl(const TemperedDynamicsSpec& spec, double t);

// Prop. 3.2 right-hand side.
inline double tempered_kl_lower_bound(double mu, double sigma) {
  return std::log((1.0 + mu * mu) / (4.0 * sigma));
}

struct TemperedGridResult {
  double min_kl = 0.0;
  double bound = 0.0;
  double margin = 0.0;  // min_kl - bound
  double argmin_t = 0.0, argmin_beta = 0.0, argmin_gamma = 0.0;
  Index n_points = 0;
};

// Grid search over (t, beta, constant gamma), log-spaced, >= n_t*n_beta*n_gamma
// points; returns the minimum KL and its margin above the stated lower bound.
// The beta range is configurable; beta_lo = beta_hi = 1 restricts to the
// unit-scale slice.
TemperedGridResult tempered_kl_grid_search(double mu, double sigma,
                                           Index n_t = 50, Index n_beta = 50,
                                           Index n_gamma = 50,
                                           double beta_lo = 0.1,
                                           double beta_hi = 10.0);

// Gaussian joint over (theta_t, rho_t) in R^{2d}.
struct JointGaussian {
  Vec mean;  // length 2d
  Mat cov;   // 2d x 2d
  Index half_dim() const { return mean.size() / 2; }
};

struct RefreshIdentityResult {
  double lhs = 0.0;          // KL((theta_t, R(rho_t)) || (theta, rho))
  double joint_kl = 0.0;     // KL((theta_t, rho_t) || (theta, rho))
  double momentum_kl = 0.0;  // KL(rho_t || rho)
  double theta_kl = 0.0;     // KL(theta_t || theta)
  double rhs = 0.0;          // joint_kl - momentum_kl (marginal), theta_kl (conditional)
};

enum class RefreshCheckKind { marginal, conditional };

// Closed-form Gaussian evaluation of the Prop. 3.1 / A.2 identities. The
// target is theta ~ theta_target independent of rho ~ N(0, I); the
// refreshment exactly standardizes the flow-state momentum (marginally or
// conditionally on theta).
RefreshIdentityResult refresh_kl_identity_check(const JointGaussian& flow_state,
                                                const GaussianSummary& theta_target,
                                                RefreshCheckKind kind);

}  // namespace shf

#endif
