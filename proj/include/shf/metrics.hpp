#ifndef SHF_METRICS_HPP
#define SHF_METRICS_HPP

#include <functional>

#include "shf/common.hpp"

namespace shf {

struct GaussianSummary {
  Vec mean;
  Mat covariance;
  Index dim() const { return mean.size(); }
  void validate() const;
};

// KL(a || b) for Gaussians; b must be positive definite.
double gaussian_kl(const GaussianSummary& a, const GaussianSummary& b);

// (relative 2-norm mean error, relative Frobenius covariance error)
std::pair<double, double> relative_errors(const GaussianSummary& approx,
                                          const GaussianSummary& truth);

// V-statistic energy distance between sample sets (rows are samples).
double energy_distance(const Mat& x, const Mat& y);

// IMQ-kernel kernel Stein discrepancy, V-statistic square root.
// score(theta) must be the target's grad log density.
double ksd_imq(const Mat& x, const std::function<Vec(const Vec&)>& score,
               double beta = -0.5, double c = 1.0);

// Stein kernel value k0(x, y); exposed for the finite-difference
// certification of the analytic derivatives.
double ksd_imq_stein_kernel(const Vec& x, const Vec& y, const Vec& score_x,
                            const Vec& score_y, double beta = -0.5,
                            double c = 1.0);

// Moment-matched Gaussian: sample mean and 1/(n-1) covariance, symmetrized.
GaussianSummary sample_summary(const Mat& x);

}  // namespace shf

#endif
