#include "shf/metrics.hpp"

#include <Eigen/Cholesky>
#include <cmath>

namespace shf {

void GaussianSummary::validate() const {
  if (covariance.rows() != dim() || covariance.cols() != dim())
    throw invalid_parameter("covariance shape does not match mean");
  if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw invalid_parameter("covariance is not symmetric");
}

namespace {

double chol_log_det(const Eigen::LLT<Mat>& llt) {
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

}  // namespace

double gaussian_kl(const GaussianSummary& a, const GaussianSummary& b) {
  a.validate();
  b.validate();
  if (a.dim() != b.dim()) throw invalid_parameter("dimension mismatch");
  const Index d = a.dim();
  Eigen::LLT<Mat> llt_b(b.covariance);
  if (llt_b.info() != Eigen::Success)
    throw decomposition_error("second covariance is not positive definite");
  Eigen::LLT<Mat> llt_a(a.covariance);
  if (llt_a.info() != Eigen::Success)
    throw decomposition_error("first covariance is not positive definite");

  const Vec diff = b.mean - a.mean;
  const double log_det_ratio = chol_log_det(llt_b) - chol_log_det(llt_a);
  const double trace_term = llt_b.solve(a.covariance).trace();
  const double maha = diff.dot(llt_b.solve(diff));
  return 0.5 * (log_det_ratio - d + trace_term + maha);
}

std::pair<double, double> relative_errors(const GaussianSummary& approx,
                                          const GaussianSummary& truth) {
  approx.validate();
  truth.validate();
  const double mean_norm = truth.mean.norm();
  const double cov_norm = truth.covariance.norm();
  if (mean_norm == 0.0 || cov_norm == 0.0)
    throw invalid_parameter("reference summary has zero norm");
  return {(approx.mean - truth.mean).norm() / mean_norm,
          (approx.covariance - truth.covariance).norm() / cov_norm};
}

double energy_distance(const Mat& x, const Mat& y) {
  if (x.rows() < 1 || y.rows() < 1)
    throw invalid_parameter("energy distance needs nonempty samples");
  if (x.cols() != y.cols()) throw invalid_parameter("dimension mismatch");
  auto mean_pair_dist = [](const Mat& a, const Mat& b) {
    double sum = 0.0;
    for (Index i = 0; i < a.rows(); ++i)
      for (Index j = 0; j < b.rows(); ++j)
        sum += (a.row(i) - b.row(j)).norm();
    return sum / (static_cast<double>(a.rows()) * b.rows());
  };
  return 2.0 * mean_pair_dist(x, y) - mean_pair_dist(x, x) - mean_pair_dist(y, y);
}

double ksd_imq_stein_kernel(const Vec& x, const Vec& y, const Vec& score_x,
                            const Vec& score_y, double beta, double c) {
  const Index d = x.size();
  const Vec diff = x - y;
  const double u = diff.squaredNorm();
  const double base = c * c + u;
  const double k = std::pow(base, beta);
  const double phi1 = beta * std::pow(base, beta - 1.0);
  const double phi2 = beta * (beta - 1.0) * std::pow(base, beta - 2.0);
  const double trace_term = -4.0 * phi2 * u - 2.0 * d * phi1;
  const double sx_term = -2.0 * phi1 * score_x.dot(diff);
  const double sy_term = 2.0 * phi1 * score_y.dot(diff);
  return trace_term + sx_term + sy_term + k * score_x.dot(score_y);
}

double ksd_imq(const Mat& x, const std::function<Vec(const Vec&)>& score,
               double beta, double c) {
  const Index n = x.rows();
  if (n < 2) throw invalid_parameter("KSD requires at least two samples");
  std::vector<Vec> scores(n);
  for (Index i = 0; i < n; ++i) scores[i] = score(x.row(i).transpose());
  double sum = 0.0;
  for (Index i = 0; i < n; ++i) {
    sum += ksd_imq_stein_kernel(x.row(i).transpose(), x.row(i).transpose(),
                                scores[i], scores[i], beta, c);
    for (Index j = i + 1; j < n; ++j)
      sum += 2.0 * ksd_imq_stein_kernel(x.row(i).transpose(),
                                        x.row(j).transpose(), scores[i],
                                        scores[j], beta, c);
  }
  return std::sqrt(std::max(0.0, sum) / (static_cast<double>(n) * n));
}

GaussianSummary sample_summary(const Mat& x) {
  if (x.rows() < 2)
    throw invalid_parameter("sample summary requires at least two samples");
  GaussianSummary s;
  s.mean = x.colwise().mean().transpose();
  const Mat centered = x.rowwise() - s.mean.transpose();
  s.covariance = centered.transpose() * centered / (x.rows() - 1.0);
  s.covariance = 0.5 * (s.covariance + s.covariance.transpose()).eval();
  return s;
}

}  // namespace shf
