#include "shf/theory.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace shf {

GaussianPosteriorPair exact_gaussian_posteriors(const Mat& points, double c,
                                                const std::vector<Index>& indices,
                                                const Vec& weights) {
  if (c <= 0) throw invalid_parameter("c must be positive");
  if (static_cast<Index>(indices.size()) != weights.size())
    throw invalid_parameter("indices/weights length mismatch");
  const Index n = points.rows();
  const Index d = points.cols();
  for (Index i : indices)
    if (i < 0 || i >= n) throw invalid_coreset("coreset index out of range");

  GaussianPosteriorPair out;
  const double exact_prec = 1.0 + n / c;
  out.exact.covariance = Mat::Identity(d, d) / exact_prec;
  out.exact.mean = d > 0 ? Vec(points.colwise().sum().transpose() / (c + n))
                         : Vec::Zero(0);

  const double w_sum = weights.size() > 0 ? weights.sum() : 0.0;
  const double coreset_prec = 1.0 + w_sum / c;
  Vec weighted_sum = Vec::Zero(d);
  for (std::size_t k = 0; k < indices.size(); ++k)
    weighted_sum += weights(static_cast<Index>(k)) *
                    points.row(indices[k]).transpose();
  out.coreset.covariance = Mat::Identity(d, d) / coreset_prec;
  out.coreset.mean = weighted_sum / (c + w_sum);
  return out;
}

double gaussian_location_log_evidence(const Mat& points, double c) {
  if (c <= 0) throw invalid_parameter("c must be positive");
  const Index n = points.rows();
  const Index d = points.cols();
  const double a = 1.0 + n / c;
  double log_z = 0.0;
  for (Index j = 0; j < d; ++j) {
    const double sx = points.col(j).sum();
    const double sx2 = points.col(j).squaredNorm();
    log_z += -0.5 * n * (kLogTwoPi + std::log(c)) - 0.5 * std::log(a) -
             sx2 / (2.0 * c) + sx * sx / (2.0 * c * c * a);
  }
  return log_z;
}

namespace {

// Euclidean projection onto the probability simplex (sort-based).
Vec project_simplex(Vec v) {
  const Index n = v.size();
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, tau = 0.0;
  Index rho = 0;
  for (Index i = 0; i < n; ++i) {
    css += u[i];
    const double t = (css - 1.0) / (i + 1);
    if (u[i] - t > 0) {
      rho = i;
      tau = t;
    }
  }
  (void)rho;
  for (Index i = 0; i < n; ++i) v(i) = std::max(0.0, v(i) - tau);
  return v;
}

}  // namespace

OptimalCoresetResult optimal_coreset_kl(const Mat& points, double c,
                                        const std::vector<Index>& indices) {
  if (indices.empty()) throw invalid_parameter("coreset indices must be nonempty");
  const Index n = points.rows();
  const Index d = points.cols();
  const Index m = static_cast<Index>(indices.size());

  Mat p(d, m);
  for (Index k = 0; k < m; ++k) p.col(k) = points.row(indices[k]).transpose();
  const Vec xbar = n > 0 ? Vec(points.colwise().mean().transpose()) : Vec::Zero(d);

  // min_{v in simplex} || xbar - P v ||^2, projected gradient with step 1/Lip
  Vec v = Vec::Constant(m, 1.0 / m);
  const Mat gram = p.transpose() * p;
  Eigen::SelfAdjointEigenSolver<Mat> es(gram);
  const double lip = 2.0 * std::max(es.eigenvalues().maxCoeff(), 1e-12);
  const Vec ptx = p.transpose() * xbar;
  double prev_obj = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 20000; ++it) {
    const Vec grad = 2.0 * (gram * v - ptx);
    v = project_simplex(v - grad / lip);
    const double obj = (xbar - p * v).squaredNorm();
    if (std::abs(prev_obj - obj) < 1e-16 * (1.0 + obj) && it > 32) break;
    prev_obj = obj;
  }

  OptimalCoresetResult res;
  res.weights = static_cast<double>(n) * v;
  res.hull_gap = (xbar - p * v).norm();
  const auto pair = exact_gaussian_posteriors(points, c, indices, res.weights);
  res.kl = gaussian_kl(pair.coreset, pair.exact);
  return res;
}

bool hull_contains(const Mat& points, const Vec& target, double tol) {
  const Index m = points.rows();
  const Index d = points.cols();
  if (m < 1) return false;
  if (target.size() != d) throw invalid_parameter("target dimension mismatch");

  // Phase-1 simplex on: P^T v = target, 1^T v = 1, v >= 0, with d+1
  // artificial variables; feasible iff the artificials can be driven to ~0.
  const Index rows = d + 1;
  const Index cols = m + rows;
  Mat a(rows, cols);
  Vec b(rows);
  for (Index r = 0; r < d; ++r) {
    for (Index j = 0; j < m; ++j) a(r, j) = points(j, r);
    b(r) = target(r);
  }
  for (Index j = 0; j < m; ++j) a(d, j) = 1.0;
  b(d) = 1.0;
  a.rightCols(rows).setZero();

  const double scale = std::max(1.0, std::max(points.cwiseAbs().maxCoeff(),
                                              target.cwiseAbs().maxCoeff()));
  // flip rows so b >= 0, then identity basis on the artificials
  for (Index r = 0; r < rows; ++r) {
    if (b(r) < 0) {
      a.row(r) = -a.row(r);
      b(r) = -b(r);
    }
    a(r, m + r) = 1.0;
  }

  std::vector<Index> basis(rows);
  for (Index r = 0; r < rows; ++r) basis[r] = m + r;

  // reduced costs for minimizing the artificial sum: z_j - c_j with
  // c = [0...0, 1...1]; maintained implicitly through the dual multipliers.
  Vec y = Vec::Ones(rows);  // multipliers: c_B = 1 on artificial basis
  auto reduced_cost = [&](Index j) {
    const double cj = j < m ? 0.0 : 1.0;
    return cj - y.dot(a.col(j));
  };

  const int max_pivots = 2000 + 20 * static_cast<int>(m + rows);
  Mat binv = Mat::Identity(rows, rows);
  for (int pivot = 0; pivot < max_pivots; ++pivot) {
    // Bland's rule: smallest index with negative reduced cost
    Index enter = -1;
    for (Index j = 0; j < cols; ++j) {
      if (std::find(basis.begin(), basis.end(), j) != basis.end()) continue;
      if (reduced_cost(j) < -1e-12 * scale) {
        enter = j;
        break;
      }
    }
    if (enter < 0) break;

    const Vec dir = binv * a.col(enter);
    const Vec xb = binv * b;
    Index leave = -1;
    double best_ratio = std::numeric_limits<double>::infinity();
    for (Index r = 0; r < rows; ++r) {
      if (dir(r) > 1e-12) {
        const double ratio = xb(r) / dir(r);
        if (ratio < best_ratio - 1e-15 ||
            (std::abs(ratio - best_ratio) <= 1e-15 &&
             (leave < 0 || basis[r] < basis[leave]))) {
          best_ratio = ratio;
          leave = r;
        }
      }
    }
    if (leave < 0) break;  // unbounded: cannot happen for phase 1

    basis[leave] = enter;
    // refactor B^{-1} (dense, desk scale)
    Mat bmat(rows, rows);
    for (Index r = 0; r < rows; ++r) bmat.col(r) = a.col(basis[r]);
    binv = bmat.partialPivLu().inverse();
    Vec cb(rows);
    for (Index r = 0; r < rows; ++r) cb(r) = basis[r] < m ? 0.0 : 1.0;
    y = binv.transpose() * cb;
  }

  const Vec xb = binv * b;
  double artificial_sum = 0.0;
  for (Index r = 0; r < rows; ++r)
    if (basis[r] >= m) artificial_sum += std::max(0.0, xb(r));
  return artificial_sum <= tol * scale;
}

std::vector<ExactnessCurvePoint> subsample_exactness_curve(
    Index d, Index n, const std::vector<Index>& m_list, Index n_trials,
    std::uint64_t seed) {
  if (n < 1 || d < 1 || n_trials < 1)
    throw invalid_parameter("need positive d, N and trial count");
  std::vector<ExactnessCurvePoint> out;
  constexpr double z = 1.959963984540054;  // 95% Wilson
  for (std::size_t mi = 0; mi < m_list.size(); ++mi) {
    const Index m = m_list[mi];
    if (m < 1 || m > n) throw invalid_parameter("M must satisfy 1 <= M <= N");
    std::mt19937_64 rng(split_seed(seed, mi));
    std::normal_distribution<double> normal(0.0, 1.0);
    Index hits = 0;
    Mat data(n, d), sub(m, d);
    std::vector<Index> pool(n);
    for (Index t = 0; t < n_trials; ++t) {
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < d; ++j) data(i, j) = normal(rng);
      const Vec xbar = data.colwise().mean().transpose();
      std::iota(pool.begin(), pool.end(), Index{0});
      for (Index i = 0; i < m; ++i) {
        std::uniform_int_distribution<Index> pick(i, n - 1);
        std::swap(pool[i], pool[pick(rng)]);
        sub.row(i) = data.row(pool[i]);
      }
      if (hull_contains(sub, xbar)) ++hits;
    }
    const double phat = static_cast<double>(hits) / n_trials;
    const double nz = z * z / n_trials;
    const double center = (phat + nz / 2.0) / (1.0 + nz);
    const double half =
        z * std::sqrt(phat * (1.0 - phat) / n_trials + nz / (4.0 * n_trials)) /
        (1.0 + nz);
    out.push_back({m, phat, center - half, center + half, n_trials});
  }
  return out;
}

void TemperedDynamicsSpec::validate() const {
  if (sigma <= 0 || beta <= 0)
    throw invalid_parameter("sigma and beta must be positive");
}

Mat tempered_expm(double t, double g, double sigma) {
  // B = mu I + A with traceless A; A^2 = -det(A) I, so e^A is a
  // cosh/sinh-sinc (or cos/sin-sinc) combination. The series branch keeps the
  // map continuous through coincident eigenvalues (s2 -> 0).
  Mat b(2, 2);
  b << 0.0, t, -t / (sigma * sigma), g;
  const double mu = g / 2.0;
  Mat a = b - mu * Mat::Identity(2, 2);
  // det(A) = -(g/2)^2 + t^2/sigma^2; s2 = -det(A)
  const double s2_exact = g * g / 4.0 - t * t / (sigma * sigma);
  double cosh_term, sinc_term;
  if (std::abs(s2_exact) < 1e-8) {
    cosh_term = 1.0 + s2_exact / 2.0 + s2_exact * s2_exact / 24.0;
    sinc_term = 1.0 + s2_exact / 6.0 + s2_exact * s2_exact / 120.0;
  } else if (s2_exact > 0) {
    const double s = std::sqrt(s2_exact);
    cosh_term = std::cosh(s);
    sinc_term = std::sinh(s) / s;
  } else {
    const double w = std::sqrt(-s2_exact);
    cosh_term = std::cos(w);
    sinc_term = std::sin(w) / w;
  }
  return std::exp(mu) * (cosh_term * Mat::Identity(2, 2) + sinc_term * a);
}

double tempered_kl(const TemperedDynamicsSpec& spec, double t) {
  spec.validate();
  if (t < 0) throw invalid_parameter("time must be nonnegative");
  const double g = -spec.gamma * t;
  const Mat e = tempered_expm(t, g, spec.sigma);
  Vec m0(2);
  m0 << spec.mu0, 0.0;
  Mat s0 = Mat::Zero(2, 2);
  s0(0, 0) = 1.0;
  s0(1, 1) = spec.beta * spec.beta;
  const Vec m = e * m0;
  const Mat s = e * s0 * e.transpose();

  // KL(N(m, S) || N(0, diag(sigma^2, 1))); log det S = 2g + 2 log beta exactly
  const double sigma2 = spec.sigma * spec.sigma;
  const double log_det_b = std::log(sigma2);
  const double log_det_a = 2.0 * g + 2.0 * std::log(spec.beta);
  const double trace_term = s(0, 0) / sigma2 + s(1, 1);
  const double maha = m(0) * m(0) / sigma2 + m(1) * m(1);
  return 0.5 * (log_det_b - log_det_a - 2.0 + trace_term + maha);
}

TemperedGridResult tempered_kl_grid_search(double mu, double sigma, Index n_t,
                                           Index n_beta, Index n_gamma,
                                           double beta_lo, double beta_hi) {
  TemperedGridResult res;
  res.bound = tempered_kl_lower_bound(mu, sigma);
  res.min_kl = std::numeric_limits<double>::infinity();

  auto log_space = [](double lo, double hi, Index n) {
    std::vector<double> v(n);
    for (Index i = 0; i < n; ++i)
      v[i] = std::exp(std::log(lo) +
                      (std::log(hi) - std::log(lo)) * i / std::max<Index>(n - 1, 1));
    return v;
  };

  const auto ts = log_space(1e-3, 10.0, n_t);
  const auto betas = beta_lo == beta_hi ? std::vector<double>{beta_lo}
                                        : log_space(beta_lo, beta_hi, n_beta);
  // gammas: symmetric log-spaced magnitudes plus 0
  std::vector<double> gammas{0.0};
  const Index half = std::max<Index>((n_gamma - 1) / 2, 1);
  for (double gm : log_space(1e-2, 5.0, half)) {
    gammas.push_back(gm);
    gammas.push_back(-gm);
  }

  TemperedDynamicsSpec spec;
  spec.sigma = sigma;
  spec.mu0 = mu;
  for (double t : ts)
    for (double beta : betas)
      for (double gamma : gammas) {
        spec.beta = beta;
        spec.gamma = gamma;
        const double kl = tempered_kl(spec, t);
        ++res.n_points;
        if (kl < res.min_kl) {
          res.min_kl = kl;
          res.argmin_t = t;
          res.argmin_beta = beta;
          res.argmin_gamma = gamma;
        }
      }
  res.margin = res.min_kl - res.bound;
  return res;
}

namespace {

Mat sym_inv_sqrt(const Mat& a) {
  Eigen::SelfAdjointEigenSolver<Mat> es(a);
  if (es.info() != Eigen::Success || (es.eigenvalues().array() <= 0).any())
    throw decomposition_error("covariance is not positive definite");
  return es.eigenvectors() *
         es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
         es.eigenvectors().transpose();
}

}  // namespace

RefreshIdentityResult refresh_kl_identity_check(const JointGaussian& flow_state,
                                                const GaussianSummary& theta_target,
                                                RefreshCheckKind kind) {
  const Index d = flow_state.half_dim();
  if (flow_state.mean.size() != 2 * d || flow_state.cov.rows() != 2 * d)
    throw invalid_parameter("joint Gaussian must live on R^{2d}");
  theta_target.validate();
  if (theta_target.dim() != d) throw invalid_parameter("target dimension mismatch");

  // target: theta ~ theta_target, rho ~ N(0, I), independent
  GaussianSummary target;
  target.mean = Vec::Zero(2 * d);
  target.mean.head(d) = theta_target.mean;
  target.covariance = Mat::Zero(2 * d, 2 * d);
  target.covariance.topLeftCorner(d, d) = theta_target.covariance;
  target.covariance.bottomRightCorner(d, d) = Mat::Identity(d, d);

  GaussianSummary flow_joint{flow_state.mean, flow_state.cov};

  const Vec mu_theta = flow_state.mean.head(d);
  const Vec mu_rho = flow_state.mean.tail(d);
  const Mat s_tt = flow_state.cov.topLeftCorner(d, d);
  const Mat s_tr = flow_state.cov.topRightCorner(d, d);
  const Mat s_rr = flow_state.cov.bottomRightCorner(d, d);

  RefreshIdentityResult res;
  res.joint_kl = gaussian_kl(flow_joint, target);
  res.momentum_kl = gaussian_kl({mu_rho, s_rr}, {Vec::Zero(d), Mat::Identity(d, d)});
  res.theta_kl = gaussian_kl({mu_theta, s_tt}, theta_target);

  // affine map (theta, rho) -> (theta, R(rho)); build [I 0; C A] and offset
  Mat map = Mat::Zero(2 * d, 2 * d);
  map.topLeftCorner(d, d) = Mat::Identity(d, d);
  Vec offset = Vec::Zero(2 * d);

  if (kind == RefreshCheckKind::marginal) {
    const Mat a = sym_inv_sqrt(s_rr);  // standardizes the rho_t marginal
    map.bottomRightCorner(d, d) = a;
    offset.tail(d) = -a * mu_rho;
    res.rhs = res.joint_kl - res.momentum_kl;
  } else {
    Eigen::LLT<Mat> llt_tt(s_tt);
    if (llt_tt.info() != Eigen::Success)
      throw decomposition_error("Sigma_theta_theta is not positive definite");
    const Mat cross = llt_tt.solve(s_tr).transpose();  // S_tr^T S_tt^{-1}
    const Mat schur = s_rr - cross * s_tr;
    const Mat a = sym_inv_sqrt(schur);
    map.bottomRightCorner(d, d) = a;
    map.bottomLeftCorner(d, d) = -a * cross;
    offset.tail(d) = a * (cross * mu_theta - mu_rho);
    res.rhs = res.theta_kl;
  }

  GaussianSummary refreshed;
  refreshed.mean = map * flow_state.mean + offset;
  refreshed.covariance = map * flow_state.cov * map.transpose();
  refreshed.covariance =
      0.5 * (refreshed.covariance + refreshed.covariance.transpose()).eval();
  res.lhs = gaussian_kl(refreshed, target);
  return res;
}

}  // namespace shf
