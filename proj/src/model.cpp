#include "shf/model.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <unordered_set>

namespace shf {

void Coreset::validate(Index n_data) const {
  if (size() < 1) throw invalid_coreset("coreset must contain at least one index");
  if (weights.size() != size())
    throw invalid_coreset("coreset weights length does not match indices");
  std::unordered_set<Index> seen;
  for (Index i : indices) {
    if (i < 0 || i >= n_data)
      throw invalid_coreset("coreset index " + std::to_string(i) +
                            " out of range [0, " + std::to_string(n_data) + ")");
    if (!seen.insert(i).second)
      throw invalid_coreset("coreset indices must be distinct");
  }
  if ((weights.array() < 0).any())
    throw invalid_coreset("coreset weights must be nonnegative");
}

namespace {

// log1p(exp(x)) without overflow for |x| up to the full double range.
double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

TargetModel make_gaussian_location(const Dataset& data, double c) {
  data.validate();
  if (c <= 0) throw invalid_parameter("observation variance c must be positive");
  const Index d = data.n_features();
  auto x = std::make_shared<Mat>(data.features);

  TargetModel m;
  m.dim = d;
  m.n_data = data.n_rows();
  m.log_prior = [d](const Vec& theta) {
    return -0.5 * d * kLogTwoPi - 0.5 * theta.squaredNorm();
  };
  m.grad_log_prior = [](const Vec& theta) { return Vec(-theta); };
  m.hvp_log_prior = [](const Vec&, const Vec& v) { return Vec(-v); };
  m.potential = [x, c, d](Index n, const Vec& theta) {
    const double r2 = (x->row(n).transpose() - theta).squaredNorm();
    return -0.5 * d * (kLogTwoPi + std::log(c)) - r2 / (2.0 * c);
  };
  m.grad_potential = [x, c](Index n, const Vec& theta) {
    return Vec((x->row(n).transpose() - theta) / c);
  };
  m.hvp_potential = [c](Index, const Vec&, const Vec& v) { return Vec(-v / c); };
  return m;
}

TargetModel make_linreg(const Dataset& data) {
  data.validate();
  const Index p = data.n_features();
  const Index d = p + 2;  // [beta_0..beta_p, log sigma^2]
  auto x = std::make_shared<Mat>(data.features);
  auto y = std::make_shared<Vec>(data.response);

  // a_n^T beta with intercept prepended at evaluation time.
  auto linear_term = [x, p](Index n, const Vec& theta) {
    double mu = theta(0);
    for (Index j = 0; j < p; ++j) mu += theta(j + 1) * (*x)(n, j);
    return mu;
  };

  TargetModel m;
  m.dim = d;
  m.n_data = data.n_rows();
  m.log_prior = [d](const Vec& theta) {
    return -0.5 * d * kLogTwoPi - 0.5 * theta.squaredNorm();
  };
  m.grad_log_prior = [](const Vec& theta) { return Vec(-theta); };
  m.hvp_log_prior = [](const Vec&, const Vec& v) { return Vec(-v); };
  m.potential = [linear_term, y, d](Index n, const Vec& theta) {
    const double log_s2 = theta(d - 1);
    const double r = (*y)(n) - linear_term(n, theta);
    return -0.5 * kLogTwoPi - 0.5 * log_s2 - 0.5 * r * r * std::exp(-log_s2);
  };
  m.grad_potential = [x, y, p, d, linear_term](Index n, const Vec& theta) {
    const double inv_s2 = std::exp(-theta(d - 1));
    const double r = (*y)(n) - linear_term(n, theta);
    Vec g(d);
    g(0) = r * inv_s2;
    for (Index j = 0; j < p; ++j) g(j + 1) = (*x)(n, j) * r * inv_s2;
    g(d - 1) = -0.5 + 0.5 * r * r * inv_s2;
    return g;
  };
  m.hvp_potential = [x, y, p, d, linear_term](Index n, const Vec& theta,
                                              const Vec& v) {
    const double inv_s2 = std::exp(-theta(d - 1));
    const double r = (*y)(n) - linear_term(n, theta);
    // a^T v_beta with a = [1, x_n]
    double av = v(0);
    for (Index j = 0; j < p; ++j) av += v(j + 1) * (*x)(n, j);
    const double vs = v(d - 1);
    Vec h(d);
    const double beta_coeff = -(av + r * vs) * inv_s2;
    h(0) = beta_coeff;
    for (Index j = 0; j < p; ++j) h(j + 1) = (*x)(n, j) * beta_coeff;
    h(d - 1) = -r * av * inv_s2 - 0.5 * r * r * inv_s2 * vs;
    return h;
  };
  return m;
}

TargetModel make_logreg(const Dataset& data) {
  data.validate();
  for (Index i = 0; i < data.n_rows(); ++i) {
    const double yi = data.response(i);
    if (yi != 0.0 && yi != 1.0)
      throw invalid_data("logistic labels must be 0 or 1 (row " +
                         std::to_string(i) + ")");
  }
  const Index p = data.n_features();
  const Index d = p + 1;
  auto x = std::make_shared<Mat>(data.features);
  auto y = std::make_shared<Vec>(data.response);

  auto logit = [x, p](Index n, const Vec& beta) {
    double z = beta(0);
    for (Index j = 0; j < p; ++j) z += beta(j + 1) * (*x)(n, j);
    return z;
  };

  TargetModel m;
  m.dim = d;
  m.n_data = data.n_rows();
  m.log_prior = [d](const Vec& beta) {
    double lp = 0.0;
    for (Index j = 0; j < d; ++j)
      lp += -std::log(M_PI) - std::log1p(beta(j) * beta(j));
    return lp;
  };
  m.grad_log_prior = [d](const Vec& beta) {
    Vec g(d);
    for (Index j = 0; j < d; ++j) g(j) = -2.0 * beta(j) / (1.0 + beta(j) * beta(j));
    return g;
  };
  m.hvp_log_prior = [d](const Vec& beta, const Vec& v) {
    Vec h(d);
    for (Index j = 0; j < d; ++j) {
      const double b2 = beta(j) * beta(j);
      const double one_p = 1.0 + b2;
      h(j) = (2.0 * b2 - 2.0) / (one_p * one_p) * v(j);
    }
    return h;
  };
  m.potential = [logit, y](Index n, const Vec& beta) {
    const double z = logit(n, beta);
    // y log s + (1-y) log(1-s), stable for |z| up to ~1e308
    return -(*y)(n)*softplus(-z) - (1.0 - (*y)(n)) * softplus(z);
  };
  m.grad_potential = [x, y, p, d, logit](Index n, const Vec& beta) {
    const double s = sigmoid(logit(n, beta));
    const double coeff = (*y)(n)-s;
    Vec g(d);
    g(0) = coeff;
    for (Index j = 0; j < p; ++j) g(j + 1) = (*x)(n, j) * coeff;
    return g;
  };
  m.hvp_potential = [x, p, d, logit](Index n, const Vec& beta, const Vec& v) {
    const double s = sigmoid(logit(n, beta));
    double av = v(0);
    for (Index j = 0; j < p; ++j) av += v(j + 1) * (*x)(n, j);
    const double coeff = -s * (1.0 - s) * av;
    Vec h(d);
    h(0) = coeff;
    for (Index j = 0; j < p; ++j) h(j + 1) = (*x)(n, j) * coeff;
    return h;
  };
  return m;
}

double coreset_log_potential(const TargetModel& model, const Coreset& coreset,
                             const Vec& weights, const Vec& theta) {
  coreset.validate(model.n_data);
  double lp = model.log_prior(theta);
  for (Index m = 0; m < coreset.size(); ++m)
    lp += weights(m) * model.potential(coreset.indices[m], theta);
  return lp;
}

Vec coreset_grad_log_potential(const TargetModel& model, const Coreset& coreset,
                               const Vec& weights, const Vec& theta) {
  Vec g = model.grad_log_prior(theta);
  for (Index m = 0; m < coreset.size(); ++m)
    g += weights(m) * model.grad_potential(coreset.indices[m], theta);
  return g;
}

Vec coreset_hvp_log_potential(const TargetModel& model, const Coreset& coreset,
                              const Vec& weights, const Vec& theta, const Vec& v) {
  Vec h = model.hvp_log_prior(theta, v);
  for (Index m = 0; m < coreset.size(); ++m)
    h += weights(m) * model.hvp_potential(coreset.indices[m], theta, v);
  return h;
}

double coreset_log_potential(const TargetModel& model, const Coreset& coreset,
                             const Vec& theta) {
  return coreset_log_potential(model, coreset, coreset.weights, theta);
}

Vec coreset_grad_log_potential(const TargetModel& model, const Coreset& coreset,
                               const Vec& theta) {
  coreset.validate(model.n_data);
  return coreset_grad_log_potential(model, coreset, coreset.weights, theta);
}

Vec coreset_hvp_log_potential(const TargetModel& model, const Coreset& coreset,
                              const Vec& theta, const Vec& v) {
  coreset.validate(model.n_data);
  return coreset_hvp_log_potential(model, coreset, coreset.weights, theta, v);
}

namespace {

std::vector<Index> sample_without_replacement(std::vector<Index> pool, Index m,
                                              std::mt19937_64& rng) {
  // partial Fisher-Yates
  for (Index i = 0; i < m; ++i) {
    std::uniform_int_distribution<Index> pick(i, static_cast<Index>(pool.size()) - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(m);
  return pool;
}

}  // namespace

Coreset select_coreset(Index n_data, Index m, std::uint64_t seed,
                       const Dataset* balance_labels) {
  if (m < 1 || m > n_data)
    throw invalid_parameter("coreset size must satisfy 1 <= M <= N");
  std::mt19937_64 rng(seed);
  Coreset cs;

  if (balance_labels == nullptr) {
    std::vector<Index> pool(n_data);
    std::iota(pool.begin(), pool.end(), Index{0});
    cs.indices = sample_without_replacement(std::move(pool), m, rng);
  } else {
    if (balance_labels->n_rows() != n_data)
      throw invalid_parameter("balance dataset rows do not match n_data");
    std::vector<Index> ones, zeros;
    for (Index i = 0; i < n_data; ++i)
      (balance_labels->response(i) == 1.0 ? ones : zeros).push_back(i);
    const Index m1 = (m + 1) / 2;  // ceil(M/2) from label 1
    const Index m0 = m - m1;
    if (static_cast<Index>(ones.size()) < m1 ||
        static_cast<Index>(zeros.size()) < m0)
      throw balance_infeasible("not enough members in a class to balance");
    auto pick1 = sample_without_replacement(std::move(ones), m1, rng);
    auto pick0 = sample_without_replacement(std::move(zeros), m0, rng);
    cs.indices = pick1;
    cs.indices.insert(cs.indices.end(), pick0.begin(), pick0.end());
  }

  cs.weights = Vec::Constant(m, static_cast<double>(n_data) / m);
  return cs;
}

}  // namespace shf
