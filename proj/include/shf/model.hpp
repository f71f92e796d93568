#ifndef SHF_MODEL_HPP
#define SHF_MODEL_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "shf/common.hpp"
#include "shf/dataset.hpp"

namespace shf {

// Differentiable potential bundle: prior log-density plus per-datum
// log-likelihood terms f_n and their derivatives. Hessian-vector products
// are needed by the reverse pass through the flow and are supplied in
// closed form by each factory.
struct TargetModel {
  Index dim = 0;
  Index n_data = 0;
  std::function<double(const Vec&)> log_prior;
  std::function<Vec(const Vec&)> grad_log_prior;
  std::function<Vec(const Vec&, const Vec&)> hvp_log_prior;  // (theta, v)
  std::function<double(Index, const Vec&)> potential;        // f_n(theta)
  std::function<Vec(Index, const Vec&)> grad_potential;
  std::function<Vec(Index, const Vec&, const Vec&)> hvp_potential;  // (n, theta, v)
};

// Nonzero support of a coreset: distinct data indices plus weights >= 0.
struct Coreset {
  std::vector<Index> indices;
  Vec weights;
  Index size() const { return static_cast<Index>(indices.size()); }
  void validate(Index n_data) const;
};

TargetModel make_gaussian_location(const Dataset& data, double c);
TargetModel make_linreg(const Dataset& data);
TargetModel make_logreg(const Dataset& data);

// log pi_0(theta) + sum_m w_m f_{i_m}(theta), unnormalized. O(M d).
double coreset_log_potential(const TargetModel& model, const Coreset& coreset,
                             const Vec& theta);
Vec coreset_grad_log_potential(const TargetModel& model, const Coreset& coreset,
                               const Vec& theta);
// Hessian-vector product of the coreset log-potential.
Vec coreset_hvp_log_potential(const TargetModel& model, const Coreset& coreset,
                              const Vec& theta, const Vec& v);

// Same operations against an externally supplied weight vector (the flow
// trains weights without mutating the Coreset it was built from).
double coreset_log_potential(const TargetModel& model, const Coreset& coreset,
                             const Vec& weights, const Vec& theta);
Vec coreset_grad_log_potential(const TargetModel& model, const Coreset& coreset,
                               const Vec& weights, const Vec& theta);
Vec coreset_hvp_log_potential(const TargetModel& model, const Coreset& coreset,
                              const Vec& weights, const Vec& theta, const Vec& v);

// Uniform subsample of M distinct indices, initial weights all N/M.
// When balance_labels is given (0/1 response), ceil(M/2) indices are drawn
// from label 1 and the rest from label 0.
Coreset select_coreset(Index n_data, Index m, std::uint64_t seed,
                       const Dataset* balance_labels = nullptr);

}  // namespace shf

#endif
