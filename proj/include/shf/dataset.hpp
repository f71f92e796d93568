#ifndef SHF_DATASET_HPP
#define SHF_DATASET_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "shf/common.hpp"

namespace shf {

// Row-major observation table: features X (N x p) and a response vector.
// For classification the response entries must be 0/1.
struct Dataset {
  Mat features;   // N x p
  Vec response;   // length N
  Index n_rows() const { return features.rows(); }
  Index n_features() const { return features.cols(); }
  void validate() const;
};

struct CsvOptions {
  bool has_header = true;
  // Response column selected by name (requires header) or by 0-based index.
  std::string response_name = "y";
  int response_index = -1;  // used when response_name is empty
  bool standardize_features = false;  // z-score each feature column
};

Dataset read_csv(const std::string& path, const CsvOptions& opts);
void write_csv(const std::string& path, const Dataset& data, bool header);

// Synthetic generators used by the CLI and the test suites.
Dataset make_synthetic_gaussian(Index n, Index d, double c, std::uint64_t seed,
                                Vec* theta_star_out = nullptr);
Dataset make_synthetic_linreg(Index n, Index p, std::uint64_t seed,
                              Vec* beta_star_out = nullptr,
                              double* sigma2_star_out = nullptr);
Dataset make_synthetic_logreg(Index n, Index p, std::uint64_t seed,
                              Vec* beta_star_out = nullptr);

}  // namespace shf

#endif
