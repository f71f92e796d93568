#ifndef SHF_CONFIG_HPP
#define SHF_CONFIG_HPP

#include <optional>
#include <string>

#include "shf/dataset.hpp"
#include "shf/train.hpp"

namespace shf {

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelSpec {
  std::string kind = "gaussian_location";  // gaussian_location | linreg | logreg
  double c = 1.0;                          // gaussian_location only
};

struct DataSpec {
  // exactly one of csv_path / synthetic
  std::string csv_path;
  CsvOptions csv;
  bool synthetic = false;
  Index n = 0;
  Index p = 0;  // latent data dimension (d for gaussian, p for regressions)
  std::uint64_t seed = 0;
};

struct CoresetSpec {
  Index size = 10;
  std::uint64_t seed = 0;
  bool balance = false;
};

struct FlowSpec {
  std::string kind = "shf";  // shf | tempered
  int n_blocks = 1;
  int leapfrogs_per_block = 1;
  double initial_step_size = 0.01;
  std::vector<std::pair<Index, double>> step_size_overrides;  // (dim, value)
  RefreshKind refreshment = RefreshKind::marginal;
};

struct ReferenceSpec {
  Vec position_mean;      // length 1 => broadcast
  Vec position_diag_cov;  // length 1 => broadcast
};

struct EvalSpec {
  std::vector<std::string> metrics = {"gaussian_kl", "mean_err", "cov_err",
                                      "energy", "ksd"};
  Index n_samples = 100;
  std::uint64_t seed = 0;
  std::string reference_summary;  // JSON file with mean/cov; optional
  Index step_trace_mc = 100;
};

struct RunConfig {
  ModelSpec model;
  DataSpec data;
  CoresetSpec coreset;
  FlowSpec flow;
  TrainConfig train;
  ReferenceSpec reference;
  EvalSpec eval;
  std::string output_dir = ".";
};

// Parses and schema-validates a config file; unknown keys are rejected.
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text);

// Canonical hash of the config's JSON serialization.
std::uint64_t config_hash(const std::string& json_text);

// Materializes dataset + model + reference from a config.
struct RunInputs {
  Dataset data;
  TargetModel model;
  ReferenceDistribution reference;
};
RunInputs build_inputs(const RunConfig& cfg);

// Assembles the TrainConfig with flow shape and per-dimension step sizes.
TrainConfig build_train_config(const RunConfig& cfg, Index dim);

}  // namespace shf

#endif
