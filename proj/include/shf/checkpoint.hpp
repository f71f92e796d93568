#ifndef SHF_CHECKPOINT_HPP
#define SHF_CHECKPOINT_HPP

#include <string>

#include "shf/baselines.hpp"
#include "shf/elbo.hpp"

namespace shf {

// Versioned serialization of a trained flow: parameters, coreset support,
// reference distribution, flow kind, and the config hash of the run that
// produced it.
struct Checkpoint {
  int version = 1;
  std::string flow_kind = "shf";  // "shf" | "tempered"
  FlowParams params;              // valid when flow_kind == "shf"
  TemperedParams tempered;        // valid when flow_kind == "tempered"
  Coreset coreset;
  ReferenceDistribution reference;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace shf

#endif
