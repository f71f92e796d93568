#ifndef SHF_COMMON_HPP
#define SHF_COMMON_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace shf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

inline constexpr const char* kArtifactVersion = "0.1.0";

// Coordinate magnitude beyond which a flow pass is declared divergent.
inline constexpr double kDivergenceThreshold = 1e10;

inline constexpr double kLogTwoPi = 1.8378770664093454836;

struct invalid_parameter : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct invalid_data : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct invalid_coreset : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct balance_infeasible : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Raised when a flow pass produces non-finite or exploding state.
// Carries the block/step coordinates of the offending update.
struct divergence_error : std::runtime_error {
  int block = -1;
  int step = -1;
  divergence_error(const std::string& msg, int block_, int step_)
      : std::runtime_error(msg), block(block_), step(step_) {}
};

struct decomposition_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct convergence_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline bool all_finite(const Vec& v) { return v.allFinite(); }

// splitmix64: cheap seed derivation for independent deterministic streams.
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a, used for stable config hashes in manifests.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace shf

#endif
