#ifndef MTDBN_COMMON_HPP_
#define MTDBN_COMMON_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mtdbn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

inline constexpr const char* kVersionString = "mtdbn 1.0.0";

/// Visible-unit family of a feature block.
enum class UnitType { kBinary, kReal, kCount };

const char* unit_type_name(UnitType t);
UnitType unit_type_from_name(std::string_view name);

// Error taxonomy. Contract violations (bad dimensions, wrong unit type)
// throw std::invalid_argument; the classes below carry pipeline-level
// failures that the CLI maps onto distinct exit codes.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Logistic function, overflow-safe over the full double range.
inline double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + e^z) without overflow for large |z|.
inline double log1pexp(double z) {
  if (z > 0.0) {
    return z + std::log1p(std::exp(-z));
  }
  return std::log1p(std::exp(z));
}

/// Derives an independent stream seed from a base seed (splitmix64 mix),
/// so per-view / per-stage RNGs never share state.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// FNV-1a 64-bit, used to fingerprint configs in run metadata.
std::uint64_t fnv1a64(std::string_view bytes);

// Thread budget for embarrassingly parallel loops (disjoint writes only,
// so results are identical regardless of the setting).
void set_max_threads(int n);
int max_threads();

/// Runs fn(i) for i in [0, n). Parallel when max_threads() > 1; every
/// index writes only its own slots, so output does not depend on scheduling.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

}  // namespace mtdbn

#endif  // MTDBN_COMMON_HPP_
