#ifndef MTDBN_SERIALIZATION_HPP_
#define MTDBN_SERIALIZATION_HPP_

#include <iosfwd>
#include <string>

#include "mtdbn/deep_stack.hpp"

namespace mtdbn {

// Flat RBM block: magic "MTDBN1", unit-type tag byte, u64 N, u64 K, then
// row-major 64-bit little-endian W, a, b. The net container "MTDBN1-NET"
// wraps the ordered view manifest, the per-view and joint blocks, and the
// head parameters. All writes are deterministic: identical inputs produce
// byte-identical files.

void write_rbm(std::ostream& os, const RbmParams& params);
RbmParams read_rbm(std::istream& is);

void save_rbm(const std::string& path, const RbmParams& params);
RbmParams load_rbm(const std::string& path);

void save_net(const std::string& path, const DeepNet& net);
DeepNet load_net(const std::string& path);

/// One instance per row, values formatted with 17 significant digits so the
/// round trip is exact.
void write_matrix_csv(const std::string& path, const Matrix& m);
Matrix read_matrix_csv(const std::string& path);

}  // namespace mtdbn

#endif  // MTDBN_SERIALIZATION_HPP_
