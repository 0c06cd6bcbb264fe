#ifndef MTDBN_TYPED_RBM_HPP_
#define MTDBN_TYPED_RBM_HPP_

#include <cstdint>
#include <vector>

#include "mtdbn/common.hpp"

namespace mtdbn {

/// Parameters of one RBM layer: visible x hidden weights W, visible
/// biases a, hidden biases b, and the visible-unit family.
struct RbmParams {
  UnitType unit_type = UnitType::kBinary;
  Matrix W;  // N x K
  Vector a;  // N
  Vector b;  // K

  int visible_dim() const { return static_cast<int>(W.rows()); }
  int hidden_dim() const { return static_cast<int>(W.cols()); }

  bool all_finite() const {
    return W.allFinite() && a.allFinite() && b.allFinite();
  }
  /// Throws std::invalid_argument when dimensions disagree.
  void check_consistent() const;
};

/// Sparse contrastive-divergence settings. The sparsity target is one
/// scalar shared by all hidden units.
struct SparseCdConfig {
  double learning_rate = 0.1;
  double sparsity_target = 0.2;   // desired hidden activation probability
  double sparsity_weight = 0.0;   // regularization factor, >= 0
  int cd_steps = 1;
  int minibatch_size = 100;
  int epochs = 1;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

/// One minibatch (or a whole dataset) of visible configurations, rows are
/// instances. Count batches carry per-row document lengths M = sum_i v_i.
struct VisibleBatch {
  UnitType unit_type = UnitType::kBinary;
  Matrix data;       // B x N
  Vector doc_length; // B, count type only (empty otherwise)

  int rows() const { return static_cast<int>(data.rows()); }
  int cols() const { return static_cast<int>(data.cols()); }

  /// Validates the type domain (binary in {0,1}; count nonnegative integer)
  /// and, for counts, computes document lengths.
  static VisibleBatch make(UnitType type, Matrix data);

  /// Second-layer inputs: probabilities in [0,1] fed to a binary RBM in
  /// place of hard bits. Range-checked but not forced onto {0,1}.
  static VisibleBatch make_binary_probabilities(Matrix data);

  VisibleBatch slice_rows(const std::vector<int>& idx) const;
};

/// E(v, h) for the batch's unit family: the bilinear form with linear visible
/// term (binary), quadratic visible term (real), or log v! visible term (count).
double energy(const RbmParams& params, const Vector& v, const Vector& h);

/// P(h_k = 1 | v) = sigmoid(b_k + sum_i W_ik v_i); identical form for all
/// three visible families.
Vector hidden_posterior(const RbmParams& params, const Vector& v);

/// Row-wise hidden_posterior for a B x N matrix of instances.
Matrix hidden_posterior_batch(const RbmParams& params, const Matrix& v);

/// Type-specific generative mean given a hidden configuration:
///   binary: sigmoid(a_i + W h)       (activation probability)
///   real:   mu_i = a_i + W h
///   count:  lambda_i = M * exp(mu_i) / sum_j exp(mu_j), so sum_i lambda_i = M.
/// Count batches require the instance's document length M.
Vector visible_mean(const RbmParams& params, const Vector& h,
                    double doc_length = -1.0);

/// Bernoulli draw per component of p. Uniforms are consumed in index order.
Vector sample_bernoulli(const Vector& p, Rng& rng);

Vector sample_hidden(const RbmParams& params, const Vector& v, Rng& rng);

/// Draws a visible configuration: Bernoulli / Normal(mu, 1) / Poisson(lambda).
Vector sample_visible(const RbmParams& params, const Vector& h,
                      double doc_length, Rng& rng);

/// One sparse CD update averaged over the minibatch. The positive phase uses
/// data rows with their hidden posteriors; the negative phase samples binary
/// hidden states along a cd_steps Gibbs chain started at the data and pairs
/// them with the type-specific visible mean. The sparsity term pulls each
/// hidden unit's data posterior toward the target activation.
void cd_update_inplace(RbmParams& params, const VisibleBatch& batch,
                       const SparseCdConfig& cfg, Rng& rng);

/// Value-returning wrapper around cd_update_inplace.
RbmParams cd_update(const RbmParams& params, const VisibleBatch& batch,
                    const SparseCdConfig& cfg, Rng& rng);

/// Weights ~ Normal(0, 0.01^2) drawn row-major; biases zero.
RbmParams init_rbm(UnitType type, int visible, int hidden, std::uint64_t seed);

/// Mean per-instance reconstruction error of the deterministic
/// posterior -> mean round trip: cross-entropy (binary), half squared
/// error (real), or Poisson deviance without the log v! constant (count).
double reconstruction_error(const RbmParams& params, const VisibleBatch& batch);

struct RbmTrainResult {
  RbmParams params;
  /// reconstruction error before training, then after each epoch
  /// (length epochs + 1).
  std::vector<double> recon_trace;
};

/// Full CD training loop: seeded init, fixed-order minibatches, divergence
/// guard (any |W| > 1e6 or non-finite parameter aborts with epoch/batch).
RbmTrainResult train_rbm(const VisibleBatch& data, int hidden,
                         const SparseCdConfig& cfg);

}  // namespace mtdbn

#endif  // MTDBN_TYPED_RBM_HPP_
