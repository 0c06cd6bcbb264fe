#ifndef MTDBN_DEEP_STACK_HPP_
#define MTDBN_DEEP_STACK_HPP_

#include <string>
#include <vector>

#include "mtdbn/task_heads.hpp"
#include "mtdbn/typed_rbm.hpp"

namespace mtdbn {

/// Declaration of one typed feature block and its hidden width.
struct ViewSpec {
  std::string name;
  UnitType unit_type = UnitType::kBinary;
  int dim = 0;
  int hidden = 0;
};

/// The stacked network: one typed RBM per view at the bottom, a binary
/// joint RBM over the concatenated view posteriors, and the attached task
/// heads (empty until fine-tuning). View order is the declaration order and
/// fixes the concatenation offsets.
struct DeepNet {
  std::vector<ViewSpec> views;
  std::vector<RbmParams> view_params;
  RbmParams joint;
  std::vector<TaskHead> heads;

  int num_views() const { return static_cast<int>(views.size()); }
  int joint_input_dim() const;
  int top_dim() const { return joint.hidden_dim(); }
  void check_consistent() const;
};

struct PretrainViewsResult {
  std::vector<RbmParams> params;
  /// Per-view hidden posterior matrix for every training instance.
  std::vector<Matrix> posteriors;
  std::vector<std::vector<double>> recon_traces;
};

/// Trains one typed RBM per view independently. Batches must be row-aligned
/// (same instances in the same order) and match their specs.
PretrainViewsResult pretrain_views(const std::vector<ViewSpec>& specs,
                                   const std::vector<VisibleBatch>& views,
                                   const std::vector<SparseCdConfig>& cfgs);

struct PretrainJointResult {
  RbmParams params;
  std::vector<double> recon_trace;
};

/// Concatenates the per-view posterior matrices row-wise and trains the
/// binary joint RBM on them (probabilities fed directly as inputs).
PretrainJointResult pretrain_joint(const std::vector<Matrix>& posteriors,
                                   int hidden, const SparseCdConfig& cfg);

/// Deterministic feedforward map to the top layer:
/// f_k = sigmoid(b2_k + sum_s sum_m W2_smk sigmoid(b1_sm + sum_i W1_sim v_si)).
Vector forward(const DeepNet& net, const std::vector<Vector>& instance_views);

/// Row i of the result is forward() applied to instance i of the row-aligned
/// per-view matrices; preserves order.
Matrix embed_corpus(const DeepNet& net, const std::vector<Matrix>& view_data);

}  // namespace mtdbn

#endif  // MTDBN_DEEP_STACK_HPP_
