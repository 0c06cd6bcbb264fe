#ifndef MTDBN_FINETUNE_HPP_
#define MTDBN_FINETUNE_HPP_

#include <optional>
#include <string>
#include <vector>

#include "mtdbn/deep_stack.hpp"

namespace mtdbn {

struct FinetuneConfig {
  enum class Optimizer { kSgd, kCg };

  Optimizer optimizer = Optimizer::kSgd;
  double learning_rate = 0.1;
  double momentum = 0.9;
  int minibatch_size = 100;
  int epochs = 1;          // cg: iteration count
  int cg_restart = 20;     // steepest-descent restart interval
  std::uint64_t rng_seed = 0;

  void validate() const;
};

/// Targets for one instance, aligned with net.heads; heads without
/// supervision for the instance hold nullopt and contribute no loss.
using InstanceTargets = std::vector<std::optional<TaskTarget>>;

/// Partial derivatives for every parameter group, shaped like the owning
/// net. Visible biases are carried for shape parity but stay zero: they do
/// not enter the feedforward map.
struct GradientBundle {
  std::vector<Matrix> view_W;
  std::vector<Vector> view_b;
  std::vector<Vector> view_a;
  Matrix joint_W;
  Vector joint_b;
  std::vector<Matrix> head_V;
  std::vector<Vector> head_bias;

  static GradientBundle zeros_like(const DeepNet& net);
  void add(const GradientBundle& other);
  void scale(double factor);
  bool all_finite() const;
};

/// Weighted sum of head losses for the instance; absent targets contribute 0.
double total_loss(const DeepNet& net, const std::vector<Vector>& instance_views,
                  const InstanceTargets& targets);

/// Mean of total_loss over a row-aligned corpus, optionally per head.
double dataset_loss(const DeepNet& net, const std::vector<Matrix>& view_data,
                    const std::vector<InstanceTargets>& targets,
                    std::vector<double>* per_head = nullptr);

/// Exact analytic gradient of total_loss through the double-sigmoid
/// feedforward composition and every head loss.
GradientBundle backward(const DeepNet& net,
                        const std::vector<Vector>& instance_views,
                        const InstanceTargets& targets);

struct GradCheckGroup {
  std::string name;
  double max_rel_error = 0.0;
  bool ok = true;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double worst = 0.0;
  bool all_ok = true;
};

/// Central-difference comparison of backward() per parameter group;
/// relative error |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport gradient_check(const DeepNet& net,
                               const std::vector<Vector>& instance_views,
                               const InstanceTargets& targets,
                               double epsilon = 1e-6, double tolerance = 1e-6);

struct FinetuneResult {
  DeepNet net;
  /// Mean dataset loss before training, then after each epoch/iteration.
  std::vector<double> loss_trace;
  std::vector<std::vector<double>> per_head_trace;
};

/// Discriminative training of all parameters (view weights and hidden
/// biases, joint layer, heads) against the weighted multitask objective.
/// sgd: seeded-shuffle minibatch descent with momentum. cg: full-batch
/// Polak-Ribiere conjugate gradient with periodic restarts and a
/// backtracking line search. Both are deterministic under the seed.
FinetuneResult finetune(DeepNet net, const std::vector<Matrix>& view_data,
                        const std::vector<InstanceTargets>& targets,
                        const FinetuneConfig& cfg);

}  // namespace mtdbn

#endif  // MTDBN_FINETUNE_HPP_
