#ifndef MTDBN_TASK_HEADS_HPP_
#define MTDBN_TASK_HEADS_HPP_

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mtdbn/common.hpp"

namespace mtdbn {

enum class HeadKind {
  kRegression,
  kLogistic,
  kPoisson,
  kMulticlass,
  kRanking,
  kMultilabel,
};

const char* head_kind_name(HeadKind kind);
HeadKind head_kind_from_name(std::string_view name);
bool is_structured(HeadKind kind);

/// One typed output task on top of the shared feature layer: an affine map
/// (V, bias) over the top features plus kind-specific loss/prediction rules.
/// Unstructured kinds have a single output row; structured kinds one row per
/// label. Multilabel heads additionally carry a calibrated probability
/// threshold once calibrate_threshold has run.
struct TaskHead {
  HeadKind kind = HeadKind::kRegression;
  std::string name;
  std::vector<std::string> label_names;  // structured kinds only
  Matrix V;     // outputs x features
  Vector bias;  // outputs
  double task_weight = 1.0;
  std::optional<double> threshold;  // multilabel only, set by calibration

  int output_dim() const { return static_cast<int>(V.rows()); }
  int feature_dim() const { return static_cast<int>(V.cols()); }
  int num_labels() const { return static_cast<int>(label_names.size()); }

  /// Zero-initialized head; validates the kind/label-count pairing.
  static TaskHead make(HeadKind kind, std::string name, int feature_dim,
                       std::vector<std::string> labels = {},
                       double task_weight = 1.0);
  void check_consistent() const;
};

/// Kind-tagged supervision payload for one instance and one head.
struct TaskTarget {
  HeadKind kind = HeadKind::kRegression;
  double value = 0.0;       // regression y / logistic sign / poisson count
  int class_index = -1;     // multiclass
  std::vector<int> labels;  // ranking (ordered) or multilabel (set)

  static TaskTarget regression(double y);
  static TaskTarget logistic(int sign);  // +1 or -1
  static TaskTarget poisson(long count);
  static TaskTarget multiclass(int index);
  static TaskTarget ranking(std::vector<int> ordered);
  static TaskTarget multilabel(std::vector<int> label_set);
};

/// Affine scores bias + V f; one entry per output row.
Vector head_score(const TaskHead& head, const Vector& f);

double loss_regression(double y, double g);
/// y in {-1,+1}; overflow-safe log(1 + exp(-y g)).
double loss_logistic(double y, double g);
/// Trainable part -y g + e^g of the Poisson negative log-likelihood.
double loss_poisson_trainable(double y, double g);
/// Full value including log(y!).
double loss_poisson_full(double y, double g);

/// Sequential candidate sets (label, pool) for the structured losses:
/// multiclass emits one pair over all labels; ranking shrinks the pool by
/// the previously ranked label (Plackett-Luce, partial lists stop early);
/// multilabel emits one pair per target label over the full label set.
std::vector<std::pair<int, std::vector<int>>> candidate_sets(
    HeadKind kind, const TaskTarget& target, int num_labels);

/// Softmax of the head's scores restricted to `candidates`, evaluated at
/// `label`; log-sum-exp stabilized.
double structured_prob(const TaskHead& head, const Vector& f, int label,
                       const std::vector<int>& candidates);
double structured_prob_from_scores(const Vector& scores, int label,
                                   const std::vector<int>& candidates);

/// Sum of -log structured_prob over the target's candidate sets.
double loss_structured(const TaskHead& head, const Vector& f,
                       const TaskTarget& target);

/// Kind dispatch used by the fine-tuning objective.
double head_loss_from_scores(const TaskHead& head, const Vector& scores,
                             const TaskTarget& target);
double head_loss(const TaskHead& head, const Vector& f,
                 const TaskTarget& target);

/// dLoss/dscores for every head kind (the structured kinds accumulate
/// softmax-minus-indicator terms over their candidate sets).
Vector head_loss_score_grad(const TaskHead& head, const Vector& scores,
                            const TaskTarget& target);

/// Full-label-set softmax probabilities used by multilabel prediction and
/// threshold calibration.
Vector multilabel_probs(const TaskHead& head, const Vector& f);

/// Grid search for the probability threshold maximizing macro-averaged
/// label-wise F1 on a calibration set. The grid is every distinct observed
/// probability plus consecutive midpoints; ties break toward the larger
/// threshold. probs is instances x labels; truth holds per-instance label
/// sets. Throws DataError when no positive labels exist.
double calibrate_threshold_probs(const Matrix& probs,
                                 const std::vector<std::vector<int>>& truth,
                                 int num_labels);

/// Computes probabilities for the calibration set, runs the grid search and
/// stores the result on the head. Returns the chosen threshold.
double calibrate_threshold(TaskHead& head, const Matrix& features,
                           const std::vector<TaskTarget>& targets);

/// Kind-matched prediction payload.
struct Prediction {
  HeadKind kind = HeadKind::kRegression;
  double value = 0.0;       // regression g; logistic/poisson raw score g
  double rate = 0.0;        // poisson e^g
  double probability = 0.0; // logistic sigmoid(g)
  int sign = 0;             // logistic
  int class_index = -1;     // multiclass
  std::vector<int> labels;  // ranking order / multilabel set
};

/// Deterministic prediction: argmax (multiclass), descending-score order with
/// declaration-order tie-break (ranking), calibrated thresholding
/// (multilabel; throws if the threshold is unset).
Prediction predict(const TaskHead& head, const Vector& f);

}  // namespace mtdbn

#endif  // MTDBN_TASK_HEADS_HPP_
