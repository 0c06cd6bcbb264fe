#include "mtdbn/task_heads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "mtdbn/eval_metrics.hpp"

namespace mtdbn {

const char* head_kind_name(HeadKind kind) {
  switch (kind) {
    case HeadKind::kRegression: return "regression";
    case HeadKind::kLogistic: return "logistic";
    case HeadKind::kPoisson: return "poisson";
    case HeadKind::kMulticlass: return "multiclass";
    case HeadKind::kRanking: return "ranking";
    case HeadKind::kMultilabel: return "multilabel";
  }
  return "?";
}

HeadKind head_kind_from_name(std::string_view name) {
  if (name == "regression") return HeadKind::kRegression;
  if (name == "logistic") return HeadKind::kLogistic;
  if (name == "poisson") return HeadKind::kPoisson;
  if (name == "multiclass") return HeadKind::kMulticlass;
  if (name == "ranking") return HeadKind::kRanking;
  if (name == "multilabel") return HeadKind::kMultilabel;
  throw ConfigError("unknown head kind: '" + std::string(name) + "'");
}

bool is_structured(HeadKind kind) {
  return kind == HeadKind::kMulticlass || kind == HeadKind::kRanking ||
         kind == HeadKind::kMultilabel;
}

TaskHead TaskHead::make(HeadKind kind, std::string name, int feature_dim,
                        std::vector<std::string> labels, double task_weight) {
  if (feature_dim < 1) {
    throw std::invalid_argument("head feature dimension must be positive");
  }
  TaskHead head;
  head.kind = kind;
  head.name = std::move(name);
  head.label_names = std::move(labels);
  head.task_weight = task_weight;
  const int rows = is_structured(kind) ? head.num_labels() : 1;
  head.V = Matrix::Zero(rows, feature_dim);
  head.bias = Vector::Zero(rows);
  head.check_consistent();
  return head;
}

void TaskHead::check_consistent() const {
  if (is_structured(kind)) {
    if (num_labels() < 2) {
      throw std::invalid_argument("structured head '" + name +
                                  "' needs at least 2 labels");
    }
    if (V.rows() != num_labels()) {
      throw std::invalid_argument("structured head '" + name +
                                  "' has V rows != label count");
    }
  } else {
    if (!label_names.empty() || V.rows() != 1) {
      throw std::invalid_argument("unstructured head '" + name +
                                  "' must have exactly one output row");
    }
  }
  if (bias.size() != V.rows()) {
    throw std::invalid_argument("head bias length != V rows");
  }
  if (!(task_weight >= 0.0)) {
    throw std::invalid_argument("head task weight must be >= 0");
  }
  if (threshold.has_value() && kind != HeadKind::kMultilabel) {
    throw std::invalid_argument("only multilabel heads carry a threshold");
  }
}

TaskTarget TaskTarget::regression(double y) {
  TaskTarget t;
  t.kind = HeadKind::kRegression;
  t.value = y;
  return t;
}

TaskTarget TaskTarget::logistic(int sign) {
  if (sign != 1 && sign != -1) {
    throw std::invalid_argument("logistic target must be +1 or -1");
  }
  TaskTarget t;
  t.kind = HeadKind::kLogistic;
  t.value = sign;
  return t;
}

TaskTarget TaskTarget::poisson(long count) {
  if (count < 0) throw std::invalid_argument("poisson target must be >= 0");
  TaskTarget t;
  t.kind = HeadKind::kPoisson;
  t.value = static_cast<double>(count);
  return t;
}

TaskTarget TaskTarget::multiclass(int index) {
  TaskTarget t;
  t.kind = HeadKind::kMulticlass;
  t.class_index = index;
  return t;
}

TaskTarget TaskTarget::ranking(std::vector<int> ordered) {
  TaskTarget t;
  t.kind = HeadKind::kRanking;
  t.labels = std::move(ordered);
  return t;
}

TaskTarget TaskTarget::multilabel(std::vector<int> label_set) {
  TaskTarget t;
  t.kind = HeadKind::kMultilabel;
  t.labels = std::move(label_set);
  return t;
}

Vector head_score(const TaskHead& head, const Vector& f) {
  if (f.size() != head.V.cols()) {
    std::ostringstream os;
    os << "feature vector length " << f.size() << " does not match head '"
       << head.name << "' width " << head.V.cols();
    throw std::invalid_argument(os.str());
  }
  return head.bias + head.V * f;
}

double loss_regression(double y, double g) {
  const double r = y - g;
  return 0.5 * r * r;
}

double loss_logistic(double y, double g) { return log1pexp(-y * g); }

double loss_poisson_trainable(double y, double g) { return -y * g + std::exp(g); }

double loss_poisson_full(double y, double g) {
  return std::lgamma(y + 1.0) + loss_poisson_trainable(y, g);
}

std::vector<std::pair<int, std::vector<int>>> candidate_sets(
    HeadKind kind, const TaskTarget& target, int num_labels) {
  if (target.kind != kind) {
    throw std::invalid_argument("target kind does not match head kind");
  }
  auto check_label = [&](int l) {
    if (l < 0 || l >= num_labels) {
      std::ostringstream os;
      os << "label index " << l << " outside universe of " << num_labels;
      throw std::invalid_argument(os.str());
    }
  };
  std::vector<int> all(static_cast<std::size_t>(num_labels));
  std::iota(all.begin(), all.end(), 0);

  std::vector<std::pair<int, std::vector<int>>> sets;
  switch (kind) {
    case HeadKind::kMulticlass:
      check_label(target.class_index);
      sets.emplace_back(target.class_index, all);
      break;
    case HeadKind::kRanking: {
      std::set<int> seen;
      std::vector<int> pool = all;
      for (int l : target.labels) {
        check_label(l);
        if (!seen.insert(l).second) {
          throw std::invalid_argument("ranking target contains duplicate label");
        }
        sets.emplace_back(l, pool);
        pool.erase(std::find(pool.begin(), pool.end(), l));
      }
      break;
    }
    case HeadKind::kMultilabel: {
      std::set<int> seen;
      for (int l : target.labels) {
        check_label(l);
        if (!seen.insert(l).second) {
          throw std::invalid_argument("multilabel target contains duplicate label");
        }
        sets.emplace_back(l, all);
      }
      break;
    }
    default:
      throw std::invalid_argument("candidate_sets requires a structured kind");
  }
  return sets;
}

double structured_prob_from_scores(const Vector& scores, int label,
                                   const std::vector<int>& candidates) {
  if (candidates.empty()) {
    throw std::invalid_argument("candidate set must be nonempty");
  }
  double max_score = -std::numeric_limits<double>::infinity();
  bool found = false;
  for (int l : candidates) {
    if (l < 0 || l >= scores.size()) {
      throw std::invalid_argument("candidate label outside score range");
    }
    max_score = std::max(max_score, scores(l));
    found = found || l == label;
  }
  if (!found) {
    throw std::invalid_argument("label is not in its candidate set");
  }
  double denom = 0.0;
  for (int l : candidates) denom += std::exp(scores(l) - max_score);
  return std::exp(scores(label) - max_score) / denom;
}

double structured_prob(const TaskHead& head, const Vector& f, int label,
                       const std::vector<int>& candidates) {
  return structured_prob_from_scores(head_score(head, f), label, candidates);
}

double loss_structured(const TaskHead& head, const Vector& f,
                       const TaskTarget& target) {
  return head_loss_from_scores(head, head_score(head, f), target);
}

double head_loss_from_scores(const TaskHead& head, const Vector& scores,
                             const TaskTarget& target) {
  if (target.kind != head.kind) {
    throw std::invalid_argument("target kind does not match head kind");
  }
  switch (head.kind) {
    case HeadKind::kRegression:
      return loss_regression(target.value, scores(0));
    case HeadKind::kLogistic:
      return loss_logistic(target.value, scores(0));
    case HeadKind::kPoisson:
      return loss_poisson_trainable(target.value, scores(0));
    default: {
      double loss = 0.0;
      for (const auto& [label, pool] :
           candidate_sets(head.kind, target, head.num_labels())) {
        loss -= std::log(structured_prob_from_scores(scores, label, pool));
      }
      return loss;
    }
  }
}

double head_loss(const TaskHead& head, const Vector& f,
                 const TaskTarget& target) {
  return head_loss_from_scores(head, head_score(head, f), target);
}

Vector head_loss_score_grad(const TaskHead& head, const Vector& scores,
                            const TaskTarget& target) {
  if (target.kind != head.kind) {
    throw std::invalid_argument("target kind does not match head kind");
  }
  Vector grad = Vector::Zero(scores.size());
  switch (head.kind) {
    case HeadKind::kRegression:
      grad(0) = scores(0) - target.value;
      break;
    case HeadKind::kLogistic:
      grad(0) = -target.value * sigmoid(-target.value * scores(0));
      break;
    case HeadKind::kPoisson:
      grad(0) = -target.value + std::exp(scores(0));
      break;
    default:
      for (const auto& [label, pool] :
           candidate_sets(head.kind, target, head.num_labels())) {
        double max_score = -std::numeric_limits<double>::infinity();
        for (int l : pool) max_score = std::max(max_score, scores(l));
        double denom = 0.0;
        for (int l : pool) denom += std::exp(scores(l) - max_score);
        for (int l : pool) {
          grad(l) += std::exp(scores(l) - max_score) / denom;
        }
        grad(label) -= 1.0;
      }
      break;
  }
  return grad;
}

Vector multilabel_probs(const TaskHead& head, const Vector& f) {
  if (head.kind != HeadKind::kMultilabel) {
    throw std::invalid_argument("multilabel_probs requires a multilabel head");
  }
  const Vector scores = head_score(head, f);
  const double m = scores.maxCoeff();
  Vector e = (scores.array() - m).exp();
  return e / e.sum();
}

double calibrate_threshold_probs(const Matrix& probs,
                                 const std::vector<std::vector<int>>& truth,
                                 int num_labels) {
  if (probs.rows() == 0 || static_cast<std::size_t>(probs.rows()) != truth.size()) {
    throw std::invalid_argument("calibration set is empty or misaligned");
  }
  if (probs.cols() != num_labels) {
    throw std::invalid_argument("probability columns != label count");
  }
  bool any_positive = false;
  for (const auto& t : truth) any_positive = any_positive || !t.empty();
  if (!any_positive) {
    throw DataError("threshold calibration needs at least one positive label");
  }

  // Grid: every distinct observed probability plus consecutive midpoints.
  std::vector<double> grid(probs.data(), probs.data() + probs.size());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  const std::size_t distinct = grid.size();
  for (std::size_t i = 0; i + 1 < distinct; ++i) {
    grid.push_back(0.5 * (grid[i] + grid[i + 1]));
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  double best_tau = grid.front();
  double best_f1 = -1.0;
  std::vector<std::vector<int>> pred(truth.size());
  for (double tau : grid) {
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      auto& p = pred[static_cast<std::size_t>(r)];
      p.clear();
      for (int l = 0; l < num_labels; ++l) {
        if (probs(r, l) >= tau) p.push_back(l);
      }
    }
    const double f1 = multilabel_metrics(pred, truth, num_labels).macro_f1;
    // ties break toward the larger threshold; grid is ascending
    if (f1 > best_f1) {
      best_f1 = f1;
      best_tau = tau;
    } else if (f1 == best_f1) {
      best_tau = tau;
    }
  }
  return best_tau;
}

double calibrate_threshold(TaskHead& head, const Matrix& features,
                           const std::vector<TaskTarget>& targets) {
  if (head.kind != HeadKind::kMultilabel) {
    throw std::invalid_argument("calibrate_threshold requires a multilabel head");
  }
  if (features.rows() == 0 ||
      static_cast<std::size_t>(features.rows()) != targets.size()) {
    throw std::invalid_argument("calibration set is empty or misaligned");
  }
  Matrix probs(features.rows(), head.num_labels());
  std::vector<std::vector<int>> truth(targets.size());
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    probs.row(r) = multilabel_probs(head, features.row(r).transpose()).transpose();
    truth[static_cast<std::size_t>(r)] = targets[static_cast<std::size_t>(r)].labels;
  }
  const double tau = calibrate_threshold_probs(probs, truth, head.num_labels());
  head.threshold = tau;
  return tau;
}

Prediction predict(const TaskHead& head, const Vector& f) {
  Prediction out;
  out.kind = head.kind;
  const Vector scores = head_score(head, f);
  switch (head.kind) {
    case HeadKind::kRegression:
      out.value = scores(0);
      break;
    case HeadKind::kLogistic:
      out.value = scores(0);
      out.probability = sigmoid(scores(0));
      out.sign = scores(0) >= 0.0 ? 1 : -1;
      break;
    case HeadKind::kPoisson:
      out.value = scores(0);
      out.rate = std::exp(scores(0));
      break;
    case HeadKind::kMulticlass: {
      int best = 0;
      for (int l = 1; l < head.num_labels(); ++l) {
        if (scores(l) > scores(best)) best = l;
      }
      out.class_index = best;
      break;
    }
    case HeadKind::kRanking: {
      std::vector<int> order(static_cast<std::size_t>(head.num_labels()));
      std::iota(order.begin(), order.end(), 0);
      // stable: equal scores keep label declaration order
      std::stable_sort(order.begin(), order.end(),
                       [&](int l, int r) { return scores(l) > scores(r); });
      out.labels = std::move(order);
      break;
    }
    case HeadKind::kMultilabel: {
      if (!head.threshold.has_value()) {
        throw std::invalid_argument("multilabel head '" + head.name +
                                    "' has no calibrated threshold");
      }
      const Vector probs = multilabel_probs(head, f);
      for (int l = 0; l < head.num_labels(); ++l) {
        if (probs(l) >= *head.threshold) out.labels.push_back(l);
      }
      break;
    }
  }
  return out;
}

}  // namespace mtdbn
