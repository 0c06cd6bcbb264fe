#include "mtdbn/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mtdbn/task_heads.hpp"

namespace mtdbn {

double cosine_similarity(const Vector& x, const Vector& y) {
  if (x.size() != y.size()) {
    throw std::invalid_argument("cosine_similarity requires equal lengths");
  }
  const double nx = x.norm();
  const double ny = y.norm();
  if (nx == 0.0 || ny == 0.0) return 0.0;
  return x.dot(y) / (nx * ny);
}

std::vector<int> top_indices(const Vector& scores, int self_index, int T) {
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(scores.size()));
  for (int i = 0; i < scores.size(); ++i) {
    if (i != self_index) order.push_back(i);
  }
  const std::size_t keep =
      std::min<std::size_t>(order.size(), static_cast<std::size_t>(std::max(T, 0)));
  auto better = [&](int l, int r) {
    if (scores(l) != scores(r)) return scores(l) > scores(r);
    return l < r;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep),
                    order.end(), better);
  order.resize(keep);
  return order;
}

std::vector<int> retrieve(const Matrix& corpus, int query_index, int T) {
  if (query_index < 0 || query_index >= corpus.rows()) {
    throw std::invalid_argument("query index outside corpus");
  }
  Vector sims(corpus.rows());
  const Vector q = corpus.row(query_index).transpose();
  for (int i = 0; i < corpus.rows(); ++i) {
    sims(i) = cosine_similarity(q, corpus.row(i).transpose());
  }
  return top_indices(sims, query_index, T);
}

double average_precision(const std::vector<int>& rel, ApMode mode) {
  if (rel.empty()) return 0.0;
  double sum = 0.0;
  int hits = 0;
  if (mode == ApMode::kCutoff) {
    // precision averaged over every rank up to the cutoff
    for (std::size_t n = 0; n < rel.size(); ++n) {
      hits += rel[n];
      sum += static_cast<double>(hits) / static_cast<double>(n + 1);
    }
    return sum / static_cast<double>(rel.size());
  }
  for (std::size_t n = 0; n < rel.size(); ++n) {
    hits += rel[n];
    if (rel[n]) sum += static_cast<double>(hits) / static_cast<double>(n + 1);
  }
  return hits == 0 ? 0.0 : sum / static_cast<double>(hits);
}

double dcg_at(const std::vector<int>& rel) {
  double dcg = 0.0;
  for (std::size_t n = 0; n < rel.size(); ++n) {
    dcg += rel[n] / std::log2(static_cast<double>(n) + 2.0);
  }
  return dcg;
}

double ndcg_at(const std::vector<int>& rel, NdcgMode mode) {
  if (rel.empty()) return 0.0;
  const double dcg = dcg_at(rel);
  double ideal = 0.0;
  if (mode == NdcgMode::kAllRelevantIdeal) {
    for (std::size_t n = 0; n < rel.size(); ++n) {
      ideal += 1.0 / std::log2(static_cast<double>(n) + 2.0);
    }
  } else {
    const int relevant = std::accumulate(rel.begin(), rel.end(), 0);
    for (int n = 0; n < relevant; ++n) {
      ideal += 1.0 / std::log2(static_cast<double>(n) + 2.0);
    }
    if (relevant == 0) return 0.0;
  }
  return dcg / ideal;
}

bool RelevanceJudge::relevant(int query, int doc) const {
  const auto& a = label_sets[static_cast<std::size_t>(query)];
  const auto& b = label_sets[static_cast<std::size_t>(doc)];
  for (int l : a) {
    if (std::find(b.begin(), b.end(), l) != b.end()) return true;
  }
  return false;
}

RelevanceJudge RelevanceJudge::from_label_sets(std::vector<std::vector<int>> sets) {
  RelevanceJudge judge;
  judge.label_sets = std::move(sets);
  return judge;
}

std::vector<int> relevance_prefix(const RelevanceJudge& judge, int query,
                                  const std::vector<int>& retrieved) {
  std::vector<int> rel;
  rel.reserve(retrieved.size());
  for (int doc : retrieved) {
    rel.push_back(judge.relevant(query, doc) ? 1 : 0);
  }
  return rel;
}

double map_at(const Matrix& corpus, const RelevanceJudge& judge, int T,
              ApMode mode) {
  return evaluate_retrieval(corpus, judge, T, T, mode).map;
}

RetrievalReport evaluate_retrieval(const Matrix& corpus,
                                   const RelevanceJudge& judge, int map_T,
                                   int ndcg_T, ApMode ap_mode,
                                   NdcgMode ndcg_mode) {
  const int n = static_cast<int>(corpus.rows());
  if (static_cast<std::size_t>(n) != judge.label_sets.size()) {
    throw std::invalid_argument("judge label sets not aligned with corpus");
  }
  RetrievalReport report;
  report.map_T = map_T;
  report.ndcg_T = ndcg_T;
  report.num_queries = n;
  report.per_query_ap.assign(static_cast<std::size_t>(n), 0.0);
  report.per_query_ndcg.assign(static_cast<std::size_t>(n), 0.0);
  const int depth = std::max(map_T, ndcg_T);

  parallel_for(n, [&](std::int64_t q) {
    const std::vector<int> hits = retrieve(corpus, static_cast<int>(q), depth);
    const std::vector<int> rel =
        relevance_prefix(judge, static_cast<int>(q), hits);
    std::vector<int> ap_prefix(
        rel.begin(),
        rel.begin() + std::min<std::size_t>(rel.size(),
                                            static_cast<std::size_t>(map_T)));
    std::vector<int> ndcg_prefix(
        rel.begin(),
        rel.begin() + std::min<std::size_t>(rel.size(),
                                            static_cast<std::size_t>(ndcg_T)));
    report.per_query_ap[static_cast<std::size_t>(q)] =
        average_precision(ap_prefix, ap_mode);
    report.per_query_ndcg[static_cast<std::size_t>(q)] =
        ndcg_at(ndcg_prefix, ndcg_mode);
  });

  if (n > 0) {
    report.map = std::accumulate(report.per_query_ap.begin(),
                                 report.per_query_ap.end(), 0.0) / n;
    report.ndcg = std::accumulate(report.per_query_ndcg.begin(),
                                  report.per_query_ndcg.end(), 0.0) / n;
  }
  return report;
}

MultilabelMetrics multilabel_metrics(const std::vector<std::vector<int>>& predicted,
                                     const std::vector<std::vector<int>>& truth,
                                     int num_labels) {
  if (predicted.size() != truth.size()) {
    throw std::invalid_argument("prediction/truth size mismatch");
  }
  std::vector<long> tp(static_cast<std::size_t>(num_labels), 0);
  std::vector<long> fp(static_cast<std::size_t>(num_labels), 0);
  std::vector<long> fn(static_cast<std::size_t>(num_labels), 0);
  std::vector<char> in_truth(static_cast<std::size_t>(num_labels), 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    std::fill(in_truth.begin(), in_truth.end(), 0);
    for (int l : truth[i]) {
      if (l < 0 || l >= num_labels) {
        throw std::invalid_argument("truth label outside universe");
      }
      in_truth[static_cast<std::size_t>(l)] = 1;
    }
    std::vector<char> in_pred(static_cast<std::size_t>(num_labels), 0);
    for (int l : predicted[i]) {
      if (l < 0 || l >= num_labels) {
        throw std::invalid_argument("predicted label outside universe");
      }
      in_pred[static_cast<std::size_t>(l)] = 1;
    }
    for (int l = 0; l < num_labels; ++l) {
      const bool t = in_truth[static_cast<std::size_t>(l)];
      const bool p = in_pred[static_cast<std::size_t>(l)];
      if (t && p) ++tp[static_cast<std::size_t>(l)];
      if (!t && p) ++fp[static_cast<std::size_t>(l)];
      if (t && !p) ++fn[static_cast<std::size_t>(l)];
    }
  }

  MultilabelMetrics m;
  m.per_label_f1.resize(static_cast<std::size_t>(num_labels), 0.0);
  for (int l = 0; l < num_labels; ++l) {
    const std::size_t s = static_cast<std::size_t>(l);
    const double p = tp[s] + fp[s] > 0
                         ? static_cast<double>(tp[s]) / (tp[s] + fp[s]) : 0.0;
    const double r = tp[s] + fn[s] > 0
                         ? static_cast<double>(tp[s]) / (tp[s] + fn[s]) : 0.0;
    const double f1 = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    m.precision += p;
    m.recall += r;
    m.per_label_f1[s] = f1;
    m.macro_f1 += f1;
  }
  if (num_labels > 0) {
    m.precision /= num_labels;
    m.recall /= num_labels;
    m.macro_f1 /= num_labels;
  }
  return m;
}

Matrix concat_baseline_embed(const std::vector<Matrix>& views) {
  if (views.empty()) return Matrix();
  const Eigen::Index rows = views.front().rows();
  Eigen::Index total = 0;
  for (const auto& v : views) {
    if (v.rows() != rows) {
      throw std::invalid_argument("baseline views are not row-aligned");
    }
    total += v.cols();
  }
  Matrix out(rows, total);
  Eigen::Index offset = 0;
  for (const auto& v : views) {
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double norm = v.row(r).norm();
      if (norm == 0.0) {
        out.block(r, offset, 1, v.cols()).setZero();
      } else {
        out.block(r, offset, 1, v.cols()) = v.row(r) / norm;
      }
    }
    offset += v.cols();
  }
  return out;
}

namespace {

// Neighbor-vote label probabilities for one query row.
Vector knn_label_probs(const Matrix& train, const Vector& query,
                       const std::vector<std::vector<int>>& train_labels,
                       int num_labels, int k, int exclude) {
  Vector sims(train.rows());
  for (int i = 0; i < train.rows(); ++i) {
    sims(i) = cosine_similarity(query, train.row(i).transpose());
  }
  const std::vector<int> nn = top_indices(sims, exclude, k);
  Vector probs = Vector::Zero(num_labels);
  for (int i : nn) {
    for (int l : train_labels[static_cast<std::size_t>(i)]) {
      probs(l) += 1.0;
    }
  }
  if (!nn.empty()) probs /= static_cast<double>(nn.size());
  return probs;
}

}  // namespace

std::vector<std::vector<int>> knn_multilabel(
    const Matrix& train_embeddings,
    const std::vector<std::vector<int>>& train_labels, int num_labels,
    const Matrix& test_embeddings, int k, double* tau_out) {
  if (static_cast<std::size_t>(train_embeddings.rows()) != train_labels.size()) {
    throw std::invalid_argument("training labels not aligned with embeddings");
  }
  if (k < 1) throw std::invalid_argument("k must be >= 1");

  // Leave-one-out probabilities on the training set drive the threshold fit.
  Matrix loo(train_embeddings.rows(), num_labels);
  for (int i = 0; i < train_embeddings.rows(); ++i) {
    loo.row(i) = knn_label_probs(train_embeddings,
                                 train_embeddings.row(i).transpose(),
                                 train_labels, num_labels, k, i)
                     .transpose();
  }
  const double tau = calibrate_threshold_probs(loo, train_labels, num_labels);
  if (tau_out != nullptr) *tau_out = tau;

  std::vector<std::vector<int>> predictions(
      static_cast<std::size_t>(test_embeddings.rows()));
  parallel_for(test_embeddings.rows(), [&](std::int64_t t) {
    const Vector probs =
        knn_label_probs(train_embeddings, test_embeddings.row(t).transpose(),
                        train_labels, num_labels, k, -1);
    auto& pred = predictions[static_cast<std::size_t>(t)];
    for (int l = 0; l < num_labels; ++l) {
      if (probs(l) >= tau) pred.push_back(l);
    }
  });
  return predictions;
}

}  // namespace mtdbn
