#ifndef MTDBN_EVAL_METRICS_HPP_
#define MTDBN_EVAL_METRICS_HPP_

#include <vector>

#include "mtdbn/common.hpp"

namespace mtdbn {

/// Average precision denominator: the rank cutoff T (the protocol's verbatim
/// formula) or the conventional number-of-relevant-hits variant.
enum class ApMode { kCutoff, kConventional };

/// NDCG normalizer: the all-relevant ideal prefix (verbatim protocol) or the
/// query's achievable ideal given its own relevant count.
enum class NdcgMode { kAllRelevantIdeal, kAchievableIdeal };

/// x.y / (|x||y|); zero vectors have similarity 0 by convention.
double cosine_similarity(const Vector& x, const Vector& y);

/// Indices of the T largest scores, excluding self_index (pass -1 to keep
/// all); ties break by ascending index.
std::vector<int> top_indices(const Vector& scores, int self_index, int T);

/// Top-T corpus rows by cosine similarity to row query_index, which is
/// itself excluded.
std::vector<int> retrieve(const Matrix& corpus, int query_index, int T);

/// rel is the binary relevance prefix of length T.
double average_precision(const std::vector<int>& rel,
                         ApMode mode = ApMode::kCutoff);

double dcg_at(const std::vector<int>& rel);
double ndcg_at(const std::vector<int>& rel,
               NdcgMode mode = NdcgMode::kAllRelevantIdeal);

/// Relevance rule: two instances are mutually relevant iff their concept
/// label sets intersect.
struct RelevanceJudge {
  std::vector<std::vector<int>> label_sets;

  bool relevant(int query, int doc) const;
  static RelevanceJudge from_label_sets(std::vector<std::vector<int>> sets);
};

/// Binary relevance prefix for one query's retrieved list.
std::vector<int> relevance_prefix(const RelevanceJudge& judge, int query,
                                  const std::vector<int>& retrieved);

/// Mean average precision over every corpus row used as a query against the
/// rest of the corpus.
double map_at(const Matrix& corpus, const RelevanceJudge& judge, int T,
              ApMode mode = ApMode::kCutoff);

struct RetrievalReport {
  double map = 0.0;
  double ndcg = 0.0;
  int map_T = 0;
  int ndcg_T = 0;
  int num_queries = 0;
  std::vector<double> per_query_ap;
  std::vector<double> per_query_ndcg;
};

/// Full protocol: each corpus row queries the others; reports MAP@map_T and
/// mean NDCG@ndcg_T plus per-query traces.
RetrievalReport evaluate_retrieval(const Matrix& corpus,
                                   const RelevanceJudge& judge, int map_T,
                                   int ndcg_T,
                                   ApMode ap_mode = ApMode::kCutoff,
                                   NdcgMode ndcg_mode = NdcgMode::kAllRelevantIdeal);

struct MultilabelMetrics {
  double recall = 0.0;     // macro-averaged per-label recall
  double precision = 0.0;  // macro-averaged per-label precision
  double macro_f1 = 0.0;
  std::vector<double> per_label_f1;
};

/// Per-label counts over the whole set; labels with no predictions and no
/// positives contribute zero to every average.
MultilabelMetrics multilabel_metrics(const std::vector<std::vector<int>>& predicted,
                                     const std::vector<std::vector<int>>& truth,
                                     int num_labels);

/// Unit-normalizes each view row (zero rows stay zero) and concatenates the
/// views; the flat-fusion baseline representation.
Matrix concat_baseline_embed(const std::vector<Matrix>& views);

/// k-nearest-neighbor multilabel baseline: per-test-instance label
/// probability is the fraction of the k most cosine-similar training rows
/// carrying the label (neighbor ties break by index). The selection
/// threshold is calibrated on the training set with leave-one-out neighbor
/// probabilities and the same macro-F1 grid rule the model heads use.
std::vector<std::vector<int>> knn_multilabel(
    const Matrix& train_embeddings,
    const std::vector<std::vector<int>>& train_labels, int num_labels,
    const Matrix& test_embeddings, int k, double* tau_out = nullptr);

}  // namespace mtdbn

#endif  // MTDBN_EVAL_METRICS_HPP_
