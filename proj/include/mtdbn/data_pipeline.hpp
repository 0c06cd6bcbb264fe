#ifndef MTDBN_DATA_PIPELINE_HPP_
#define MTDBN_DATA_PIPELINE_HPP_

#include <optional>
#include <string>
#include <vector>

#include "mtdbn/deep_stack.hpp"
#include "mtdbn/task_heads.hpp"

namespace mtdbn {

/// Declaration of one view file inside a dataset manifest.
struct ViewDecl {
  std::string name;
  UnitType unit_type = UnitType::kBinary;
  int dim = 0;
  std::string file;  // headerless CSV, one instance per row
};

/// Declaration of one target file (JSON lines: instance id + kind payload).
struct TargetDecl {
  std::string name;
  HeadKind kind = HeadKind::kRegression;
  std::string file;
  std::vector<std::string> labels;  // structured kinds only
};

struct DatasetManifest {
  int instance_count = 0;
  std::vector<ViewDecl> views;
  std::vector<TargetDecl> targets;
  std::vector<int> train_split;
  std::vector<int> calibrate_split;
  std::vector<int> test_split;

  static DatasetManifest load(const std::string& path);
  void save(const std::string& path) const;
  void validate() const;
  const TargetDecl* find_target(const std::string& name) const;
};

/// Supervision column for one declared target; rows without an entry in the
/// JSONL file stay empty (auxiliary / partially labelled data).
struct TargetTable {
  TargetDecl decl;
  std::vector<std::optional<TaskTarget>> rows;
};

struct Dataset {
  DatasetManifest manifest;
  std::string base_dir;
  std::vector<Matrix> views;  // aligned with manifest.views
  std::vector<TargetTable> targets;

  int instance_count() const { return manifest.instance_count; }
  const TargetTable* find_target(const std::string& name) const;
};

/// Reads every declared file, checks row counts and type domains; errors
/// name the offending file and row.
Dataset load_dataset(const std::string& manifest_path);

/// Per-dimension train-split statistics of the unit-normalized view. Zero
/// variance dimensions fall back to std 1.
struct NormalizationStats {
  Vector mean;
  Vector stddev;
};

Matrix unit_norm_rows(const Matrix& view);
NormalizationStats fit_normalization(const Matrix& unit_normed,
                                     const std::vector<int>& train_rows);
Matrix apply_normalization(const Matrix& unit_normed,
                           const NormalizationStats& stats);

/// Two-stage recipe for real views: per-row unit norm, then z-scoring with
/// the supplied (train-split) statistics. When stats is null, fits on
/// train_rows and returns the fitted statistics through fitted.
Matrix normalize_real_view(const Matrix& view, const NormalizationStats* stats,
                           const std::vector<int>& train_rows,
                           NormalizationStats* fitted);

enum class CountTransform { kRound, kFloor, kNone };
CountTransform count_transform_from_name(std::string_view name);
const char* count_transform_name(CountTransform t);

/// Compresses raw counts to log(1 + c), mapped back onto the count domain by
/// the chosen rounding (kNone keeps the raw log values and leaves the result
/// outside the integer domain).
Matrix transform_counts(const Matrix& view, CountTransform mode = CountTransform::kRound);

/// Model-ready matrices: counts log-compressed, real views unit-normed and
/// z-scored on the train split, binary passed through.
struct PreprocessedViews {
  std::vector<Matrix> views;
  std::vector<std::optional<NormalizationStats>> stats;  // real views only
};

PreprocessedViews preprocess_views(const Dataset& dataset,
                                   CountTransform count_mode,
                                   const std::vector<int>& train_rows);

/// Synthetic multityped corpus: C latent prototypes emit a real view
/// (prototype + Gaussian noise), a count view (Poisson around prototype
/// rates), a binary view (Bernoulli around prototype probabilities), a
/// multilabel concept target correlated with the cluster, and a ranking
/// target putting the cluster's label first. Fully seed-deterministic.
struct SyntheticSpec {
  int clusters = 4;
  int per_cluster = 100;
  int real_dim = 16;
  int count_dim = 12;
  int binary_dim = 10;
  double real_noise = 0.3;     // Gaussian sigma around the prototype
  double count_base_rate = 4.0;
  double binary_sharpness = 0.85;  // prototype bit agreement probability
  double label_noise = 0.0;    // chance of one extra off-cluster label
  double train_frac = 0.5;
  double calibrate_frac = 0.0;
  std::uint64_t seed = 0;
};

/// Writes the manifest and all view/target files under out_dir; returns the
/// manifest path. load_dataset() round-trips the result exactly.
std::string generate_synthetic(const SyntheticSpec& spec,
                               const std::string& out_dir);

}  // namespace mtdbn

#endif  // MTDBN_DATA_PIPELINE_HPP_
