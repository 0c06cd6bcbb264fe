#ifndef MTDBN_CLI_HPP_
#define MTDBN_CLI_HPP_

#include <string>
#include <vector>

#include "mtdbn/data_pipeline.hpp"
#include "mtdbn/eval_metrics.hpp"
#include "mtdbn/finetune.hpp"

namespace mtdbn {

/// One declared supervised head: which target table feeds it and its weight
/// in the multitask objective. Auxiliary heads train like any other but are
/// not consulted at prediction time.
struct HeadDecl {
  std::string name;
  HeadKind kind = HeadKind::kRegression;
  std::string target;
  double weight = 1.0;
  bool auxiliary = false;
};

/// Batch run configuration, loaded from a single JSON file. Typed CD
/// learning rates default to 0.1 (binary), 0.01 (real), 0.02 (count).
struct RunConfig {
  std::string manifest;
  std::string output_dir = "out";
  std::uint64_t seed = 0;

  // architecture
  std::vector<std::pair<std::string, int>> view_hidden;  // overrides, by view
  int default_view_hidden = 200;
  int joint_hidden = 200;

  // pretraining (steps A and B)
  int pretrain_epochs = 30;
  int pretrain_minibatch = 100;
  int cd_steps = 1;
  double sparsity_target = 0.2;
  double sparsity_weight = 0.1;
  double lr_binary = 0.1;
  double lr_real = 0.01;
  double lr_count = 0.02;
  int joint_epochs = -1;           // -1: same as pretrain_epochs
  double joint_learning_rate = -1; // -1: binary rate

  FinetuneConfig finetune;
  std::vector<HeadDecl> heads;

  // evaluation settings
  int map_T = 100;
  int ndcg_T = 10;
  int knn_k = 30;
  std::string judge_target;  // empty: first multilabel target

  CountTransform count_transform = CountTransform::kRound;

  static RunConfig load(const std::string& path);
  std::string canonical_json() const;
  std::uint64_t config_hash() const { return fnv1a64(canonical_json()); }

  int hidden_for_view(const std::string& name) const;
  void validate_against(const DatasetManifest& manifest) const;
  SparseCdConfig cd_config_for(UnitType type, std::uint64_t stream) const;
  SparseCdConfig joint_cd_config() const;
};

namespace cli {

// Stage entry points. Each writes its artifacts plus a <stage>_meta.json
// (config hash, seed, version) under the config's output directory, and
// every one is deterministic under (config, seed).

std::string pretrain(const RunConfig& cfg);

std::string finetune_cmd(const RunConfig& cfg, const std::string& net_path);

/// baseline=true embeds the unit-normalized view concatenation instead of
/// the network's top layer.
std::string embed(const RunConfig& cfg, const std::string& net_path,
                  bool baseline);

std::string retrieve_cmd(const RunConfig& cfg, const std::string& embeddings_csv,
                         bool per_query_trace);

/// knn_k > 0 switches to the k-nearest-neighbor baseline over the
/// concatenated views instead of the model head.
std::string predict_cmd(const RunConfig& cfg, const std::string& net_path,
                        const std::string& head_name, int knn_k);

std::string eval_cmd(const RunConfig& cfg, const std::string& predictions_path,
                     const std::string& target_name);

}  // namespace cli

}  // namespace mtdbn

#endif  // MTDBN_CLI_HPP_
