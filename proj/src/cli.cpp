#include "mtdbn/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "mtdbn/serialization.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mtdbn {

namespace {

json require_object(const json& j, const char* what) {
  if (!j.is_object()) {
    throw ConfigError(std::string(what) + " must be a JSON object");
  }
  return j;
}

}  // namespace

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  RunConfig cfg;
  try {
    if (j.value("format", "") != "mtdbn/1") {
      throw ConfigError("config '" + path + "' has missing or unknown format key");
    }
    cfg.manifest = j.at("manifest").get<std::string>();
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
    cfg.seed = j.value("seed", cfg.seed);

    if (j.contains("architecture")) {
      const json arch = require_object(j["architecture"], "architecture");
      cfg.default_view_hidden =
          arch.value("default_view_hidden", cfg.default_view_hidden);
      cfg.joint_hidden = arch.value("joint_hidden", cfg.joint_hidden);
      if (arch.contains("view_hidden")) {
        for (const auto& [name, v] :
             require_object(arch["view_hidden"], "view_hidden").items()) {
          cfg.view_hidden.emplace_back(name, v.get<int>());
        }
      }
    }

    if (j.contains("pretrain")) {
      const json p = require_object(j["pretrain"], "pretrain");
      cfg.pretrain_epochs = p.value("epochs", cfg.pretrain_epochs);
      cfg.pretrain_minibatch = p.value("minibatch_size", cfg.pretrain_minibatch);
      cfg.cd_steps = p.value("cd_steps", cfg.cd_steps);
      cfg.sparsity_target = p.value("sparsity_target", cfg.sparsity_target);
      cfg.sparsity_weight = p.value("sparsity_weight", cfg.sparsity_weight);
      if (p.contains("learning_rates")) {
        const json lr = require_object(p["learning_rates"], "learning_rates");
        cfg.lr_binary = lr.value("binary", cfg.lr_binary);
        cfg.lr_real = lr.value("real", cfg.lr_real);
        cfg.lr_count = lr.value("count", cfg.lr_count);
      }
      if (p.contains("joint")) {
        const json jj = require_object(p["joint"], "pretrain.joint");
        cfg.joint_epochs = jj.value("epochs", cfg.joint_epochs);
        cfg.joint_learning_rate =
            jj.value("learning_rate", cfg.joint_learning_rate);
      }
    }

    if (j.contains("finetune")) {
      const json f = require_object(j["finetune"], "finetune");
      const std::string opt = f.value("optimizer", "sgd");
      if (opt == "sgd") {
        cfg.finetune.optimizer = FinetuneConfig::Optimizer::kSgd;
      } else if (opt == "cg") {
        cfg.finetune.optimizer = FinetuneConfig::Optimizer::kCg;
      } else {
        throw ConfigError("unknown optimizer '" + opt + "'");
      }
      cfg.finetune.learning_rate =
          f.value("learning_rate", cfg.finetune.learning_rate);
      cfg.finetune.momentum = f.value("momentum", cfg.finetune.momentum);
      cfg.finetune.minibatch_size =
          f.value("minibatch_size", cfg.finetune.minibatch_size);
      cfg.finetune.epochs = f.value("epochs", cfg.finetune.epochs);
      cfg.finetune.cg_restart = f.value("cg_restart", cfg.finetune.cg_restart);
    }

    for (const auto& jh : j.value("heads", json::array())) {
      HeadDecl decl;
      decl.name = jh.at("name").get<std::string>();
      decl.kind = head_kind_from_name(jh.at("kind").get<std::string>());
      decl.target = jh.value("target", decl.name);
      decl.weight = jh.value("weight", 1.0);
      decl.auxiliary = jh.value("auxiliary", false);
      if (!(decl.weight > 0.0)) {
        throw ConfigError("head '" + decl.name + "' weight must be positive");
      }
      cfg.heads.push_back(std::move(decl));
    }

    if (j.contains("eval")) {
      const json e = require_object(j["eval"], "eval");
      cfg.map_T = e.value("map_T", cfg.map_T);
      cfg.ndcg_T = e.value("ndcg_T", cfg.ndcg_T);
      cfg.knn_k = e.value("knn_k", cfg.knn_k);
      cfg.judge_target = e.value("judge_target", cfg.judge_target);
    }

    if (j.contains("preprocess")) {
      const json p = require_object(j["preprocess"], "preprocess");
      cfg.count_transform = count_transform_from_name(
          p.value("count_transform", "round"));
    }
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is malformed: " + std::string(e.what()));
  }

  cfg.finetune.rng_seed = derive_seed(cfg.seed, 0xF1);
  cfg.finetune.validate();
  if (cfg.map_T < 1 || cfg.ndcg_T < 1 || cfg.knn_k < 1) {
    throw ConfigError("eval settings must be positive");
  }
  return cfg;
}

std::string RunConfig::canonical_json() const {
  json j;
  j["format"] = "mtdbn/1";
  j["manifest"] = manifest;
  j["output_dir"] = output_dir;
  j["seed"] = seed;
  json arch;
  arch["default_view_hidden"] = default_view_hidden;
  arch["joint_hidden"] = joint_hidden;
  json vh = json::object();
  for (const auto& [name, v] : view_hidden) vh[name] = v;
  arch["view_hidden"] = vh;
  j["architecture"] = arch;
  j["pretrain"] = {{"epochs", pretrain_epochs},
                   {"minibatch_size", pretrain_minibatch},
                   {"cd_steps", cd_steps},
                   {"sparsity_target", sparsity_target},
                   {"sparsity_weight", sparsity_weight},
                   {"learning_rates",
                    {{"binary", lr_binary}, {"real", lr_real}, {"count", lr_count}}},
                   {"joint",
                    {{"epochs", joint_epochs},
                     {"learning_rate", joint_learning_rate}}}};
  j["finetune"] = {
      {"optimizer",
       finetune.optimizer == FinetuneConfig::Optimizer::kSgd ? "sgd" : "cg"},
      {"learning_rate", finetune.learning_rate},
      {"momentum", finetune.momentum},
      {"minibatch_size", finetune.minibatch_size},
      {"epochs", finetune.epochs},
      {"cg_restart", finetune.cg_restart}};
  j["heads"] = json::array();
  for (const auto& h : heads) {
    j["heads"].push_back({{"name", h.name},
                          {"kind", head_kind_name(h.kind)},
                          {"target", h.target},
                          {"weight", h.weight},
                          {"auxiliary", h.auxiliary}});
  }
  j["eval"] = {{"map_T", map_T},
               {"ndcg_T", ndcg_T},
               {"knn_k", knn_k},
               {"judge_target", judge_target}};
  j["preprocess"] = {{"count_transform", count_transform_name(count_transform)}};
  return j.dump();
}

int RunConfig::hidden_for_view(const std::string& name) const {
  for (const auto& [view, hidden] : view_hidden) {
    if (view == name) return hidden;
  }
  return default_view_hidden;
}

void RunConfig::validate_against(const DatasetManifest& m) const {
  for (const auto& decl : heads) {
    const TargetDecl* target = m.find_target(decl.target);
    if (target == nullptr) {
      throw ConfigError("head '" + decl.name + "' references unknown target '" +
                        decl.target + "'");
    }
    if (target->kind != decl.kind) {
      throw ConfigError("head '" + decl.name + "' kind " +
                        head_kind_name(decl.kind) + " does not match target kind " +
                        head_kind_name(target->kind));
    }
  }
  for (const auto& [view, hidden] : view_hidden) {
    bool found = false;
    for (const auto& v : m.views) found = found || v.name == view;
    if (!found) {
      throw ConfigError("view_hidden references unknown view '" + view + "'");
    }
    if (hidden < 1) throw ConfigError("hidden size for '" + view + "' must be >= 1");
  }
}

SparseCdConfig RunConfig::cd_config_for(UnitType type,
                                        std::uint64_t stream) const {
  SparseCdConfig cd;
  switch (type) {
    case UnitType::kBinary: cd.learning_rate = lr_binary; break;
    case UnitType::kReal: cd.learning_rate = lr_real; break;
    case UnitType::kCount: cd.learning_rate = lr_count; break;
  }
  cd.sparsity_target = sparsity_target;
  cd.sparsity_weight = sparsity_weight;
  cd.cd_steps = cd_steps;
  cd.minibatch_size = pretrain_minibatch;
  cd.epochs = pretrain_epochs;
  cd.rng_seed = derive_seed(seed, stream);
  return cd;
}

SparseCdConfig RunConfig::joint_cd_config() const {
  SparseCdConfig cd = cd_config_for(UnitType::kBinary, 0x10ADull);
  if (joint_learning_rate > 0.0) cd.learning_rate = joint_learning_rate;
  if (joint_epochs >= 0) cd.epochs = joint_epochs;
  return cd;
}

namespace cli {

namespace {

void write_meta(const RunConfig& cfg, const std::string& stage) {
  json j;
  j["stage"] = stage;
  j["config_hash"] = cfg.config_hash();
  j["seed"] = cfg.seed;
  j["version"] = kVersionString;
  const fs::path path = fs::path(cfg.output_dir) / (stage + "_meta.json");
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  os << j.dump(2) << '\n';
}

void write_trace_csv(const std::string& path, const std::vector<double>& trace) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << "epoch,reconstruction_error\n";
  char buf[64];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", trace[i]);
    os << i << ',' << buf << '\n';
  }
}

struct LoadedData {
  Dataset dataset;
  PreprocessedViews prepped;
};

LoadedData load_and_preprocess(const RunConfig& cfg) {
  LoadedData data;
  data.dataset = load_dataset(cfg.manifest);
  cfg.validate_against(data.dataset.manifest);
  const std::vector<int>& train = data.dataset.manifest.train_split;
  if (train.empty()) {
    throw DataError("manifest declares an empty train split");
  }
  data.prepped = preprocess_views(data.dataset, cfg.count_transform, train);
  return data;
}

std::vector<Matrix> rows_subset(const std::vector<Matrix>& views,
                                const std::vector<int>& rows) {
  std::vector<Matrix> out;
  out.reserve(views.size());
  for (const auto& v : views) {
    Matrix sub(static_cast<Eigen::Index>(rows.size()), v.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      sub.row(static_cast<Eigen::Index>(i)) = v.row(rows[i]);
    }
    out.push_back(std::move(sub));
  }
  return out;
}

const std::vector<int>& calibration_rows(const DatasetManifest& m) {
  // fall back to the train split when no calibration split is declared
  return m.calibrate_split.empty() ? m.train_split : m.calibrate_split;
}

std::string label_name_of(const TargetDecl& decl, int index) {
  return decl.labels[static_cast<std::size_t>(index)];
}

const TargetDecl& judge_decl(const RunConfig& cfg, const DatasetManifest& m) {
  if (!cfg.judge_target.empty()) {
    const TargetDecl* t = m.find_target(cfg.judge_target);
    if (t == nullptr || t->kind != HeadKind::kMultilabel) {
      throw ConfigError("judge target '" + cfg.judge_target +
                        "' is missing or not multilabel");
    }
    return *t;
  }
  for (const auto& t : m.targets) {
    if (t.kind == HeadKind::kMultilabel) return t;
  }
  throw ConfigError("no multilabel target available as relevance judge");
}

std::vector<std::vector<int>> label_sets_for_rows(const Dataset& ds,
                                                  const TargetDecl& decl,
                                                  const std::vector<int>& rows) {
  const TargetTable* table = ds.find_target(decl.name);
  if (table == nullptr) {
    throw DataError("target '" + decl.name + "' not loaded");
  }
  std::vector<std::vector<int>> sets;
  sets.reserve(rows.size());
  for (int r : rows) {
    const auto& t = table->rows[static_cast<std::size_t>(r)];
    sets.push_back(t.has_value() ? t->labels : std::vector<int>{});
  }
  return sets;
}

}  // namespace

std::string pretrain(const RunConfig& cfg) {
  LoadedData data = load_and_preprocess(cfg);
  const auto& manifest = data.dataset.manifest;
  fs::create_directories(cfg.output_dir);

  std::vector<ViewSpec> specs;
  std::vector<VisibleBatch> batches;
  std::vector<SparseCdConfig> cds;
  for (std::size_t s = 0; s < manifest.views.size(); ++s) {
    const auto& decl = manifest.views[s];
    ViewSpec spec{decl.name, decl.unit_type, decl.dim,
                  cfg.hidden_for_view(decl.name)};
    specs.push_back(spec);
    Matrix train_rows_data(static_cast<Eigen::Index>(manifest.train_split.size()),
                           data.prepped.views[s].cols());
    for (std::size_t i = 0; i < manifest.train_split.size(); ++i) {
      train_rows_data.row(static_cast<Eigen::Index>(i)) =
          data.prepped.views[s].row(manifest.train_split[i]);
    }
    if (decl.unit_type == UnitType::kReal) {
      // z-scored values are unconstrained
      VisibleBatch b;
      b.unit_type = UnitType::kReal;
      b.data = std::move(train_rows_data);
      batches.push_back(std::move(b));
    } else {
      batches.push_back(
          VisibleBatch::make(decl.unit_type, std::move(train_rows_data)));
    }
    cds.push_back(cfg.cd_config_for(decl.unit_type, s));
  }

  PretrainViewsResult views_result = pretrain_views(specs, batches, cds);
  PretrainJointResult joint_result = pretrain_joint(
      views_result.posteriors, cfg.joint_hidden, cfg.joint_cd_config());

  DeepNet net;
  net.views = std::move(specs);
  net.view_params = std::move(views_result.params);
  net.joint = std::move(joint_result.params);

  const std::string net_path =
      (fs::path(cfg.output_dir) / "net_pretrained.bin").string();
  save_net(net_path, net);
  for (std::size_t s = 0; s < net.views.size(); ++s) {
    write_trace_csv((fs::path(cfg.output_dir) /
                     ("trace_pretrain_" + net.views[s].name + ".csv")).string(),
                    views_result.recon_traces[s]);
  }
  write_trace_csv(
      (fs::path(cfg.output_dir) / "trace_pretrain_joint.csv").string(),
      joint_result.recon_trace);
  write_meta(cfg, "pretrain");
  return net_path;
}

std::string finetune_cmd(const RunConfig& cfg, const std::string& net_path) {
  LoadedData data = load_and_preprocess(cfg);
  const auto& manifest = data.dataset.manifest;
  DeepNet net = load_net(net_path);
  fs::create_directories(cfg.output_dir);

  // attach the declared heads
  net.heads.clear();
  std::vector<const TargetTable*> tables;
  for (const auto& decl : cfg.heads) {
    const TargetTable* table = data.dataset.find_target(decl.target);
    if (table == nullptr) {
      throw ConfigError("head '" + decl.name + "' target table not found");
    }
    tables.push_back(table);
    net.heads.push_back(TaskHead::make(decl.kind, decl.name, net.top_dim(),
                                       table->decl.labels, decl.weight));
  }

  const std::vector<int>& train = manifest.train_split;
  std::vector<Matrix> train_views = rows_subset(data.prepped.views, train);
  std::vector<InstanceTargets> targets(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    targets[i].resize(net.heads.size());
    for (std::size_t h = 0; h < net.heads.size(); ++h) {
      targets[i][h] = tables[h]->rows[static_cast<std::size_t>(train[i])];
    }
  }

  FinetuneResult result = finetune(std::move(net), train_views, targets,
                                   cfg.finetune);

  // calibrate multilabel thresholds on the calibration split
  const std::vector<int>& cal = calibration_rows(manifest);
  for (std::size_t h = 0; h < result.net.heads.size(); ++h) {
    if (result.net.heads[h].kind != HeadKind::kMultilabel) continue;
    std::vector<int> rows_with_target;
    for (int r : cal) {
      if (tables[h]->rows[static_cast<std::size_t>(r)].has_value()) {
        rows_with_target.push_back(r);
      }
    }
    if (rows_with_target.empty()) {
      throw DataError("no calibration instances with targets for head '" +
                      result.net.heads[h].name + "'");
    }
    const Matrix features = embed_corpus(
        result.net, rows_subset(data.prepped.views, rows_with_target));
    std::vector<TaskTarget> cal_targets;
    cal_targets.reserve(rows_with_target.size());
    for (int r : rows_with_target) {
      cal_targets.push_back(*tables[h]->rows[static_cast<std::size_t>(r)]);
    }
    calibrate_threshold(result.net.heads[h], features, cal_targets);
  }

  const std::string out_path =
      (fs::path(cfg.output_dir) / "net_finetuned.bin").string();
  save_net(out_path, result.net);

  // loss trace with per-head columns
  const std::string trace_path =
      (fs::path(cfg.output_dir) / "trace_finetune.csv").string();
  std::ofstream os(trace_path);
  if (!os) throw DataError("cannot open '" + trace_path + "' for writing");
  os << "epoch,total_loss";
  for (const auto& head : result.net.heads) os << ',' << head.name;
  os << '\n';
  char buf[64];
  for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", result.loss_trace[i]);
    os << i << ',' << buf;
    for (double v : result.per_head_trace[i]) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      os << ',' << buf;
    }
    os << '\n';
  }
  os.close();
  write_meta(cfg, "finetune");
  return out_path;
}

std::string embed(const RunConfig& cfg, const std::string& net_path,
                  bool baseline) {
  LoadedData data = load_and_preprocess(cfg);
  fs::create_directories(cfg.output_dir);
  Matrix embeddings;
  std::string out_name;
  if (baseline) {
    embeddings = concat_baseline_embed(data.prepped.views);
    out_name = "baseline_embeddings.csv";
  } else {
    const DeepNet net = load_net(net_path);
    embeddings = embed_corpus(net, data.prepped.views);
    out_name = "embeddings.csv";
  }
  const std::string out_path = (fs::path(cfg.output_dir) / out_name).string();
  write_matrix_csv(out_path, embeddings);
  write_meta(cfg, baseline ? "embed_baseline" : "embed");
  return out_path;
}

std::string retrieve_cmd(const RunConfig& cfg, const std::string& embeddings_csv,
                         bool per_query_trace) {
  LoadedData data = load_and_preprocess(cfg);
  const auto& manifest = data.dataset.manifest;
  fs::create_directories(cfg.output_dir);

  const Matrix all = read_matrix_csv(embeddings_csv);
  if (all.rows() != manifest.instance_count) {
    throw DataError("embedding row count does not match the manifest");
  }
  const std::vector<int>& test = manifest.test_split;
  if (test.empty()) throw DataError("manifest declares an empty test split");
  Matrix corpus(static_cast<Eigen::Index>(test.size()), all.cols());
  for (std::size_t i = 0; i < test.size(); ++i) {
    corpus.row(static_cast<Eigen::Index>(i)) = all.row(test[i]);
  }

  const TargetDecl& judge_target = judge_decl(cfg, manifest);
  const RelevanceJudge judge = RelevanceJudge::from_label_sets(
      label_sets_for_rows(data.dataset, judge_target, test));

  const RetrievalReport report =
      evaluate_retrieval(corpus, judge, cfg.map_T, cfg.ndcg_T);

  json j;
  j["format"] = "mtdbn/1";
  j["map"] = report.map;
  j["ndcg"] = report.ndcg;
  j["map_T"] = report.map_T;
  j["ndcg_T"] = report.ndcg_T;
  j["num_queries"] = report.num_queries;
  j["metadata"] = {{"embeddings", embeddings_csv},
                   {"judge_target", judge_target.name},
                   {"config_hash", cfg.config_hash()},
                   {"seed", cfg.seed}};
  const std::string report_path =
      (fs::path(cfg.output_dir) / "retrieval_report.json").string();
  std::ofstream os(report_path);
  if (!os) throw DataError("cannot open '" + report_path + "' for writing");
  os << j.dump(2) << '\n';
  os.close();

  if (per_query_trace) {
    const std::string trace_path =
        (fs::path(cfg.output_dir) / "retrieval_trace.csv").string();
    std::ofstream ts(trace_path);
    if (!ts) throw DataError("cannot open '" + trace_path + "' for writing");
    ts << "query_instance,ap,ndcg\n";
    char buf[64];
    for (std::size_t i = 0; i < test.size(); ++i) {
      ts << test[i];
      std::snprintf(buf, sizeof(buf), "%.17g", report.per_query_ap[i]);
      ts << ',' << buf;
      std::snprintf(buf, sizeof(buf), "%.17g", report.per_query_ndcg[i]);
      ts << ',' << buf << '\n';
    }
  }
  write_meta(cfg, "retrieve");
  return report_path;
}

namespace {

json prediction_to_json(const TargetDecl& decl, int instance,
                        const Prediction& pred) {
  json j;
  j["id"] = instance;
  j["kind"] = head_kind_name(pred.kind);
  switch (pred.kind) {
    case HeadKind::kRegression:
      j["value"] = pred.value;
      break;
    case HeadKind::kLogistic:
      j["sign"] = pred.sign;
      j["prob"] = pred.probability;
      break;
    case HeadKind::kPoisson:
      j["value"] = pred.value;
      j["rate"] = pred.rate;
      break;
    case HeadKind::kMulticlass:
      j["label"] = label_name_of(decl, pred.class_index);
      break;
    case HeadKind::kRanking: {
      std::vector<std::string> names;
      for (int l : pred.labels) names.push_back(label_name_of(decl, l));
      j["ranked"] = names;
      break;
    }
    case HeadKind::kMultilabel: {
      std::vector<std::string> names;
      for (int l : pred.labels) names.push_back(label_name_of(decl, l));
      j["labels"] = names;
      break;
    }
  }
  return j;
}

}  // namespace

std::string predict_cmd(const RunConfig& cfg, const std::string& net_path,
                        const std::string& head_name, int knn_k) {
  LoadedData data = load_and_preprocess(cfg);
  const auto& manifest = data.dataset.manifest;
  fs::create_directories(cfg.output_dir);
  const std::vector<int>& test = manifest.test_split;
  if (test.empty()) throw DataError("manifest declares an empty test split");

  std::vector<json> lines;
  std::string out_name;

  if (knn_k > 0) {
    // flat-fusion kNN baseline against the requested multilabel target
    const TargetDecl* decl = manifest.find_target(head_name);
    if (decl == nullptr || decl->kind != HeadKind::kMultilabel) {
      throw ConfigError("kNN baseline needs a multilabel target, got '" +
                        head_name + "'");
    }
    const Matrix all = concat_baseline_embed(data.prepped.views);
    const std::vector<int>& train = manifest.train_split;
    Matrix train_emb(static_cast<Eigen::Index>(train.size()), all.cols());
    for (std::size_t i = 0; i < train.size(); ++i) {
      train_emb.row(static_cast<Eigen::Index>(i)) = all.row(train[i]);
    }
    Matrix test_emb(static_cast<Eigen::Index>(test.size()), all.cols());
    for (std::size_t i = 0; i < test.size(); ++i) {
      test_emb.row(static_cast<Eigen::Index>(i)) = all.row(test[i]);
    }
    const auto train_labels = label_sets_for_rows(data.dataset, *decl, train);
    const auto predicted =
        knn_multilabel(train_emb, train_labels,
                       static_cast<int>(decl->labels.size()), test_emb, knn_k);
    for (std::size_t i = 0; i < test.size(); ++i) {
      json j;
      j["id"] = test[i];
      j["kind"] = "multilabel";
      std::vector<std::string> names;
      for (int l : predicted[i]) names.push_back(label_name_of(*decl, l));
      j["labels"] = names;
      lines.push_back(std::move(j));
    }
    out_name = "predictions_knn_" + head_name + ".jsonl";
  } else {
    const DeepNet net = load_net(net_path);
    const TaskHead* head = nullptr;
    for (const auto& h : net.heads) {
      if (h.name == head_name) head = &h;
    }
    if (head == nullptr) {
      throw ConfigError("net has no head named '" + head_name + "'");
    }
    const HeadDecl* decl = nullptr;
    for (const auto& d : cfg.heads) {
      if (d.name == head_name) decl = &d;
    }
    const TargetDecl* target_decl =
        decl != nullptr ? manifest.find_target(decl->target)
                        : manifest.find_target(head_name);
    if (target_decl == nullptr) {
      throw ConfigError("cannot resolve label names for head '" + head_name + "'");
    }
    const Matrix features =
        embed_corpus(net, rows_subset(data.prepped.views, test));
    for (std::size_t i = 0; i < test.size(); ++i) {
      const Prediction pred =
          predict(*head, features.row(static_cast<Eigen::Index>(i)).transpose());
      lines.push_back(prediction_to_json(*target_decl, test[i], pred));
    }
    out_name = "predictions_" + head_name + ".jsonl";
  }

  const std::string out_path = (fs::path(cfg.output_dir) / out_name).string();
  std::ofstream os(out_path);
  if (!os) throw DataError("cannot open '" + out_path + "' for writing");
  for (const auto& j : lines) os << j.dump() << '\n';
  os.close();
  write_meta(cfg, "predict");
  return out_path;
}

std::string eval_cmd(const RunConfig& cfg, const std::string& predictions_path,
                     const std::string& target_name) {
  LoadedData data = load_and_preprocess(cfg);
  const auto& manifest = data.dataset.manifest;
  fs::create_directories(cfg.output_dir);

  const TargetDecl* decl = manifest.find_target(target_name);
  if (decl == nullptr || decl->kind != HeadKind::kMultilabel) {
    throw ConfigError("eval needs a multilabel target, got '" + target_name + "'");
  }
  const int num_labels = static_cast<int>(decl->labels.size());

  std::ifstream is(predictions_path);
  if (!is) throw DataError("cannot open predictions '" + predictions_path + "'");
  std::vector<int> ids;
  std::vector<std::vector<int>> predicted;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      std::ostringstream os;
      os << "'" << predictions_path << "' line " << line_no
         << ": invalid JSON: " << e.what();
      throw DataError(os.str());
    }
    if (j.value("kind", "") != "multilabel") {
      std::ostringstream os;
      os << "'" << predictions_path << "' line " << line_no
         << ": expected multilabel predictions";
      throw DataError(os.str());
    }
    const int id = j.value("id", -1);
    if (id < 0 || id >= manifest.instance_count) {
      std::ostringstream os;
      os << "'" << predictions_path << "' line " << line_no
         << ": bad instance id " << id;
      throw DataError(os.str());
    }
    std::vector<int> labels;
    for (const auto& name : j.value("labels", json::array())) {
      const auto it = std::find(decl->labels.begin(), decl->labels.end(),
                                name.get<std::string>());
      if (it == decl->labels.end()) {
        std::ostringstream os;
        os << "'" << predictions_path << "' line " << line_no
           << ": unknown label '" << name.get<std::string>() << "'";
        throw DataError(os.str());
      }
      labels.push_back(static_cast<int>(it - decl->labels.begin()));
    }
    ids.push_back(id);
    predicted.push_back(std::move(labels));
  }

  const auto truth = label_sets_for_rows(data.dataset, *decl, ids);
  const MultilabelMetrics metrics = multilabel_metrics(predicted, truth, num_labels);

  json j;
  j["format"] = "mtdbn/1";
  j["recall"] = metrics.recall;
  j["precision"] = metrics.precision;
  j["macro_f1"] = metrics.macro_f1;
  j["num_instances"] = ids.size();
  j["num_labels"] = num_labels;
  j["metadata"] = {{"predictions", predictions_path},
                   {"target", target_name},
                   {"config_hash", cfg.config_hash()},
                   {"seed", cfg.seed}};
  const std::string report_path =
      (fs::path(cfg.output_dir) / "eval_report.json").string();
  std::ofstream os(report_path);
  if (!os) throw DataError("cannot open '" + report_path + "' for writing");
  os << j.dump(2) << '\n';
  os.close();
  write_meta(cfg, "eval");
  return report_path;
}

}  // namespace cli

}  // namespace mtdbn
