#include "mtdbn/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mtdbn/serialization.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mtdbn {

namespace {

constexpr const char* kFormatKey = "mtdbn/1";

json split_to_json(const std::vector<int>& split) { return json(split); }

std::vector<int> split_from_json(const json& j, const char* name) {
  if (!j.is_array()) {
    throw DataError(std::string("manifest split '") + name +
                    "' must be an array of indices");
  }
  std::vector<int> out;
  for (const auto& v : j) out.push_back(v.get<int>());
  return out;
}

void check_split(const std::vector<int>& split, int count, const char* name) {
  for (int idx : split) {
    if (idx < 0 || idx >= count) {
      std::ostringstream os;
      os << "split '" << name << "' index " << idx
         << " outside instance range [0," << count << ")";
      throw DataError(os.str());
    }
  }
}

}  // namespace

void DatasetManifest::validate() const {
  if (instance_count < 0) throw DataError("negative instance count");
  std::set<std::string> names;
  for (const auto& v : views) {
    if (!names.insert(v.name).second) {
      throw DataError("duplicate view name '" + v.name + "'");
    }
    if (v.dim < 1) throw DataError("view '" + v.name + "' has dim < 1");
  }
  std::set<std::string> target_names;
  for (const auto& t : targets) {
    if (!target_names.insert(t.name).second) {
      throw DataError("duplicate target name '" + t.name + "'");
    }
    if (is_structured(t.kind) && t.labels.empty()) {
      throw DataError("structured target '" + t.name + "' declares no labels");
    }
  }
  check_split(train_split, instance_count, "train");
  check_split(calibrate_split, instance_count, "calibrate");
  check_split(test_split, instance_count, "test");
}

const TargetDecl* DatasetManifest::find_target(const std::string& name) const {
  for (const auto& t : targets) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest '" + path + "'");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw DataError("manifest '" + path + "' is not valid JSON: " + e.what());
  }
  if (j.value("format", "") != kFormatKey) {
    throw DataError("manifest '" + path + "' has missing or unknown format key");
  }
  DatasetManifest m;
  try {
    m.instance_count = j.at("instance_count").get<int>();
    for (const auto& jv : j.at("views")) {
      ViewDecl v;
      v.name = jv.at("name").get<std::string>();
      v.unit_type = unit_type_from_name(jv.at("type").get<std::string>());
      v.dim = jv.at("dim").get<int>();
      v.file = jv.at("file").get<std::string>();
      m.views.push_back(std::move(v));
    }
    for (const auto& jt : j.value("targets", json::array())) {
      TargetDecl t;
      t.name = jt.at("name").get<std::string>();
      t.kind = head_kind_from_name(jt.at("kind").get<std::string>());
      t.file = jt.at("file").get<std::string>();
      for (const auto& l : jt.value("labels", json::array())) {
        t.labels.push_back(l.get<std::string>());
      }
      m.targets.push_back(std::move(t));
    }
    const json splits = j.value("splits", json::object());
    m.train_split = split_from_json(splits.value("train", json::array()), "train");
    m.calibrate_split =
        split_from_json(splits.value("calibrate", json::array()), "calibrate");
    m.test_split = split_from_json(splits.value("test", json::array()), "test");
  } catch (const json::exception& e) {
    throw DataError("manifest '" + path + "' is malformed: " + std::string(e.what()));
  }
  m.validate();
  return m;
}

void DatasetManifest::save(const std::string& path) const {
  validate();
  json j;
  j["format"] = kFormatKey;
  j["instance_count"] = instance_count;
  j["views"] = json::array();
  for (const auto& v : views) {
    j["views"].push_back({{"name", v.name},
                          {"type", unit_type_name(v.unit_type)},
                          {"dim", v.dim},
                          {"file", v.file}});
  }
  j["targets"] = json::array();
  for (const auto& t : targets) {
    json jt = {{"name", t.name},
               {"kind", head_kind_name(t.kind)},
               {"file", t.file}};
    if (!t.labels.empty()) jt["labels"] = t.labels;
    j["targets"].push_back(std::move(jt));
  }
  j["splits"] = {{"train", split_to_json(train_split)},
                 {"calibrate", split_to_json(calibrate_split)},
                 {"test", split_to_json(test_split)}};
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << j.dump(2) << '\n';
}

namespace {

int label_index(const TargetDecl& decl, const std::string& name,
                const std::string& file, std::size_t line_no) {
  for (std::size_t i = 0; i < decl.labels.size(); ++i) {
    if (decl.labels[i] == name) return static_cast<int>(i);
  }
  std::ostringstream os;
  os << "'" << file << "' line " << line_no << ": unknown label '" << name
     << "' for target '" << decl.name << "'";
  throw DataError(os.str());
}

TaskTarget parse_target_payload(const TargetDecl& decl, const json& j,
                                const std::string& file, std::size_t line_no) {
  auto fail = [&](const std::string& why) -> TaskTarget {
    std::ostringstream os;
    os << "'" << file << "' line " << line_no << ": " << why;
    throw DataError(os.str());
  };
  try {
    switch (decl.kind) {
      case HeadKind::kRegression:
        return TaskTarget::regression(j.at("value").get<double>());
      case HeadKind::kLogistic: {
        const int v = j.at("value").get<int>();
        if (v != 1 && v != -1) return fail("logistic value must be +1 or -1");
        return TaskTarget::logistic(v);
      }
      case HeadKind::kPoisson: {
        const long v = j.at("value").get<long>();
        if (v < 0) return fail("poisson value must be >= 0");
        return TaskTarget::poisson(v);
      }
      case HeadKind::kMulticlass:
        return TaskTarget::multiclass(label_index(
            decl, j.at("label").get<std::string>(), file, line_no));
      case HeadKind::kRanking: {
        std::vector<int> order;
        for (const auto& l : j.at("ranked")) {
          order.push_back(label_index(decl, l.get<std::string>(), file, line_no));
        }
        return TaskTarget::ranking(std::move(order));
      }
      case HeadKind::kMultilabel: {
        std::vector<int> labels;
        for (const auto& l : j.at("labels")) {
          labels.push_back(label_index(decl, l.get<std::string>(), file, line_no));
        }
        return TaskTarget::multilabel(std::move(labels));
      }
    }
  } catch (const json::exception& e) {
    return fail(std::string("bad payload: ") + e.what());
  } catch (const std::invalid_argument& e) {
    return fail(e.what());
  }
  return fail("unreachable");
}

TargetTable load_target_table(const TargetDecl& decl, const std::string& path,
                              int instance_count) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open target file '" + path + "'");
  TargetTable table;
  table.decl = decl;
  table.rows.assign(static_cast<std::size_t>(instance_count), std::nullopt);
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
      os << "'" << path << "' line " << line_no << ": invalid JSON: " << e.what();
      throw DataError(os.str());
    }
    const int id = j.value("id", -1);
    if (id < 0 || id >= instance_count) {
      std::ostringstream os;
      os << "'" << path << "' line " << line_no << ": instance id " << id
         << " outside [0," << instance_count << ")";
      throw DataError(os.str());
    }
    table.rows[static_cast<std::size_t>(id)] =
        parse_target_payload(decl, j, path, line_no);
  }
  return table;
}

}  // namespace

const TargetTable* Dataset::find_target(const std::string& name) const {
  for (const auto& t : targets) {
    if (t.decl.name == name) return &t;
  }
  return nullptr;
}

Dataset load_dataset(const std::string& manifest_path) {
  Dataset ds;
  ds.manifest = DatasetManifest::load(manifest_path);
  ds.base_dir = fs::path(manifest_path).parent_path().string();
  const auto resolve = [&](const std::string& file) {
    return (fs::path(ds.base_dir) / file).string();
  };

  for (const auto& decl : ds.manifest.views) {
    const std::string path = resolve(decl.file);
    Matrix m = read_matrix_csv(path);
    if (m.rows() != ds.manifest.instance_count) {
      std::ostringstream os;
      os << "view '" << decl.name << "' file '" << path << "' has " << m.rows()
         << " rows, manifest declares " << ds.manifest.instance_count;
      throw DataError(os.str());
    }
    if (m.cols() != decl.dim) {
      std::ostringstream os;
      os << "view '" << decl.name << "' file '" << path << "' has " << m.cols()
         << " columns, manifest declares " << decl.dim;
      throw DataError(os.str());
    }
    // domain check with file/row context
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double v = m(r, c);
        const bool bad_binary = decl.unit_type == UnitType::kBinary &&
                                v != 0.0 && v != 1.0;
        const bool bad_count = decl.unit_type == UnitType::kCount &&
                               (v < 0.0 || v != std::floor(v));
        if (!std::isfinite(v) || bad_binary || bad_count) {
          std::ostringstream os;
          os << "view '" << decl.name << "' file '" << path << "' row " << r
             << ": value " << v << " violates the " << unit_type_name(decl.unit_type)
             << " domain";
          throw DataError(os.str());
        }
      }
    }
    ds.views.push_back(std::move(m));
  }

  for (const auto& decl : ds.manifest.targets) {
    ds.targets.push_back(
        load_target_table(decl, resolve(decl.file), ds.manifest.instance_count));
  }
  return ds;
}

Matrix unit_norm_rows(const Matrix& view) {
  Matrix out = view;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double norm = out.row(r).norm();
    if (norm > 0.0) out.row(r) /= norm;
  }
  return out;
}

NormalizationStats fit_normalization(const Matrix& unit_normed,
                                     const std::vector<int>& train_rows) {
  if (train_rows.empty()) {
    throw std::invalid_argument("cannot fit normalization on an empty split");
  }
  NormalizationStats stats;
  stats.mean = Vector::Zero(unit_normed.cols());
  for (int r : train_rows) stats.mean += unit_normed.row(r).transpose();
  stats.mean /= static_cast<double>(train_rows.size());

  Vector var = Vector::Zero(unit_normed.cols());
  for (int r : train_rows) {
    const Vector d = unit_normed.row(r).transpose() - stats.mean;
    var += d.cwiseProduct(d);
  }
  var /= static_cast<double>(train_rows.size());
  stats.stddev = var.cwiseSqrt();
  for (Eigen::Index i = 0; i < stats.stddev.size(); ++i) {
    if (stats.stddev(i) <= 0.0) {
      std::cerr << "warning: zero-variance dimension " << i
                << " in real view; using std 1\n";
      stats.stddev(i) = 1.0;
    }
  }
  return stats;
}

Matrix apply_normalization(const Matrix& unit_normed,
                           const NormalizationStats& stats) {
  if (unit_normed.cols() != stats.mean.size()) {
    throw std::invalid_argument("normalization stats do not match the view");
  }
  Matrix out = unit_normed;
  out.rowwise() -= stats.mean.transpose();
  out.array().rowwise() /= stats.stddev.transpose().array();
  return out;
}

Matrix normalize_real_view(const Matrix& view, const NormalizationStats* stats,
                           const std::vector<int>& train_rows,
                           NormalizationStats* fitted) {
  const Matrix unit = unit_norm_rows(view);
  if (stats != nullptr) {
    return apply_normalization(unit, *stats);
  }
  NormalizationStats s = fit_normalization(unit, train_rows);
  Matrix out = apply_normalization(unit, s);
  if (fitted != nullptr) *fitted = std::move(s);
  return out;
}

CountTransform count_transform_from_name(std::string_view name) {
  if (name == "round") return CountTransform::kRound;
  if (name == "floor") return CountTransform::kFloor;
  if (name == "none") return CountTransform::kNone;
  throw ConfigError("unknown count transform: '" + std::string(name) + "'");
}

const char* count_transform_name(CountTransform t) {
  switch (t) {
    case CountTransform::kRound: return "round";
    case CountTransform::kFloor: return "floor";
    case CountTransform::kNone: return "none";
  }
  return "?";
}

Matrix transform_counts(const Matrix& view, CountTransform mode) {
  Matrix out(view.rows(), view.cols());
  for (Eigen::Index r = 0; r < view.rows(); ++r) {
    for (Eigen::Index c = 0; c < view.cols(); ++c) {
      const double v = view(r, c);
      if (v < 0.0 || !std::isfinite(v)) {
        std::ostringstream os;
        os << "count value " << v << " at row " << r << " is invalid";
        throw DataError(os.str());
      }
      const double logged = std::log1p(v);
      switch (mode) {
        case CountTransform::kRound: out(r, c) = std::round(logged); break;
        case CountTransform::kFloor: out(r, c) = std::floor(logged); break;
        case CountTransform::kNone: out(r, c) = logged; break;
      }
    }
  }
  return out;
}

PreprocessedViews preprocess_views(const Dataset& dataset,
                                   CountTransform count_mode,
                                   const std::vector<int>& train_rows) {
  PreprocessedViews out;
  for (std::size_t s = 0; s < dataset.views.size(); ++s) {
    const auto& decl = dataset.manifest.views[s];
    switch (decl.unit_type) {
      case UnitType::kBinary:
        out.views.push_back(dataset.views[s]);
        out.stats.emplace_back(std::nullopt);
        break;
      case UnitType::kCount:
        out.views.push_back(transform_counts(dataset.views[s], count_mode));
        out.stats.emplace_back(std::nullopt);
        break;
      case UnitType::kReal: {
        NormalizationStats stats;
        out.views.push_back(
            normalize_real_view(dataset.views[s], nullptr, train_rows, &stats));
        out.stats.emplace_back(std::move(stats));
        break;
      }
    }
  }
  return out;
}

namespace {

void write_target_jsonl(const std::string& path,
                        const std::vector<json>& lines) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  for (const auto& j : lines) os << j.dump() << '\n';
}

}  // namespace

std::string generate_synthetic(const SyntheticSpec& spec,
                               const std::string& out_dir) {
  if (spec.clusters < 1 || spec.per_cluster < 1) {
    throw ConfigError("synthetic spec needs at least one cluster and instance");
  }
  if (spec.train_frac < 0.0 || spec.calibrate_frac < 0.0 ||
      spec.train_frac + spec.calibrate_frac > 1.0) {
    throw ConfigError("synthetic split fractions must be nonnegative and sum <= 1");
  }
  fs::create_directories(out_dir);
  const int n = spec.clusters * spec.per_cluster;

  Rng rng(derive_seed(spec.seed, 0x5EED));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  // cluster prototypes
  Matrix real_proto(spec.clusters, spec.real_dim);
  Matrix count_rate(spec.clusters, spec.count_dim);
  Matrix binary_prob(spec.clusters, spec.binary_dim);
  for (int c = 0; c < spec.clusters; ++c) {
    for (int d = 0; d < spec.real_dim; ++d) real_proto(c, d) = gauss(rng);
    for (int d = 0; d < spec.count_dim; ++d) {
      count_rate(c, d) = spec.count_base_rate * uni(rng) +
                         (uni(rng) < 0.3 ? 3.0 * spec.count_base_rate : 0.0);
    }
    for (int d = 0; d < spec.binary_dim; ++d) {
      const bool on = uni(rng) < 0.5;
      binary_prob(c, d) = on ? spec.binary_sharpness : 1.0 - spec.binary_sharpness;
    }
  }

  Matrix real_view(n, spec.real_dim);
  Matrix count_view(n, spec.count_dim);
  Matrix binary_view(n, spec.binary_dim);
  std::vector<int> cluster_of(static_cast<std::size_t>(n));
  std::vector<json> concept_lines;
  std::vector<json> rank_lines;
  std::vector<std::string> label_names;
  for (int c = 0; c < spec.clusters; ++c) {
    label_names.push_back("c" + std::to_string(c));
  }

  for (int i = 0; i < n; ++i) {
    const int c = i / spec.per_cluster;
    cluster_of[static_cast<std::size_t>(i)] = c;
    for (int d = 0; d < spec.real_dim; ++d) {
      real_view(i, d) = real_proto(c, d) + spec.real_noise * gauss(rng);
    }
    for (int d = 0; d < spec.count_dim; ++d) {
      std::poisson_distribution<long> pois(std::max(count_rate(c, d), 1e-9));
      count_view(i, d) = static_cast<double>(pois(rng));
    }
    for (int d = 0; d < spec.binary_dim; ++d) {
      binary_view(i, d) = uni(rng) < binary_prob(c, d) ? 1.0 : 0.0;
    }

    // cluster-correlated concept labels
    std::vector<std::string> labels = {label_names[static_cast<std::size_t>(c)]};
    if (spec.clusters > 1 && uni(rng) < spec.label_noise) {
      int extra = static_cast<int>(uni(rng) * (spec.clusters - 1));
      if (extra >= c) ++extra;
      labels.push_back(label_names[static_cast<std::size_t>(extra)]);
    }
    concept_lines.push_back({{"id", i}, {"labels", labels}});

    // ranking: own cluster first, the rest in a seeded shuffle
    std::vector<int> rest;
    for (int o = 0; o < spec.clusters; ++o) {
      if (o != c) rest.push_back(o);
    }
    std::shuffle(rest.begin(), rest.end(), rng);
    std::vector<std::string> ranked = {label_names[static_cast<std::size_t>(c)]};
    for (int o : rest) ranked.push_back(label_names[static_cast<std::size_t>(o)]);
    rank_lines.push_back({{"id", i}, {"ranked", ranked}});
  }

  // round-robin split within each cluster keeps the splits balanced
  DatasetManifest manifest;
  manifest.instance_count = n;
  const int train_per = static_cast<int>(std::round(spec.train_frac * spec.per_cluster));
  const int cal_per = static_cast<int>(std::round(spec.calibrate_frac * spec.per_cluster));
  for (int i = 0; i < n; ++i) {
    const int within = i % spec.per_cluster;
    if (within < train_per) {
      manifest.train_split.push_back(i);
    } else if (within < train_per + cal_per) {
      manifest.calibrate_split.push_back(i);
    } else {
      manifest.test_split.push_back(i);
    }
  }

  manifest.views = {
      {"hist", UnitType::kReal, spec.real_dim, "hist.csv"},
      {"bow", UnitType::kCount, spec.count_dim, "bow.csv"},
      {"tags", UnitType::kBinary, spec.binary_dim, "tags.csv"},
  };
  manifest.targets = {
      {"concepts", HeadKind::kMultilabel, "concepts.jsonl", label_names},
      {"tagrank", HeadKind::kRanking, "tagrank.jsonl", label_names},
  };

  const fs::path dir(out_dir);
  write_matrix_csv((dir / "hist.csv").string(), real_view);
  write_matrix_csv((dir / "bow.csv").string(), count_view);
  write_matrix_csv((dir / "tags.csv").string(), binary_view);
  write_target_jsonl((dir / "concepts.jsonl").string(), concept_lines);
  write_target_jsonl((dir / "tagrank.jsonl").string(), rank_lines);
  const std::string manifest_path = (dir / "manifest.json").string();
  manifest.save(manifest_path);
  return manifest_path;
}

}  // namespace mtdbn
