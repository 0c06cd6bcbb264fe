// Batch front end: generate -> pretrain -> finetune -> embed ->
// retrieve/predict -> eval, all driven by one JSON config.

#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mtdbn/cli.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDiverged = 4;

struct CommonOpts {
  std::string config_path;
  std::string out_override;
  long long seed_override = -1;
  int threads = 1;
};

mtdbn::RunConfig load_config(const CommonOpts& opts) {
  mtdbn::RunConfig cfg = mtdbn::RunConfig::load(opts.config_path);
  if (!opts.out_override.empty()) cfg.output_dir = opts.out_override;
  if (opts.seed_override >= 0) {
    cfg.seed = static_cast<std::uint64_t>(opts.seed_override);
    cfg.finetune.rng_seed = mtdbn::derive_seed(cfg.seed, 0xF1);
  }
  mtdbn::set_max_threads(opts.threads);
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "run configuration JSON")
      ->required();
  cmd->add_option("--out", opts.out_override, "override the output directory");
  cmd->add_option("--seed", opts.seed_override, "override the config seed");
  cmd->add_option("--threads", opts.threads, "worker threads for embedding/eval");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multityped deep representation toolkit"};
  app.require_subcommand(1);

  CommonOpts opts;

  // generate
  auto* generate = app.add_subcommand("generate", "write a synthetic corpus");
  mtdbn::SyntheticSpec spec;
  std::string gen_out = "data";
  long long gen_seed = 0;
  generate->add_option("--out", gen_out, "output directory")->required();
  generate->add_option("--clusters", spec.clusters, "latent cluster count");
  generate->add_option("--per-cluster", spec.per_cluster, "instances per cluster");
  generate->add_option("--real-dim", spec.real_dim, "real view width");
  generate->add_option("--count-dim", spec.count_dim, "count view width");
  generate->add_option("--binary-dim", spec.binary_dim, "binary view width");
  generate->add_option("--real-noise", spec.real_noise, "Gaussian noise sigma");
  generate->add_option("--binary-sharpness", spec.binary_sharpness,
                       "prototype bit agreement probability");
  generate->add_option("--label-noise", spec.label_noise,
                       "chance of one extra off-cluster label");
  generate->add_option("--train-frac", spec.train_frac, "train fraction");
  generate->add_option("--calibrate-frac", spec.calibrate_frac,
                       "calibration fraction");
  generate->add_option("--seed", gen_seed, "generator seed");

  // pretrain
  auto* pretrain = app.add_subcommand("pretrain", "layerwise unsupervised training");
  add_common(pretrain, opts);

  // finetune
  auto* finetune = app.add_subcommand("finetune", "supervised multitask refinement");
  add_common(finetune, opts);
  std::string net_path;
  finetune->add_option("--net", net_path, "pretrained net (default <out>/net_pretrained.bin)");

  // embed
  auto* embed = app.add_subcommand("embed", "write instance embeddings");
  add_common(embed, opts);
  std::string embed_net;
  bool baseline = false;
  embed->add_option("--net", embed_net, "net container (default <out>/net_finetuned.bin)");
  embed->add_flag("--baseline", baseline, "unit-norm view concatenation instead");

  // retrieve
  auto* retrieve = app.add_subcommand("retrieve", "evaluate retrieval on the test split");
  add_common(retrieve, opts);
  std::string embeddings_csv;
  bool trace = false;
  retrieve->add_option("--embeddings", embeddings_csv,
                       "embedding CSV (default <out>/embeddings.csv)");
  retrieve->add_flag("--trace", trace, "also write the per-query CSV");

  // predict
  auto* predict = app.add_subcommand("predict", "write test-split predictions");
  add_common(predict, opts);
  std::string predict_net;
  std::string head_name;
  int knn_k = 0;
  predict->add_option("--net", predict_net, "net container (default <out>/net_finetuned.bin)");
  predict->add_option("--head", head_name, "head (or target, with --knn) name")
      ->required();
  predict->add_option("--knn", knn_k, "use the kNN baseline with this k");

  // eval
  auto* eval = app.add_subcommand("eval", "score multilabel predictions");
  add_common(eval, opts);
  std::string predictions_path;
  std::string target_name;
  eval->add_option("--predictions", predictions_path, "predictions JSONL")
      ->required();
  eval->add_option("--target", target_name, "truth target name")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) {
      spec.seed = static_cast<std::uint64_t>(gen_seed);
      const std::string manifest = mtdbn::generate_synthetic(spec, gen_out);
      std::cout << "wrote " << manifest << "\n";
      return kExitOk;
    }
    const mtdbn::RunConfig cfg = load_config(opts);
    const auto default_path = [&](const std::string& given, const char* name) {
      return given.empty()
                 ? (std::filesystem::path(cfg.output_dir) / name).string()
                 : given;
    };
    if (pretrain->parsed()) {
      std::cout << "wrote " << mtdbn::cli::pretrain(cfg) << "\n";
    } else if (finetune->parsed()) {
      std::cout << "wrote "
                << mtdbn::cli::finetune_cmd(
                       cfg, default_path(net_path, "net_pretrained.bin"))
                << "\n";
    } else if (embed->parsed()) {
      std::cout << "wrote "
                << mtdbn::cli::embed(
                       cfg, default_path(embed_net, "net_finetuned.bin"),
                       baseline)
                << "\n";
    } else if (retrieve->parsed()) {
      std::cout << "wrote "
                << mtdbn::cli::retrieve_cmd(
                       cfg, default_path(embeddings_csv, "embeddings.csv"),
                       trace)
                << "\n";
    } else if (predict->parsed()) {
      std::cout << "wrote "
                << mtdbn::cli::predict_cmd(
                       cfg, default_path(predict_net, "net_finetuned.bin"),
                       head_name, knn_k)
                << "\n";
    } else if (eval->parsed()) {
      std::cout << "wrote "
                << mtdbn::cli::eval_cmd(cfg, predictions_path, target_name)
                << "\n";
    }
    return kExitOk;
  } catch (const mtdbn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const mtdbn::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const mtdbn::TrainingError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
