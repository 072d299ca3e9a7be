// Command-line front end: synth | mine | train | embed | retrieve | eval | run.
// Every subcommand reads an optional --config file and applies flag overrides
// on top; --set key=value reaches any config key.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "posemb/dataset_io.hpp"
#include "posemb/mining.hpp"
#include "posemb/model.hpp"
#include "posemb/pipeline.hpp"
#include "posemb/pose.hpp"
#include "posemb/render.hpp"
#include "posemb/retrieval.hpp"
#include "posemb/rng.hpp"

namespace {

using namespace posemb;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "flat key = value configuration file");
  cmd->add_option("--set", opts.sets, "override any config key, e.g. --set steps=100")
      ->take_all();
  cmd->add_option("--seed", opts.seed,
                  detail::cat("master seed (overrides config file and ", kSeedEnvVar, ")"));
  cmd->add_option("--out-dir", opts.output_dir, "output directory");
}

RunConfig build_config(const CommonOpts& opts) {
  RunConfig config =
      opts.config_path.empty() ? default_desk_config() : load_config_file(opts.config_path);
  apply_env_seed(config);
  for (const std::string& kv : opts.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw std::invalid_argument(detail::cat("--set expects key=value, got '", kv, "'"));
    apply_setting(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (opts.seed) config.seed = *opts.seed;
  if (opts.output_dir) config.output_dir = *opts.output_dir;
  return config;
}

PoseDataset load_dataset(const std::string& path) {
  LoadReport report = load_annotations(path);
  std::cout << "loaded " << report.accepted << " poses from " << path;
  if (report.rejected > 0) std::cout << " (" << report.rejected << " rejected)";
  std::cout << "\n";
  return std::move(report.dataset);
}

RenderPipeline make_render(const RunConfig& config) {
  AugmentationSpec aug = config.augmentation;
  aug.seed = derive_seeds(config.seed).augmentation;
  return RenderPipeline(config.canvas, aug);
}

void write_embeddings_csv(const EmbeddingTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(detail::cat("embeddings ", path, ": cannot open for write"));
  char buf[64];
  for (std::size_t i = 0; i < table.ids.size(); ++i) {
    out << table.ids[i];
    const double* row = table.vectors.row(static_cast<int>(i));
    for (int c = 0; c < table.vectors.cols; ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", row[c]);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error(detail::cat("embeddings ", path, ": write failed"));
}

void print_metrics(const std::vector<MethodMetrics>& metrics) {
  std::printf("%-14s %-16s", "method", "metric");
  if (!metrics.empty())
    for (int k : metrics.front().curves.front().k_values) std::printf(" K=%-8d", k);
  std::printf("\n");
  for (const MethodMetrics& mm : metrics) {
    for (const MetricCurve& curve : mm.curves) {
      std::printf("%-14s %-16s", mm.method.c_str(), to_string(curve.kind));
      for (double v : curve.values) std::printf(" %-10.4f", v);
      std::printf("\n");
    }
  }
}

int cmd_synth(const CommonOpts& opts, int count_override, const std::string& out_path,
              bool do_split) {
  RunConfig config = build_config(opts);
  const int n = count_override > 0 ? count_override : config.synth_count;
  const DerivedSeeds seeds = derive_seeds(config.seed);
  PoseDataset data = generate_synthetic(n, seeds.synth, config.generator);
  if (do_split)
    data = split_dataset(data, config.n_train, config.n_db, config.n_query, seeds.split);
  save_annotations(data, out_path);
  std::cout << "wrote " << data.size() << " poses to " << out_path << "\n";
  return 0;
}

int cmd_mine(const CommonOpts& opts, const std::string& dataset_path,
             const std::string& out_path) {
  const RunConfig config = build_config(opts);
  const PoseDataset data = load_dataset(dataset_path);
  const TripletStream stream(data, config.triplets);
  const std::uint64_t total = stream.count();
  if (!out_path.empty()) {
    dump_triplets(stream, out_path);
    std::cout << "wrote " << total << " triplets to " << out_path << "\n";
  } else {
    std::cout << total << " triplets over " << data.count_of(Split::kTrain)
              << " train poses\n";
  }
  return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& dataset_path) {
  RunConfig config = build_config(opts);
  const PoseDataset data = load_dataset(dataset_path);
  const DerivedSeeds seeds = derive_seeds(config.seed);
  const TripletIndex index(data, config.triplets);
  std::cout << "mined " << index.size() << " triplets\n";
  RenderPipeline render = make_render(config);
  TrainConfig train_config = config.train;
  train_config.seed = seeds.train;
  const TrainResult trained = train_model(data, index, render, config.model, train_config);
  std::filesystem::create_directories(config.output_dir);
  const std::string ckpt = config.output_dir + "/model.ckpt";
  const std::string loss = config.output_dir + "/loss.csv";
  save_model(trained.model, ckpt);
  write_loss_csv(trained.loss_by_step, loss);
  std::cout << "trained " << train_config.steps << " steps";
  if (!trained.loss_by_step.empty())
    std::cout << ", loss " << trained.loss_by_step.front() << " -> "
              << trained.loss_by_step.back();
  std::cout << "\nwrote " << ckpt << " and " << loss << "\n";
  return 0;
}

int cmd_embed(const CommonOpts& opts, const std::string& dataset_path,
              const std::string& model_path, const std::string& split_name,
              const std::string& out_path) {
  RunConfig config = build_config(opts);
  const PoseDataset data = load_dataset(dataset_path);
  const EmbeddingModel model = load_model(model_path);
  const auto split = split_from_string(split_name);
  if (!split)
    throw std::invalid_argument(detail::cat("unknown split '", split_name,
                                            "' (train|database|query)"));
  RenderPipeline render = make_render(config);
  const EmbeddingTable table = embed_all(model, data, *split, render);
  write_embeddings_csv(table, out_path);
  std::cout << "wrote " << table.size() << " embeddings (dim " << table.vectors.cols
            << ") to " << out_path << "\n";
  return 0;
}

int cmd_retrieve(const CommonOpts& opts, const std::string& dataset_path,
                 const std::string& model_path, int k, const std::string& out_path) {
  RunConfig config = build_config(opts);
  const PoseDataset data = load_dataset(dataset_path);
  const EmbeddingModel model = load_model(model_path);
  RenderPipeline render = make_render(config);
  const EmbeddingTable db = embed_all(model, data, Split::kDatabase, render);
  const EmbeddingTable queries = embed_all(model, data, Split::kQuery, render);
  const int k_eff = k > 0 ? k : config.k_values.back();
  const std::vector<RankList> lists = rank_all(embedding_distance_grid(queries, db), k_eff);
  write_ranklists(lists, out_path);
  std::cout << "wrote top-" << k_eff << " lists for " << lists.size() << " queries to "
            << out_path << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& dataset_path,
             const std::string& model_path) {
  RunConfig config = build_config(opts);
  const PoseDataset data = load_dataset(dataset_path);
  const EmbeddingModel model = load_model(model_path);
  const DerivedSeeds seeds = derive_seeds(config.seed);
  RenderPipeline render = make_render(config);

  const EmbeddingTable db = embed_all(model, data, Split::kDatabase, render);
  const EmbeddingTable queries = embed_all(model, data, Split::kQuery, render);
  const std::vector<Pose> query_poses = data.poses_of(Split::kQuery);
  const std::vector<Pose> db_poses = data.poses_of(Split::kDatabase);
  const int k_max = config.k_values.back();

  const DistanceGrid learned = embedding_distance_grid(queries, db);
  const DistanceGrid oracle = pose_distance_grid(query_poses, db_poses);
  const DistanceGrid noisy = pose_distance_grid(
      perturb_joints(query_poses, config.noise_sigma, mix_seed(seeds.joint_noise, 1)),
      perturb_joints(db_poses, config.noise_sigma, mix_seed(seeds.joint_noise, 2)));
  const DistanceGrid fused = fuse_distances(learned, noisy);

  struct Entry {
    const char* name;
    std::vector<RankList> lists;
  };
  const std::vector<Entry> entries = {
      {"learned", rank_all(learned, k_max)},
      {"oracle", rank_all(oracle, k_max)},
      {"random", random_ranklists(oracle.query_ids, oracle.db_ids, k_max, seeds.random_rank)},
      {"noisy_joints", rank_all(noisy, k_max)},
      {"fused", rank_all(fused, k_max)},
  };
  std::vector<MethodMetrics> metrics;
  for (const Entry& entry : entries) {
    MethodMetrics mm;
    mm.method = entry.name;
    mm.curves.push_back(pose_difference_at_k(entry.lists, data, config.k_values));
    mm.curves.push_back(
        hit_at_k_absolute(entry.lists, data, config.k_values, config.hit_threshold));
    mm.curves.push_back(
        hit_at_k_relative(entry.lists, data, db_poses, config.k_values, config.rel_slack));
    for (const MetricCurve& curve : mm.curves) check_metric_invariants(curve);
    metrics.push_back(std::move(mm));
  }
  std::filesystem::create_directories(config.output_dir);
  const std::string csv = config.output_dir + "/metrics.csv";
  write_metrics_csv(metrics, csv);
  print_metrics(metrics);
  std::cout << "wrote " << csv << "\n";
  return 0;
}

int cmd_run(const CommonOpts& opts) {
  const RunConfig config = build_config(opts);
  const RunReport report = run_pipeline(config);
  std::cout << "dataset: " << report.dataset_size << " poses, triplets: "
            << report.triplet_count << "\n";
  if (!report.loss_by_step.empty())
    std::cout << "loss: " << report.loss_by_step.front() << " -> "
              << report.loss_by_step.back() << " over " << report.loss_by_step.size()
              << " steps\n";
  print_metrics(report.metrics);
  std::cout << "artifacts in " << report.output_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pose embedding training and retrieval evaluation"};
  app.require_subcommand(1);

  CommonOpts synth_opts, mine_opts, train_opts, embed_opts, retrieve_opts, eval_opts, run_opts;

  auto* synth = app.add_subcommand("synth", "generate a synthetic pose dataset");
  add_common(synth, synth_opts);
  int synth_count = 0;
  std::string synth_out = "poses.jsonl";
  bool synth_split = false;
  synth->add_option("-n,--count", synth_count, "number of poses (default: config synth_count)");
  synth->add_option("-o,--out", synth_out, "output JSON-lines file");
  synth->add_flag("--split", synth_split, "also assign train/database/query tags");

  auto* mine = app.add_subcommand("mine", "enumerate triplets from a dataset's train split");
  add_common(mine, mine_opts);
  std::string mine_dataset, mine_out;
  mine->add_option("--dataset", mine_dataset, "JSON-lines pose file")->required();
  mine->add_option("-o,--out", mine_out, "triplet list output (omit to just count)");

  auto* train = app.add_subcommand("train", "train the embedding on a dataset's train split");
  add_common(train, train_opts);
  std::string train_dataset;
  train->add_option("--dataset", train_dataset, "JSON-lines pose file")->required();

  auto* embed = app.add_subcommand("embed", "embed one split with a trained model");
  add_common(embed, embed_opts);
  std::string embed_dataset, embed_model, embed_split = "database",
              embed_out = "embeddings.csv";
  embed->add_option("--dataset", embed_dataset, "JSON-lines pose file")->required();
  embed->add_option("--model", embed_model, "model checkpoint")->required();
  embed->add_option("--split", embed_split, "train|database|query (default database)");
  embed->add_option("-o,--out", embed_out, "embeddings CSV output");

  auto* retrieve = app.add_subcommand("retrieve", "rank the database for every query");
  add_common(retrieve, retrieve_opts);
  std::string retrieve_dataset, retrieve_model, retrieve_out = "ranklists.txt";
  int retrieve_k = 0;
  retrieve->add_option("--dataset", retrieve_dataset, "JSON-lines pose file")->required();
  retrieve->add_option("--model", retrieve_model, "model checkpoint")->required();
  retrieve->add_option("-k", retrieve_k, "rank-list length (default: largest configured K)");
  retrieve->add_option("-o,--out", retrieve_out, "rank-list output");

  auto* eval = app.add_subcommand("eval", "compute retrieval metrics for a trained model");
  add_common(eval, eval_opts);
  std::string eval_dataset, eval_model;
  eval->add_option("--dataset", eval_dataset, "JSON-lines pose file")->required();
  eval->add_option("--model", eval_model, "model checkpoint")->required();

  auto* run = app.add_subcommand("run", "full pipeline: data, mine, train, embed, evaluate");
  add_common(run, run_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_opts, synth_count, synth_out, synth_split);
    if (mine->parsed()) return cmd_mine(mine_opts, mine_dataset, mine_out);
    if (train->parsed()) return cmd_train(train_opts, train_dataset);
    if (embed->parsed())
      return cmd_embed(embed_opts, embed_dataset, embed_model, embed_split, embed_out);
    if (retrieve->parsed())
      return cmd_retrieve(retrieve_opts, retrieve_dataset, retrieve_model, retrieve_k,
                          retrieve_out);
    if (eval->parsed()) return cmd_eval(eval_opts, eval_dataset, eval_model);
    if (run->parsed()) return cmd_run(run_opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
