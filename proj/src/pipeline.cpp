#include "posemb/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "posemb/rng.hpp"

namespace posemb {

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

// Stream tags hanging off the master seed.
constexpr std::uint64_t kSynthStream = 10;
constexpr std::uint64_t kSplitStream = 11;
constexpr std::uint64_t kAugStream = 12;
constexpr std::uint64_t kTrainStream = 13;
constexpr std::uint64_t kRandomRankStream = 14;
constexpr std::uint64_t kJointNoiseStream = 15;

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* expected) {
  throw std::invalid_argument(detail::cat("config: key '", key, "': cannot parse '", value,
                                          "' as ", expected));
}

long long to_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size()) bad_value(key, value, "an integer");
    return v;
  } catch (const std::invalid_argument&) {
    bad_value(key, value, "an integer");
  } catch (const std::out_of_range&) {
    bad_value(key, value, "an integer");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size() || value.front() == '-')
      bad_value(key, value, "an unsigned integer");
    return v;
  } catch (const std::invalid_argument&) {
    bad_value(key, value, "an unsigned integer");
  } catch (const std::out_of_range&) {
    bad_value(key, value, "an unsigned integer");
  }
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) bad_value(key, value, "a number");
    return v;
  } catch (const std::invalid_argument&) {
    bad_value(key, value, "a number");
  } catch (const std::out_of_range&) {
    bad_value(key, value, "a number");
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "a boolean (true/false/1/0)");
}

std::vector<int> to_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) bad_value(key, value, "a comma-separated integer list");
    out.push_back(static_cast<int>(to_int(key, item)));
  }
  if (out.empty()) bad_value(key, value, "a comma-separated integer list");
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_int_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

void write_manifest(const ordered_json& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(detail::cat("manifest ", path, ": cannot open for write"));
  out << manifest.dump(2) << '\n';
  if (!out) throw std::runtime_error(detail::cat("manifest ", path, ": write failed"));
}

}  // namespace

const char* kSeedEnvVar = "POSE_TRIPLET_SEED";

DerivedSeeds derive_seeds(std::uint64_t master) {
  DerivedSeeds s;
  s.synth = mix_seed(master, kSynthStream);
  s.split = mix_seed(master, kSplitStream);
  s.augmentation = mix_seed(master, kAugStream);
  s.train = mix_seed(master, kTrainStream);
  s.random_rank = mix_seed(master, kRandomRankStream);
  s.joint_noise = mix_seed(master, kJointNoiseStream);
  return s;
}

RunConfig default_desk_config() {
  RunConfig config;
  config.train.batch_size = 64;
  config.train.steps = 250;
  return config;
}

void RunConfig::validate() const {
  if (output_dir.empty()) throw std::invalid_argument("config: output_dir must not be empty");
  if (dataset_path.empty()) {
    if (use_existing_splits)
      throw std::invalid_argument("config: use_existing_splits requires a dataset file");
    if (synth_count < 1) throw std::invalid_argument("config: synth_count must be >= 1");
  }
  if (!use_existing_splits) {
    if (n_train == 0 || n_db == 0 || n_query == 0)
      throw std::invalid_argument("config: split sizes must be positive");
    const std::size_t want = n_train + n_db + n_query;
    if (dataset_path.empty() && static_cast<std::size_t>(synth_count) < want)
      throw std::invalid_argument(detail::cat("config: synth_count ", synth_count,
                                              " smaller than the splits' total ", want));
  }
  generator.validate();
  triplets.validate();
  augmentation.validate();
  canvas.validate();
  train.validate();
  if (model.embedding_dim < 1)
    throw std::invalid_argument("config: embedding_dim must be >= 1");
  for (int h : model.hidden)
    if (h < 1) throw std::invalid_argument("config: hidden sizes must be >= 1");
  if (k_values.empty()) throw std::invalid_argument("config: k_values must not be empty");
  for (std::size_t i = 0; i < k_values.size(); ++i) {
    if (k_values[i] < 1) throw std::invalid_argument("config: k_values must be >= 1");
    if (i > 0 && k_values[i] <= k_values[i - 1])
      throw std::invalid_argument("config: k_values must be strictly ascending");
  }
  if (hit_threshold < 0.0 || !std::isfinite(hit_threshold))
    throw std::invalid_argument("config: hit_threshold must be finite and non-negative");
  if (rel_slack < 0.0 || !std::isfinite(rel_slack))
    throw std::invalid_argument("config: rel_slack must be finite and non-negative");
  if (noise_sigma < 0.0 || !std::isfinite(noise_sigma))
    throw std::invalid_argument("config: noise_sigma must be finite and non-negative");
  if (write_renders < 0) throw std::invalid_argument("config: write_renders must be >= 0");
}

void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  if (key == "dataset") c.dataset_path = value;
  else if (key == "output_dir") c.output_dir = value;
  else if (key == "synth_count") c.synth_count = static_cast<int>(to_int(key, value));
  else if (key == "prototypes") c.generator.prototypes = static_cast<int>(to_int(key, value));
  else if (key == "latent_dims") c.generator.latent_dims = static_cast<int>(to_int(key, value));
  else if (key == "proto_angle_range") c.generator.proto_angle_range = to_double(key, value);
  else if (key == "angle_noise") c.generator.angle_noise = to_double(key, value);
  else if (key == "scale_jitter") c.generator.scale_jitter = to_double(key, value);
  else if (key == "translation_jitter") c.generator.translation_jitter = to_double(key, value);
  else if (key == "base_scale") c.generator.base_scale = to_double(key, value);
  else if (key == "n_train") c.n_train = static_cast<std::size_t>(to_u64(key, value));
  else if (key == "n_db") c.n_db = static_cast<std::size_t>(to_u64(key, value));
  else if (key == "n_query") c.n_query = static_cast<std::size_t>(to_u64(key, value));
  else if (key == "use_existing_splits") c.use_existing_splits = to_bool(key, value);
  else if (key == "seed") c.seed = to_u64(key, value);
  else if (key == "pos_threshold") c.triplets.pos_threshold = to_double(key, value);
  else if (key == "pos_closest_count")
    c.triplets.pos_closest_count = static_cast<int>(to_int(key, value));
  else if (key == "neg_threshold") c.triplets.neg_threshold = to_double(key, value);
  else if (key == "neg_cap") c.triplets.neg_cap = static_cast<int>(to_int(key, value));
  else if (key == "aug_scale_min") c.augmentation.scale_min = to_double(key, value);
  else if (key == "aug_scale_max") c.augmentation.scale_max = to_double(key, value);
  else if (key == "aug_translation") c.augmentation.translation_range = to_double(key, value);
  else if (key == "canvas_side") c.canvas.side = static_cast<int>(to_int(key, value));
  else if (key == "line_width") c.canvas.line_width = to_double(key, value);
  else if (key == "canvas_margin") c.canvas.margin = to_double(key, value);
  else if (key == "hidden") c.model.hidden = to_int_list(key, value);
  else if (key == "embedding_dim") c.model.embedding_dim = static_cast<int>(to_int(key, value));
  else if (key == "activation") {
    if (value == "tanh") c.model.activation = Activation::kTanh;
    else if (value == "relu") c.model.activation = Activation::kRelu;
    else bad_value(key, value, "tanh or relu");
  } else if (key == "normalize") c.model.normalize_output = to_bool(key, value);
  else if (key == "batch_size") c.train.batch_size = static_cast<int>(to_int(key, value));
  else if (key == "learning_rate") c.train.learning_rate = to_double(key, value);
  else if (key == "margin") c.train.margin = to_double(key, value);
  else if (key == "steps") c.train.steps = static_cast<int>(to_int(key, value));
  else if (key == "adagrad_epsilon") c.train.adagrad_epsilon = to_double(key, value);
  else if (key == "k_values") c.k_values = to_int_list(key, value);
  else if (key == "hit_threshold") c.hit_threshold = to_double(key, value);
  else if (key == "rel_slack") c.rel_slack = to_double(key, value);
  else if (key == "noise_sigma") c.noise_sigma = to_double(key, value);
  else if (key == "write_triplets") c.write_triplets = to_bool(key, value);
  else if (key == "write_renders") c.write_renders = static_cast<int>(to_int(key, value));
  else if (key == "write_ranklists") c.write_ranklists = to_bool(key, value);
  else throw std::invalid_argument(detail::cat("config: unknown key '", key, "'"));
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(detail::cat("config ", path, ": cannot open"));
  RunConfig config = default_desk_config();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(detail::cat("config ", path, ": line ", line_no,
                                           ": expected key = value"));
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error(detail::cat("config ", path, ": line ", line_no, ": empty key"));
    try {
      apply_setting(config, key, value);
    } catch (const std::exception& e) {
      throw std::runtime_error(detail::cat("config ", path, ": line ", line_no, ": ", e.what()));
    }
  }
  return config;
}

std::vector<std::pair<std::string, std::string>> config_settings(const RunConfig& c) {
  std::vector<std::pair<std::string, std::string>> s;
  s.emplace_back("dataset", c.dataset_path);
  s.emplace_back("output_dir", c.output_dir);
  s.emplace_back("synth_count", std::to_string(c.synth_count));
  s.emplace_back("prototypes", std::to_string(c.generator.prototypes));
  s.emplace_back("latent_dims", std::to_string(c.generator.latent_dims));
  s.emplace_back("proto_angle_range", fmt_double(c.generator.proto_angle_range));
  s.emplace_back("angle_noise", fmt_double(c.generator.angle_noise));
  s.emplace_back("scale_jitter", fmt_double(c.generator.scale_jitter));
  s.emplace_back("translation_jitter", fmt_double(c.generator.translation_jitter));
  s.emplace_back("base_scale", fmt_double(c.generator.base_scale));
  s.emplace_back("n_train", std::to_string(c.n_train));
  s.emplace_back("n_db", std::to_string(c.n_db));
  s.emplace_back("n_query", std::to_string(c.n_query));
  s.emplace_back("use_existing_splits", c.use_existing_splits ? "true" : "false");
  s.emplace_back("seed", std::to_string(c.seed));
  s.emplace_back("pos_threshold", fmt_double(c.triplets.pos_threshold));
  s.emplace_back("pos_closest_count", std::to_string(c.triplets.pos_closest_count));
  s.emplace_back("neg_threshold", fmt_double(c.triplets.neg_threshold));
  s.emplace_back("neg_cap", std::to_string(c.triplets.neg_cap));
  s.emplace_back("aug_scale_min", fmt_double(c.augmentation.scale_min));
  s.emplace_back("aug_scale_max", fmt_double(c.augmentation.scale_max));
  s.emplace_back("aug_translation", fmt_double(c.augmentation.translation_range));
  s.emplace_back("canvas_side", std::to_string(c.canvas.side));
  s.emplace_back("line_width", fmt_double(c.canvas.line_width));
  s.emplace_back("canvas_margin", fmt_double(c.canvas.margin));
  s.emplace_back("hidden", fmt_int_list(c.model.hidden));
  s.emplace_back("embedding_dim", std::to_string(c.model.embedding_dim));
  s.emplace_back("activation", to_string(c.model.activation));
  s.emplace_back("normalize", c.model.normalize_output ? "true" : "false");
  s.emplace_back("batch_size", std::to_string(c.train.batch_size));
  s.emplace_back("learning_rate", fmt_double(c.train.learning_rate));
  s.emplace_back("margin", fmt_double(c.train.margin));
  s.emplace_back("steps", std::to_string(c.train.steps));
  s.emplace_back("adagrad_epsilon", fmt_double(c.train.adagrad_epsilon));
  s.emplace_back("k_values", fmt_int_list(c.k_values));
  s.emplace_back("hit_threshold", fmt_double(c.hit_threshold));
  s.emplace_back("rel_slack", fmt_double(c.rel_slack));
  s.emplace_back("noise_sigma", fmt_double(c.noise_sigma));
  s.emplace_back("write_triplets", c.write_triplets ? "true" : "false");
  s.emplace_back("write_renders", std::to_string(c.write_renders));
  s.emplace_back("write_ranklists", c.write_ranklists ? "true" : "false");
  return s;
}

bool apply_env_seed(RunConfig& config) {
  const char* raw = std::getenv(kSeedEnvVar);
  if (raw == nullptr || *raw == '\0') return false;
  try {
    config.seed = to_u64(kSeedEnvVar, raw);
  } catch (const std::exception&) {
    throw std::invalid_argument(detail::cat("environment variable ", kSeedEnvVar,
                                            ": cannot parse '", raw, "' as an unsigned integer"));
  }
  return true;
}

RunReport run_pipeline(const RunConfig& config) {
  config.validate();
  const DerivedSeeds seeds = derive_seeds(config.seed);
  fs::create_directories(config.output_dir);
  const auto path_of = [&](const char* name) {
    return (fs::path(config.output_dir) / name).string();
  };

  ordered_json manifest;
  manifest["tool"] = "posemb";
  manifest["version"] = "0.1.0";
  ordered_json config_echo;
  for (const auto& [key, value] : config_settings(config)) config_echo[key] = value;
  manifest["config"] = std::move(config_echo);
  manifest["derived_seeds"] = {{"synth", seeds.synth},
                               {"split", seeds.split},
                               {"augmentation", seeds.augmentation},
                               {"train", seeds.train},
                               {"random_rank", seeds.random_rank},
                               {"joint_noise", seeds.joint_noise}};

  RunReport report;
  report.output_dir = config.output_dir;
  std::vector<std::string> outputs;
  std::string stage = "setup";
  try {
    stage = "data";
    PoseDataset pool;
    if (config.dataset_path.empty()) {
      pool = generate_synthetic(config.synth_count, seeds.synth, config.generator);
      report.accepted = pool.size();
    } else {
      LoadReport loaded = load_annotations(config.dataset_path);
      report.accepted = loaded.accepted;
      report.rejected = loaded.rejected;
      pool = std::move(loaded.dataset);
    }
    PoseDataset data;
    if (config.use_existing_splits) {
      data = std::move(pool);
      for (Split split : {Split::kTrain, Split::kDatabase, Split::kQuery})
        if (data.count_of(split) == 0)
          throw std::runtime_error(detail::cat("pipeline: dataset has no ", to_string(split),
                                               " poses"));
    } else {
      data = split_dataset(pool, config.n_train, config.n_db, config.n_query, seeds.split);
    }
    report.dataset_size = data.size();
    save_annotations(data, path_of("poses.jsonl"));
    outputs.push_back("poses.jsonl");

    stage = "mine";
    const TripletIndex index(data, config.triplets);
    report.triplet_count = index.size();
    if (config.write_triplets) {
      dump_triplets(TripletStream(data, config.triplets), path_of("triplets.txt"));
      outputs.push_back("triplets.txt");
    }

    stage = "train";
    AugmentationSpec aug = config.augmentation;
    aug.seed = seeds.augmentation;
    RenderPipeline render(config.canvas, aug);
    TrainConfig train_config = config.train;
    train_config.seed = seeds.train;
    TrainResult trained = train_model(data, index, render, config.model, train_config);
    report.loss_by_step = trained.loss_by_step;
    write_loss_csv(trained.loss_by_step, path_of("loss.csv"));
    outputs.push_back("loss.csv");
    save_model(trained.model, path_of("model.ckpt"));
    outputs.push_back("model.ckpt");

    stage = "embed";
    const EmbeddingTable db_table = embed_all(trained.model, data, Split::kDatabase, render);
    const EmbeddingTable query_table = embed_all(trained.model, data, Split::kQuery, render);

    stage = "rank";
    const int k_max = config.k_values.back();
    const std::vector<Pose> query_poses = data.poses_of(Split::kQuery);
    const std::vector<Pose> db_poses = data.poses_of(Split::kDatabase);
    const DistanceGrid learned_grid = embedding_distance_grid(query_table, db_table);
    const DistanceGrid oracle_grid = pose_distance_grid(query_poses, db_poses);
    const DistanceGrid noisy_grid = pose_distance_grid(
        perturb_joints(query_poses, config.noise_sigma, mix_seed(seeds.joint_noise, 1)),
        perturb_joints(db_poses, config.noise_sigma, mix_seed(seeds.joint_noise, 2)));
    const DistanceGrid fused_grid = fuse_distances(learned_grid, noisy_grid);

    struct Method {
      const char* name;
      std::vector<RankList> lists;
    };
    std::vector<Method> methods;
    methods.push_back({"learned", rank_all(learned_grid, k_max)});
    methods.push_back({"oracle", rank_all(oracle_grid, k_max)});
    methods.push_back({"random", random_ranklists(oracle_grid.query_ids, oracle_grid.db_ids,
                                                  k_max, seeds.random_rank)});
    methods.push_back({"noisy_joints", rank_all(noisy_grid, k_max)});
    methods.push_back({"fused", rank_all(fused_grid, k_max)});
    if (config.write_ranklists) {
      write_ranklists(methods.front().lists, path_of("ranklists.txt"));
      outputs.push_back("ranklists.txt");
    }

    stage = "metrics";
    std::size_t oracle_pos = 0;
    for (const Method& method : methods) {
      MethodMetrics mm;
      mm.method = method.name;
      mm.curves.push_back(pose_difference_at_k(method.lists, data, config.k_values));
      mm.curves.push_back(
          hit_at_k_absolute(method.lists, data, config.k_values, config.hit_threshold));
      mm.curves.push_back(
          hit_at_k_relative(method.lists, data, db_poses, config.k_values, config.rel_slack));
      for (const MetricCurve& curve : mm.curves) check_metric_invariants(curve);
      if (mm.method == "oracle") {
        oracle_pos = report.metrics.size();
        for (double v : mm.curves[2].values)
          if (v != 1.0)
            throw std::runtime_error("pipeline: oracle relative-hit curve is not exactly 1");
      }
      report.metrics.push_back(std::move(mm));
    }
    // The oracle ranks by the scoring distance itself, so it bounds every
    // method at every K.
    const MethodMetrics& oracle = report.metrics[oracle_pos];
    for (const MethodMetrics& mm : report.metrics) {
      for (std::size_t ki = 0; ki < config.k_values.size(); ++ki) {
        if (oracle.curves[0].values[ki] > mm.curves[0].values[ki])
          throw std::runtime_error(detail::cat("pipeline: ", mm.method,
                                               " beats the oracle on pose_difference at K=",
                                               config.k_values[ki]));
        for (std::size_t c = 1; c <= 2; ++c)
          if (oracle.curves[c].values[ki] < mm.curves[c].values[ki])
            throw std::runtime_error(detail::cat("pipeline: ", mm.method, " beats the oracle on ",
                                                 to_string(mm.curves[c].kind), " at K=",
                                                 config.k_values[ki]));
      }
    }
    write_metrics_csv(report.metrics, path_of("metrics.csv"));
    outputs.push_back("metrics.csv");

    stage = "renders";
    if (config.write_renders > 0) {
      const fs::path render_dir = fs::path(config.output_dir) / "renders";
      fs::create_directories(render_dir);
      const std::vector<PoseId> query_ids = data.ids_of(Split::kQuery);
      const int n = std::min<int>(config.write_renders, static_cast<int>(query_ids.size()));
      for (int i = 0; i < n; ++i) {
        const ImageGrid img = render.render_plain(data.pose_by_id(query_ids[i]));
        write_pgm(img, (render_dir / detail::cat("pose_", query_ids[i], ".pgm")).string());
      }
      outputs.push_back("renders");
    }

    stage = "manifest";
    manifest["status"] = "complete";
    manifest["data"] = {{"total", report.dataset_size},
                        {"accepted", report.accepted},
                        {"rejected", report.rejected},
                        {"train", data.count_of(Split::kTrain)},
                        {"database", data.count_of(Split::kDatabase)},
                        {"query", data.count_of(Split::kQuery)},
                        {"triplets", report.triplet_count}};
    manifest["model"] = {{"layer_sizes", trained.model.layer_sizes},
                         {"parameters", trained.model.parameter_count()},
                         {"activation", to_string(trained.model.activation)},
                         {"normalize", trained.model.normalize_output}};
    ordered_json loss_info;
    loss_info["steps"] = report.loss_by_step.size();
    if (!report.loss_by_step.empty()) {
      loss_info["first"] = report.loss_by_step.front();
      loss_info["last"] = report.loss_by_step.back();
    }
    manifest["loss"] = std::move(loss_info);
    manifest["outputs"] = outputs;
    write_manifest(manifest, path_of("manifest.json"));
  } catch (...) {
    manifest["status"] = "failed";
    manifest["failed_stage"] = stage;
    manifest["outputs"] = outputs;
    try {
      write_manifest(manifest, path_of("manifest.json"));
    } catch (...) {
      // The original error is the one worth reporting.
    }
    throw;
  }
  return report;
}

}  // namespace posemb
