#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "posemb/dataset_io.hpp"
#include "posemb/mining.hpp"
#include "posemb/model.hpp"
#include "posemb/render.hpp"
#include "posemb/retrieval.hpp"

namespace posemb {

/// Everything one `run` needs, serializable as flat key=value text. A single
/// master seed drives every stage through fixed derivation streams.
struct RunConfig {
  // Data source: JSON-lines annotations, or the synthetic generator when empty.
  std::string dataset_path;
  int synth_count = 2000;
  GeneratorSpec generator;

  std::size_t n_train = 1000;
  std::size_t n_db = 800;
  std::size_t n_query = 200;
  bool use_existing_splits = false;

  std::uint64_t seed = 42;

  TripletSpec triplets;
  AugmentationSpec augmentation;  // seed field is derived from `seed` at run time
  CanvasSpec canvas;
  ModelSpec model;
  TrainConfig train;  // seed field is derived from `seed` at run time

  std::vector<int> k_values = {1, 5, 10, 20};
  double hit_threshold = kDefaultHitThreshold;
  double rel_slack = kDefaultRelativeSlack;
  double noise_sigma = 6.0;  // joint noise of the fusion stand-in method

  std::string output_dir = "out";
  bool write_triplets = false;
  int write_renders = 0;  // PGM dumps of the first N query poses
  bool write_ranklists = false;

  void validate() const;
};

/// Fixed streams hanging off RunConfig::seed.
struct DerivedSeeds {
  std::uint64_t synth = 0;
  std::uint64_t split = 0;
  std::uint64_t augmentation = 0;
  std::uint64_t train = 0;
  std::uint64_t random_rank = 0;
  std::uint64_t joint_noise = 0;
};

DerivedSeeds derive_seeds(std::uint64_t master);

RunConfig default_desk_config();

/// Applies one textual setting; throws on unknown keys or unparseable values.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

/// Flat `key = value` file, # comments and blank lines allowed.
RunConfig load_config_file(const std::string& path);

/// Canonical textual form of every setting, in documented key order.
std::vector<std::pair<std::string, std::string>> config_settings(const RunConfig& config);

/// Environment fallback for the master seed; explicit flags override it.
extern const char* kSeedEnvVar;  // "POSE_TRIPLET_SEED"
bool apply_env_seed(RunConfig& config);

struct RunReport {
  std::string output_dir;
  std::size_t dataset_size = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::uint64_t triplet_count = 0;
  std::vector<double> loss_by_step;
  std::vector<MethodMetrics> metrics;  // learned, oracle, random, noisy, fused
};

/// mine -> train -> embed -> rank -> metrics, all artifacts written under
/// config.output_dir: poses.jsonl, loss.csv, model.ckpt, metrics.csv,
/// manifest.json, plus optional triplets.txt, ranklists.txt and renders/.
/// Metric invariants (monotonicity, oracle dominance, relative-hit identity)
/// are asserted before anything is reported. On stage failure the manifest
/// records the failed stage, then the error propagates.
RunReport run_pipeline(const RunConfig& config);

}  // namespace posemb
