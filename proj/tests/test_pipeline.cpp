#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "posemb/dataset_io.hpp"
#include "posemb/pipeline.hpp"
#include "posemb/rng.hpp"
#include "test_util.hpp"

using namespace posemb;
using namespace posemb::testutil;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

std::string joints_json(double x0) {
  std::string js = "[";
  for (int j = 0; j < kJointCount; ++j) {
    if (j) js += ",";
    js += "[" + std::to_string(x0 + j) + "," + std::to_string(2.0 * j) + "]";
  }
  return js + "]";
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Small run that exercises every pipeline stage in a couple of seconds.
RunConfig tiny_config(const std::string& out_dir) {
  RunConfig c;
  c.synth_count = 90;
  c.n_train = 40;
  c.n_db = 30;
  c.n_query = 20;
  c.canvas.side = 16;
  c.model.hidden = {16};
  c.model.embedding_dim = 4;
  c.train.batch_size = 8;
  c.train.steps = 3;
  c.k_values = {1, 2, 5};
  c.output_dir = out_dir;
  return c;
}

}  // namespace

TEST_CASE("annotation ingestion accepts, rejects, and counts") {
  TempDir dir("posemb_ingest");
  fs::path file = dir.path / "poses.jsonl";
  std::ostringstream out;
  out << R"({"id": 1, "joints": )" << joints_json(0.0) << "}\n";
  out << "\n";  // blank lines are skipped
  out << R"({"id": 2, "joints": )" << joints_json(50.0) << R"(, "split": "query"})" << "\n";
  // Wrong joint count: rejected, not fatal.
  out << R"({"id": 3, "joints": [[1, 2], [3, 4]]})" << "\n";
  // Wrong type: rejected.
  out << R"({"id": 4, "joints": "none"})" << "\n";
  out << R"({"id": 5, "joints": )" << joints_json(-20.0) << R"(, "split": "database"})" << "\n";
  spit(file, out.str());

  LoadReport report = load_annotations(file.string());
  CHECK(report.accepted == 3);
  CHECK(report.rejected == 2);
  CHECK(report.dataset.size() == 3);
  CHECK(report.dataset.split_of(1) == Split::kTrain);
  CHECK(report.dataset.split_of(2) == Split::kQuery);
  CHECK(report.dataset.split_of(5) == Split::kDatabase);
  CHECK(report.dataset.pose_by_id(2).joints[3].x == 53.0);
}

TEST_CASE("annotation ingestion hard errors carry line numbers") {
  TempDir dir("posemb_ingest_err");
  fs::path file = dir.path / "poses.jsonl";

  SUBCASE("unparseable line") {
    spit(file, R"({"id": 1, "joints": )" + joints_json(0.0) + "}\n{not json\n");
    try {
      load_annotations(file.string());
      FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("duplicate id") {
    std::string rec = R"({"id": 7, "joints": )" + joints_json(0.0) + "}\n";
    spit(file, rec + rec);
    try {
      load_annotations(file.string());
      FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("nothing accepted") {
    spit(file, R"({"id": 3, "joints": [[1, 2]]})" "\n");
    CHECK_THROWS_AS(load_annotations(file.string()), std::runtime_error);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_annotations((dir.path / "absent.jsonl").string()), std::runtime_error);
  }
}

TEST_CASE("annotations round-trip exactly through save and load") {
  TempDir dir("posemb_roundtrip");
  Rng rng = make_rng(81);
  PoseDataset ds;
  ds.add(random_pose(rng, 3), Split::kTrain);
  ds.add(random_pose(rng, 1), Split::kQuery);
  ds.add(random_pose(rng, 2), Split::kDatabase);

  fs::path file = dir.path / "out.jsonl";
  save_annotations(ds, file.string());
  LoadReport report = load_annotations(file.string());
  CHECK(report.accepted == 3);
  CHECK(report.rejected == 0);
  for (PoseId id : {1, 2, 3}) {
    const Pose& a = ds.pose_by_id(id);
    const Pose& b = report.dataset.pose_by_id(id);
    CHECK(report.dataset.split_of(id) == ds.split_of(id));
    for (int j = 0; j < kJointCount; ++j) {
      CHECK(a.joints[j].x == b.joints[j].x);
      CHECK(a.joints[j].y == b.joints[j].y);
    }
  }
}

TEST_CASE("synthetic generation is deterministic with stable per-sample draws") {
  PoseDataset a = generate_synthetic(50, 9);
  PoseDataset b = generate_synthetic(50, 9);
  PoseDataset head = generate_synthetic(10, 9);
  REQUIRE(a.size() == 50);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.pose_at(i).id == static_cast<PoseId>(i));
    CHECK(a.split_at(i) == Split::kTrain);
    std::string reason;
    CHECK(pose_is_valid(a.pose_at(i), &reason));
    for (int j = 0; j < kJointCount; ++j) {
      CHECK(a.pose_at(i).joints[j].x == b.pose_at(i).joints[j].x);
      CHECK(a.pose_at(i).joints[j].y == b.pose_at(i).joints[j].y);
      if (i < head.size()) {
        CHECK(a.pose_at(i).joints[j].x == head.pose_at(i).joints[j].x);
        CHECK(a.pose_at(i).joints[j].y == head.pose_at(i).joints[j].y);
      }
    }
  }

  PoseDataset other = generate_synthetic(50, 10);
  bool differs = false;
  for (std::size_t i = 0; i < a.size() && !differs; ++i)
    differs = a.pose_at(i).joints[0].x != other.pose_at(i).joints[0].x;
  CHECK(differs);
}

TEST_CASE("prototype clusters separate when the angle noise is small") {
  GeneratorSpec spec;
  spec.prototypes = 2;
  spec.angle_noise = 0.05;
  spec.translation_jitter = 0.0;
  spec.scale_jitter = 0.0;
  PoseDataset ds = generate_synthetic(30, 4, spec);

  double max_within = 0.0;
  double min_cross = 1e18;
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t j = i + 1; j < ds.size(); ++j) {
      double d = pose_distance(ds.pose_at(i), ds.pose_at(j));
      if (i % 2 == j % 2)
        max_within = std::max(max_within, d);
      else
        min_cross = std::min(min_cross, d);
    }
  CHECK(max_within < min_cross);
}

TEST_CASE("generator spec validation") {
  GeneratorSpec spec;
  spec.prototypes = 0;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = {};
  spec.latent_dims = 0;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = {};
  spec.angle_noise = -0.1;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = {};
  spec.scale_jitter = 1.0;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = {};
  spec.base_scale = 0.0;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  CHECK_THROWS_AS(generate_synthetic(0, 1), std::invalid_argument);
}

TEST_CASE("split assignment partitions, is stable, and ignores insertion order") {
  PoseDataset base = generate_synthetic(100, 12);
  PoseDataset split = split_dataset(base, 60, 25, 10, 7);
  CHECK(split.size() == 95);
  CHECK(split.count_of(Split::kTrain) == 60);
  CHECK(split.count_of(Split::kDatabase) == 25);
  CHECK(split.count_of(Split::kQuery) == 10);

  std::set<PoseId> seen;
  for (std::size_t i = 0; i < split.size(); ++i) {
    CHECK(base.contains(split.pose_at(i).id));
    CHECK(seen.insert(split.pose_at(i).id).second);
  }

  PoseDataset again = split_dataset(base, 60, 25, 10, 7);
  for (Split s : {Split::kTrain, Split::kDatabase, Split::kQuery})
    CHECK(split.ids_of(s) == again.ids_of(s));

  PoseDataset reversed;
  for (std::size_t i = base.size(); i-- > 0;) reversed.add(base.pose_at(i));
  PoseDataset from_reversed = split_dataset(reversed, 60, 25, 10, 7);
  for (Split s : {Split::kTrain, Split::kDatabase, Split::kQuery})
    CHECK(split.ids_of(s) == from_reversed.ids_of(s));

  PoseDataset other_seed = split_dataset(base, 60, 25, 10, 8);
  CHECK(split.ids_of(Split::kTrain) != other_seed.ids_of(Split::kTrain));

  CHECK_THROWS_AS(split_dataset(base, 90, 20, 5, 7), std::invalid_argument);
  CHECK_THROWS_AS(split_dataset(base, 0, 50, 50, 7), std::invalid_argument);
}

TEST_CASE("splitting scales to the full annotation corpus size") {
  PoseDataset base = generate_synthetic(19919, 3);
  PoseDataset split = split_dataset(base, 10000, 8000, 1919, 42);
  CHECK(split.size() == 19919);
  CHECK(split.count_of(Split::kTrain) == 10000);
  CHECK(split.count_of(Split::kDatabase) == 8000);
  CHECK(split.count_of(Split::kQuery) == 1919);
}

TEST_CASE("config defaults and textual settings") {
  RunConfig c = default_desk_config();
  CHECK(c.synth_count == 2000);
  CHECK(c.n_train == 1000);
  CHECK(c.n_db == 800);
  CHECK(c.n_query == 200);
  CHECK(c.train.steps == 250);
  CHECK(c.train.batch_size == 64);
  CHECK(c.k_values == std::vector<int>{1, 5, 10, 20});
  CHECK_NOTHROW(c.validate());

  apply_setting(c, "seed", "99");
  CHECK(c.seed == 99);
  apply_setting(c, "hidden", "32,16");
  CHECK(c.model.hidden == std::vector<int>{32, 16});
  apply_setting(c, "activation", "relu");
  CHECK(c.model.activation == Activation::kRelu);
  apply_setting(c, "normalize", "false");
  CHECK_FALSE(c.model.normalize_output);
  apply_setting(c, "learning_rate", "0.125");
  CHECK(c.train.learning_rate == 0.125);
  apply_setting(c, "k_values", "2,4,8");
  CHECK(c.k_values == std::vector<int>{2, 4, 8});
  apply_setting(c, "pos_threshold", "6.5");
  CHECK(c.triplets.pos_threshold == 6.5);
  apply_setting(c, "write_triplets", "true");
  CHECK(c.write_triplets);

  CHECK_THROWS_AS(apply_setting(c, "no_such_key", "1"), std::invalid_argument);
  CHECK_THROWS_AS(apply_setting(c, "steps", "12x"), std::invalid_argument);
  CHECK_THROWS_AS(apply_setting(c, "learning_rate", "fast"), std::invalid_argument);
  CHECK_THROWS_AS(apply_setting(c, "activation", "selu"), std::invalid_argument);
  CHECK_THROWS_AS(apply_setting(c, "k_values", ""), std::invalid_argument);
}

TEST_CASE("every setting survives a serialize/apply round trip") {
  RunConfig a = default_desk_config();
  a.seed = 1234;
  a.model.hidden = {48, 24};
  a.model.activation = Activation::kRelu;
  a.generator.angle_noise = 0.31;
  a.triplets.neg_cap = 123;
  a.k_values = {2, 3, 9};
  a.noise_sigma = 2.25;
  a.write_ranklists = true;
  a.dataset_path = "some/file.jsonl";

  RunConfig b = default_desk_config();
  for (const auto& [key, value] : config_settings(a)) apply_setting(b, key, value);
  CHECK(config_settings(a) == config_settings(b));
}

TEST_CASE("config files support comments and report malformed lines") {
  TempDir dir("posemb_config");
  fs::path file = dir.path / "run.cfg";
  spit(file,
       "# comment\n"
       "\n"
       "seed = 77\n"
       "hidden = 8,4\n"
       "  steps=5  \n");
  RunConfig c = load_config_file(file.string());
  CHECK(c.seed == 77);
  CHECK(c.model.hidden == std::vector<int>{8, 4});
  CHECK(c.train.steps == 5);

  spit(file, "seed 77\n");
  try {
    load_config_file(file.string());
    FAIL("expected an exception");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }

  CHECK_THROWS_AS(load_config_file((dir.path / "absent.cfg").string()), std::runtime_error);
}

TEST_CASE("the seed environment variable applies only when set") {
  RunConfig c = default_desk_config();
  unsetenv(kSeedEnvVar);
  CHECK_FALSE(apply_env_seed(c));
  CHECK(c.seed == 42);

  setenv(kSeedEnvVar, "31337", 1);
  CHECK(apply_env_seed(c));
  CHECK(c.seed == 31337);

  setenv(kSeedEnvVar, "not-a-seed", 1);
  CHECK_THROWS_AS(apply_env_seed(c), std::invalid_argument);
  unsetenv(kSeedEnvVar);
}

TEST_CASE("derived seeds are deterministic and pairwise distinct") {
  DerivedSeeds a = derive_seeds(42);
  DerivedSeeds b = derive_seeds(42);
  CHECK(a.synth == b.synth);
  CHECK(a.split == b.split);
  CHECK(a.augmentation == b.augmentation);
  CHECK(a.train == b.train);
  CHECK(a.random_rank == b.random_rank);
  CHECK(a.joint_noise == b.joint_noise);
  std::set<std::uint64_t> all = {a.synth, a.split, a.augmentation,
                                 a.train, a.random_rank, a.joint_noise};
  CHECK(all.size() == 6);
  CHECK(derive_seeds(43).synth != a.synth);
}

TEST_CASE("run config validation") {
  RunConfig c = tiny_config("x");
  c.n_query = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_config("x");
  c.synth_count = 50;  // smaller than the requested splits
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_config("x");
  c.k_values = {5, 2};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_config("x");
  c.output_dir = "";
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_config("x");
  c.noise_sigma = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("a full run writes every artifact and satisfies its manifest") {
  TempDir dir("posemb_run");
  RunConfig c = tiny_config((dir.path / "out").string());
  c.write_triplets = true;
  c.write_renders = 2;
  c.write_ranklists = true;

  RunReport report = run_pipeline(c);
  CHECK(report.dataset_size == 90);
  CHECK(report.triplet_count > 0);
  CHECK(report.loss_by_step.size() == 3);
  REQUIRE(report.metrics.size() == 5);
  CHECK(report.metrics[0].method == "learned");
  CHECK(report.metrics[1].method == "oracle");
  CHECK(report.metrics[2].method == "random");
  CHECK(report.metrics[3].method == "noisy_joints");
  CHECK(report.metrics[4].method == "fused");
  for (const auto& m : report.metrics) {
    REQUIRE(m.curves.size() == 3);
    for (const auto& curve : m.curves) {
      CHECK(curve.k_values == c.k_values);
      CHECK_NOTHROW(check_metric_invariants(curve));
    }
  }
  // The oracle's relative hit rate is identically one.
  for (double v : report.metrics[1].curves[2].values) CHECK(v == 1.0);

  fs::path out = dir.path / "out";
  for (const char* name : {"poses.jsonl", "triplets.txt", "loss.csv", "model.ckpt",
                           "metrics.csv", "manifest.json", "ranklists.txt"})
    CHECK(fs::exists(out / name));
  CHECK(fs::exists(out / "renders"));
  int pgms = 0;
  for (const auto& entry : fs::directory_iterator(out / "renders")) {
    CHECK(entry.path().extension() == ".pgm");
    ++pgms;
  }
  CHECK(pgms == 2);

  LoadReport poses = load_annotations((out / "poses.jsonl").string());
  CHECK(poses.dataset.size() == 90);
  CHECK(poses.dataset.count_of(Split::kTrain) == 40);
  CHECK(poses.dataset.count_of(Split::kDatabase) == 30);
  CHECK(poses.dataset.count_of(Split::kQuery) == 20);

  EmbeddingModel model = load_model((out / "model.ckpt").string());
  CHECK(model.layer_sizes == std::vector<int>{256, 16, 4});

  auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  CHECK(manifest.at("status") == "complete");
  CHECK(manifest.at("data").at("train") == 40);
  CHECK(manifest.at("data").at("database") == 30);
  CHECK(manifest.at("data").at("query") == 20);
  CHECK(manifest.at("data").at("triplets") == report.triplet_count);
  CHECK(manifest.at("model").at("layer_sizes") == std::vector<int>{256, 16, 4});
  CHECK(manifest.at("loss").at("steps") == 3);
  CHECK(manifest.at("derived_seeds").size() == 6);
  auto outputs = manifest.at("outputs").get<std::vector<std::string>>();
  CHECK(std::find(outputs.begin(), outputs.end(), "metrics.csv") != outputs.end());

  std::istringstream csv(slurp(out / "metrics.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "method,metric,K,value");
  int rows = 0;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 5 * 3 * 3);
}

TEST_CASE("identical configs produce byte-identical artifacts") {
  TempDir dir("posemb_rerun");
  RunConfig c = tiny_config((dir.path / "out").string());
  run_pipeline(c);
  fs::path out = dir.path / "out";
  std::string metrics = slurp(out / "metrics.csv");
  std::string ckpt = slurp(out / "model.ckpt");
  std::string loss = slurp(out / "loss.csv");
  std::string poses = slurp(out / "poses.jsonl");
  std::string manifest = slurp(out / "manifest.json");

  run_pipeline(c);
  CHECK(slurp(out / "metrics.csv") == metrics);
  CHECK(slurp(out / "model.ckpt") == ckpt);
  CHECK(slurp(out / "loss.csv") == loss);
  CHECK(slurp(out / "poses.jsonl") == poses);
  CHECK(slurp(out / "manifest.json") == manifest);
}

TEST_CASE("annotated datasets run end to end with their own split tags") {
  TempDir dir("posemb_annotated");
  PoseDataset base = generate_synthetic(60, 21);
  PoseDataset tagged = split_dataset(base, 30, 20, 10, 5);
  fs::path file = dir.path / "tagged.jsonl";
  save_annotations(tagged, file.string());
  // One malformed record: counted as rejected, everything else proceeds.
  std::ofstream append(file, std::ios::app);
  append << R"({"id": 999, "joints": [[0, 0]]})" << "\n";
  append.close();

  RunConfig c = tiny_config((dir.path / "out").string());
  c.dataset_path = file.string();
  c.use_existing_splits = true;

  RunReport report = run_pipeline(c);
  CHECK(report.dataset_size == 60);
  CHECK(report.accepted == 60);
  CHECK(report.rejected == 1);
  CHECK(report.triplet_count > 0);

  auto manifest = nlohmann::json::parse(slurp(dir.path / "out" / "manifest.json"));
  CHECK(manifest.at("data").at("rejected") == 1);
  CHECK(manifest.at("data").at("train") == 30);
}

TEST_CASE("an untrained model ranks no better than chance when scale carries the metric") {
  // Global scale dominates pose distance in this regime, and canvas fitting
  // removes scale from the images entirely, so an untrained embedding cannot
  // see what the metric measures. Its hit rate then matches the random
  // baseline up to sampling noise: overlapping 95% bootstrap intervals.
  TempDir dir("posemb_untrained");
  RunConfig c;
  c.synth_count = 320;
  c.generator.prototypes = 1;
  c.generator.angle_noise = 0.02;
  c.generator.scale_jitter = 0.5;
  c.n_train = 160;
  c.n_db = 100;
  c.n_query = 60;
  c.canvas.side = 16;
  c.model.hidden = {16};
  c.model.embedding_dim = 4;
  c.train.steps = 0;
  c.train.batch_size = 8;
  c.k_values = {1, 5, 10};
  c.hit_threshold = 4.0;
  c.output_dir = (dir.path / "out").string();

  RunReport report = run_pipeline(c);
  CHECK(report.loss_by_step.empty());

  // Recompute per-query hit flags for the learned and random rankings.
  fs::path out = dir.path / "out";
  LoadReport poses = load_annotations((out / "poses.jsonl").string());
  EmbeddingModel model = load_model((out / "model.ckpt").string());
  RenderPipeline pipeline(c.canvas, c.augmentation);
  EmbeddingTable db = embed_all(model, poses.dataset, Split::kDatabase, pipeline);
  EmbeddingTable queries = embed_all(model, poses.dataset, Split::kQuery, pipeline);
  auto learned = rank_all(embedding_distance_grid(queries, db), 10);
  auto random = random_ranklists(queries.ids, db.ids, 10, derive_seeds(c.seed).random_rank);

  std::vector<int> lf = absolute_hit_flags(learned, poses.dataset, 10, c.hit_threshold);
  std::vector<int> rf = absolute_hit_flags(random, poses.dataset, 10, c.hit_threshold);
  REQUIRE(lf.size() == 60);
  REQUIRE(rf.size() == 60);

  auto rate = [](const std::vector<int>& flags) {
    double s = 0.0;
    for (int f : flags) s += f;
    return s / static_cast<double>(flags.size());
  };
  // Guard against a vacuous comparison at the extremes.
  CHECK(rate(lf) > 0.05);
  CHECK(rate(lf) < 0.95);
  CHECK(rate(rf) > 0.05);
  CHECK(rate(rf) < 0.95);

  auto bootstrap_ci = [](const std::vector<int>& flags, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::vector<double> means;
    means.reserve(2000);
    for (int b = 0; b < 2000; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < flags.size(); ++i)
        s += flags[uniform_below(rng, flags.size())];
      means.push_back(s / static_cast<double>(flags.size()));
    }
    std::sort(means.begin(), means.end());
    return std::pair<double, double>{means[49], means[1949]};  // 2.5% / 97.5%
  };
  auto [llo, lhi] = bootstrap_ci(lf, 1);
  auto [rlo, rhi] = bootstrap_ci(rf, 2);
  CHECK(llo <= rhi);
  CHECK(rlo <= lhi);
}
