#include "posemb/dataset_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "posemb/rng.hpp"

namespace posemb {

namespace {

using nlohmann::json;

// Seed streams carved out of the generator seed.
constexpr std::uint64_t kPrototypeStream = 101;
constexpr std::uint64_t kSampleStream = 102;

bool parse_record(const json& rec, Pose& pose, Split& split) {
  if (!rec.is_object()) return false;
  const auto id_it = rec.find("id");
  if (id_it == rec.end() || !id_it->is_number_integer()) return false;
  const auto joints_it = rec.find("joints");
  if (joints_it == rec.end() || !joints_it->is_array() ||
      joints_it->size() != static_cast<std::size_t>(kJointCount))
    return false;

  pose = Pose{};
  pose.id = id_it->get<PoseId>();
  for (int j = 0; j < kJointCount; ++j) {
    const json& pair = (*joints_it)[j];
    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number() || !pair[1].is_number())
      return false;
    pose.joints[j].x = pair[0].get<double>();
    pose.joints[j].y = pair[1].get<double>();
  }
  split = Split::kTrain;
  const auto split_it = rec.find("split");
  if (split_it != rec.end()) {
    if (!split_it->is_string()) return false;
    const auto parsed = split_from_string(split_it->get<std::string>());
    if (!parsed) return false;
    split = *parsed;
  }
  return pose_is_valid(pose);
}

struct Bone {
  int joint;
  int parent;
  double length;      // px at scale 1
  double base_angle;  // rad, world frame, y grows downward
};

// Upright figure; parents precede children so angles accumulate in one pass.
constexpr int kBoneCount = 15;
constexpr std::array<Bone, kBoneCount> kSkeleton = {{
    {7, 6, 45.0, -1.5707963267948966},   // pelvis -> thorax
    {8, 7, 18.0, -1.5707963267948966},   // thorax -> neck
    {9, 8, 22.0, -1.5707963267948966},   // neck -> head top
    {12, 7, 20.0, 3.141592653589793},    // thorax -> r shoulder
    {11, 12, 30.0, 1.7207963267948966},  // r shoulder -> r elbow
    {10, 11, 28.0, 1.6707963267948966},  // r elbow -> r wrist
    {13, 7, 20.0, 0.0},                  // thorax -> l shoulder
    {14, 13, 30.0, 1.4207963267948966},  // l shoulder -> l elbow
    {15, 14, 28.0, 1.4707963267948966},  // l elbow -> l wrist
    {2, 6, 15.0, 2.4468543773930902},    // pelvis -> r hip
    {1, 2, 42.0, 1.6207963267948966},    // r hip -> r knee
    {0, 1, 40.0, 1.5707963267948966},    // r knee -> r ankle
    {3, 6, 15.0, 0.6947382761966464},    // pelvis -> l hip
    {4, 3, 42.0, 1.5207963267948966},    // l hip -> l knee
    {5, 4, 40.0, 1.5707963267948966},    // l knee -> l ankle
}};

struct PrototypeBank {
  // [prototype][bone] fixed angle offsets.
  std::vector<std::array<double, kBoneCount>> offsets;
  // [prototype][bone][latent] mixing of the per-sample latent vector.
  std::vector<std::vector<double>> mixing;
};

PrototypeBank build_prototypes(const GeneratorSpec& spec, std::uint64_t seed) {
  PrototypeBank bank;
  Rng rng = make_rng(mix_seed(seed, kPrototypeStream));
  bank.offsets.resize(spec.prototypes);
  for (int p = 0; p < spec.prototypes; ++p)
    for (int b = 0; b < kBoneCount; ++b)
      bank.offsets[p][b] = uniform_in(rng, -spec.proto_angle_range, spec.proto_angle_range);
  const double dim_scale = 1.0 / std::sqrt(static_cast<double>(spec.latent_dims));
  bank.mixing.resize(spec.prototypes);
  for (int p = 0; p < spec.prototypes; ++p) {
    bank.mixing[p].resize(static_cast<std::size_t>(kBoneCount) * spec.latent_dims);
    for (double& m : bank.mixing[p]) m = gaussian(rng) * dim_scale;
  }
  return bank;
}

}  // namespace

LoadReport load_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(detail::cat("annotations ", path, ": cannot open"));

  LoadReport report;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(detail::cat("annotations ", path, ": line ", line_no,
                                           ": parse error: ", e.what()));
    }
    Pose pose;
    Split split;
    if (!parse_record(rec, pose, split)) {
      ++report.rejected;
      continue;
    }
    if (report.dataset.contains(pose.id))
      throw std::runtime_error(detail::cat("annotations ", path, ": line ", line_no,
                                           ": duplicate id ", pose.id));
    report.dataset.add(pose, split);
    ++report.accepted;
  }
  if (in.bad()) throw std::runtime_error(detail::cat("annotations ", path, ": read failed"));
  if (report.accepted == 0)
    throw std::runtime_error(detail::cat("annotations ", path, ": no valid records"));
  return report;
}

void save_annotations(const PoseDataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(detail::cat("annotations ", path, ": cannot open for write"));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Pose& pose = dataset.pose_at(i);
    json rec;
    rec["id"] = pose.id;
    json joints = json::array();
    for (const Point& p : pose.joints) joints.push_back(json::array({p.x, p.y}));
    rec["joints"] = std::move(joints);
    rec["split"] = to_string(dataset.split_at(i));
    out << rec.dump() << '\n';
  }
  if (!out) throw std::runtime_error(detail::cat("annotations ", path, ": write failed"));
}

void GeneratorSpec::validate() const {
  if (prototypes < 1) throw std::invalid_argument("generator: prototypes must be >= 1");
  if (latent_dims < 1) throw std::invalid_argument("generator: latent_dims must be >= 1");
  if (proto_angle_range < 0.0 || !std::isfinite(proto_angle_range))
    throw std::invalid_argument("generator: proto_angle_range must be finite, non-negative");
  if (angle_noise < 0.0 || !std::isfinite(angle_noise))
    throw std::invalid_argument("generator: angle_noise must be finite, non-negative");
  if (scale_jitter < 0.0 || scale_jitter >= 1.0)
    throw std::invalid_argument("generator: scale_jitter must be in [0, 1)");
  if (translation_jitter < 0.0 || !std::isfinite(translation_jitter))
    throw std::invalid_argument("generator: translation_jitter must be finite, non-negative");
  if (base_scale <= 0.0 || !std::isfinite(base_scale))
    throw std::invalid_argument("generator: base_scale must be finite and positive");
}

PoseDataset generate_synthetic(int n, std::uint64_t seed, const GeneratorSpec& spec) {
  if (n < 1) throw std::invalid_argument("generate_synthetic: n must be >= 1");
  spec.validate();
  const PrototypeBank bank = build_prototypes(spec, seed);

  PoseDataset dataset;
  dataset.reserve(static_cast<std::size_t>(n));
  std::vector<double> z(spec.latent_dims);
  for (int i = 0; i < n; ++i) {
    Rng rng = make_rng(mix_seed(seed, kSampleStream + static_cast<std::uint64_t>(i)));
    const int proto = i % spec.prototypes;
    for (double& v : z) v = gaussian(rng);
    const double scale =
        spec.base_scale * uniform_in(rng, 1.0 - spec.scale_jitter, 1.0 + spec.scale_jitter);
    const double tx = uniform_in(rng, -spec.translation_jitter, spec.translation_jitter);
    const double ty = uniform_in(rng, -spec.translation_jitter, spec.translation_jitter);

    Pose pose;
    pose.id = i;
    pose.joints[kDefaultRootIndex] = {300.0 + tx, 300.0 + ty};
    // Accumulated angle delta per joint, carried down the kinematic chains.
    std::array<double, kJointCount> accum{};
    accum[kDefaultRootIndex] = 0.0;
    for (int b = 0; b < kBoneCount; ++b) {
      const Bone& bone = kSkeleton[b];
      const double* mix = bank.mixing[proto].data() + static_cast<std::size_t>(b) * spec.latent_dims;
      double latent_delta = 0.0;
      for (int l = 0; l < spec.latent_dims; ++l) latent_delta += mix[l] * z[l];
      const double delta = bank.offsets[proto][b] + spec.angle_noise * latent_delta;
      accum[bone.joint] = accum[bone.parent] + delta;
      const double angle = bone.base_angle + accum[bone.joint];
      const Point& origin = pose.joints[bone.parent];
      pose.joints[bone.joint] = {origin.x + scale * bone.length * std::cos(angle),
                                 origin.y + scale * bone.length * std::sin(angle)};
    }
    dataset.add(pose, Split::kTrain);
  }
  return dataset;
}

PoseDataset split_dataset(const PoseDataset& dataset, std::size_t n_train, std::size_t n_db,
                          std::size_t n_query, std::uint64_t seed) {
  const std::size_t want = n_train + n_db + n_query;
  if (want > dataset.size())
    throw std::invalid_argument(detail::cat("split_dataset: need ", want, " poses, have ",
                                            dataset.size()));
  if (n_train == 0 || n_db == 0 || n_query == 0)
    throw std::invalid_argument("split_dataset: every split must be non-empty");

  // Ascending-id base order makes the draw independent of insertion order.
  std::vector<PoseId> ids;
  ids.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) ids.push_back(dataset.pose_at(i).id);
  std::sort(ids.begin(), ids.end());
  Rng rng = make_rng(seed);
  partial_shuffle(ids, want, rng);

  PoseDataset out;
  out.reserve(want);
  for (std::size_t i = 0; i < want; ++i) {
    const Split split = i < n_train            ? Split::kTrain
                        : i < n_train + n_db   ? Split::kDatabase
                                               : Split::kQuery;
    out.add(dataset.pose_by_id(ids[i]), split);
  }
  return out;
}

}  // namespace posemb
