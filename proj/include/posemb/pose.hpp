#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "posemb/common.hpp"

namespace posemb {

struct Pose {
  PoseId id = 0;
  std::array<Point, kJointCount> joints{};
  int root_index = kDefaultRootIndex;
};

bool pose_is_valid(const Pose& pose, std::string* reason = nullptr);

/// Throws std::invalid_argument when a joint is non-finite or root_index is
/// out of range.
void validate_pose(const Pose& pose);

/// Joint offsets relative to the root joint; the root offset is exactly (0, 0).
using CenteredPose = std::array<Point, kJointCount>;

CenteredPose center_pose(const Pose& pose);

/// Mean Euclidean distance over all 16 joints after translating both poses so
/// their root joints coincide. The root contributes a zero term to the 16-way
/// mean. Symmetric, translation invariant, and a pseudometric on poses.
double pose_distance(const Pose& a, const Pose& b);
double centered_distance(const CenteredPose& a, const CenteredPose& b);

/// Poses plus a train/database/query tag per pose. Ids are unique; every pose
/// carries exactly one tag.
class PoseDataset {
 public:
  void add(Pose pose, Split split = Split::kTrain);
  void reserve(std::size_t n) { poses_.reserve(n); split_.reserve(n); }

  std::size_t size() const { return poses_.size(); }
  bool empty() const { return poses_.empty(); }
  const Pose& pose_at(std::size_t i) const { return poses_[i]; }
  Split split_at(std::size_t i) const { return split_[i]; }
  void set_split_at(std::size_t i, Split s) { split_[i] = s; }

  bool contains(PoseId id) const { return by_id_.count(id) != 0; }
  std::size_t index_of(PoseId id) const;
  const Pose& pose_by_id(PoseId id) const { return poses_[index_of(id)]; }
  Split split_of(PoseId id) const { return split_[index_of(id)]; }

  std::size_t count_of(Split s) const;
  /// Dataset indices of the split members, ascending by pose id.
  std::vector<std::size_t> indices_of(Split s) const;
  /// Ids of the split members, ascending.
  std::vector<PoseId> ids_of(Split s) const;
  /// Copies of the split members, ascending by id.
  std::vector<Pose> poses_of(Split s) const;

 private:
  std::vector<Pose> poses_;
  std::vector<Split> split_;
  std::unordered_map<PoseId, std::size_t> by_id_;
};

/// Thrown when a requested distance matrix exceeds the entry budget; callers
/// fall back to streaming per-anchor distances.
struct MatrixBudgetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kDefaultMatrixBudget = 50'000'000;  // entries

/// Symmetric pose-distance matrix; ids give the row/column order (ascending).
struct DistanceMatrix {
  std::vector<PoseId> ids;
  std::vector<double> values;  // size() x size(), row-major

  std::size_t size() const { return ids.size(); }
  double at(std::size_t i, std::size_t j) const { return values[i * ids.size() + j]; }
};

/// All pairwise pose distances over the whole dataset, rows/columns ascending
/// by id. Row blocks are computed concurrently; the result is identical to the
/// sequential loop.
DistanceMatrix pairwise_distance_matrix(const PoseDataset& dataset,
                                        std::size_t max_entries = kDefaultMatrixBudget);

}  // namespace posemb
