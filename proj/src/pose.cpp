#include "posemb/pose.hpp"

#include <algorithm>
#include <cmath>

#include "posemb/parallel.hpp"

namespace posemb {

const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kDatabase: return "database";
    case Split::kQuery: return "query";
  }
  return "?";
}

std::optional<Split> split_from_string(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "database") return Split::kDatabase;
  if (s == "query") return Split::kQuery;
  return std::nullopt;
}

bool pose_is_valid(const Pose& pose, std::string* reason) {
  if (pose.root_index < 0 || pose.root_index >= kJointCount) {
    if (reason) *reason = detail::cat("root_index ", pose.root_index, " out of range");
    return false;
  }
  for (int j = 0; j < kJointCount; ++j) {
    if (!std::isfinite(pose.joints[j].x) || !std::isfinite(pose.joints[j].y)) {
      if (reason) *reason = detail::cat("joint ", j, " is not finite");
      return false;
    }
  }
  return true;
}

void validate_pose(const Pose& pose) {
  std::string reason;
  if (!pose_is_valid(pose, &reason)) {
    throw std::invalid_argument(detail::cat("pose ", pose.id, ": ", reason));
  }
}

CenteredPose center_pose(const Pose& pose) {
  const Point root = pose.joints[pose.root_index];
  CenteredPose out;
  for (int j = 0; j < kJointCount; ++j) {
    out[j].x = pose.joints[j].x - root.x;
    out[j].y = pose.joints[j].y - root.y;
  }
  return out;
}

double centered_distance(const CenteredPose& a, const CenteredPose& b) {
  double sum = 0.0;
  for (int j = 0; j < kJointCount; ++j) {
    const double dx = a[j].x - b[j].x;
    const double dy = a[j].y - b[j].y;
    sum += std::sqrt(dx * dx + dy * dy);
  }
  return sum / kJointCount;
}

double pose_distance(const Pose& a, const Pose& b) {
  return centered_distance(center_pose(a), center_pose(b));
}

void PoseDataset::add(Pose pose, Split split) {
  validate_pose(pose);
  if (contains(pose.id)) {
    throw std::invalid_argument(detail::cat("duplicate pose id ", pose.id));
  }
  by_id_.emplace(pose.id, poses_.size());
  poses_.push_back(std::move(pose));
  split_.push_back(split);
}

std::size_t PoseDataset::index_of(PoseId id) const {
  const auto it = by_id_.find(id);
  if (it == by_id_.end()) {
    throw std::out_of_range(detail::cat("no pose with id ", id));
  }
  return it->second;
}

std::size_t PoseDataset::count_of(Split s) const {
  std::size_t n = 0;
  for (const Split t : split_) n += (t == s);
  return n;
}

std::vector<std::size_t> PoseDataset::indices_of(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < poses_.size(); ++i) {
    if (split_[i] == s) out.push_back(i);
  }
  std::sort(out.begin(), out.end(), [this](std::size_t a, std::size_t b) {
    return poses_[a].id < poses_[b].id;
  });
  return out;
}

std::vector<PoseId> PoseDataset::ids_of(Split s) const {
  std::vector<PoseId> out;
  for (const std::size_t i : indices_of(s)) out.push_back(poses_[i].id);
  return out;
}

std::vector<Pose> PoseDataset::poses_of(Split s) const {
  std::vector<Pose> out;
  for (const std::size_t i : indices_of(s)) out.push_back(poses_[i]);
  return out;
}

DistanceMatrix pairwise_distance_matrix(const PoseDataset& dataset, std::size_t max_entries) {
  if (dataset.empty()) {
    throw std::invalid_argument("pairwise_distance_matrix: empty dataset");
  }
  const std::size_t n = dataset.size();
  if (n * n > max_entries) {
    throw MatrixBudgetError(detail::cat("distance matrix would need ", n * n,
                                        " entries, budget is ", max_entries));
  }

  std::vector<std::size_t> order;
  order.reserve(n);
  for (std::size_t i = 0; i < n; ++i) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dataset.pose_at(a).id < dataset.pose_at(b).id;
  });

  std::vector<CenteredPose> centered(n);
  for (std::size_t i = 0; i < n; ++i) centered[i] = center_pose(dataset.pose_at(order[i]));

  DistanceMatrix m;
  m.ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) m.ids.push_back(dataset.pose_at(order[i]).id);
  m.values.assign(n * n, 0.0);

  parallel_for(0, static_cast<std::int64_t>(n), [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      for (std::size_t j = static_cast<std::size_t>(i) + 1; j < n; ++j) {
        const double d = centered_distance(centered[i], centered[j]);
        m.values[i * n + j] = d;
        m.values[j * n + static_cast<std::size_t>(i)] = d;
      }
    }
  });
  return m;
}

}  // namespace posemb
