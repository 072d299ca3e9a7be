#include "posemb/mining.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "posemb/parallel.hpp"

namespace posemb {

void TripletSpec::validate() const {
  if (!(pos_threshold > 0.0) || !(pos_threshold < neg_threshold)) {
    throw std::invalid_argument(
        detail::cat("TripletSpec: need 0 < pos_threshold < neg_threshold, got ",
                    pos_threshold, " and ", neg_threshold));
  }
  if (pos_closest_count < 0) {
    throw std::invalid_argument("TripletSpec: pos_closest_count must be >= 0");
  }
  if (neg_cap < 1) {
    throw std::invalid_argument("TripletSpec: neg_cap must be >= 1");
  }
}

void AugmentationSpec::validate() const {
  if (!(scale_min > 0.0) || !(scale_max > 0.0) || scale_min > scale_max) {
    throw std::invalid_argument("AugmentationSpec: scale range bounds must be positive and ordered");
  }
  if (translation_range < 0.0 || translation_range >= 1.0) {
    throw std::invalid_argument("AugmentationSpec: translation_range must be in [0, 1)");
  }
}

namespace {

struct TrainView {
  std::vector<PoseId> ids;             // ascending
  std::vector<CenteredPose> centered;  // same order
};

TrainView build_train_view(const PoseDataset& dataset) {
  TrainView v;
  const auto indices = dataset.indices_of(Split::kTrain);
  v.ids.reserve(indices.size());
  v.centered.reserve(indices.size());
  for (const std::size_t i : indices) {
    v.ids.push_back(dataset.pose_at(i).id);
    v.centered.push_back(center_pose(dataset.pose_at(i)));
  }
  return v;
}

struct AnchorSets {
  std::vector<PoseId> positives;  // ascending id
  std::vector<PoseId> negatives;  // ascending (distance, id)
};

// Candidates sorted ascending by (distance, id). The positive set is then the
// first max(pos_closest_count, #below-threshold) entries, and the negatives
// are drawn from the remainder.
AnchorSets mine_one(const TrainView& view, std::size_t anchor_pos, const TripletSpec& spec) {
  const std::size_t n = view.ids.size();
  if (n < static_cast<std::size_t>(spec.pos_closest_count) + 1) {
    throw std::runtime_error(detail::cat(
        "mining: train split has ", n, " poses; need at least ",
        spec.pos_closest_count + 1, " for ", spec.pos_closest_count, "-closest positives"));
  }

  std::vector<std::pair<double, PoseId>> cand;
  cand.reserve(n - 1);
  const CenteredPose& anchor = view.centered[anchor_pos];
  for (std::size_t i = 0; i < n; ++i) {
    if (i == anchor_pos) continue;
    cand.emplace_back(centered_distance(anchor, view.centered[i]), view.ids[i]);
  }
  std::sort(cand.begin(), cand.end());

  std::size_t below = 0;
  while (below < cand.size() && cand[below].first < spec.pos_threshold) ++below;
  const std::size_t npos = std::max<std::size_t>(below, static_cast<std::size_t>(spec.pos_closest_count));

  AnchorSets out;
  out.positives.reserve(npos);
  for (std::size_t i = 0; i < npos; ++i) out.positives.push_back(cand[i].second);
  std::sort(out.positives.begin(), out.positives.end());

  out.negatives.reserve(std::min<std::size_t>(cand.size(), static_cast<std::size_t>(spec.neg_cap)));
  for (std::size_t i = npos; i < cand.size(); ++i) {
    if (cand[i].first > spec.neg_threshold) {
      out.negatives.push_back(cand[i].second);
      if (out.negatives.size() == static_cast<std::size_t>(spec.neg_cap)) break;
    }
  }
  return out;
}

std::size_t anchor_position(const TrainView& view, PoseId anchor_id) {
  const auto it = std::lower_bound(view.ids.begin(), view.ids.end(), anchor_id);
  if (it == view.ids.end() || *it != anchor_id) {
    throw std::invalid_argument(detail::cat("anchor ", anchor_id, " is not in the train split"));
  }
  return static_cast<std::size_t>(it - view.ids.begin());
}

}  // namespace

std::vector<PoseId> positive_set(PoseId anchor_id, const PoseDataset& dataset,
                                 const TripletSpec& spec) {
  spec.validate();
  const TrainView view = build_train_view(dataset);
  return mine_one(view, anchor_position(view, anchor_id), spec).positives;
}

std::vector<PoseId> negative_set(PoseId anchor_id, const PoseDataset& dataset,
                                 const TripletSpec& spec) {
  spec.validate();
  const TrainView view = build_train_view(dataset);
  return mine_one(view, anchor_position(view, anchor_id), spec).negatives;
}

TripletStream::TripletStream(const PoseDataset& dataset, TripletSpec spec)
    : dataset_(&dataset), spec_(spec) {
  spec_.validate();
  if (dataset.count_of(Split::kTrain) == 0) {
    throw std::invalid_argument("TripletStream: train split is empty");
  }
}

void TripletStream::for_each(const std::function<void(const Triplet&)>& fn) const {
  const TrainView view = build_train_view(*dataset_);
  Triplet t;
  for (std::size_t a = 0; a < view.ids.size(); ++a) {
    const AnchorSets sets = mine_one(view, a, spec_);
    t.anchor = view.ids[a];
    for (const PoseId p : sets.positives) {
      t.positive = p;
      for (const PoseId nid : sets.negatives) {
        t.negative = nid;
        fn(t);
      }
    }
  }
}

std::uint64_t TripletStream::count() const {
  const TrainView view = build_train_view(*dataset_);
  const std::size_t n = view.ids.size();
  std::vector<std::uint64_t> per_anchor(n, 0);
  parallel_for(0, static_cast<std::int64_t>(n), [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t a = lo; a < hi; ++a) {
      const AnchorSets sets = mine_one(view, static_cast<std::size_t>(a), spec_);
      per_anchor[a] = static_cast<std::uint64_t>(sets.positives.size()) *
                      static_cast<std::uint64_t>(sets.negatives.size());
    }
  });
  std::uint64_t total = 0;
  for (const std::uint64_t c : per_anchor) total += c;
  return total;
}

TripletIndex::TripletIndex(const PoseDataset& dataset, TripletSpec spec) {
  spec.validate();
  const TrainView view = build_train_view(dataset);
  const std::size_t n = view.ids.size();
  if (n == 0) throw std::invalid_argument("TripletIndex: train split is empty");

  anchors_ = view.ids;
  std::vector<AnchorSets> sets(n);
  parallel_for(0, static_cast<std::int64_t>(n), [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t a = lo; a < hi; ++a) {
      sets[a] = mine_one(view, static_cast<std::size_t>(a), spec);
    }
  });

  pos_offset_.assign(n + 1, 0);
  neg_offset_.assign(n + 1, 0);
  prefix_.assign(n + 1, 0);
  for (std::size_t a = 0; a < n; ++a) {
    pos_offset_[a + 1] = pos_offset_[a] + sets[a].positives.size();
    neg_offset_[a + 1] = neg_offset_[a] + sets[a].negatives.size();
    prefix_[a + 1] = prefix_[a] + static_cast<std::uint64_t>(sets[a].positives.size()) *
                                      static_cast<std::uint64_t>(sets[a].negatives.size());
  }
  positives_.reserve(pos_offset_[n]);
  negatives_.reserve(neg_offset_[n]);
  for (std::size_t a = 0; a < n; ++a) {
    positives_.insert(positives_.end(), sets[a].positives.begin(), sets[a].positives.end());
    negatives_.insert(negatives_.end(), sets[a].negatives.begin(), sets[a].negatives.end());
  }
  total_ = prefix_[n];
}

std::size_t TripletIndex::positive_count(std::size_t anchor_pos) const {
  return pos_offset_[anchor_pos + 1] - pos_offset_[anchor_pos];
}

std::size_t TripletIndex::negative_count(std::size_t anchor_pos) const {
  return neg_offset_[anchor_pos + 1] - neg_offset_[anchor_pos];
}

Triplet TripletIndex::at(std::uint64_t i) const {
  if (i >= total_) {
    throw std::out_of_range(detail::cat("triplet index ", i, " out of range (", total_, ")"));
  }
  const auto it = std::upper_bound(prefix_.begin(), prefix_.end(), i);
  const std::size_t a = static_cast<std::size_t>(it - prefix_.begin()) - 1;
  const std::uint64_t r = i - prefix_[a];
  const std::uint64_t nneg = neg_offset_[a + 1] - neg_offset_[a];
  Triplet t;
  t.anchor = anchors_[a];
  t.positive = positives_[pos_offset_[a] + static_cast<std::size_t>(r / nneg)];
  t.negative = negatives_[neg_offset_[a] + static_cast<std::size_t>(r % nneg)];
  return t;
}

Pose augment_sample(const Pose& pose, const AugmentationSpec& spec, double canvas_side,
                    Rng& rng) {
  spec.validate();
  const double scale = uniform_in(rng, spec.scale_min, spec.scale_max);
  const double range = spec.translation_range * canvas_side;
  const double tx = uniform_in(rng, -range, range);
  const double ty = uniform_in(rng, -range, range);
  const double c = canvas_side / 2.0;

  Pose out = pose;
  // p + (p - c)*(s - 1) equals scaling about the center and is exact for the
  // degenerate scale 1 / zero translation spec.
  for (int j = 0; j < kJointCount; ++j) {
    out.joints[j].x = pose.joints[j].x + (pose.joints[j].x - c) * (scale - 1.0) + tx;
    out.joints[j].y = pose.joints[j].y + (pose.joints[j].y - c) * (scale - 1.0) + ty;
  }
  return out;
}

void dump_triplets(const TripletStream& stream, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(detail::cat("cannot open ", path, " for writing"));
  stream.for_each([&out](const Triplet& t) {
    out << t.anchor << ',' << t.positive << ',' << t.negative << '\n';
  });
  if (!out) throw std::runtime_error(detail::cat("failed writing ", path));
}

}  // namespace posemb
