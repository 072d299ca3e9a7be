#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "posemb/pose.hpp"
#include "posemb/rng.hpp"

namespace posemb {

/// Mining thresholds and caps. Defaults: positives are everything closer than
/// 7 px plus the 2 closest regardless of distance; negatives are the up-to
/// 5000 closest poses farther than 15 px.
struct TripletSpec {
  double pos_threshold = 7.0;   // strict: d < pos_threshold
  int pos_closest_count = 2;
  double neg_threshold = 15.0;  // strict: d > neg_threshold
  int neg_cap = 5000;

  void validate() const;
};

struct Triplet {
  PoseId anchor = 0;
  PoseId positive = 0;
  PoseId negative = 0;

  bool operator==(const Triplet&) const = default;
};

/// Geometric jitter applied to anchor and positive samples at training time,
/// in canvas coordinates (after fitting). Draw order per sample: scale, tx, ty.
struct AugmentationSpec {
  double scale_min = 0.9;
  double scale_max = 1.1;
  double translation_range = 0.10;  // fraction of canvas side, per axis
  std::uint64_t seed = 0;

  void validate() const;
};

/// Positive set for one train anchor: the pos_closest_count nearest train
/// poses (regardless of distance) plus every train pose closer than
/// pos_threshold. Never contains the anchor. Returned ascending by id.
/// Throws if the train split has fewer than pos_closest_count + 1 poses or the
/// anchor is not in the train split.
std::vector<PoseId> positive_set(PoseId anchor_id, const PoseDataset& dataset,
                                 const TripletSpec& spec);

/// Negative set for one train anchor: the up-to neg_cap nearest train poses
/// with distance > neg_threshold, excluding the anchor and every member of the
/// positive set. Returned ascending by (distance, id). Empty when nothing
/// qualifies.
std::vector<PoseId> negative_set(PoseId anchor_id, const PoseDataset& dataset,
                                 const TripletSpec& spec);

/// Lazy enumeration of every (anchor, positive, negative) triplet. Order:
/// anchors ascending by id; positives ascending by id; negatives ascending by
/// (distance, id). Nothing is materialized beyond one anchor's sets, so the
/// stream is re-iterable at any scale.
class TripletStream {
 public:
  TripletStream(const PoseDataset& dataset, TripletSpec spec);

  void for_each(const std::function<void(const Triplet&)>& fn) const;

  /// Total count, i.e. the sum over anchors of |positives| * |negatives|.
  std::uint64_t count() const;

  const TripletSpec& spec() const { return spec_; }

 private:
  const PoseDataset* dataset_;
  TripletSpec spec_;
};

/// Random access into the enumeration order of TripletStream via per-anchor
/// prefix sums. Caches every anchor's positive/negative id lists, so this is
/// the in-memory-scale companion of the stream (the trainer's batch sampler).
class TripletIndex {
 public:
  TripletIndex(const PoseDataset& dataset, TripletSpec spec);

  std::uint64_t size() const { return total_; }
  Triplet at(std::uint64_t i) const;

  std::size_t anchor_count() const { return anchors_.size(); }
  std::size_t positive_count(std::size_t anchor_pos) const;
  std::size_t negative_count(std::size_t anchor_pos) const;

 private:
  std::vector<PoseId> anchors_;
  std::vector<PoseId> positives_;        // concatenated, ascending id per anchor
  std::vector<PoseId> negatives_;        // concatenated, (distance, id) per anchor
  std::vector<std::size_t> pos_offset_;  // anchors_.size() + 1
  std::vector<std::size_t> neg_offset_;  // anchors_.size() + 1
  std::vector<std::uint64_t> prefix_;    // cumulative |P|*|N|, anchors_.size() + 1
  std::uint64_t total_ = 0;
};

/// Scales the pose about the canvas center by a factor drawn uniformly from
/// [scale_min, scale_max], then translates by per-axis draws from
/// +-translation_range * canvas_side. Joints may leave the canvas; clipping
/// happens at render time. Consumes exactly three draws from rng.
Pose augment_sample(const Pose& pose, const AugmentationSpec& spec, double canvas_side,
                    Rng& rng);

/// Writes one `anchor_id,positive_id,negative_id` line per triplet.
void dump_triplets(const TripletStream& stream, const std::string& path);

}  // namespace posemb
