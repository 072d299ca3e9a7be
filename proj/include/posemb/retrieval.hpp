#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "posemb/linalg.hpp"
#include "posemb/model.hpp"
#include "posemb/pose.hpp"
#include "posemb/render.hpp"

namespace posemb {

/// Embeddings for one split, rows aligned with `ids` (ascending).
struct EmbeddingTable {
  std::vector<PoseId> ids;
  Mat vectors;

  std::size_t size() const { return ids.size(); }
};

/// Embeds every pose of the split: row i = forward(render(fit(pose_i))).
/// Ground-truth joints feed only the renderer; the model consumes images.
EmbeddingTable embed_all(const EmbeddingModel& model, const PoseDataset& dataset, Split split,
                         RenderPipeline& pipeline);

struct RankEntry {
  PoseId id = 0;
  double distance = 0.0;
};

/// Top-K results for one query, ascending by (distance, id).
struct RankList {
  PoseId query_id = 0;
  std::vector<RankEntry> entries;
};

/// Brute-force exact kNN over the table by Euclidean distance, ties broken by
/// ascending id. K larger than the table returns the full ranking.
RankList rank_database(PoseId query_id, std::span<const double> query,
                       const EmbeddingTable& table, int k);

/// Query-by-database distances; rows follow query_ids, columns follow db_ids.
struct DistanceGrid {
  std::vector<PoseId> query_ids;
  std::vector<PoseId> db_ids;
  Mat values;
};

DistanceGrid embedding_distance_grid(const EmbeddingTable& queries,
                                     const EmbeddingTable& database);

DistanceGrid pose_distance_grid(const std::vector<Pose>& queries,
                                const std::vector<Pose>& database);

/// Adds seeded Gaussian noise (std sigma, per coordinate) to every joint.
/// Draws are derived per pose position, so output order is the only coupling.
std::vector<Pose> perturb_joints(const std::vector<Pose>& poses, double sigma,
                                 std::uint64_t seed);

/// Top-K of each grid row, ties by ascending db id.
std::vector<RankList> rank_all(const DistanceGrid& grid, int k);

/// Ranking by ground-truth pose distance; the upper-bound baseline.
std::vector<RankList> oracle_ranklists(const std::vector<Pose>& queries,
                                       const std::vector<Pose>& database, int k);

/// Uniform draws without replacement per query, seeded. Entry distances hold
/// the draw position (0, 1, ...) so rank-list invariants still hold.
std::vector<RankList> random_ranklists(const std::vector<PoseId>& query_ids,
                                       const std::vector<PoseId>& db_ids, int k,
                                       std::uint64_t seed);

/// Per query: divide each grid's row by its own max over the database, then
/// average the two normalized rows. Grids must cover identical id sets; an
/// all-zero row is an error (degenerate method output).
DistanceGrid fuse_distances(const DistanceGrid& a, const DistanceGrid& b);

enum class MetricKind { kPoseDifference, kHitAbsolute, kHitRelative };

const char* to_string(MetricKind kind);

/// One metric evaluated at several rank-list lengths.
struct MetricCurve {
  MetricKind kind = MetricKind::kPoseDifference;
  std::vector<int> k_values;
  std::vector<double> values;
};

inline constexpr double kDefaultHitThreshold = 15.0;  // px
inline constexpr double kDefaultRelativeSlack = 10.0;  // px

/// Mean over queries of the best pose distance among the top-K results.
MetricCurve pose_difference_at_k(const std::vector<RankList>& lists, const PoseDataset& dataset,
                                 const std::vector<int>& k_values);

/// Fraction of queries with a top-K result within `threshold` pose distance
/// (boundary counts as a hit).
MetricCurve hit_at_k_absolute(const std::vector<RankList>& lists, const PoseDataset& dataset,
                              const std::vector<int>& k_values,
                              double threshold = kDefaultHitThreshold);

/// Fraction of queries with a top-K result within tau + slack, where tau is
/// the query's distance to the closest pose in the full database.
MetricCurve hit_at_k_relative(const std::vector<RankList>& lists, const PoseDataset& dataset,
                              const std::vector<Pose>& database, const std::vector<int>& k_values,
                              double slack = kDefaultRelativeSlack);

/// Per-query 0/1 hits at a single K against `threshold` (for resampling
/// analyses); order follows `lists`.
std::vector<int> absolute_hit_flags(const std::vector<RankList>& lists,
                                    const PoseDataset& dataset, int k, double threshold);

/// Throws when a hit curve leaves [0, 1], a hit curve decreases, or a
/// pose-difference curve increases along ascending K.
void check_metric_invariants(const MetricCurve& curve);

/// Rows: method,metric,K,value (one per curve point, %.17g values).
struct MethodMetrics {
  std::string method;
  std::vector<MetricCurve> curves;
};

void write_metrics_csv(const std::vector<MethodMetrics>& all, const std::string& path);

/// One `query_id,rank,db_id,distance` line per entry.
void write_ranklists(const std::vector<RankList>& lists, const std::string& path);

}  // namespace posemb
