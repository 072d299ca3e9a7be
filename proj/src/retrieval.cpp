#include "posemb/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "posemb/parallel.hpp"
#include "posemb/rng.hpp"

namespace posemb {

namespace {

constexpr int kEmbedChunk = 512;  // rows per forward pass

// K smallest (distance, id) pairs of one distance row, ascending.
std::vector<RankEntry> select_top_k(const double* dists, const std::vector<PoseId>& ids,
                                    int k) {
  std::vector<RankEntry> entries(ids.size());
  for (std::size_t j = 0; j < ids.size(); ++j) entries[j] = {ids[j], dists[j]};
  const std::size_t keep = std::min<std::size_t>(k, entries.size());
  const auto by_distance_then_id = [](const RankEntry& a, const RankEntry& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.id < b.id;
  };
  std::partial_sort(entries.begin(), entries.begin() + keep, entries.end(),
                    by_distance_then_id);
  entries.resize(keep);
  return entries;
}

// Running minimum of ground-truth pose distance along one rank list.
std::vector<double> best_prefix_distances(const RankList& list, const PoseDataset& dataset) {
  if (list.entries.empty())
    throw std::invalid_argument(detail::cat("metrics: empty rank list for query ",
                                            list.query_id));
  const CenteredPose query = center_pose(dataset.pose_by_id(list.query_id));
  std::vector<double> best(list.entries.size());
  double running = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < list.entries.size(); ++r) {
    const double d = centered_distance(query, center_pose(dataset.pose_by_id(list.entries[r].id)));
    running = std::min(running, d);
    best[r] = running;
  }
  return best;
}

std::vector<std::vector<double>> all_best_prefixes(const std::vector<RankList>& lists,
                                                   const PoseDataset& dataset) {
  if (lists.empty()) throw std::invalid_argument("metrics: no rank lists");
  std::vector<std::vector<double>> best(lists.size());
  // Serial pass so lookup errors surface with their query, not from a worker.
  for (std::size_t i = 0; i < lists.size(); ++i) best[i] = best_prefix_distances(lists[i], dataset);
  return best;
}

void validate_k_values(const std::vector<int>& k_values) {
  if (k_values.empty()) throw std::invalid_argument("metrics: no K values");
  for (std::size_t i = 0; i < k_values.size(); ++i) {
    if (k_values[i] < 1)
      throw std::invalid_argument(detail::cat("metrics: K must be >= 1, got ", k_values[i]));
    if (i > 0 && k_values[i] <= k_values[i - 1])
      throw std::invalid_argument("metrics: K values must be strictly ascending");
  }
}

double best_at_k(const std::vector<double>& prefix, int k) {
  const std::size_t pos = std::min<std::size_t>(k, prefix.size()) - 1;
  return prefix[pos];
}

void append_csv_value(std::ofstream& out, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out << buf;
}

}  // namespace

EmbeddingTable embed_all(const EmbeddingModel& model, const PoseDataset& dataset, Split split,
                         RenderPipeline& pipeline) {
  if (model.input_dim() != pipeline.input_dim())
    throw std::invalid_argument(detail::cat("embed_all: model expects input dim ",
                                            model.input_dim(), ", canvas provides ",
                                            pipeline.input_dim()));
  EmbeddingTable table;
  table.ids = dataset.ids_of(split);
  if (table.ids.empty())
    throw std::invalid_argument(detail::cat("embed_all: split ", to_string(split), " is empty"));

  const int dim = pipeline.input_dim();
  table.vectors = Mat(static_cast<int>(table.ids.size()), model.embedding_dim());
  for (std::size_t base = 0; base < table.ids.size(); base += kEmbedChunk) {
    const int rows = static_cast<int>(std::min<std::size_t>(kEmbedChunk, table.ids.size() - base));
    Mat inputs(rows, dim);
    for (int r = 0; r < rows; ++r) {
      const ImageGrid img = pipeline.render_plain(dataset.pose_by_id(table.ids[base + r]));
      std::copy(img.pixels.begin(), img.pixels.end(), inputs.row(r));
    }
    Mat out;
    forward_batch(model, inputs, out);
    std::copy(out.d.begin(), out.d.end(), table.vectors.row(static_cast<int>(base)));
  }
  for (double v : table.vectors.d)
    if (!std::isfinite(v)) throw std::runtime_error("embed_all: non-finite embedding value");
  return table;
}

RankList rank_database(PoseId query_id, std::span<const double> query,
                       const EmbeddingTable& table, int k) {
  if (k < 1) throw std::invalid_argument("rank_database: K must be >= 1");
  if (table.ids.empty()) throw std::invalid_argument("rank_database: empty table");
  if (static_cast<int>(query.size()) != table.vectors.cols)
    throw std::invalid_argument(detail::cat("rank_database: query dim ", query.size(),
                                            " vs table dim ", table.vectors.cols));
  std::vector<double> dists(table.ids.size());
  for (std::size_t j = 0; j < table.ids.size(); ++j)
    dists[j] = l2_distance(query.data(), table.vectors.row(static_cast<int>(j)),
                           table.vectors.cols);
  return RankList{query_id, select_top_k(dists.data(), table.ids, k)};
}

DistanceGrid embedding_distance_grid(const EmbeddingTable& queries,
                                     const EmbeddingTable& database) {
  if (queries.vectors.cols != database.vectors.cols)
    throw std::invalid_argument("distance grid: embedding dims differ");
  if (queries.ids.empty() || database.ids.empty())
    throw std::invalid_argument("distance grid: empty side");
  DistanceGrid grid;
  grid.query_ids = queries.ids;
  grid.db_ids = database.ids;
  grid.values = Mat(static_cast<int>(queries.ids.size()), static_cast<int>(database.ids.size()));
  const int dim = queries.vectors.cols;
  parallel_for(0, grid.values.rows, [&](int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      const double* q = queries.vectors.row(i);
      double* out = grid.values.row(i);
      for (int j = 0; j < grid.values.cols; ++j)
        out[j] = l2_distance(q, database.vectors.row(j), dim);
    }
  });
  return grid;
}

DistanceGrid pose_distance_grid(const std::vector<Pose>& queries,
                                const std::vector<Pose>& database) {
  if (queries.empty() || database.empty())
    throw std::invalid_argument("pose distance grid: empty side");
  DistanceGrid grid;
  grid.query_ids.reserve(queries.size());
  grid.db_ids.reserve(database.size());
  std::vector<CenteredPose> qc(queries.size()), dc(database.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    grid.query_ids.push_back(queries[i].id);
    qc[i] = center_pose(queries[i]);
  }
  for (std::size_t j = 0; j < database.size(); ++j) {
    grid.db_ids.push_back(database[j].id);
    dc[j] = center_pose(database[j]);
  }
  grid.values = Mat(static_cast<int>(queries.size()), static_cast<int>(database.size()));
  parallel_for(0, grid.values.rows, [&](int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      double* out = grid.values.row(i);
      for (int j = 0; j < grid.values.cols; ++j) out[j] = centered_distance(qc[i], dc[j]);
    }
  });
  return grid;
}

std::vector<Pose> perturb_joints(const std::vector<Pose>& poses, double sigma,
                                 std::uint64_t seed) {
  if (sigma < 0.0 || !std::isfinite(sigma))
    throw std::invalid_argument("perturb_joints: sigma must be finite and non-negative");
  std::vector<Pose> out = poses;
  for (std::size_t i = 0; i < out.size(); ++i) {
    Rng rng = make_rng(mix_seed(seed, i));
    for (Point& joint : out[i].joints) {
      joint.x += sigma * gaussian(rng);
      joint.y += sigma * gaussian(rng);
    }
  }
  return out;
}

std::vector<RankList> rank_all(const DistanceGrid& grid, int k) {
  if (k < 1) throw std::invalid_argument("rank_all: K must be >= 1");
  std::vector<RankList> lists(grid.query_ids.size());
  parallel_for(0, grid.values.rows, [&](int lo, int hi) {
    for (int i = lo; i < hi; ++i)
      lists[i] = RankList{grid.query_ids[i], select_top_k(grid.values.row(i), grid.db_ids, k)};
  });
  return lists;
}

std::vector<RankList> oracle_ranklists(const std::vector<Pose>& queries,
                                       const std::vector<Pose>& database, int k) {
  return rank_all(pose_distance_grid(queries, database), k);
}

std::vector<RankList> random_ranklists(const std::vector<PoseId>& query_ids,
                                       const std::vector<PoseId>& db_ids, int k,
                                       std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("random_ranklists: K must be >= 1");
  if (db_ids.empty()) throw std::invalid_argument("random_ranklists: empty database");
  const std::size_t keep = std::min<std::size_t>(k, db_ids.size());
  std::vector<RankList> lists(query_ids.size());
  for (std::size_t qi = 0; qi < query_ids.size(); ++qi) {
    Rng rng = make_rng(mix_seed(seed, qi));
    std::vector<PoseId> pool = db_ids;
    partial_shuffle(pool, keep, rng);
    RankList list;
    list.query_id = query_ids[qi];
    list.entries.reserve(keep);
    for (std::size_t r = 0; r < keep; ++r)
      list.entries.push_back({pool[r], static_cast<double>(r)});
    lists[qi] = std::move(list);
  }
  return lists;
}

DistanceGrid fuse_distances(const DistanceGrid& a, const DistanceGrid& b) {
  if (a.query_ids != b.query_ids || a.db_ids != b.db_ids)
    throw std::invalid_argument("fuse_distances: grids cover different id sets");
  if (a.values.rows != b.values.rows || a.values.cols != b.values.cols)
    throw std::invalid_argument("fuse_distances: grid shapes differ");
  DistanceGrid fused;
  fused.query_ids = a.query_ids;
  fused.db_ids = a.db_ids;
  fused.values = Mat(a.values.rows, a.values.cols);
  for (int i = 0; i < a.values.rows; ++i) {
    const double* ra = a.values.row(i);
    const double* rb = b.values.row(i);
    double max_a = 0.0, max_b = 0.0;
    for (int j = 0; j < a.values.cols; ++j) {
      max_a = std::max(max_a, ra[j]);
      max_b = std::max(max_b, rb[j]);
    }
    if (max_a <= 0.0 || max_b <= 0.0)
      throw std::runtime_error(detail::cat("fuse_distances: degenerate all-zero row for query ",
                                           a.query_ids[i]));
    double* out = fused.values.row(i);
    for (int j = 0; j < a.values.cols; ++j)
      out[j] = (ra[j] / max_a + rb[j] / max_b) / 2.0;
  }
  return fused;
}

const char* to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::kPoseDifference: return "pose_difference";
    case MetricKind::kHitAbsolute: return "hit_abs";
    case MetricKind::kHitRelative: return "hit_rel";
  }
  return "unknown";
}

MetricCurve pose_difference_at_k(const std::vector<RankList>& lists, const PoseDataset& dataset,
                                 const std::vector<int>& k_values) {
  validate_k_values(k_values);
  const auto best = all_best_prefixes(lists, dataset);
  MetricCurve curve{MetricKind::kPoseDifference, k_values, {}};
  for (int k : k_values) {
    double sum = 0.0;
    for (const auto& prefix : best) sum += best_at_k(prefix, k);
    curve.values.push_back(sum / static_cast<double>(best.size()));
  }
  return curve;
}

MetricCurve hit_at_k_absolute(const std::vector<RankList>& lists, const PoseDataset& dataset,
                              const std::vector<int>& k_values, double threshold) {
  validate_k_values(k_values);
  if (threshold < 0.0) throw std::invalid_argument("hit_abs: threshold must be non-negative");
  const auto best = all_best_prefixes(lists, dataset);
  MetricCurve curve{MetricKind::kHitAbsolute, k_values, {}};
  for (int k : k_values) {
    int hits = 0;
    for (const auto& prefix : best)
      if (best_at_k(prefix, k) <= threshold) ++hits;
    curve.values.push_back(static_cast<double>(hits) / static_cast<double>(best.size()));
  }
  return curve;
}

MetricCurve hit_at_k_relative(const std::vector<RankList>& lists, const PoseDataset& dataset,
                              const std::vector<Pose>& database, const std::vector<int>& k_values,
                              double slack) {
  validate_k_values(k_values);
  if (database.empty()) throw std::invalid_argument("hit_rel: empty database");
  if (slack < 0.0) throw std::invalid_argument("hit_rel: slack must be non-negative");
  const auto best = all_best_prefixes(lists, dataset);

  std::vector<CenteredPose> dc(database.size());
  for (std::size_t j = 0; j < database.size(); ++j) dc[j] = center_pose(database[j]);
  std::vector<double> tau(lists.size());
  parallel_for(0, static_cast<int>(lists.size()), [&](int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      const CenteredPose query = center_pose(dataset.pose_by_id(lists[i].query_id));
      double t = std::numeric_limits<double>::infinity();
      for (const CenteredPose& d : dc) t = std::min(t, centered_distance(query, d));
      tau[i] = t;
    }
  });

  MetricCurve curve{MetricKind::kHitRelative, k_values, {}};
  for (int k : k_values) {
    int hits = 0;
    for (std::size_t i = 0; i < best.size(); ++i)
      if (best_at_k(best[i], k) <= tau[i] + slack) ++hits;
    curve.values.push_back(static_cast<double>(hits) / static_cast<double>(best.size()));
  }
  return curve;
}

std::vector<int> absolute_hit_flags(const std::vector<RankList>& lists,
                                    const PoseDataset& dataset, int k, double threshold) {
  if (k < 1) throw std::invalid_argument("hit flags: K must be >= 1");
  const auto best = all_best_prefixes(lists, dataset);
  std::vector<int> flags(best.size());
  for (std::size_t i = 0; i < best.size(); ++i)
    flags[i] = best_at_k(best[i], k) <= threshold ? 1 : 0;
  return flags;
}

void check_metric_invariants(const MetricCurve& curve) {
  validate_k_values(curve.k_values);
  if (curve.values.size() != curve.k_values.size())
    throw std::runtime_error("metric curve: value/K count mismatch");
  const bool hit = curve.kind != MetricKind::kPoseDifference;
  for (std::size_t i = 0; i < curve.values.size(); ++i) {
    const double v = curve.values[i];
    if (!std::isfinite(v))
      throw std::runtime_error(detail::cat("metric curve ", to_string(curve.kind),
                                           ": non-finite value at K=", curve.k_values[i]));
    if (hit && (v < 0.0 || v > 1.0))
      throw std::runtime_error(detail::cat("metric curve ", to_string(curve.kind), ": value ", v,
                                           " outside [0,1] at K=", curve.k_values[i]));
    if (i > 0) {
      const double prev = curve.values[i - 1];
      if (hit && v < prev)
        throw std::runtime_error(detail::cat("metric curve ", to_string(curve.kind),
                                             ": decreases from K=", curve.k_values[i - 1],
                                             " to K=", curve.k_values[i]));
      if (!hit && v > prev)
        throw std::runtime_error(detail::cat("metric curve ", to_string(curve.kind),
                                             ": increases from K=", curve.k_values[i - 1],
                                             " to K=", curve.k_values[i]));
    }
  }
}

void write_metrics_csv(const std::vector<MethodMetrics>& all, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(detail::cat("metrics csv ", path, ": cannot open for write"));
  out << "method,metric,K,value\n";
  for (const MethodMetrics& method : all) {
    for (const MetricCurve& curve : method.curves) {
      for (std::size_t i = 0; i < curve.k_values.size(); ++i) {
        out << method.method << ',' << to_string(curve.kind) << ',' << curve.k_values[i] << ',';
        append_csv_value(out, curve.values[i]);
        out << '\n';
      }
    }
  }
  if (!out) throw std::runtime_error(detail::cat("metrics csv ", path, ": write failed"));
}

void write_ranklists(const std::vector<RankList>& lists, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(detail::cat("rank lists ", path, ": cannot open for write"));
  for (const RankList& list : lists) {
    for (std::size_t r = 0; r < list.entries.size(); ++r) {
      out << list.query_id << ',' << r << ',' << list.entries[r].id << ',';
      append_csv_value(out, list.entries[r].distance);
      out << '\n';
    }
  }
  if (!out) throw std::runtime_error(detail::cat("rank lists ", path, ": write failed"));
}

}  // namespace posemb
