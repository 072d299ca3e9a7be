#pragma once

#include <cstdint>
#include <string>

#include "posemb/pose.hpp"

namespace posemb {

/// Ingestion result: the kept poses plus accept/reject tallies.
struct LoadReport {
  PoseDataset dataset;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
};

/// Reads JSON-lines annotations: one object per line with an integer "id",
/// "joints" as 16 [x, y] pairs, and an optional "split" tag (default train).
/// Records failing the schema (wrong joint count, non-finite values) are
/// rejected and counted; unparseable lines and duplicate ids are hard errors
/// reported with their line number; zero accepted records is an error.
LoadReport load_annotations(const std::string& path);

/// Inverse of load_annotations, split tags included.
void save_annotations(const PoseDataset& dataset, const std::string& path);

/// Articulated random-pose source: a fixed bone-length skeleton whose joint
/// angles are perturbed per sample. Samples cluster around `prototypes` base
/// configurations; within a cluster, perturbations live on a
/// `latent_dims`-dimensional manifold so nearest neighbors exist at useful
/// densities.
struct GeneratorSpec {
  int prototypes = 2;
  int latent_dims = 3;
  double proto_angle_range = 0.9;   // rad, uniform per-bone prototype offsets
  double angle_noise = 0.65;        // rad, scales the latent-driven deltas
  double scale_jitter = 0.05;       // uniform in [1 - j, 1 + j]
  double translation_jitter = 30.0; // px, uniform per axis
  double base_scale = 1.0;

  void validate() const;
};

/// n valid skeletons, ids 0..n-1, sample i reproducible independent of n.
/// All poses are tagged train; use split_dataset to partition.
PoseDataset generate_synthetic(int n, std::uint64_t seed, const GeneratorSpec& spec = {});

/// Seeded disjoint assignment of n_train/n_db/n_query poses; the remainder is
/// dropped. Same seed and sizes give the same assignment regardless of the
/// dataset's insertion order.
PoseDataset split_dataset(const PoseDataset& dataset, std::size_t n_train, std::size_t n_db,
                          std::size_t n_query, std::uint64_t seed);

}  // namespace posemb
