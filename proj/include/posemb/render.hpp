#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "posemb/mining.hpp"
#include "posemb/pose.hpp"

namespace posemb {

/// The 15 bones of the standard human skeleton over the 16 MPII joints.
std::vector<std::pair<int, int>> default_bone_list();

struct CanvasSpec {
  int side = 64;            // square canvas, pixels
  double line_width = 3.0;  // stroke width, pixels
  double margin = 0.10;     // fraction of side kept free around the figure
  std::vector<std::pair<int, int>> bones = default_bone_list();

  void validate() const;
};

/// Dense side x side grayscale grid, row-major, intensities in [0, 1].
struct ImageGrid {
  int side = 0;
  std::vector<double> pixels;

  double at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * side + c]; }
  double& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * side + c]; }
};

/// Translates and isotropically scales the pose so its bounding box fits the
/// canvas minus the margin, centered. Degenerate (single-point) poses map to
/// the canvas center.
Pose fit_to_canvas(const Pose& pose, const CanvasSpec& canvas);

/// Draws each bone as an anti-aliased stroke of line_width plus a disc per
/// joint. Pixels farther than line_width/2 + 0.5 from every stroke are exactly
/// zero. Out-of-canvas geometry is clipped.
ImageGrid render_skeleton(const Pose& canvas_pose, const CanvasSpec& canvas);

/// 8-bit binary PGM (P5) dump for visual inspection.
void write_pgm(const ImageGrid& grid, const std::string& path);

/// fit -> (optionally augment) -> render, with a cache for unaugmented
/// renders keyed by pose id. Augmented sample draws come from a generator
/// derived as mix_seed(augmentation seed, sample counter), so any consumption
/// order yields the same images.
class RenderPipeline {
 public:
  RenderPipeline(CanvasSpec canvas, AugmentationSpec aug);

  const CanvasSpec& canvas() const { return canvas_; }
  const AugmentationSpec& augmentation() const { return aug_; }
  int input_dim() const { return canvas_.side * canvas_.side; }

  ImageGrid render_plain(const Pose& pose) const;
  const ImageGrid& render_cached(const Pose& pose);
  ImageGrid render_augmented(const Pose& pose, std::uint64_t sample_counter) const;

 private:
  CanvasSpec canvas_;
  AugmentationSpec aug_;
  std::unordered_map<PoseId, ImageGrid> cache_;
};

}  // namespace posemb
