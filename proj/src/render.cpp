#include "posemb/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace posemb {

std::vector<std::pair<int, int>> default_bone_list() {
  return {
      {9, 8},  {8, 7},  {7, 6},            // head - neck - thorax - pelvis
      {7, 12}, {12, 11}, {11, 10},         // right arm
      {7, 13}, {13, 14}, {14, 15},         // left arm
      {6, 2},  {2, 1},  {1, 0},            // right leg
      {6, 3},  {3, 4},  {4, 5},            // left leg
  };
}

void CanvasSpec::validate() const {
  if (side < 16) throw std::invalid_argument("CanvasSpec: side must be >= 16");
  if (line_width < 1.0) throw std::invalid_argument("CanvasSpec: line_width must be >= 1");
  if (margin < 0.0 || margin >= 1.0) throw std::invalid_argument("CanvasSpec: margin must be in [0, 1)");
  for (const auto& [a, b] : bones) {
    if (a < 0 || a >= kJointCount || b < 0 || b >= kJointCount) {
      throw std::invalid_argument(detail::cat("CanvasSpec: bone (", a, ",", b, ") out of range"));
    }
  }
}

Pose fit_to_canvas(const Pose& pose, const CanvasSpec& canvas) {
  canvas.validate();
  validate_pose(pose);

  double xmin = pose.joints[0].x, xmax = pose.joints[0].x;
  double ymin = pose.joints[0].y, ymax = pose.joints[0].y;
  for (int j = 1; j < kJointCount; ++j) {
    xmin = std::min(xmin, pose.joints[j].x);
    xmax = std::max(xmax, pose.joints[j].x);
    ymin = std::min(ymin, pose.joints[j].y);
    ymax = std::max(ymax, pose.joints[j].y);
  }
  const double extent = std::max(xmax - xmin, ymax - ymin);
  const double usable = canvas.side * (1.0 - canvas.margin);
  const double scale = extent > 0.0 ? usable / extent : 1.0;
  const double cx = (xmin + xmax) / 2.0;
  const double cy = (ymin + ymax) / 2.0;
  const double half = canvas.side / 2.0;

  Pose out = pose;
  for (int j = 0; j < kJointCount; ++j) {
    out.joints[j].x = (pose.joints[j].x - cx) * scale + half;
    out.joints[j].y = (pose.joints[j].y - cy) * scale + half;
  }
  return out;
}

namespace {

double point_segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double ux = bx - ax;
  const double uy = by - ay;
  const double vx = px - ax;
  const double vy = py - ay;
  const double uu = ux * ux + uy * uy;
  if (uu == 0.0) return std::sqrt(vx * vx + vy * vy);
  double t = (vx * ux + vy * uy) / uu;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = vx - t * ux;
  const double dy = vy - t * uy;
  return std::sqrt(dx * dx + dy * dy);
}

// Stamps one stroke (segment, or disc when a == b). Coverage ramps linearly
// from 1 inside the stroke to 0 at half-width + 0.5; pixels are combined by max.
void stamp(ImageGrid& g, double ax, double ay, double bx, double by, double reach) {
  const int side = g.side;
  const int c0 = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - reach - 0.5)));
  const int c1 = std::min(side - 1, static_cast<int>(std::ceil(std::max(ax, bx) + reach - 0.5)));
  const int r0 = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - reach - 0.5)));
  const int r1 = std::min(side - 1, static_cast<int>(std::ceil(std::max(ay, by) + reach - 0.5)));
  for (int r = r0; r <= r1; ++r) {
    const double py = r + 0.5;
    for (int c = c0; c <= c1; ++c) {
      const double px = c + 0.5;
      const double d = point_segment_distance(px, py, ax, ay, bx, by);
      const double cov = reach - d;
      if (cov > 0.0) {
        const double v = std::min(cov, 1.0);
        double& cell = g.at(r, c);
        cell = std::max(cell, v);
      }
    }
  }
}

}  // namespace

ImageGrid render_skeleton(const Pose& canvas_pose, const CanvasSpec& canvas) {
  canvas.validate();
  validate_pose(canvas_pose);

  ImageGrid g;
  g.side = canvas.side;
  g.pixels.assign(static_cast<std::size_t>(canvas.side) * canvas.side, 0.0);

  const double reach = canvas.line_width / 2.0 + 0.5;
  for (const auto& [a, b] : canvas.bones) {
    stamp(g, canvas_pose.joints[a].x, canvas_pose.joints[a].y,
          canvas_pose.joints[b].x, canvas_pose.joints[b].y, reach);
  }
  for (int j = 0; j < kJointCount; ++j) {
    stamp(g, canvas_pose.joints[j].x, canvas_pose.joints[j].y,
          canvas_pose.joints[j].x, canvas_pose.joints[j].y, reach);
  }
  return g;
}

void write_pgm(const ImageGrid& grid, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(detail::cat("cannot open ", path, " for writing"));
  out << "P5\n" << grid.side << ' ' << grid.side << "\n255\n";
  for (const double v : grid.pixels) {
    const int byte = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    out.put(static_cast<char>(byte));
  }
  if (!out) throw std::runtime_error(detail::cat("failed writing ", path));
}

RenderPipeline::RenderPipeline(CanvasSpec canvas, AugmentationSpec aug)
    : canvas_(std::move(canvas)), aug_(aug) {
  canvas_.validate();
  aug_.validate();
}

ImageGrid RenderPipeline::render_plain(const Pose& pose) const {
  return render_skeleton(fit_to_canvas(pose, canvas_), canvas_);
}

const ImageGrid& RenderPipeline::render_cached(const Pose& pose) {
  const auto it = cache_.find(pose.id);
  if (it != cache_.end()) return it->second;
  return cache_.emplace(pose.id, render_plain(pose)).first->second;
}

ImageGrid RenderPipeline::render_augmented(const Pose& pose, std::uint64_t sample_counter) const {
  Rng rng = make_rng(mix_seed(aug_.seed, sample_counter));
  const Pose fitted = fit_to_canvas(pose, canvas_);
  const Pose jittered = augment_sample(fitted, aug_, static_cast<double>(canvas_.side), rng);
  return render_skeleton(jittered, canvas_);
}

}  // namespace posemb
