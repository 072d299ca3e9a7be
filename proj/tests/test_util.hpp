#pragma once

#include <cstdint>

#include "posemb/pose.hpp"
#include "posemb/rng.hpp"

namespace posemb::testutil {

// Every joint at (x, y).
inline Pose point_pose(PoseId id, double x, double y) {
  Pose p;
  p.id = id;
  for (auto& j : p.joints) j = {x, y};
  return p;
}

// Coordinates uniform in [lo, hi).
inline Pose random_pose(Rng& rng, PoseId id, double lo = 0.0, double hi = 600.0) {
  Pose p;
  p.id = id;
  for (auto& j : p.joints) {
    j.x = uniform_in(rng, lo, hi);
    j.y = uniform_in(rng, lo, hi);
  }
  return p;
}

// Coordinates on the 1/64 grid in [0, 4096). Sums and differences of such
// values (and of grid-aligned translations) are exact in double precision,
// so centering commutes with translation bit-for-bit.
inline Pose grid_pose(Rng& rng, PoseId id) {
  Pose p;
  p.id = id;
  for (auto& j : p.joints) {
    j.x = static_cast<double>(uniform_below(rng, 64 * 4096)) / 64.0;
    j.y = static_cast<double>(uniform_below(rng, 64 * 4096)) / 64.0;
  }
  return p;
}

// Grid-aligned translation offset, multiples of 1/64 in [-1024, 1024).
inline double grid_offset(Rng& rng) {
  return (static_cast<double>(uniform_below(rng, 2 * 64 * 1024)) - 64.0 * 1024.0) / 64.0;
}

inline Pose translated(const Pose& p, double tx, double ty, PoseId new_id) {
  Pose out = p;
  out.id = new_id;
  for (auto& j : out.joints) {
    j.x += tx;
    j.y += ty;
  }
  return out;
}

}  // namespace posemb::testutil
