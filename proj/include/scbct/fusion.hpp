#pragma once

#include <vector>

#include "scbct/encoder2d.hpp"
#include "scbct/geometry.hpp"

namespace scbct {

struct FusionStats {
  // point/view pairs that projected outside the detector (border-clamped)
  int64_t invisible_samples = 0;
};

// Width of the fused feature when only the first `levels` pyramid scales
// are concatenated (levels = 4 gives the full 464).
int64_t fused_width(int levels);

// Projects each world-space point into every view, bilinearly samples the
// first `levels` pyramid scales, fuses views by elementwise max, and
// concatenates the scales into one [N, fused_width(levels)] feature matrix
// (row i = point i, column layout [256 | 128 | 64 | 16] coarse to fine).
nn::Var query_point_features(const std::vector<FeaturePyramid>& pyramids,
                             const ScannerGeometry& geom,
                             const std::vector<double>& angles_deg,
                             const std::vector<Vec3>& points_world,
                             FusionStats* stats = nullptr, int levels = 4);

}  // namespace scbct
