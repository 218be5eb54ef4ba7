#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace scbct {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

// Circular cone-beam scanner. The source orbits in the x-y plane about the
// z axis; at angle 0 it sits at (+sid, 0, 0) and the flat detector is centred
// at (sid - sdd, 0, 0) with u along +y and v along +z. All lengths in mm.
struct ScannerGeometry {
  double sid_mm = 1000.0;  // source to isocenter
  double sdd_mm = 1500.0;  // source to detector
  int det_px_u = 256;
  int det_px_v = 256;
  double det_mm_u = 1024.0;
  double det_mm_v = 1024.0;
  double vol_mm_x = 409.6;  // physical extent of the reconstructible box
  double vol_mm_y = 409.6;
  double vol_mm_z = 409.6;

  double pixel_mm_u() const { return det_mm_u / det_px_u; }
  double pixel_mm_v() const { return det_mm_v / det_px_v; }
};

// throws std::invalid_argument naming the broken field
void validate_geometry(const ScannerGeometry& g);

// flat key=value file, keys: sid_mm sdd_mm det_px_u det_px_v det_mm_u
// det_mm_v vol_mm_x vol_mm_y vol_mm_z
ScannerGeometry load_geometry(const std::string& path);
void save_geometry(const ScannerGeometry& g, const std::string& path);

// rotation about +z by deg (right handed: +x toward +y)
Vec3 rotate_z(const Vec3& p, double deg);

Vec3 source_position(const ScannerGeometry& g, double angle_deg);

struct ProjectedPoint {
  double u = 0.0, v = 0.0;  // normalized detector coords, (0,0) = (-u,-v) corner
  bool visible = false;     // true iff in front of the source and inside [0,1]^2
};

// Central projection of world point p (mm) onto the detector at the given
// gantry angle. Equivalent to rotating the world by -angle about z and
// projecting in the canonical pose. Throws if p coincides with the source.
ProjectedPoint project_point(const ScannerGeometry& g, double angle_deg,
                             const Vec3& p);

// m angles in degrees, sorted ascending. Random mode draws uniformly from
// [0, 180); equiangular mode returns the ladder 180*i/m.
std::vector<double> sample_view_angles(int m, uint64_t seed,
                                       bool equiangular = false);

}  // namespace scbct
