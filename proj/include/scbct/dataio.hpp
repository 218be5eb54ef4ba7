#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scbct/geometry.hpp"
#include "scbct/rng.hpp"

namespace scbct {

struct GridSpec {
  int nx = 0, ny = 0, nz = 0;
  double sx = 0.0, sy = 0.0, sz = 0.0;  // voxel spacing mm

  int64_t count() const { return int64_t(nx) * ny * nz; }
  // physical extent of the voxelized box
  double extent_x() const { return nx * sx; }
  double extent_y() const { return ny * sy; }
  double extent_z() const { return nz * sz; }
};

// Scalar grid, x-fastest layout, payload stored as the file keeps it (f32).
struct Volume {
  GridSpec grid;
  std::vector<float> data;

  float& at(int x, int y, int z) {
    return data[(int64_t(z) * grid.ny + y) * grid.nx + x];
  }
  float at(int x, int y, int z) const {
    return data[(int64_t(z) * grid.ny + y) * grid.nx + x];
  }
};

Volume make_volume(const GridSpec& g, float fill = 0.0f);

// <name>.vol text header + <name>.raw little-endian f32 payload
Volume load_volume(const std::string& vol_path);
void save_volume(const Volume& v, const std::string& vol_path);

// affine rescale to [0,1]; a constant volume maps to all zeros
void normalize_volume(Volume& v);

// p in [-1,1]^3 with -1/+1 at the outermost voxel centers; coordinates
// outside the range clamp to the border
double trilinear_sample(const Volume& v, double px, double py, double pz);

// detector image sample at normalized (u,v), border clamped; img is
// u-fastest, npu x npv
double bilinear_sample_image(const std::vector<double>& img, int npu, int npv,
                             double u, double v);

struct PointBatch {
  int n = 0;
  std::vector<double> coords;  // n*3, normalized coords in (-1,1)^3
  std::vector<double> values;  // n ground-truth samples
};

enum class PointSampling { uniform, stratified };

// n query points with ground-truth values from gt; uniform draws i.i.d. over
// the box, stratified jitters one point per cell of an n-sized virtual grid
PointBatch sample_points(const Volume& gt, int n, Rng& rng,
                         PointSampling mode = PointSampling::uniform);

// phantoms; values in [0,1], evaluated at voxel centers
Volume make_sphere_phantom(int n, double spacing);
Volume make_cube_phantom(int n, double spacing);
// concentric shells with seed-dependent radii and intensities, one-voxel
// smooth transitions
Volume make_shell_phantom(int n, double spacing, uint64_t seed);

// projection directory: geom.cfg + angles.txt + view_%04d.raw (u-fastest f32)
struct ProjectionSet {
  ScannerGeometry geom;
  std::vector<double> angles_deg;
  std::vector<std::vector<float>> views;
};

ProjectionSet load_projection_set(const std::string& dir);
void save_projection_set(const ProjectionSet& ps, const std::string& dir);

}  // namespace scbct
