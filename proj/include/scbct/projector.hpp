#pragma once

#include <vector>

#include "scbct/dataio.hpp"
#include "scbct/geometry.hpp"

namespace scbct {

// Line-integral image of the volume at one gantry angle: one ray per detector
// pixel center, midpoint quadrature with the given step (0 picks half the
// smallest voxel spacing), trilinear samples border-clamped inside the volume
// box and zero outside. Output is u-fastest, det_px_u x det_px_v, in
// value * mm units.
std::vector<double> render_drr(const Volume& vol, const ScannerGeometry& g,
                               double angle_deg, double step_mm = 0.0);

enum class BpWeight {
  none,            // plain bilinear gather (SART)
  inverse_square,  // (sid / (sid - x'))^2 depth weight (FDK)
  adjoint,         // inverse_square times the voxel footprint scale, so the
                   // operator approximates the transpose of render_drr
};

// Voxel-driven backprojection of one detector image: every voxel whose
// projection lands on the detector receives the bilinearly interpolated
// image value times the selected weight; invisible voxels receive zero.
// Accumulates into out (size grid.count(), x-fastest).
void backproject(const std::vector<double>& img, const ScannerGeometry& g,
                 double angle_deg, const GridSpec& grid, BpWeight weight,
                 std::vector<double>& out);

// renders every angle in ps.geom order; convenience for building datasets
ProjectionSet render_projections(const Volume& vol, const ScannerGeometry& g,
                                 const std::vector<double>& angles_deg,
                                 double step_mm = 0.0);

}  // namespace scbct
