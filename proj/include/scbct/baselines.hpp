#pragma once

#include <vector>

#include "scbct/projector.hpp"

namespace scbct {

struct FdkOptions {
  bool hann = false;  // apodize the ramp with a Hann window
};

// Feldkamp reconstruction over a half-scan: cosine-weight each projection,
// ramp-filter the detector rows in the frequency domain (zero padded to the
// next power of two), backproject with inverse-square distance weighting,
// and scale by pi/M. Deterministic; linear in the projection data.
Volume fdk_reconstruct(const ProjectionSet& ps, const GridSpec& grid,
                       const FdkOptions& opt = {});

struct SartReport {
  std::vector<double> residual_norm;  // ||measured - forward(x)|| per sweep
  std::vector<double> min_voxel;      // per sweep, after the clamp
};

// Simultaneous algebraic reconstruction from zeros: per sweep and per view,
// the residual is divided by the ray-length image (denominators below 1e-8
// count as 1), backprojected, scaled by lambda, added, and the volume is
// clamped non-negative. lambda must lie in (0, 1].
Volume sart_reconstruct(const ProjectionSet& ps, const GridSpec& grid,
                        int iterations, double lambda,
                        SartReport* report = nullptr);

}  // namespace scbct
