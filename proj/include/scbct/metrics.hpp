#pragma once

#include "scbct/dataio.hpp"

namespace scbct {

// 10 log10(range^2 / mse) over all voxels; +inf when the volumes are equal
double psnr_db(const Volume& test, const Volume& ref, double data_range);

// Mean structural similarity over axial (z) slices. Each slice is scored
// with an 11x11 gaussian window (sigma 1.5, normalized), valid positions
// only, C1 = (0.01 range)^2, C2 = (0.03 range)^2. Slices must be at least
// 11x11.
double ssim(const Volume& test, const Volume& ref, double data_range);

}  // namespace scbct
