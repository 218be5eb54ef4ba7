#pragma once

#include <string>
#include <vector>

#include "scbct/dataio.hpp"

namespace scbct {

// 8-bit grayscale PNG; pixels row-major, top row first, w*h bytes
void write_gray_png(const std::string& path,
                    const std::vector<unsigned char>& pixels, int w, int h);

// center axial/coronal/sagittal slices as <prefix>_axial.png etc; values
// clamped to [0,1] and quantized to 8 bits
void write_center_slices(const Volume& v, const std::string& prefix);

}  // namespace scbct
