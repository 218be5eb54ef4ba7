#include "scbct/pngio.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace scbct {

namespace {

void put_be32(std::string& s, uint32_t v) {
  s.push_back(char((v >> 24) & 0xff));
  s.push_back(char((v >> 16) & 0xff));
  s.push_back(char((v >> 8) & 0xff));
  s.push_back(char(v & 0xff));
}

void write_chunk(std::ofstream& os, const char* type,
                 const std::string& data) {
  std::string out;
  put_be32(out, uint32_t(data.size()));
  out.append(type, 4);
  out += data;
  uint32_t crc = uint32_t(
      crc32(crc32(0L, reinterpret_cast<const Bytef*>(type), 4),
            reinterpret_cast<const Bytef*>(data.data()), uInt(data.size())));
  put_be32(out, crc);
  os.write(out.data(), std::streamsize(out.size()));
}

unsigned char quantize(float f) {
  const double c = std::clamp(double(f), 0.0, 1.0);
  return static_cast<unsigned char>(std::lround(c * 255.0));
}

}  // namespace

void write_gray_png(const std::string& path,
                    const std::vector<unsigned char>& pixels, int w, int h) {
  if (w < 1 || h < 1)
    throw std::invalid_argument("png: dimensions must be positive");
  if (pixels.size() != size_t(w) * size_t(h))
    throw std::invalid_argument("png: pixel buffer does not match " +
                                std::to_string(w) + "x" + std::to_string(h));

  // one filter byte (none) per scanline
  std::vector<unsigned char> raw(size_t(w + 1) * size_t(h));
  for (int y = 0; y < h; ++y) {
    raw[size_t(w + 1) * size_t(y)] = 0;
    std::memcpy(&raw[size_t(w + 1) * size_t(y) + 1], &pixels[size_t(w) * y],
                size_t(w));
  }
  uLongf bound = compressBound(uLong(raw.size()));
  std::vector<unsigned char> comp(bound);
  if (compress2(comp.data(), &bound, raw.data(), uLong(raw.size()), 9) != Z_OK)
    throw std::runtime_error("png: deflate failed");

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("png: cannot open " + path);
  static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  os.write(reinterpret_cast<const char*>(sig), 8);

  std::string ihdr;
  put_be32(ihdr, uint32_t(w));
  put_be32(ihdr, uint32_t(h));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(0);   // grayscale
  ihdr.push_back(0);   // deflate
  ihdr.push_back(0);   // adaptive filtering
  ihdr.push_back(0);   // no interlace
  write_chunk(os, "IHDR", ihdr);
  write_chunk(os, "IDAT",
              std::string(reinterpret_cast<const char*>(comp.data()), bound));
  write_chunk(os, "IEND", "");
  if (!os) throw std::runtime_error("png: write failed for " + path);
}

void write_center_slices(const Volume& v, const std::string& prefix) {
  const GridSpec& g = v.grid;
  if (g.count() <= 0) throw std::invalid_argument("png: empty volume");
  const int xc = g.nx / 2, yc = g.ny / 2, zc = g.nz / 2;

  std::vector<unsigned char> axial(size_t(g.nx) * size_t(g.ny));
  for (int y = 0; y < g.ny; ++y)
    for (int x = 0; x < g.nx; ++x)
      axial[size_t(y) * g.nx + x] = quantize(v.at(x, y, zc));
  write_gray_png(prefix + "_axial.png", axial, g.nx, g.ny);

  std::vector<unsigned char> coronal(size_t(g.nx) * size_t(g.nz));
  for (int z = 0; z < g.nz; ++z)
    for (int x = 0; x < g.nx; ++x)
      coronal[size_t(z) * g.nx + x] = quantize(v.at(x, yc, z));
  write_gray_png(prefix + "_coronal.png", coronal, g.nx, g.nz);

  std::vector<unsigned char> sagittal(size_t(g.ny) * size_t(g.nz));
  for (int z = 0; z < g.nz; ++z)
    for (int y = 0; y < g.ny; ++y)
      sagittal[size_t(z) * g.ny + y] = quantize(v.at(xc, y, z));
  write_gray_png(prefix + "_sagittal.png", sagittal, g.ny, g.nz);
}

}  // namespace scbct
