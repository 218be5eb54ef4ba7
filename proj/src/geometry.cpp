#include "scbct/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "scbct/rng.hpp"

namespace scbct {

void validate_geometry(const ScannerGeometry& g) {
  auto bad = [](const std::string& field) {
    throw std::invalid_argument("geometry: invalid " + field);
  };
  if (!(g.sid_mm > 0.0)) bad("sid_mm");
  if (!(g.sdd_mm > g.sid_mm)) bad("sdd_mm");
  if (g.det_px_u <= 0) bad("det_px_u");
  if (g.det_px_v <= 0) bad("det_px_v");
  if (!(g.det_mm_u > 0.0)) bad("det_mm_u");
  if (!(g.det_mm_v > 0.0)) bad("det_mm_v");
  if (!(g.vol_mm_x > 0.0)) bad("vol_mm_x");
  if (!(g.vol_mm_y > 0.0)) bad("vol_mm_y");
  if (!(g.vol_mm_z > 0.0)) bad("vol_mm_z");
  // the whole volume box must stay strictly in front of the source
  double rmax = 0.5 * std::hypot(g.vol_mm_x, g.vol_mm_y);
  if (!(g.sid_mm > rmax)) bad("sid_mm (volume reaches the source orbit)");
}

ScannerGeometry load_geometry(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("geometry: cannot open " + path);
  ScannerGeometry g;
  std::map<std::string, double*> keys{
      {"sid_mm", &g.sid_mm},     {"sdd_mm", &g.sdd_mm},
      {"det_mm_u", &g.det_mm_u}, {"det_mm_v", &g.det_mm_v},
      {"vol_mm_x", &g.vol_mm_x}, {"vol_mm_y", &g.vol_mm_y},
      {"vol_mm_z", &g.vol_mm_z}};
  std::map<std::string, int*> ikeys{{"det_px_u", &g.det_px_u},
                                    {"det_px_v", &g.det_px_v}};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("geometry: malformed line '" + line + "' in " + path);
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    try {
      if (auto it = keys.find(key); it != keys.end())
        *it->second = std::stod(val);
      else if (auto ii = ikeys.find(key); ii != ikeys.end())
        *ii->second = std::stoi(val);
      else
        throw std::runtime_error("geometry: unknown key '" + key + "' in " + path);
    } catch (const std::invalid_argument&) {
      throw std::runtime_error("geometry: bad value for key '" + key + "' in " + path);
    }
  }
  validate_geometry(g);
  return g;
}

void save_geometry(const ScannerGeometry& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("geometry: cannot write " + path);
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "sid_mm=%.17g\nsdd_mm=%.17g\ndet_px_u=%d\ndet_px_v=%d\n"
                "det_mm_u=%.17g\ndet_mm_v=%.17g\n"
                "vol_mm_x=%.17g\nvol_mm_y=%.17g\nvol_mm_z=%.17g\n",
                g.sid_mm, g.sdd_mm, g.det_px_u, g.det_px_v, g.det_mm_u,
                g.det_mm_v, g.vol_mm_x, g.vol_mm_y, g.vol_mm_z);
  out << buf;
}

Vec3 rotate_z(const Vec3& p, double deg) {
  double rad = deg * std::numbers::pi / 180.0;
  double c = std::cos(rad), s = std::sin(rad);
  return {c * p.x - s * p.y, s * p.x + c * p.y, p.z};
}

Vec3 source_position(const ScannerGeometry& g, double angle_deg) {
  return rotate_z({g.sid_mm, 0.0, 0.0}, angle_deg);
}

ProjectedPoint project_point(const ScannerGeometry& g, double angle_deg,
                             const Vec3& p) {
  Vec3 q = rotate_z(p, -angle_deg);
  double dx = g.sid_mm - q.x;
  if (dx == 0.0 && q.y == 0.0 && q.z == 0.0)
    throw std::invalid_argument("project_point: point coincides with the source");
  ProjectedPoint out;
  bool in_front = dx > 0.0;
  // keep coordinates finite for points at or behind the source plane; they
  // are never visible and callers clamp before sampling
  double t = g.sdd_mm / (in_front ? dx : 1e-12);
  out.u = 0.5 + q.y * t / g.det_mm_u;
  out.v = 0.5 + q.z * t / g.det_mm_v;
  out.visible = in_front && out.u >= 0.0 && out.u <= 1.0 && out.v >= 0.0 &&
                out.v <= 1.0;
  return out;
}

std::vector<double> sample_view_angles(int m, uint64_t seed, bool equiangular) {
  if (m <= 0) throw std::invalid_argument("sample_view_angles: m must be positive");
  std::vector<double> a(m);
  if (equiangular) {
    for (int i = 0; i < m; ++i) a[i] = 180.0 * i / m;
  } else {
    Rng rng(seed);
    for (int i = 0; i < m; ++i) a[i] = rng.uniform(0.0, 180.0);
    std::sort(a.begin(), a.end());
  }
  return a;
}

}  // namespace scbct
