#include "scbct/projector.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "scbct/parallel.hpp"

namespace scbct {

namespace {

// clamped trilinear lookup in voxel index space (continuous index, 0 at the
// center of voxel 0)
inline double sample_index(const Volume& v, double ix, double iy, double iz) {
  const GridSpec& g = v.grid;
  ix = std::clamp(ix, 0.0, double(g.nx - 1));
  iy = std::clamp(iy, 0.0, double(g.ny - 1));
  iz = std::clamp(iz, 0.0, double(g.nz - 1));
  int x0 = std::min(int(ix), std::max(g.nx - 2, 0));
  int y0 = std::min(int(iy), std::max(g.ny - 2, 0));
  int z0 = std::min(int(iz), std::max(g.nz - 2, 0));
  double fx = g.nx == 1 ? 0.0 : ix - x0;
  double fy = g.ny == 1 ? 0.0 : iy - y0;
  double fz = g.nz == 1 ? 0.0 : iz - z0;
  int x1 = std::min(x0 + 1, g.nx - 1);
  int y1 = std::min(y0 + 1, g.ny - 1);
  int z1 = std::min(z0 + 1, g.nz - 1);
  double c00 = v.at(x0, y0, z0) * (1 - fx) + v.at(x1, y0, z0) * fx;
  double c10 = v.at(x0, y1, z0) * (1 - fx) + v.at(x1, y1, z0) * fx;
  double c01 = v.at(x0, y0, z1) * (1 - fx) + v.at(x1, y0, z1) * fx;
  double c11 = v.at(x0, y1, z1) * (1 - fx) + v.at(x1, y1, z1) * fx;
  double c0 = c00 * (1 - fy) + c10 * fy;
  double c1 = c01 * (1 - fy) + c11 * fy;
  return c0 * (1 - fz) + c1 * fz;
}

// slab test against the centered box [-h, h]; returns false on a miss
inline bool ray_box(const Vec3& o, const Vec3& d, const Vec3& h, double& t0,
                    double& t1) {
  t0 = 0.0;
  t1 = std::numeric_limits<double>::infinity();
  const double od[3] = {o.x, o.y, o.z};
  const double dd[3] = {d.x, d.y, d.z};
  const double hh[3] = {h.x, h.y, h.z};
  for (int a = 0; a < 3; ++a) {
    if (dd[a] == 0.0) {
      if (od[a] < -hh[a] || od[a] > hh[a]) return false;
      continue;
    }
    double inv = 1.0 / dd[a];
    double ta = (-hh[a] - od[a]) * inv;
    double tb = (hh[a] - od[a]) * inv;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 >= t1) return false;
  }
  return true;
}

}  // namespace

std::vector<double> render_drr(const Volume& vol, const ScannerGeometry& g,
                               double angle_deg, double step_mm) {
  validate_geometry(g);
  const GridSpec& gr = vol.grid;
  if (step_mm == 0.0) step_mm = 0.5 * std::min({gr.sx, gr.sy, gr.sz});
  if (!(step_mm > 0.0))
    throw std::invalid_argument("render_drr: step_mm must be positive");

  Vec3 src = source_position(g, angle_deg);
  Vec3 det_c = rotate_z({g.sid_mm - g.sdd_mm, 0.0, 0.0}, angle_deg);
  Vec3 u_ax = rotate_z({0.0, 1.0, 0.0}, angle_deg);
  Vec3 v_ax{0.0, 0.0, 1.0};
  Vec3 half{0.5 * gr.extent_x(), 0.5 * gr.extent_y(), 0.5 * gr.extent_z()};

  std::vector<double> img(size_t(g.det_px_u) * g.det_px_v, 0.0);
  parallel_for(int64_t(g.det_px_v), [&](int64_t vb, int64_t ve) {
    for (int64_t iv = vb; iv < ve; ++iv) {
      double v_mm = ((iv + 0.5) / g.det_px_v - 0.5) * g.det_mm_v;
      for (int iu = 0; iu < g.det_px_u; ++iu) {
        double u_mm = ((iu + 0.5) / g.det_px_u - 0.5) * g.det_mm_u;
        Vec3 pix{det_c.x + u_mm * u_ax.x + v_mm * v_ax.x,
                 det_c.y + u_mm * u_ax.y + v_mm * v_ax.y,
                 det_c.z + u_mm * u_ax.z + v_mm * v_ax.z};
        Vec3 dir{pix.x - src.x, pix.y - src.y, pix.z - src.z};
        double len = std::sqrt(dir.x * dir.x + dir.y * dir.y + dir.z * dir.z);
        dir = {dir.x / len, dir.y / len, dir.z / len};
        double t0, t1;
        if (!ray_box(src, dir, half, t0, t1)) continue;
        int nsteps = std::max(1, int(std::ceil((t1 - t0) / step_mm)));
        double dt = (t1 - t0) / nsteps;
        double acc = 0.0;
        for (int k = 0; k < nsteps; ++k) {
          double t = t0 + (k + 0.5) * dt;
          double px = src.x + t * dir.x;
          double py = src.y + t * dir.y;
          double pz = src.z + t * dir.z;
          acc += sample_index(vol, px / gr.sx + 0.5 * (gr.nx - 1),
                              py / gr.sy + 0.5 * (gr.ny - 1),
                              pz / gr.sz + 0.5 * (gr.nz - 1));
        }
        img[size_t(iv) * g.det_px_u + iu] = acc * dt;
      }
    }
  });
  return img;
}

void backproject(const std::vector<double>& img, const ScannerGeometry& g,
                 double angle_deg, const GridSpec& grid, BpWeight weight,
                 std::vector<double>& out) {
  validate_geometry(g);
  if (img.size() != size_t(g.det_px_u) * g.det_px_v)
    throw std::invalid_argument("backproject: image size does not match geometry");
  if (out.size() != size_t(grid.count()))
    throw std::invalid_argument("backproject: output size does not match grid");

  double rad = angle_deg * std::numbers::pi / 180.0;
  double c2 = std::cos(rad) * std::cos(rad), s2 = std::sin(rad) * std::sin(rad);
  // footprint of one voxel on the detector, used by the adjoint mode: chord
  // through the trilinear tent along the beam times the transverse pixel
  // density ratio at the isocenter
  double d_beam = grid.sx * c2 + grid.sy * s2;
  double d_u = grid.sy * c2 + grid.sx * s2;
  double d_v = grid.sz;
  double k_adj = d_beam * (d_u * g.sdd_mm / (g.pixel_mm_u() * g.sid_mm)) *
                 (d_v * g.sdd_mm / (g.pixel_mm_v() * g.sid_mm));

  parallel_for(int64_t(grid.nz), [&](int64_t zb, int64_t ze) {
    for (int64_t z = zb; z < ze; ++z) {
      double pz = (z - 0.5 * (grid.nz - 1)) * grid.sz;
      for (int y = 0; y < grid.ny; ++y) {
        double py = (y - 0.5 * (grid.ny - 1)) * grid.sy;
        for (int x = 0; x < grid.nx; ++x) {
          double px = (x - 0.5 * (grid.nx - 1)) * grid.sx;
          Vec3 q = rotate_z({px, py, pz}, -angle_deg);
          double dx = g.sid_mm - q.x;
          if (dx <= 0.0) continue;
          double t = g.sdd_mm / dx;
          double u = 0.5 + q.y * t / g.det_mm_u;
          double v = 0.5 + q.z * t / g.det_mm_v;
          if (u < 0.0 || u > 1.0 || v < 0.0 || v > 1.0) continue;
          double w = 1.0;
          if (weight != BpWeight::none) {
            double m = g.sid_mm / dx;
            w = m * m;
            if (weight == BpWeight::adjoint) w *= k_adj;
          }
          out[(z * grid.ny + y) * grid.nx + x] +=
              w * bilinear_sample_image(img, g.det_px_u, g.det_px_v, u, v);
        }
      }
    }
  });
}

ProjectionSet render_projections(const Volume& vol, const ScannerGeometry& g,
                                 const std::vector<double>& angles_deg,
                                 double step_mm) {
  ProjectionSet ps;
  ps.geom = g;
  ps.angles_deg = angles_deg;
  ps.views.reserve(angles_deg.size());
  for (double a : angles_deg) {
    auto img = render_drr(vol, g, a, step_mm);
    ps.views.emplace_back(img.begin(), img.end());
  }
  return ps;
}

}  // namespace scbct
