#include "scbct/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "raw payloads are little-endian");

namespace fs = std::filesystem;

namespace scbct {

namespace {

std::string raw_path_for(const std::string& vol_path) {
  fs::path p(vol_path);
  p.replace_extension(".raw");
  return p.string();
}

void write_f32_file(const std::string& path, const float* data, size_t count) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(float)));
  if (!out) throw std::runtime_error("short write to " + path);
}

std::vector<float> read_f32_file(const std::string& path, size_t count) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot open " + path);
  auto bytes = static_cast<size_t>(in.tellg());
  if (bytes != count * sizeof(float)) {
    std::ostringstream os;
    os << path << ": payload truncated or oversized, expected "
       << count * sizeof(float) << " bytes, found " << bytes;
    throw std::runtime_error(os.str());
  }
  std::vector<float> data(count);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(bytes));
  if (!in) throw std::runtime_error("short read from " + path);
  return data;
}

}  // namespace

Volume make_volume(const GridSpec& g, float fill) {
  if (g.nx <= 0 || g.ny <= 0 || g.nz <= 0 || g.sx <= 0 || g.sy <= 0 || g.sz <= 0)
    throw std::invalid_argument("make_volume: bad grid spec");
  Volume v;
  v.grid = g;
  v.data.assign(static_cast<size_t>(g.count()), fill);
  return v;
}

Volume load_volume(const std::string& vol_path) {
  std::ifstream in(vol_path);
  if (!in) throw std::runtime_error("cannot open " + vol_path);
  GridSpec g;
  bool have_dims = false, have_spacing = false, have_dtype = false,
       have_order = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(vol_path + ": malformed header line '" + line + "'");
    std::string key = line.substr(0, eq);
    std::istringstream val(line.substr(eq + 1));
    if (key == "dims") {
      val >> g.nx >> g.ny >> g.nz;
      have_dims = bool(val);
    } else if (key == "spacing_mm") {
      val >> g.sx >> g.sy >> g.sz;
      have_spacing = bool(val);
    } else if (key == "dtype") {
      std::string s;
      val >> s;
      if (s != "f32le")
        throw std::runtime_error(vol_path + ": unsupported dtype '" + s + "'");
      have_dtype = true;
    } else if (key == "order") {
      std::string s;
      val >> s;
      if (s != "x-fastest")
        throw std::runtime_error(vol_path + ": unsupported order '" + s + "'");
      have_order = true;
    } else {
      throw std::runtime_error(vol_path + ": unknown header key '" + key + "'");
    }
  }
  for (auto [ok, key] : {std::pair{have_dims, "dims"},
                         {have_spacing, "spacing_mm"},
                         {have_dtype, "dtype"},
                         {have_order, "order"}})
    if (!ok)
      throw std::runtime_error(vol_path + ": missing header key '" +
                               std::string(key) + "'");
  if (g.nx <= 0 || g.ny <= 0 || g.nz <= 0 || g.sx <= 0 || g.sy <= 0 || g.sz <= 0)
    throw std::runtime_error(vol_path + ": bad value for key 'dims' or 'spacing_mm'");
  Volume v;
  v.grid = g;
  v.data = read_f32_file(raw_path_for(vol_path), static_cast<size_t>(g.count()));
  return v;
}

void save_volume(const Volume& v, const std::string& vol_path) {
  std::ofstream out(vol_path);
  if (!out) throw std::runtime_error("cannot write " + vol_path);
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "dims=%d %d %d\nspacing_mm=%.17g %.17g %.17g\n"
                "dtype=f32le\norder=x-fastest\n",
                v.grid.nx, v.grid.ny, v.grid.nz, v.grid.sx, v.grid.sy,
                v.grid.sz);
  out << buf;
  out.close();
  write_f32_file(raw_path_for(vol_path), v.data.data(), v.data.size());
}

void normalize_volume(Volume& v) {
  if (v.data.empty()) return;
  auto [mn, mx] = std::minmax_element(v.data.begin(), v.data.end());
  float lo = *mn, hi = *mx;
  if (hi <= lo) {
    std::fill(v.data.begin(), v.data.end(), 0.0f);
    return;
  }
  float inv = 1.0f / (hi - lo);
  for (auto& x : v.data) x = (x - lo) * inv;
}

double trilinear_sample(const Volume& v, double px, double py, double pz) {
  const GridSpec& g = v.grid;
  auto axis = [](double p, int n) {
    double idx = (p + 1.0) * 0.5 * (n - 1);
    idx = std::clamp(idx, 0.0, double(n - 1));
    int i0 = std::min(int(idx), n - 2 >= 0 ? n - 2 : 0);
    if (n == 1) return std::pair<int, double>{0, 0.0};
    double f = idx - i0;
    return std::pair<int, double>{i0, f};
  };
  auto [ix, fx] = axis(px, g.nx);
  auto [iy, fy] = axis(py, g.ny);
  auto [iz, fz] = axis(pz, g.nz);
  int ix1 = std::min(ix + 1, g.nx - 1);
  int iy1 = std::min(iy + 1, g.ny - 1);
  int iz1 = std::min(iz + 1, g.nz - 1);
  double c000 = v.at(ix, iy, iz), c100 = v.at(ix1, iy, iz);
  double c010 = v.at(ix, iy1, iz), c110 = v.at(ix1, iy1, iz);
  double c001 = v.at(ix, iy, iz1), c101 = v.at(ix1, iy, iz1);
  double c011 = v.at(ix, iy1, iz1), c111 = v.at(ix1, iy1, iz1);
  double c00 = c000 * (1 - fx) + c100 * fx;
  double c10 = c010 * (1 - fx) + c110 * fx;
  double c01 = c001 * (1 - fx) + c101 * fx;
  double c11 = c011 * (1 - fx) + c111 * fx;
  double c0 = c00 * (1 - fy) + c10 * fy;
  double c1 = c01 * (1 - fy) + c11 * fy;
  return c0 * (1 - fz) + c1 * fz;
}

double bilinear_sample_image(const std::vector<double>& img, int npu, int npv,
                             double u, double v) {
  double pu = std::clamp(u * npu - 0.5, 0.0, double(npu - 1));
  double pv = std::clamp(v * npv - 0.5, 0.0, double(npv - 1));
  int iu = std::min(int(pu), npu >= 2 ? npu - 2 : 0);
  int iv = std::min(int(pv), npv >= 2 ? npv - 2 : 0);
  double fu = npu == 1 ? 0.0 : pu - iu;
  double fv = npv == 1 ? 0.0 : pv - iv;
  int iu1 = std::min(iu + 1, npu - 1);
  int iv1 = std::min(iv + 1, npv - 1);
  double a = img[size_t(iv) * npu + iu] * (1 - fu) + img[size_t(iv) * npu + iu1] * fu;
  double b = img[size_t(iv1) * npu + iu] * (1 - fu) + img[size_t(iv1) * npu + iu1] * fu;
  return a * (1 - fv) + b * fv;
}

PointBatch sample_points(const Volume& gt, int n, Rng& rng,
                         PointSampling mode) {
  if (n <= 0) throw std::invalid_argument("sample_points: n must be positive");
  PointBatch pb;
  pb.n = n;
  pb.coords.resize(size_t(n) * 3);
  pb.values.resize(n);
  auto draw_open = [&rng]() {
    // uniform in (-1, 1): reject the single representable -1
    double c;
    do {
      c = -1.0 + 2.0 * rng.uniform();
    } while (c <= -1.0);
    return c;
  };
  if (mode == PointSampling::uniform) {
    for (int i = 0; i < n; ++i)
      for (int d = 0; d < 3; ++d) pb.coords[size_t(i) * 3 + d] = draw_open();
  } else {
    // jittered cells of an m^3 grid covering the box, cycled until n points
    int m = std::max(1, int(std::floor(std::cbrt(double(n)))));
    int64_t cell = 0, total = int64_t(m) * m * m;
    for (int i = 0; i < n; ++i, cell = (cell + 1) % total) {
      int cx = int(cell % m), cy = int((cell / m) % m), cz = int(cell / (int64_t(m) * m));
      double w = 2.0 / m;
      pb.coords[size_t(i) * 3 + 0] = -1.0 + (cx + rng.uniform()) * w;
      pb.coords[size_t(i) * 3 + 1] = -1.0 + (cy + rng.uniform()) * w;
      pb.coords[size_t(i) * 3 + 2] = -1.0 + (cz + rng.uniform()) * w;
      for (int d = 0; d < 3; ++d)
        if (pb.coords[size_t(i) * 3 + d] <= -1.0)
          pb.coords[size_t(i) * 3 + d] = std::nextafter(-1.0, 1.0);
    }
  }
  for (int i = 0; i < n; ++i)
    pb.values[i] = trilinear_sample(gt, pb.coords[size_t(i) * 3],
                                    pb.coords[size_t(i) * 3 + 1],
                                    pb.coords[size_t(i) * 3 + 2]);
  return pb;
}

namespace {
GridSpec cubic_grid(int n, double spacing) {
  if (n <= 0 || spacing <= 0)
    throw std::invalid_argument("phantom: bad size or spacing");
  return {n, n, n, spacing, spacing, spacing};
}

Vec3 voxel_center_mm(const GridSpec& g, int x, int y, int z) {
  return {(x - 0.5 * (g.nx - 1)) * g.sx, (y - 0.5 * (g.ny - 1)) * g.sy,
          (z - 0.5 * (g.nz - 1)) * g.sz};
}
}  // namespace

Volume make_sphere_phantom(int n, double spacing) {
  Volume v = make_volume(cubic_grid(n, spacing));
  double r = 0.4 * n * spacing;
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        Vec3 p = voxel_center_mm(v.grid, x, y, z);
        double d = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
        v.at(x, y, z) = d <= r ? 1.0f : 0.0f;
      }
  return v;
}

Volume make_cube_phantom(int n, double spacing) {
  Volume v = make_volume(cubic_grid(n, spacing));
  double half = 0.25 * n * spacing;  // side is half the extent
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        Vec3 p = voxel_center_mm(v.grid, x, y, z);
        bool inside = std::abs(p.x) <= half && std::abs(p.y) <= half &&
                      std::abs(p.z) <= half;
        v.at(x, y, z) = inside ? 1.0f : 0.0f;
      }
  return v;
}

Volume make_shell_phantom(int n, double spacing, uint64_t seed) {
  Volume v = make_volume(cubic_grid(n, spacing));
  Rng rng(seed);
  int shells = 3 + int(rng.below(3));  // 3..5
  double rmax = 0.45 * n * spacing;
  // sorted outer radii and per-shell intensities
  std::vector<double> radii(shells);
  std::vector<double> vals(shells);
  for (int s = 0; s < shells; ++s) radii[s] = rmax * (0.25 + 0.75 * rng.uniform());
  std::sort(radii.begin(), radii.end());
  for (int s = 0; s < shells; ++s) vals[s] = 0.2 + 0.8 * rng.uniform();
  double edge = spacing;  // soft transition width
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        Vec3 p = voxel_center_mm(v.grid, x, y, z);
        double d = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
        double acc = 0.0, inner = 0.0;
        for (int s = 0; s < shells; ++s) {
          double outer = radii[s];
          // smooth indicator of inner <= d < outer
          auto smooth_in = [&](double r) {
            return std::clamp((r - d) / edge + 0.5, 0.0, 1.0);
          };
          double w = smooth_in(outer) - smooth_in(inner);
          acc += vals[s] * std::max(0.0, w);
          inner = outer;
        }
        v.at(x, y, z) = float(std::clamp(acc, 0.0, 1.0));
      }
  return v;
}

ProjectionSet load_projection_set(const std::string& dir) {
  fs::path d(dir);
  ProjectionSet ps;
  ps.geom = load_geometry((d / "geom.cfg").string());
  std::ifstream ang(d / "angles.txt");
  if (!ang) throw std::runtime_error("cannot open " + (d / "angles.txt").string());
  double a;
  while (ang >> a) ps.angles_deg.push_back(a);
  if (ps.angles_deg.empty())
    throw std::runtime_error(dir + ": angles.txt lists no views");
  size_t px = size_t(ps.geom.det_px_u) * ps.geom.det_px_v;
  for (size_t i = 0; i < ps.angles_deg.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "view_%04zu.raw", i);
    ps.views.push_back(read_f32_file((d / name).string(), px));
  }
  return ps;
}

void save_projection_set(const ProjectionSet& ps, const std::string& dir) {
  if (ps.views.size() != ps.angles_deg.size())
    throw std::invalid_argument("projection set: view and angle counts differ");
  fs::path d(dir);
  fs::create_directories(d);
  save_geometry(ps.geom, (d / "geom.cfg").string());
  std::ofstream ang(d / "angles.txt");
  if (!ang) throw std::runtime_error("cannot write " + (d / "angles.txt").string());
  char buf[64];
  for (double a : ps.angles_deg) {
    std::snprintf(buf, sizeof(buf), "%.17g\n", a);
    ang << buf;
  }
  size_t px = size_t(ps.geom.det_px_u) * ps.geom.det_px_v;
  for (size_t i = 0; i < ps.views.size(); ++i) {
    if (ps.views[i].size() != px)
      throw std::invalid_argument("projection set: view size mismatch");
    char name[32];
    std::snprintf(name, sizeof(name), "view_%04zu.raw", i);
    write_f32_file((d / name).string(), ps.views[i].data(), px);
  }
}

}  // namespace scbct
