#include "scbct/metrics.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace scbct {

namespace {

constexpr int kWin = 11;

void check_pair(const Volume& a, const Volume& b, double range) {
  if (a.grid.nx != b.grid.nx || a.grid.ny != b.grid.ny ||
      a.grid.nz != b.grid.nz)
    throw std::invalid_argument("metrics: volume shapes differ");
  if (a.grid.count() == 0)
    throw std::invalid_argument("metrics: empty volume");
  if (!(range > 0.0))
    throw std::invalid_argument("metrics: data range must be positive");
}

std::array<double, kWin> gaussian_window() {
  std::array<double, kWin> g{};
  const double s = 1.5;
  double sum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = double(i - kWin / 2);
    g[size_t(i)] = std::exp(-d * d / (2.0 * s * s));
    sum += g[size_t(i)];
  }
  for (double& v : g) v /= sum;
  return g;
}

// separable valid-mode filter, horizontal then vertical
std::vector<double> filt_valid(const std::vector<double>& img, int nx, int ny,
                               const std::array<double, kWin>& g) {
  const int ox = nx - kWin + 1, oy = ny - kWin + 1;
  std::vector<double> tmp(size_t(ny) * size_t(ox), 0.0);
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < ox; ++x) {
      double acc = 0.0;
      for (int j = 0; j < kWin; ++j)
        acc += g[size_t(j)] * img[size_t(y) * size_t(nx) + size_t(x + j)];
      tmp[size_t(y) * size_t(ox) + size_t(x)] = acc;
    }
  std::vector<double> out(size_t(oy) * size_t(ox), 0.0);
  for (int y = 0; y < oy; ++y)
    for (int x = 0; x < ox; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kWin; ++i)
        acc += g[size_t(i)] * tmp[size_t(y + i) * size_t(ox) + size_t(x)];
      out[size_t(y) * size_t(ox) + size_t(x)] = acc;
    }
  return out;
}

}  // namespace

double psnr_db(const Volume& test, const Volume& ref, double data_range) {
  check_pair(test, ref, data_range);
  double se = 0.0;
  for (size_t i = 0; i < test.data.size(); ++i) {
    const double d = double(test.data[i]) - double(ref.data[i]);
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = se / double(test.data.size());
  return 10.0 * std::log10(data_range * data_range / mse);
}

double ssim(const Volume& test, const Volume& ref, double data_range) {
  check_pair(test, ref, data_range);
  const int nx = test.grid.nx, ny = test.grid.ny, nz = test.grid.nz;
  if (nx < kWin || ny < kWin)
    throw std::invalid_argument("ssim: slices must be at least 11x11");

  const auto g = gaussian_window();
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);

  const size_t slice = size_t(nx) * size_t(ny);
  std::vector<double> x(slice, 0.0), y(slice, 0.0), xx(slice, 0.0),
      yy(slice, 0.0), xy(slice, 0.0);

  double total = 0.0;
  int64_t windows = 0;
  for (int z = 0; z < nz; ++z) {
    for (size_t i = 0; i < slice; ++i) {
      const double a = double(test.data[size_t(z) * slice + i]);
      const double b = double(ref.data[size_t(z) * slice + i]);
      x[i] = a;
      y[i] = b;
      xx[i] = a * a;
      yy[i] = b * b;
      xy[i] = a * b;
    }
    const std::vector<double> mx = filt_valid(x, nx, ny, g);
    const std::vector<double> my = filt_valid(y, nx, ny, g);
    const std::vector<double> sxx = filt_valid(xx, nx, ny, g);
    const std::vector<double> syy = filt_valid(yy, nx, ny, g);
    const std::vector<double> sxy = filt_valid(xy, nx, ny, g);
    for (size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cxy = sxy[i] - mx[i] * my[i];
      const double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2);
      const double den =
          (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
      total += num / den;
      ++windows;
    }
  }
  return total / double(windows);
}

}  // namespace scbct
