#include "scbct/baselines.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace scbct {

namespace {

void check_set(const ProjectionSet& ps) {
  if (ps.views.empty())
    throw std::invalid_argument("baseline: projection set is empty");
  if (ps.views.size() != ps.angles_deg.size())
    throw std::invalid_argument("baseline: view/angle count mismatch");
  const size_t px = size_t(ps.geom.det_px_u) * size_t(ps.geom.det_px_v);
  for (const auto& v : ps.views)
    if (v.size() != px)
      throw std::invalid_argument("baseline: view size does not match geometry");
}

int64_t next_pow2(int64_t n) {
  int64_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// in-place ramp filter of every detector row of one weighted view
class RampFilter {
 public:
  RampFilter(int64_t width, double du_virt, bool hann) : nu_(width) {
    npad_ = next_pow2(2 * width);
    in_ = fftw_alloc_real(size_t(npad_));
    spec_ = fftw_alloc_complex(size_t(npad_ / 2 + 1));
    fwd_ = fftw_plan_dft_r2c_1d(int(npad_), in_, spec_, FFTW_ESTIMATE);
    bwd_ = fftw_plan_dft_c2r_1d(int(npad_), spec_, in_, FFTW_ESTIMATE);
    mult_.resize(size_t(npad_ / 2 + 1), 0.0);
    // |k| ramp carrying the dft pair normalization (1/npad^2) and the
    // frequency step of the virtual detector (1/du)
    const double scale = 1.0 / (double(npad_) * double(npad_) * du_virt);
    for (int64_t m = 0; m <= npad_ / 2; ++m) {
      double r = double(m) * scale;
      if (hann && m > 0)
        r *= 0.5 * (1.0 + std::cos(std::numbers::pi * double(m) /
                                   double(npad_ / 2)));
      mult_[size_t(m)] = r;
    }
  }
  ~RampFilter() {
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(bwd_);
    fftw_free(in_);
    fftw_free(spec_);
  }
  RampFilter(const RampFilter&) = delete;
  RampFilter& operator=(const RampFilter&) = delete;

  void apply_row(double* row) {
    for (int64_t i = 0; i < nu_; ++i) in_[i] = row[i];
    for (int64_t i = nu_; i < npad_; ++i) in_[i] = 0.0;
    fftw_execute(fwd_);
    for (int64_t m = 0; m <= npad_ / 2; ++m) {
      spec_[m][0] *= mult_[size_t(m)];
      spec_[m][1] *= mult_[size_t(m)];
    }
    fftw_execute(bwd_);
    for (int64_t i = 0; i < nu_; ++i) row[i] = in_[i];
  }

 private:
  int64_t nu_, npad_;
  double* in_;
  fftw_complex* spec_;
  fftw_plan fwd_, bwd_;
  std::vector<double> mult_;
};

}  // namespace

Volume fdk_reconstruct(const ProjectionSet& ps, const GridSpec& grid,
                       const FdkOptions& opt) {
  check_set(ps);
  const ScannerGeometry& g = ps.geom;
  const int nu = g.det_px_u, nv = g.det_px_v;
  const double du_virt = g.pixel_mm_u() * g.sid_mm / g.sdd_mm;
  RampFilter ramp(nu, du_virt, opt.hann);

  // cosine weights per detector pixel
  std::vector<double> cosw(size_t(nu) * size_t(nv), 0.0);
  for (int iv = 0; iv < nv; ++iv) {
    const double vc = ((iv + 0.5) / nv - 0.5) * g.det_mm_v;
    for (int iu = 0; iu < nu; ++iu) {
      const double uc = ((iu + 0.5) / nu - 0.5) * g.det_mm_u;
      cosw[size_t(iv) * size_t(nu) + size_t(iu)] =
          g.sdd_mm / std::sqrt(g.sdd_mm * g.sdd_mm + uc * uc + vc * vc);
    }
  }

  std::vector<double> acc(size_t(grid.count()), 0.0);
  std::vector<double> img(size_t(nu) * size_t(nv), 0.0);
  for (size_t m = 0; m < ps.views.size(); ++m) {
    for (size_t i = 0; i < img.size(); ++i)
      img[i] = double(ps.views[m][i]) * cosw[i];
    for (int iv = 0; iv < nv; ++iv) ramp.apply_row(&img[size_t(iv) * size_t(nu)]);
    backproject(img, g, ps.angles_deg[m], grid, BpWeight::inverse_square, acc);
  }

  const double scale = std::numbers::pi / double(ps.views.size());
  Volume out = make_volume(grid);
  for (size_t i = 0; i < acc.size(); ++i) out.data[i] = float(acc[i] * scale);
  return out;
}

Volume sart_reconstruct(const ProjectionSet& ps, const GridSpec& grid,
                        int iterations, double lambda, SartReport* report) {
  check_set(ps);
  if (!(lambda > 0.0) || lambda > 1.0)
    throw std::invalid_argument("sart: lambda must lie in (0, 1]");
  if (iterations < 0)
    throw std::invalid_argument("sart: iterations must be >= 0");

  const ScannerGeometry& g = ps.geom;
  const size_t px = size_t(g.det_px_u) * size_t(g.det_px_v);
  const size_t M = ps.views.size();

  // ray-length image per view: forward projection of a unit volume
  Volume ones = make_volume(grid, 1.0f);
  std::vector<std::vector<double>> ray_len(M);
  for (size_t m = 0; m < M; ++m) {
    ray_len[m] = render_drr(ones, g, ps.angles_deg[m]);
    for (double& l : ray_len[m])
      if (l < 1e-8) l = 1.0;
  }

  Volume x = make_volume(grid, 0.0f);
  std::vector<double> resid(px, 0.0), upd(size_t(grid.count()), 0.0);

  const auto total_residual = [&] {
    double s2 = 0.0;
    for (size_t m = 0; m < M; ++m) {
      const std::vector<double> fwd = render_drr(x, g, ps.angles_deg[m]);
      for (size_t i = 0; i < px; ++i) {
        const double r = double(ps.views[m][i]) - fwd[i];
        s2 += r * r;
      }
    }
    return std::sqrt(s2);
  };

  for (int it = 0; it < iterations; ++it) {
    for (size_t m = 0; m < M; ++m) {
      const std::vector<double> fwd = render_drr(x, g, ps.angles_deg[m]);
      for (size_t i = 0; i < px; ++i)
        resid[i] = (double(ps.views[m][i]) - fwd[i]) / ray_len[m][i];
      std::fill(upd.begin(), upd.end(), 0.0);
      backproject(resid, g, ps.angles_deg[m], grid, BpWeight::none, upd);
      for (size_t j = 0; j < upd.size(); ++j) {
        const double nv = double(x.data[j]) + lambda * upd[j];
        x.data[j] = float(nv < 0.0 ? 0.0 : nv);
      }
    }
    if (report) {
      report->residual_norm.push_back(total_residual());
      float mn = x.data.empty() ? 0.0f : x.data[0];
      for (float v : x.data) mn = std::min(mn, v);
      report->min_voxel.push_back(double(mn));
    }
  }
  return x;
}

}  // namespace scbct
