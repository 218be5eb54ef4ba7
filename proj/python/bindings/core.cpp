#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "scbct/baselines.hpp"
#include "scbct/dataio.hpp"
#include "scbct/geometry.hpp"
#include "scbct/metrics.hpp"
#include "scbct/model.hpp"
#include "scbct/parallel.hpp"
#include "scbct/pngio.hpp"
#include "scbct/projector.hpp"
#include "scbct/trainer.hpp"

namespace py = pybind11;
using namespace scbct;

namespace {

using FloatArray =
    py::array_t<float, py::array::c_style | py::array::forcecast>;

// numpy volumes use (nz, ny, nx) with x fastest, matching the internal layout
py::array_t<float> volume_to_numpy(const Volume& v) {
  py::array_t<float> out({v.grid.nz, v.grid.ny, v.grid.nx});
  std::memcpy(out.mutable_data(), v.data.data(),
              size_t(v.grid.count()) * sizeof(float));
  return out;
}

Volume volume_from_numpy(const FloatArray& a, double sx, double sy,
                         double sz) {
  if (a.ndim() != 3)
    throw std::invalid_argument("expected a 3d array shaped (nz, ny, nx)");
  GridSpec g{int(a.shape(2)), int(a.shape(1)), int(a.shape(0)), sx, sy, sz};
  Volume v = make_volume(g);
  std::memcpy(v.data.data(), a.data(), size_t(g.count()) * sizeof(float));
  return v;
}

py::array_t<float> view_to_numpy(const std::vector<float>& img, int nu,
                                 int nv) {
  py::array_t<float> out({nv, nu});
  std::memcpy(out.mutable_data(), img.data(), img.size() * sizeof(float));
  return out;
}

Volume run_reconstruct(const std::string& ckpt, const ProjectionSet& ps,
                       int size, int chunk) {
  const std::unique_ptr<ReconModel> model = load_checkpoint(ckpt);
  if (size < 1) throw std::invalid_argument("size must be positive");
  const GridSpec grid{size,
                      size,
                      size,
                      ps.geom.vol_mm_x / size,
                      ps.geom.vol_mm_y / size,
                      ps.geom.vol_mm_z / size};
  return reconstruct_volume(*model, ps, grid, chunk);
}

std::vector<double> run_train(TrainConfig cfg, const std::string& out_dir) {
  std::vector<TrainScan> scans = build_dataset(cfg, DataSplit::train);
  if (!cfg.volume_path.empty() && !scans.empty())
    cfg.model.encoder.input_size = scans[0].ps.geom.det_px_u;
  return train_model(cfg, scans, out_dir).losses;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "sparse-view cone-beam CT reconstruction core";

  py::class_<GridSpec>(m, "GridSpec")
      .def(py::init<>())
      .def_readwrite("nx", &GridSpec::nx)
      .def_readwrite("ny", &GridSpec::ny)
      .def_readwrite("nz", &GridSpec::nz)
      .def_readwrite("sx", &GridSpec::sx)
      .def_readwrite("sy", &GridSpec::sy)
      .def_readwrite("sz", &GridSpec::sz)
      .def("__repr__", [](const GridSpec& g) {
        return "GridSpec(" + std::to_string(g.nx) + "x" +
               std::to_string(g.ny) + "x" + std::to_string(g.nz) + ")";
      });

  py::class_<Volume>(m, "Volume")
      .def_property_readonly("grid", [](const Volume& v) { return v.grid; })
      .def_property_readonly("spacing",
                             [](const Volume& v) {
                               return py::make_tuple(v.grid.sx, v.grid.sy,
                                                     v.grid.sz);
                             })
      .def("numpy", &volume_to_numpy, "copy out as a (nz, ny, nx) array")
      .def_static("from_numpy", &volume_from_numpy, py::arg("array"),
                  py::arg("sx"), py::arg("sy"), py::arg("sz"))
      .def("__repr__", [](const Volume& v) {
        return "Volume(" + std::to_string(v.grid.nx) + "x" +
               std::to_string(v.grid.ny) + "x" + std::to_string(v.grid.nz) +
               ")";
      });

  py::class_<ScannerGeometry>(m, "ScannerGeometry")
      .def(py::init<>())
      .def_readwrite("sid_mm", &ScannerGeometry::sid_mm)
      .def_readwrite("sdd_mm", &ScannerGeometry::sdd_mm)
      .def_readwrite("det_px_u", &ScannerGeometry::det_px_u)
      .def_readwrite("det_px_v", &ScannerGeometry::det_px_v)
      .def_readwrite("det_mm_u", &ScannerGeometry::det_mm_u)
      .def_readwrite("det_mm_v", &ScannerGeometry::det_mm_v)
      .def_readwrite("vol_mm_x", &ScannerGeometry::vol_mm_x)
      .def_readwrite("vol_mm_y", &ScannerGeometry::vol_mm_y)
      .def_readwrite("vol_mm_z", &ScannerGeometry::vol_mm_z);

  py::class_<ProjectionSet>(m, "ProjectionSet")
      .def_property_readonly("geom",
                             [](const ProjectionSet& p) { return p.geom; })
      .def_property_readonly(
          "angles_deg", [](const ProjectionSet& p) { return p.angles_deg; })
      .def("__len__", [](const ProjectionSet& p) { return p.views.size(); })
      .def("view",
           [](const ProjectionSet& p, size_t i) {
             if (i >= p.views.size())
               throw std::out_of_range("view index out of range");
             return view_to_numpy(p.views[i], p.geom.det_px_u,
                                  p.geom.det_px_v);
           })
      .def("__repr__", [](const ProjectionSet& p) {
        return "ProjectionSet(" + std::to_string(p.views.size()) + " views)";
      });

  // io
  m.def("load_volume", &load_volume, py::arg("path"));
  m.def("save_volume", &save_volume, py::arg("volume"), py::arg("path"));
  m.def("load_geometry", &load_geometry, py::arg("path"));
  m.def("save_geometry", &save_geometry, py::arg("geom"), py::arg("path"));
  m.def("load_projection_set", &load_projection_set, py::arg("dir"));
  m.def("save_projection_set", &save_projection_set, py::arg("projections"),
        py::arg("dir"));
  m.def("write_center_slices", &write_center_slices, py::arg("volume"),
        py::arg("prefix"), "write axial/coronal/sagittal PNGs");

  // phantoms
  m.def("shell_phantom", &make_shell_phantom, py::arg("size"),
        py::arg("spacing"), py::arg("seed") = 0);
  m.def("sphere_phantom", &make_sphere_phantom, py::arg("size"),
        py::arg("spacing"));
  m.def("cube_phantom", &make_cube_phantom, py::arg("size"),
        py::arg("spacing"));

  // projection
  m.def("sample_view_angles", &sample_view_angles, py::arg("m"),
        py::arg("seed"), py::arg("equiangular") = false);
  m.def(
      "render_drr",
      [](const Volume& v, const ScannerGeometry& g, double angle_deg,
         double step_mm) {
        const std::vector<double> img = render_drr(v, g, angle_deg, step_mm);
        py::array_t<double> out({g.det_px_v, g.det_px_u});
        std::memcpy(out.mutable_data(), img.data(),
                    img.size() * sizeof(double));
        return out;
      },
      py::arg("volume"), py::arg("geom"), py::arg("angle_deg"),
      py::arg("step_mm") = 0.0, py::call_guard<py::gil_scoped_release>());
  m.def("render_projections", &render_projections, py::arg("volume"),
        py::arg("geom"), py::arg("angles_deg"), py::arg("step_mm") = 0.0,
        py::call_guard<py::gil_scoped_release>());

  // baselines
  m.def(
      "fdk",
      [](const ProjectionSet& ps, int size, bool hann) {
        if (size < 1) throw std::invalid_argument("size must be positive");
        const GridSpec grid{size,
                            size,
                            size,
                            ps.geom.vol_mm_x / size,
                            ps.geom.vol_mm_y / size,
                            ps.geom.vol_mm_z / size};
        FdkOptions opt;
        opt.hann = hann;
        return fdk_reconstruct(ps, grid, opt);
      },
      py::arg("projections"), py::arg("size"), py::arg("hann") = false,
      py::call_guard<py::gil_scoped_release>());
  m.def(
      "sart",
      [](const ProjectionSet& ps, int size, int iterations, double lam) {
        if (size < 1) throw std::invalid_argument("size must be positive");
        const GridSpec grid{size,
                            size,
                            size,
                            ps.geom.vol_mm_x / size,
                            ps.geom.vol_mm_y / size,
                            ps.geom.vol_mm_z / size};
        return sart_reconstruct(ps, grid, iterations, lam);
      },
      py::arg("projections"), py::arg("size"), py::arg("iterations") = 50,
      py::arg("lam") = 0.5, py::call_guard<py::gil_scoped_release>());

  // metrics
  m.def("psnr_db", &psnr_db, py::arg("test"), py::arg("ref"),
        py::arg("data_range") = 1.0);
  m.def("ssim", &ssim, py::arg("test"), py::arg("ref"),
        py::arg("data_range") = 1.0);

  // training
  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_property(
          "variant",
          [](const TrainConfig& c) { return variant_name(c.model.variant); },
          [](TrainConfig& c, const std::string& s) {
            c.model.variant = variant_from_name(s);
          })
      .def_property(
          "k", [](const TrainConfig& c) { return c.model.ptrans.k; },
          [](TrainConfig& c, int k) { c.model.ptrans.k = k; })
      .def_readwrite("views", &TrainConfig::views)
      .def_readwrite("n_points", &TrainConfig::n_points)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("equiangular", &TrainConfig::equiangular)
      .def_readwrite("phantom_size", &TrainConfig::phantom_size)
      .def_readwrite("train_scans", &TrainConfig::train_scans)
      .def_readwrite("val_scans", &TrainConfig::val_scans)
      .def_readwrite("test_scans", &TrainConfig::test_scans)
      .def_readwrite("volume_path", &TrainConfig::volume_path)
      .def_readwrite("proj_dir", &TrainConfig::proj_dir)
      .def_readwrite("checkpoint_every", &TrainConfig::checkpoint_every)
      .def_property(
          "detector_px",
          [](const TrainConfig& c) { return c.geom.det_px_u; },
          [](TrainConfig& c, int n) {
            c.geom.det_px_u = n;
            c.geom.det_px_v = n;
            c.model.encoder.input_size = n;
          });

  m.def("load_train_config", &load_train_config, py::arg("path"));
  m.def("save_train_config", &save_train_config, py::arg("config"),
        py::arg("path"));
  m.def("train", &run_train, py::arg("config"), py::arg("out_dir"),
        "train a model, writing loss.csv and checkpoint.bin; returns the "
        "per-step losses",
        py::call_guard<py::gil_scoped_release>());
  m.def("reconstruct", &run_reconstruct, py::arg("checkpoint"),
        py::arg("projections"), py::arg("size"), py::arg("chunk") = 65536,
        py::call_guard<py::gil_scoped_release>());

  m.def("set_thread_count", &set_thread_count, py::arg("n"));
}
