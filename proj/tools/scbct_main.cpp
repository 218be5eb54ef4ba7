#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "scbct/baselines.hpp"
#include "scbct/metrics.hpp"
#include "scbct/parallel.hpp"
#include "scbct/pngio.hpp"
#include "scbct/projector.hpp"
#include "scbct/trainer.hpp"

namespace {

using namespace scbct;

GridSpec grid_for(const ScannerGeometry& g, int n) {
  if (n < 1) throw std::invalid_argument("grid size must be positive");
  return {n, n, n, g.vol_mm_x / n, g.vol_mm_y / n, g.vol_mm_z / n};
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= s.size()) {
    const size_t comma = s.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(s.substr(start));
      break;
    }
    out.push_back(s.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

// optional overrides shared by train and ablate; only flags the user passed
// are applied on top of the config file
struct TrainFlags {
  std::string config, model, volume, proj;
  int epochs = 0, batch = 0, points = 0, views = 0, size = 0, scans = 0;
  int ckpt_every = 0;
  double lr = 0.0, wd = 0.0;
  uint64_t seed = 0;
  bool equiangular = false;
  CLI::Option *o_model = nullptr, *o_volume = nullptr, *o_proj = nullptr,
              *o_epochs = nullptr, *o_batch = nullptr, *o_points = nullptr,
              *o_views = nullptr, *o_size = nullptr, *o_scans = nullptr,
              *o_ckpt = nullptr, *o_lr = nullptr, *o_wd = nullptr,
              *o_seed = nullptr, *o_equi = nullptr;
};

void add_train_flags(CLI::App* sub, TrainFlags& f) {
  sub->add_option("--config", f.config, "key=value training config file");
  f.o_model = sub->add_option("--model", f.model, "model variant")
                  ->check(CLI::IsMember({"base", "refined"}));
  f.o_volume =
      sub->add_option("--volume", f.volume, "ground-truth volume (.vol)");
  f.o_proj = sub->add_option("--proj", f.proj, "projection directory");
  f.o_epochs = sub->add_option("--epochs", f.epochs, "training epochs");
  f.o_batch = sub->add_option("--batch", f.batch, "scans per step");
  f.o_points = sub->add_option("--points", f.points, "points per scan");
  f.o_views = sub->add_option("--views", f.views, "views per rendered scan");
  f.o_size = sub->add_option("--size", f.size, "phantom grid size");
  f.o_scans = sub->add_option("--scans", f.scans, "training scans");
  f.o_ckpt = sub->add_option("--checkpoint-every", f.ckpt_every,
                             "steps between periodic checkpoints");
  f.o_lr = sub->add_option("--lr", f.lr, "learning rate");
  f.o_wd = sub->add_option("--wd", f.wd, "weight decay");
  f.o_seed = sub->add_option("--seed", f.seed, "experiment seed");
  f.o_equi = sub->add_flag("--equiangular", f.equiangular,
                           "equiangular view placement");
}

TrainConfig resolve_train_config(const TrainFlags& f) {
  TrainConfig cfg =
      f.config.empty() ? TrainConfig{} : load_train_config(f.config);
  if (f.o_model->count()) cfg.model.variant = variant_from_name(f.model);
  if (f.o_volume->count()) cfg.volume_path = f.volume;
  if (f.o_proj->count()) cfg.proj_dir = f.proj;
  if (f.o_epochs->count()) cfg.epochs = f.epochs;
  if (f.o_batch->count()) cfg.batch_size = f.batch;
  if (f.o_points->count()) cfg.n_points = f.points;
  if (f.o_views->count()) cfg.views = f.views;
  if (f.o_scans->count()) cfg.train_scans = f.scans;
  if (f.o_ckpt->count()) cfg.checkpoint_every = f.ckpt_every;
  if (f.o_lr->count()) cfg.learning_rate = f.lr;
  if (f.o_wd->count()) cfg.weight_decay = f.wd;
  if (f.o_seed->count()) cfg.seed = f.seed;
  if (f.o_equi->count()) cfg.equiangular = f.equiangular;
  if (f.o_size->count()) {
    cfg.phantom_size = f.size;
    // keep the desk-scale convention: detector matches the encoder input
    cfg.model.encoder.input_size = f.size;
    cfg.geom.det_px_u = f.size;
    cfg.geom.det_px_v = f.size;
  }
  return cfg;
}

// when the scan source is a projection directory, its geometry decides the
// encoder input resolution
void sync_encoder_input(TrainConfig& cfg,
                        const std::vector<TrainScan>& scans) {
  if (!cfg.volume_path.empty() && !scans.empty())
    cfg.model.encoder.input_size = scans[0].ps.geom.det_px_u;
}

int cmd_phantom(const std::string& kind, int size, double spacing,
                uint64_t seed, const std::string& out) {
  const double sp = spacing > 0.0 ? spacing : 409.6 / size;
  Volume v;
  if (kind == "shells")
    v = make_shell_phantom(size, sp, seed);
  else if (kind == "sphere")
    v = make_sphere_phantom(size, sp);
  else
    v = make_cube_phantom(size, sp);
  save_volume(v, out);
  std::printf("wrote %s (%d^3, spacing %.6g mm)\n", out.c_str(), size, sp);
  return 0;
}

int cmd_drr(const std::string& volume, const std::string& geom_path, int views,
            uint64_t seed, bool equiangular, double step,
            const std::string& out) {
  const Volume vol = load_volume(volume);
  const ScannerGeometry geom = load_geometry(geom_path);
  const std::vector<double> angles =
      sample_view_angles(views, seed, equiangular);
  const ProjectionSet ps = render_projections(vol, geom, angles, step);
  save_projection_set(ps, out);
  std::printf("wrote %d views (%dx%d px) to %s\n", views, geom.det_px_u,
              geom.det_px_v, out.c_str());
  return 0;
}

int cmd_train(const TrainFlags& flags, const std::string& out_dir) {
  TrainConfig cfg = resolve_train_config(flags);
  std::vector<TrainScan> scans = build_dataset(cfg, DataSplit::train);
  sync_encoder_input(cfg, scans);
  const int bs = std::min<int>(cfg.batch_size, int(scans.size()));
  const int64_t total =
      int64_t(cfg.epochs) * ((int64_t(scans.size()) + bs - 1) / bs);
  const int64_t every = std::max<int64_t>(1, total / 20);
  const TrainOutput out = train_model(
      cfg, scans, out_dir, [&](int64_t step, double loss) {
        if (step == 1 || step == total || step % every == 0)
          std::printf("step %lld/%lld loss %.8g\n", (long long)step,
                      (long long)total, loss);
      });
  std::printf("final loss %.8g after %zu steps\n",
              out.losses.empty() ? 0.0 : out.losses.back(),
              out.losses.size());
  std::printf("wrote %s and %s/loss.csv\n", out.checkpoint_path.c_str(),
              out_dir.c_str());
  return 0;
}

int cmd_reconstruct(const std::string& ckpt, const std::string& proj, int size,
                    int chunk, const std::string& out,
                    const std::string& slices) {
  const std::unique_ptr<ReconModel> model = load_checkpoint(ckpt);
  const ProjectionSet ps = load_projection_set(proj);
  const Volume rec = reconstruct_volume(*model, ps, grid_for(ps.geom, size),
                                        chunk);
  save_volume(rec, out);
  std::printf("wrote %s (%d^3)\n", out.c_str(), size);
  if (!slices.empty()) {
    write_center_slices(rec, slices);
    std::printf("wrote %s_{axial,coronal,sagittal}.png\n", slices.c_str());
  }
  return 0;
}

int cmd_baseline(const std::string& method, const std::string& proj, int size,
                 int iterations, double lambda, bool hann,
                 const std::string& out) {
  const ProjectionSet ps = load_projection_set(proj);
  const GridSpec grid = grid_for(ps.geom, size);
  Volume rec;
  if (method == "fdk") {
    FdkOptions opt;
    opt.hann = hann;
    rec = fdk_reconstruct(ps, grid, opt);
  } else {
    SartReport report;
    rec = sart_reconstruct(ps, grid, iterations, lambda, &report);
    if (!report.residual_norm.empty())
      std::printf("sart residual %.8g -> %.8g over %d sweeps\n",
                  report.residual_norm.front(), report.residual_norm.back(),
                  iterations);
  }
  save_volume(rec, out);
  std::printf("wrote %s (%d^3, %s)\n", out.c_str(), size, method.c_str());
  return 0;
}

int cmd_eval(const std::string& pred, const std::string& gt, double range,
             const std::string& csv) {
  const Volume a = load_volume(pred);
  const Volume b = load_volume(gt);
  const double p = psnr_db(a, b, range);
  const double s = ssim(a, b, range);
  std::printf("psnr_db=%.6f ssim=%.6f\n", p, s);
  std::printf("# ssim: mean over axial slices, 11x11 gaussian window, sigma 1.5\n");
  if (!csv.empty()) {
    const bool fresh = !std::filesystem::exists(csv);
    std::ofstream os(csv, std::ios::app);
    if (!os) throw std::runtime_error("eval: cannot write " + csv);
    if (fresh) os << "pred,gt,psnr_db,ssim\n";
    char buf[512];
    std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f\n", pred.c_str(),
                  gt.c_str(), p, s);
    os << buf;
  }
  return 0;
}

int cmd_ablate(const TrainFlags& flags, const std::string& axis_name,
               const std::string& values_csv, const std::string& out_dir) {
  const TrainConfig cfg = resolve_train_config(flags);
  const AblationAxis axis = ablation_axis_from_name(axis_name);
  const std::vector<std::string> values =
      values_csv.empty() ? ablation_default_values(axis)
                         : split_csv(values_csv);
  run_ablation(axis, values, cfg, out_dir, [&](const AblationRow& r) {
    std::printf("%s=%s psnr=%.6f ssim=%.6f\n", axis_name.c_str(),
                r.value.c_str(), r.psnr_db, r.ssim);
  });
  std::printf("wrote %s/ablation_%s.csv\n", out_dir.c_str(),
              axis_name.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse-view cone-beam CT reconstruction toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker thread cap (0 = hardware)");
  const auto apply_threads = [&] {
    if (threads > 0) set_thread_count(threads);
  };

  // phantom
  auto* ph = app.add_subcommand("phantom", "generate a synthetic volume");
  ph->fallthrough();
  std::string ph_kind = "shells", ph_out;
  int ph_size = 64;
  double ph_spacing = 0.0;
  uint64_t ph_seed = 0;
  ph->add_option("--kind", ph_kind, "phantom family")
      ->check(CLI::IsMember({"shells", "sphere", "cube"}));
  ph->add_option("--size", ph_size, "grid edge length")
      ->check(CLI::PositiveNumber);
  ph->add_option("--spacing", ph_spacing, "voxel spacing mm (0 = 409.6/size)");
  ph->add_option("--seed", ph_seed, "phantom seed");
  ph->add_option("--out", ph_out, "output volume path")->required();
  ph->callback([&] {
    apply_threads();
    cmd_phantom(ph_kind, ph_size, ph_spacing, ph_seed, ph_out);
  });

  // drr
  auto* dr = app.add_subcommand("drr", "render projections of a volume");
  dr->fallthrough();
  std::string dr_vol, dr_geom, dr_out;
  int dr_views = 6;
  uint64_t dr_seed = 0;
  bool dr_equi = false;
  double dr_step = 0.0;
  dr->add_option("--volume", dr_vol, "input volume")->required();
  dr->add_option("--geom", dr_geom, "scanner geometry file")->required();
  dr->add_option("--views", dr_views, "number of views")
      ->check(CLI::PositiveNumber);
  dr->add_option("--seed", dr_seed, "angle sampling seed");
  dr->add_flag("--equiangular", dr_equi, "equiangular view placement");
  dr->add_option("--step", dr_step, "ray step mm (0 = half min spacing)");
  dr->add_option("--out", dr_out, "output projection directory")->required();
  dr->callback([&] {
    apply_threads();
    cmd_drr(dr_vol, dr_geom, dr_views, dr_seed, dr_equi, dr_step, dr_out);
  });

  // train
  auto* tr = app.add_subcommand("train", "optimize a reconstruction model");
  tr->fallthrough();
  TrainFlags tr_flags;
  std::string tr_out;
  add_train_flags(tr, tr_flags);
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->callback([&] {
    apply_threads();
    cmd_train(tr_flags, tr_out);
  });

  // reconstruct
  auto* rc = app.add_subcommand("reconstruct",
                                "evaluate a trained model on a voxel grid");
  rc->fallthrough();
  std::string rc_ckpt, rc_proj, rc_out, rc_slices;
  int rc_size = 64, rc_chunk = 65536;
  rc->add_option("--ckpt", rc_ckpt, "model checkpoint")->required();
  rc->add_option("--proj", rc_proj, "projection directory")->required();
  rc->add_option("--size", rc_size, "output grid edge length")
      ->check(CLI::PositiveNumber);
  rc->add_option("--chunk", rc_chunk, "points per evaluation chunk");
  rc->add_option("--out", rc_out, "output volume path")->required();
  rc->add_option("--slices", rc_slices, "PNG slice prefix");
  rc->callback([&] {
    apply_threads();
    cmd_reconstruct(rc_ckpt, rc_proj, rc_size, rc_chunk, rc_out, rc_slices);
  });

  // baseline
  auto* bl = app.add_subcommand("baseline", "classical reconstruction");
  bl->fallthrough();
  std::string bl_method, bl_proj, bl_out;
  int bl_size = 64, bl_iters = 50;
  double bl_lambda = 0.5;
  bool bl_hann = false;
  bl->add_option("--method", bl_method, "fdk or sart")
      ->required()
      ->check(CLI::IsMember({"fdk", "sart"}));
  bl->add_option("--proj", bl_proj, "projection directory")->required();
  bl->add_option("--size", bl_size, "output grid edge length")
      ->check(CLI::PositiveNumber);
  bl->add_option("--iterations", bl_iters, "sart sweeps");
  bl->add_option("--lambda", bl_lambda, "sart relaxation in (0,1]");
  bl->add_flag("--hann", bl_hann, "hann-apodized ramp filter");
  bl->add_option("--out", bl_out, "output volume path")->required();
  bl->callback([&] {
    apply_threads();
    cmd_baseline(bl_method, bl_proj, bl_size, bl_iters, bl_lambda, bl_hann,
                 bl_out);
  });

  // eval
  auto* ev = app.add_subcommand("eval", "PSNR/SSIM against ground truth");
  ev->fallthrough();
  std::string ev_pred, ev_gt, ev_csv;
  double ev_range = 1.0;
  ev->add_option("--pred", ev_pred, "reconstruction volume")->required();
  ev->add_option("--gt", ev_gt, "ground-truth volume")->required();
  ev->add_option("--range", ev_range, "intensity data range");
  ev->add_option("--csv", ev_csv, "append a CSV row here");
  ev->callback([&] {
    apply_threads();
    cmd_eval(ev_pred, ev_gt, ev_range, ev_csv);
  });

  // ablate
  auto* ab = app.add_subcommand("ablate", "sweep one configuration axis");
  ab->fallthrough();
  TrainFlags ab_flags;
  std::string ab_axis, ab_values, ab_out;
  add_train_flags(ab, ab_flags);
  ab->add_option("--axis", ab_axis, "n_points, k, or features")->required();
  ab->add_option("--values", ab_values, "comma-separated grid override");
  ab->add_option("--out", ab_out, "output directory")->required();
  ab->callback([&] {
    apply_threads();
    cmd_ablate(ab_flags, ab_axis, ab_values, ab_out);
  });

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e);
      return code == 0 ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
