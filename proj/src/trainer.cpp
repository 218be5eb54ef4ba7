#include "scbct/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "scbct/metrics.hpp"
#include "scbct/projector.hpp"

namespace scbct {

namespace {

// splitmix64 finalizer; decorrelates the per-scan streams from the base seed
uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

constexpr uint64_t kSaltVal = 1ull << 20;
constexpr uint64_t kSaltTest = 2ull << 20;
constexpr uint64_t kSaltStream = 3ull << 20;

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& v) {
  throw std::invalid_argument("train config: bad value for " + key + ": '" +
                              v + "'");
}

int64_t parse_i64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) bad_value(key, v);
    return r;
  } catch (const std::invalid_argument&) {
    bad_value(key, v);
  } catch (const std::out_of_range&) {
    bad_value(key, v);
  }
}

int parse_int(const std::string& key, const std::string& v) {
  const int64_t r = parse_i64(key, v);
  if (r < INT32_MIN || r > INT32_MAX) bad_value(key, v);
  return int(r);
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) bad_value(key, v);
    return r;
  } catch (const std::invalid_argument&) {
    bad_value(key, v);
  } catch (const std::out_of_range&) {
    bad_value(key, v);
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) bad_value(key, v);
    return r;
  } catch (const std::invalid_argument&) {
    bad_value(key, v);
  } catch (const std::out_of_range&) {
    bad_value(key, v);
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  bad_value(key, v);
}

}  // namespace

TrainConfig::TrainConfig() {
  model.encoder.input_size = 64;
  model.norm_halfwidth_mm = 0.0;  // resolved from the data
  model.view_scale = 0.0;         // resolved from the data
  geom.det_px_u = 64;
  geom.det_px_v = 64;
}

void save_train_config(const TrainConfig& cfg, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os)
    throw std::runtime_error("train config: cannot write " + path);
  os << "model=" << variant_name(cfg.model.variant) << "\n";
  os << "views=" << cfg.views << "\n";
  os << "n_points=" << cfg.n_points << "\n";
  os << "epochs=" << cfg.epochs << "\n";
  os << "batch_size=" << cfg.batch_size << "\n";
  os << "learning_rate=" << fmt_double(cfg.learning_rate) << "\n";
  os << "weight_decay=" << fmt_double(cfg.weight_decay) << "\n";
  os << "seed=" << cfg.seed << "\n";
  os << "equiangular=" << (cfg.equiangular ? 1 : 0) << "\n";
  os << "fuse_levels=" << cfg.model.fuse_levels << "\n";
  os << "norm_halfwidth_mm=" << fmt_double(cfg.model.norm_halfwidth_mm)
     << "\n";
  os << "view_scale=" << fmt_double(cfg.model.view_scale) << "\n";
  os << "encoder.input_size=" << cfg.model.encoder.input_size << "\n";
  os << "encoder.stem_ch=" << cfg.model.encoder.stem_ch << "\n";
  os << "encoder.stage_ch0=" << cfg.model.encoder.stage_ch[0] << "\n";
  os << "encoder.stage_ch1=" << cfg.model.encoder.stage_ch[1] << "\n";
  os << "encoder.stage_ch2=" << cfg.model.encoder.stage_ch[2] << "\n";
  os << "encoder.tf_blocks=" << cfg.model.encoder.tf_blocks << "\n";
  os << "encoder.tf_heads=" << cfg.model.encoder.tf_heads << "\n";
  os << "encoder.tf_ff=" << cfg.model.encoder.tf_ff << "\n";
  os << "ptrans.layers=" << cfg.model.ptrans.layers << "\n";
  os << "ptrans.k=" << cfg.model.ptrans.k << "\n";
  os << "ptrans.heads=" << cfg.model.ptrans.heads << "\n";
  os << "ptrans.model_dim=" << cfg.model.ptrans.model_dim << "\n";
  os << "ptrans.pe_hidden=" << cfg.model.ptrans.pe_hidden << "\n";
  os << "ptrans.ff_hidden=" << cfg.model.ptrans.ff_hidden << "\n";
  os << "ptrans.sigma=" << fmt_double(cfg.model.ptrans.sigma) << "\n";
  os << "ptrans.prenorm=" << (cfg.model.ptrans.prenorm ? 1 : 0) << "\n";
  os << "head.hidden=" << cfg.model.head.hidden << "\n";
  os << "geom.sid_mm=" << fmt_double(cfg.geom.sid_mm) << "\n";
  os << "geom.sdd_mm=" << fmt_double(cfg.geom.sdd_mm) << "\n";
  os << "geom.det_px_u=" << cfg.geom.det_px_u << "\n";
  os << "geom.det_px_v=" << cfg.geom.det_px_v << "\n";
  os << "geom.det_mm_u=" << fmt_double(cfg.geom.det_mm_u) << "\n";
  os << "geom.det_mm_v=" << fmt_double(cfg.geom.det_mm_v) << "\n";
  os << "geom.vol_mm_x=" << fmt_double(cfg.geom.vol_mm_x) << "\n";
  os << "geom.vol_mm_y=" << fmt_double(cfg.geom.vol_mm_y) << "\n";
  os << "geom.vol_mm_z=" << fmt_double(cfg.geom.vol_mm_z) << "\n";
  os << "phantom_size=" << cfg.phantom_size << "\n";
  os << "train_scans=" << cfg.train_scans << "\n";
  os << "val_scans=" << cfg.val_scans << "\n";
  os << "test_scans=" << cfg.test_scans << "\n";
  os << "volume=" << cfg.volume_path << "\n";
  os << "proj=" << cfg.proj_dir << "\n";
  os << "checkpoint_every=" << cfg.checkpoint_every << "\n";
  if (!os) throw std::runtime_error("train config: write failed for " + path);
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("train config: cannot open " + path);
  TrainConfig cfg;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("train config: malformed line '" + line +
                                  "'");
    const std::string k = line.substr(0, eq);
    const std::string v = line.substr(eq + 1);
    if (k == "model")
      cfg.model.variant = variant_from_name(v);
    else if (k == "views")
      cfg.views = parse_int(k, v);
    else if (k == "n_points")
      cfg.n_points = parse_int(k, v);
    else if (k == "epochs")
      cfg.epochs = parse_int(k, v);
    else if (k == "batch_size")
      cfg.batch_size = parse_int(k, v);
    else if (k == "learning_rate")
      cfg.learning_rate = parse_double(k, v);
    else if (k == "weight_decay")
      cfg.weight_decay = parse_double(k, v);
    else if (k == "seed")
      cfg.seed = parse_u64(k, v);
    else if (k == "equiangular")
      cfg.equiangular = parse_bool(k, v);
    else if (k == "fuse_levels")
      cfg.model.fuse_levels = parse_int(k, v);
    else if (k == "norm_halfwidth_mm")
      cfg.model.norm_halfwidth_mm = parse_double(k, v);
    else if (k == "view_scale")
      cfg.model.view_scale = parse_double(k, v);
    else if (k == "encoder.input_size")
      cfg.model.encoder.input_size = parse_int(k, v);
    else if (k == "encoder.stem_ch")
      cfg.model.encoder.stem_ch = parse_int(k, v);
    else if (k == "encoder.stage_ch0")
      cfg.model.encoder.stage_ch[0] = parse_int(k, v);
    else if (k == "encoder.stage_ch1")
      cfg.model.encoder.stage_ch[1] = parse_int(k, v);
    else if (k == "encoder.stage_ch2")
      cfg.model.encoder.stage_ch[2] = parse_int(k, v);
    else if (k == "encoder.tf_blocks")
      cfg.model.encoder.tf_blocks = parse_int(k, v);
    else if (k == "encoder.tf_heads")
      cfg.model.encoder.tf_heads = parse_int(k, v);
    else if (k == "encoder.tf_ff")
      cfg.model.encoder.tf_ff = parse_int(k, v);
    else if (k == "ptrans.layers")
      cfg.model.ptrans.layers = parse_int(k, v);
    else if (k == "ptrans.k")
      cfg.model.ptrans.k = parse_int(k, v);
    else if (k == "ptrans.heads")
      cfg.model.ptrans.heads = parse_int(k, v);
    else if (k == "ptrans.model_dim")
      cfg.model.ptrans.model_dim = parse_int(k, v);
    else if (k == "ptrans.pe_hidden")
      cfg.model.ptrans.pe_hidden = parse_int(k, v);
    else if (k == "ptrans.ff_hidden")
      cfg.model.ptrans.ff_hidden = parse_int(k, v);
    else if (k == "ptrans.sigma")
      cfg.model.ptrans.sigma = parse_double(k, v);
    else if (k == "ptrans.prenorm")
      cfg.model.ptrans.prenorm = parse_bool(k, v);
    else if (k == "head.hidden")
      cfg.model.head.hidden = parse_int(k, v);
    else if (k == "geom.sid_mm")
      cfg.geom.sid_mm = parse_double(k, v);
    else if (k == "geom.sdd_mm")
      cfg.geom.sdd_mm = parse_double(k, v);
    else if (k == "geom.det_px_u")
      cfg.geom.det_px_u = parse_int(k, v);
    else if (k == "geom.det_px_v")
      cfg.geom.det_px_v = parse_int(k, v);
    else if (k == "geom.det_mm_u")
      cfg.geom.det_mm_u = parse_double(k, v);
    else if (k == "geom.det_mm_v")
      cfg.geom.det_mm_v = parse_double(k, v);
    else if (k == "geom.vol_mm_x")
      cfg.geom.vol_mm_x = parse_double(k, v);
    else if (k == "geom.vol_mm_y")
      cfg.geom.vol_mm_y = parse_double(k, v);
    else if (k == "geom.vol_mm_z")
      cfg.geom.vol_mm_z = parse_double(k, v);
    else if (k == "phantom_size")
      cfg.phantom_size = parse_int(k, v);
    else if (k == "train_scans")
      cfg.train_scans = parse_int(k, v);
    else if (k == "val_scans")
      cfg.val_scans = parse_int(k, v);
    else if (k == "test_scans")
      cfg.test_scans = parse_int(k, v);
    else if (k == "volume")
      cfg.volume_path = v;
    else if (k == "proj")
      cfg.proj_dir = v;
    else if (k == "checkpoint_every")
      cfg.checkpoint_every = parse_int(k, v);
    else
      throw std::invalid_argument("train config: unknown key '" + k + "'");
  }
  // head and point transformer widths follow the fusion width
  const int64_t w = fused_width(cfg.model.fuse_levels);
  cfg.model.head.in_dim = w;
  cfg.model.ptrans.feature_dim = w;
  return cfg;
}

std::vector<TrainScan> build_dataset(const TrainConfig& cfg, DataSplit split) {
  std::vector<TrainScan> out;
  if (!cfg.volume_path.empty()) {
    if (cfg.proj_dir.empty())
      throw std::invalid_argument(
          "dataset: explicit volume source needs a projection directory");
    TrainScan s;
    s.gt = load_volume(cfg.volume_path);
    s.ps = load_projection_set(cfg.proj_dir);
    out.push_back(std::move(s));
    return out;
  }
  validate_geometry(cfg.geom);
  if (cfg.phantom_size < 1)
    throw std::invalid_argument("dataset: phantom_size must be positive");
  if (cfg.views < 1)
    throw std::invalid_argument("dataset: needs at least one view");
  int count = 0;
  uint64_t base = 0;
  switch (split) {
    case DataSplit::train:
      count = cfg.train_scans;
      base = 0;
      break;
    case DataSplit::val:
      count = cfg.val_scans;
      base = kSaltVal;
      break;
    case DataSplit::test:
      count = cfg.test_scans;
      base = kSaltTest;
      break;
  }
  if (count < 0) throw std::invalid_argument("dataset: negative scan count");
  const double spacing = cfg.geom.vol_mm_x / cfg.phantom_size;
  out.reserve(size_t(count));
  for (int i = 0; i < count; ++i) {
    TrainScan s;
    s.gt = make_shell_phantom(cfg.phantom_size, spacing,
                              mix_seed(cfg.seed, base + 2 * uint64_t(i)));
    const std::vector<double> angles = sample_view_angles(
        cfg.views, mix_seed(cfg.seed, base + 2 * uint64_t(i) + 1),
        cfg.equiangular);
    s.ps = render_projections(s.gt, cfg.geom, angles);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<nn::Tensor> projection_tensors(const ProjectionSet& ps) {
  const int nu = ps.geom.det_px_u, nv = ps.geom.det_px_v;
  std::vector<nn::Tensor> out;
  out.reserve(ps.views.size());
  for (const std::vector<float>& img : ps.views) {
    if (img.size() != size_t(nu) * size_t(nv))
      throw std::invalid_argument("projection view size does not match " +
                                  std::to_string(nu) + "x" +
                                  std::to_string(nv) + " detector");
    nn::Tensor t(nn::Shape{1, nv, nu});
    for (size_t i = 0; i < img.size(); ++i) t.d[i] = double(img[i]);
    out.push_back(std::move(t));
  }
  return out;
}

Vec3 normalized_to_world(const GridSpec& g, double cx, double cy, double cz) {
  return {cx * 0.5 * (g.nx - 1) * g.sx, cy * 0.5 * (g.ny - 1) * g.sy,
          cz * 0.5 * (g.nz - 1) * g.sz};
}

Vec3 voxel_center_world(const GridSpec& g, int ix, int iy, int iz) {
  return {(ix - 0.5 * (g.nx - 1)) * g.sx, (iy - 0.5 * (g.ny - 1)) * g.sy,
          (iz - 0.5 * (g.nz - 1)) * g.sz};
}

TrainOutput train_model(const TrainConfig& cfg,
                        const std::vector<TrainScan>& scans,
                        const std::string& out_dir,
                        const std::function<void(int64_t, double)>& on_step) {
  if (scans.empty()) throw std::invalid_argument("train: no scans");
  if (cfg.epochs < 0)
    throw std::invalid_argument("train: epochs must be non-negative");
  if (cfg.batch_size < 1)
    throw std::invalid_argument("train: batch_size must be positive");
  if (cfg.n_points < 1)
    throw std::invalid_argument("train: n_points must be positive");

  ModelConfig mcfg = cfg.model;
  const int S = mcfg.encoder.input_size;
  for (const TrainScan& s : scans) {
    if (s.ps.views.empty())
      throw std::invalid_argument("train: scan without projections");
    if (s.ps.geom.det_px_u != S || s.ps.geom.det_px_v != S)
      throw std::invalid_argument(
          "train: geometry/resolution mismatch: detector " +
          std::to_string(s.ps.geom.det_px_u) + "x" +
          std::to_string(s.ps.geom.det_px_v) + " vs encoder input " +
          std::to_string(S));
    if (s.gt.data.size() != size_t(s.gt.grid.count()) || s.gt.data.empty())
      throw std::invalid_argument("train: scan volume is malformed");
  }

  if (mcfg.view_scale == 0.0) {
    double mx = 0.0;
    for (const TrainScan& s : scans)
      for (const std::vector<float>& img : s.ps.views)
        for (float f : img) mx = std::max(mx, std::fabs(double(f)));
    mcfg.view_scale = mx > 0.0 ? 1.0 / mx : 1.0;
  }
  if (mcfg.norm_halfwidth_mm == 0.0) {
    const GridSpec& g = scans[0].gt.grid;
    mcfg.norm_halfwidth_mm =
        0.5 * std::max({g.extent_x(), g.extent_y(), g.extent_z()});
  }

  ReconModel model(mcfg, cfg.seed);
  nn::AdamW opt({cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  Rng rng(mix_seed(cfg.seed, kSaltStream));

  std::filesystem::create_directories(out_dir);
  const std::string csv_path = out_dir + "/loss.csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw std::runtime_error("train: cannot write " + csv_path);
  csv << "step,loss\n";

  std::vector<std::vector<nn::Tensor>> inputs;
  inputs.reserve(scans.size());
  for (const TrainScan& s : scans) inputs.push_back(projection_tensors(s.ps));

  const int nscans = int(scans.size());
  const int bs = std::min(cfg.batch_size, nscans);
  const int steps_per_epoch = (nscans + bs - 1) / bs;
  std::vector<int> order(size_t(nscans), 0);
  std::iota(order.begin(), order.end(), 0);

  TrainOutput out;
  int64_t step = 0;
  char buf[96];
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = nscans - 1; i > 0; --i)
      std::swap(order[size_t(i)], order[rng.below(uint64_t(i) + 1)]);
    for (int b = 0; b < steps_per_epoch; ++b) {
      nn::Var total;
      int got = 0;
      for (int j = b * bs; j < std::min((b + 1) * bs, nscans); ++j, ++got) {
        const TrainScan& s = scans[size_t(order[size_t(j)])];
        const PointBatch pb = sample_points(s.gt, cfg.n_points, rng);
        std::vector<Vec3> pts;
        pts.reserve(size_t(pb.n));
        for (int p = 0; p < pb.n; ++p)
          pts.push_back(normalized_to_world(
              s.gt.grid, pb.coords[size_t(3 * p)], pb.coords[size_t(3 * p + 1)],
              pb.coords[size_t(3 * p + 2)]));
        nn::Tensor target(nn::Shape{int64_t(pb.n), 1});
        std::copy(pb.values.begin(), pb.values.end(), target.d.begin());
        const nn::Var pred = model.predict(inputs[size_t(order[size_t(j)])],
                                           s.ps.geom, s.ps.angles_deg, pts,
                                           /*training=*/true);
        const nn::Var li = nn::mse_loss(pred, target);
        total = total.defined() ? nn::add(total, li) : li;
      }
      const nn::Var loss = got > 1 ? nn::scale(total, 1.0 / got) : total;
      const double lv = loss.val().d[0];
      loss.backward();
      ++step;
      if (!std::isfinite(lv)) {
        double g2 = 0.0;
        for (const auto& [name, p] : model.params().params)
          for (double g : p.grad().d) g2 += g * g;
        throw std::runtime_error(
            "train: non-finite loss at step " + std::to_string(step) +
            " (learning_rate=" + fmt_double(cfg.learning_rate) +
            ", grad_norm=" + fmt_double(std::sqrt(g2)) + ")");
      }
      opt.step(model.params());
      model.params().zero_grad();
      out.losses.push_back(lv);
      std::snprintf(buf, sizeof buf, "%lld,%.17g\n", (long long)step, lv);
      csv << buf;
      if (on_step) on_step(step, lv);
      if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
        std::snprintf(buf, sizeof buf, "/ckpt_%06lld.bin", (long long)step);
        save_checkpoint(out_dir + buf, model, {step, rng.state()});
      }
    }
  }
  csv.flush();
  if (!csv) throw std::runtime_error("train: write failed for " + csv_path);
  out.checkpoint_path = out_dir + "/checkpoint.bin";
  save_checkpoint(out.checkpoint_path, model, {step, rng.state()});
  return out;
}

Volume reconstruct_volume(ReconModel& model, const ProjectionSet& ps,
                          const GridSpec& grid, int chunk) {
  if (chunk < 1 || chunk > 65536)
    throw std::invalid_argument("reconstruct: chunk must be in [1,65536]");
  if (ps.views.empty())
    throw std::invalid_argument("reconstruct: empty projection set");
  if (grid.count() <= 0)
    throw std::invalid_argument("reconstruct: empty output grid");
  const int S = model.config().encoder.input_size;
  if (ps.geom.det_px_u != S || ps.geom.det_px_v != S)
    throw std::invalid_argument(
        "reconstruct: geometry/resolution mismatch: detector " +
        std::to_string(ps.geom.det_px_u) + "x" +
        std::to_string(ps.geom.det_px_v) + " vs encoder input " +
        std::to_string(S));
  if (ps.views.size() != ps.angles_deg.size())
    throw std::invalid_argument("reconstruct: view/angle count mismatch");

  nn::NoGradGuard eval_only;
  const std::vector<FeaturePyramid> pyramids =
      model.encode(projection_tensors(ps));
  Volume out = make_volume(grid);
  const int64_t plane = int64_t(grid.nx) * grid.ny;
  const int64_t total = grid.count();
  for (int64_t start = 0; start < total; start += chunk) {
    const int64_t n = std::min<int64_t>(chunk, total - start);
    std::vector<Vec3> pts;
    pts.reserve(size_t(n));
    for (int64_t i = start; i < start + n; ++i) {
      const int iz = int(i / plane);
      const int64_t r = i % plane;
      pts.push_back(voxel_center_world(grid, int(r % grid.nx),
                                       int(r / grid.nx), iz));
    }
    const nn::Var pred = model.predict_encoded(pyramids, ps.geom,
                                               ps.angles_deg, pts,
                                               /*training=*/false);
    for (int64_t i = 0; i < n; ++i)
      out.data[size_t(start + i)] = float(pred.val().d[size_t(i)]);
  }
  return out;
}

AblationAxis ablation_axis_from_name(const std::string& s) {
  if (s == "n_points") return AblationAxis::n_points;
  if (s == "k") return AblationAxis::k;
  if (s == "features") return AblationAxis::features;
  throw std::invalid_argument("unknown ablation axis '" + s +
                              "' (want n_points|k|features)");
}

std::string ablation_axis_name(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::n_points:
      return "n_points";
    case AblationAxis::k:
      return "k";
    case AblationAxis::features:
      return "features";
  }
  throw std::logic_error("bad ablation axis");
}

std::vector<std::string> ablation_default_values(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::n_points:
      return {"5000", "10000", "20000"};
    case AblationAxis::k:
      return {"3", "6", "9", "15"};
    case AblationAxis::features:
      return {"f4", "f4f3", "f4f3f2", "full"};
  }
  throw std::logic_error("bad ablation axis");
}

namespace {

int feature_levels(const std::string& v) {
  if (v == "f4") return 1;
  if (v == "f4f3") return 2;
  if (v == "f4f3f2") return 3;
  if (v == "full") return 4;
  throw std::invalid_argument("unknown feature strategy '" + v +
                              "' (want f4|f4f3|f4f3f2|full)");
}

}  // namespace

std::vector<AblationRow> run_ablation(
    AblationAxis axis, const std::vector<std::string>& values,
    const TrainConfig& base, const std::string& out_dir,
    const std::function<void(const AblationRow&)>& on_row) {
  if (values.empty()) throw std::invalid_argument("ablation: no values");
  std::filesystem::create_directories(out_dir);
  const std::string csv_path =
      out_dir + "/ablation_" + ablation_axis_name(axis) + ".csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw std::runtime_error("ablation: cannot write " + csv_path);
  csv << "value,psnr,ssim\n";

  std::vector<AblationRow> rows;
  for (const std::string& v : values) {
    TrainConfig cfg = base;
    switch (axis) {
      case AblationAxis::n_points: {
        const int n = parse_int("n_points", v);
        if (n < 1) throw std::invalid_argument("ablation: n_points < 1");
        cfg.n_points = n;
        break;
      }
      case AblationAxis::k: {
        if (cfg.model.variant != ModelVariant::refined)
          throw std::invalid_argument(
              "ablation: the k axis needs the refined variant");
        const int k = parse_int("k", v);
        if (k < 1) throw std::invalid_argument("ablation: k < 1");
        cfg.model.ptrans.k = k;
        break;
      }
      case AblationAxis::features: {
        const int levels = feature_levels(v);
        cfg.model.fuse_levels = levels;
        const int64_t w = fused_width(levels);
        cfg.model.head.in_dim = w;
        cfg.model.ptrans.feature_dim = w;
        break;
      }
    }

    std::vector<TrainScan> train_scans = build_dataset(cfg, DataSplit::train);
    if (!cfg.volume_path.empty() && !train_scans.empty())
      cfg.model.encoder.input_size = train_scans[0].ps.geom.det_px_u;
    const std::string run_dir =
        out_dir + "/run_" + ablation_axis_name(axis) + "_" + v;
    const TrainOutput t = train_model(cfg, train_scans, run_dir);
    const std::unique_ptr<ReconModel> model =
        load_checkpoint(t.checkpoint_path);

    std::vector<TrainScan> eval_scans;
    if (!cfg.volume_path.empty() || cfg.test_scans < 1)
      eval_scans = std::move(train_scans);
    else
      eval_scans = build_dataset(cfg, DataSplit::test);

    double sum_psnr = 0.0, sum_ssim = 0.0;
    for (const TrainScan& s : eval_scans) {
      const Volume rec = reconstruct_volume(*model, s.ps, s.gt.grid);
      sum_psnr += psnr_db(rec, s.gt, 1.0);
      sum_ssim += ssim(rec, s.gt, 1.0);
    }
    AblationRow row{v, sum_psnr / double(eval_scans.size()),
                    sum_ssim / double(eval_scans.size())};
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f\n", row.value.c_str(),
                  row.psnr_db, row.ssim);
    csv << buf;
    csv.flush();
    rows.push_back(row);
    if (on_row) on_row(row);
  }
  if (!csv) throw std::runtime_error("ablation: write failed for " + csv_path);
  return rows;
}

}  // namespace scbct
