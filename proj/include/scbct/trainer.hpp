#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scbct/dataio.hpp"
#include "scbct/model.hpp"

namespace scbct {

// Full experiment description. Round-trips through a flat key=value file;
// unknown keys are rejected. Defaults are the desk-scale protocol: 64^3
// nested-shell phantoms imaged on a 64^2 detector.
struct TrainConfig {
  ModelConfig model;
  ScannerGeometry geom;  // detector resolution must equal the encoder input
  int views = 6;
  int n_points = 10000;  // points sampled per scan per step
  int epochs = 400;
  int batch_size = 2;  // scans per optimizer step, loss averaged
  double learning_rate = 1e-3;
  double weight_decay = 1e-6;
  uint64_t seed = 0;
  bool equiangular = false;  // view angle placement for rendered scans

  // procedural nested-shell dataset, used while volume_path is empty
  int phantom_size = 64;
  int train_scans = 20;
  int val_scans = 2;
  int test_scans = 5;

  // explicit single-scan source: ground-truth volume + projection directory
  std::string volume_path;
  std::string proj_dir;

  int checkpoint_every = 0;  // steps between periodic checkpoints, 0 = none

  TrainConfig();
};

TrainConfig load_train_config(const std::string& path);
void save_train_config(const TrainConfig& cfg, const std::string& path);

// One scan: ground truth plus its fixed acquired projections.
struct TrainScan {
  Volume gt;
  ProjectionSet ps;
};

enum class DataSplit { train, val, test };

// Renders the requested split. With an explicit volume_path/proj_dir source
// every split is the same single scan loaded from disk.
std::vector<TrainScan> build_dataset(const TrainConfig& cfg, DataSplit split);

// [1,S,S] tensor per view, raw detector values
std::vector<nn::Tensor> projection_tensors(const ProjectionSet& ps);

// voxel/query coordinate maps; normalized coords put -1/+1 at the outermost
// voxel centers, matching trilinear_sample
Vec3 normalized_to_world(const GridSpec& g, double cx, double cy, double cz);
Vec3 voxel_center_world(const GridSpec& g, int ix, int iy, int iz);

struct TrainOutput {
  std::vector<double> losses;   // one entry per optimizer step
  std::string checkpoint_path;  // final checkpoint
};

// Optimizes a fresh model on the given scans, writing loss.csv plus periodic
// and final checkpoints under out_dir. Auto-resolves view_scale and
// norm_halfwidth_mm from the data when left at 0. Aborts with diagnostics on
// a non-finite loss.
TrainOutput train_model(
    const TrainConfig& cfg, const std::vector<TrainScan>& scans,
    const std::string& out_dir,
    const std::function<void(int64_t, double)>& on_step = {});

// Evaluates the field at every voxel center of grid, in consecutive chunks
// of at most 65536 points. The base variant is pointwise, so the chunk size
// never changes values; the refined variant builds its neighbor graph within
// each chunk, which makes the partition part of the evaluation.
Volume reconstruct_volume(ReconModel& model, const ProjectionSet& ps,
                          const GridSpec& grid, int chunk = 65536);

enum class AblationAxis { n_points, k, features };

AblationAxis ablation_axis_from_name(const std::string& s);
std::string ablation_axis_name(AblationAxis axis);
std::vector<std::string> ablation_default_values(AblationAxis axis);

struct AblationRow {
  std::string value;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

// Trains one configuration per value under the shared base seed, evaluates
// reconstructions of the test scans, and writes value,psnr,ssim rows to
// <out_dir>/ablation_<axis>.csv.
std::vector<AblationRow> run_ablation(
    AblationAxis axis, const std::vector<std::string>& values,
    const TrainConfig& base, const std::string& out_dir,
    const std::function<void(const AblationRow&)>& on_row = {});

}  // namespace scbct
