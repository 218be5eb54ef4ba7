#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "scbct/encoder2d.hpp"
#include "scbct/fusion.hpp"
#include "scbct/head.hpp"
#include "scbct/pointtrans.hpp"

namespace scbct {

enum class ModelVariant { base, refined };

std::string variant_name(ModelVariant v);
ModelVariant variant_from_name(const std::string& s);

struct ModelConfig {
  ModelVariant variant = ModelVariant::refined;
  EncoderConfig encoder;
  PointTransformerConfig ptrans;
  PredictionHeadConfig head;
  int fuse_levels = 4;               // pyramid scales concatenated, 1..4
  double norm_halfwidth_mm = 204.8;  // world half-extent for [-1,1] coords
  double view_scale = 1.0;           // multiplies raw projections on input
};

// Full sparse-view reconstruction network: per-view 2d encoder, cross-view
// point feature fusion, optional neighbor point transformer (the refined
// variant), and the density prediction head.
class ReconModel {
 public:
  ReconModel(const ModelConfig& cfg, uint64_t seed);

  // views: one [1, S, S] projection tensor per angle, S = encoder input size
  nn::Var predict(const std::vector<nn::Tensor>& views,
                  const ScannerGeometry& geom,
                  const std::vector<double>& angles_deg,
                  const std::vector<Vec3>& points_world, bool training,
                  FusionStats* stats = nullptr);

  // encode once, then query many point batches against the same pyramids
  std::vector<FeaturePyramid> encode(const std::vector<nn::Tensor>& views);
  nn::Var predict_encoded(const std::vector<FeaturePyramid>& pyramids,
                          const ScannerGeometry& geom,
                          const std::vector<double>& angles_deg,
                          const std::vector<Vec3>& points_world, bool training,
                          FusionStats* stats = nullptr);

  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }
  const ModelConfig& config() const { return cfg_; }
  int64_t fused_dim() const { return fused_width(cfg_.fuse_levels); }

 private:
  ModelConfig cfg_;
  nn::ParamStore ps_;
  std::unique_ptr<Encoder2d> encoder_;
  std::unique_ptr<PointTransformer> ptrans_;
  std::unique_ptr<PredictionHead> head_;
};

struct CheckpointMeta {
  int64_t step = 0;
  std::string rng_state;
};

// Binary checkpoint: magic, format version, length-prefixed key=value header
// (hyperparameters, step, rng state), then alphabetically ordered named f32
// little-endian blobs covering every parameter and buffer.
void save_checkpoint(const std::string& path, const ReconModel& model,
                     const CheckpointMeta& meta);
std::unique_ptr<ReconModel> load_checkpoint(const std::string& path,
                                            CheckpointMeta* meta = nullptr);

}  // namespace scbct
