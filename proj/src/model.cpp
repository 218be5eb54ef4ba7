#include "scbct/model.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace scbct {

namespace {

constexpr char kMagic[5] = {'S', 'C', 'B', 'C', 'T'};
constexpr uint32_t kFormatVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = (unsigned char)(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (unsigned char)(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
  return v;
}

void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, uint32_t(s.size()));
  os.write(s.data(), std::streamsize(s.size()));
}

std::string get_str(std::istream& is) {
  const uint32_t n = get_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), std::streamsize(n));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

void put_f32_blob(std::ostream& os, const std::string& name,
                  const nn::Tensor& t) {
  put_str(os, name);
  put_u64(os, uint64_t(t.numel()));
  for (double v : t.d) {
    const float f = float(v);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(os, bits);
  }
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string variant_name(ModelVariant v) {
  return v == ModelVariant::base ? "base" : "refined";
}

ModelVariant variant_from_name(const std::string& s) {
  if (s == "base") return ModelVariant::base;
  if (s == "refined") return ModelVariant::refined;
  throw std::invalid_argument("unknown model variant '" + s + "'");
}

ReconModel::ReconModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  const std::array<int64_t, 4> enc_out{
      cfg.encoder.stage_ch[2], cfg.encoder.stage_ch[1], cfg.encoder.stage_ch[0],
      cfg.encoder.stem_ch};
  int64_t sum = 0;
  for (size_t s = 0; s < 4; ++s) {
    if (enc_out[s] != kPyramidChannels[s])
      throw std::invalid_argument(
          "model: encoder pyramid widths must be 256/128/64/16 (stage_ch "
          "{64,128,256}, stem_ch 16)");
    sum += enc_out[s];
  }
  if (sum != kFusedDim || kFusedDim != 464)
    throw std::logic_error(
        "fused feature width must be 464 = 256+128+64+16, got " +
        std::to_string(sum));
  const int64_t width = fused_width(cfg.fuse_levels);
  if (cfg.head.in_dim != width)
    throw std::invalid_argument("model: head input width must be " +
                                std::to_string(width));
  if (cfg.variant == ModelVariant::refined &&
      cfg.ptrans.feature_dim != width)
    throw std::invalid_argument(
        "model: point transformer feature width must be " +
        std::to_string(width));
  if (!(cfg.norm_halfwidth_mm > 0.0))
    throw std::invalid_argument("model: norm_halfwidth_mm must be positive");

  Rng rng(seed);
  encoder_ = std::make_unique<Encoder2d>(ps_, "enc", cfg_.encoder, rng);
  if (cfg_.variant == ModelVariant::refined)
    ptrans_ =
        std::make_unique<PointTransformer>(ps_, "ptrans", cfg_.ptrans, rng);
  head_ = std::make_unique<PredictionHead>(ps_, "head", cfg_.head, rng);
}

std::vector<FeaturePyramid> ReconModel::encode(
    const std::vector<nn::Tensor>& views) {
  if (views.empty()) throw std::invalid_argument("model: no views");
  std::vector<nn::Var> inputs;
  inputs.reserve(views.size());
  for (const nn::Tensor& t : views) {
    nn::Var v{t, false};
    inputs.push_back(cfg_.view_scale == 1.0 ? v
                                            : scale(v, cfg_.view_scale));
  }
  return encoder_->encode_views(inputs);
}

nn::Var ReconModel::predict(const std::vector<nn::Tensor>& views,
                            const ScannerGeometry& geom,
                            const std::vector<double>& angles_deg,
                            const std::vector<Vec3>& points_world,
                            bool training, FusionStats* stats) {
  if (views.size() != angles_deg.size())
    throw std::invalid_argument("model: view count != angle count");
  return predict_encoded(encode(views), geom, angles_deg, points_world,
                         training, stats);
}

nn::Var ReconModel::predict_encoded(
    const std::vector<FeaturePyramid>& pyramids, const ScannerGeometry& geom,
    const std::vector<double>& angles_deg,
    const std::vector<Vec3>& points_world, bool training, FusionStats* stats) {
  nn::Var feats = query_point_features(pyramids, geom, angles_deg,
                                       points_world, stats, cfg_.fuse_levels);

  if (cfg_.variant == ModelVariant::refined) {
    std::vector<Vec3> ncoords;
    ncoords.reserve(points_world.size());
    const double inv = 1.0 / cfg_.norm_halfwidth_mm;
    for (const Vec3& p : points_world)
      ncoords.push_back({p.x * inv, p.y * inv, p.z * inv});
    feats = (*ptrans_)(feats, ncoords);
  }
  return (*head_)(feats, training);
}

void save_checkpoint(const std::string& path, const ReconModel& model,
                     const CheckpointMeta& meta) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);

  const ModelConfig& c = model.config();
  std::map<std::string, std::string> hdr;
  hdr["variant"] = variant_name(c.variant);
  hdr["encoder.input_size"] = std::to_string(c.encoder.input_size);
  hdr["encoder.stem_ch"] = std::to_string(c.encoder.stem_ch);
  hdr["encoder.stage_ch0"] = std::to_string(c.encoder.stage_ch[0]);
  hdr["encoder.stage_ch1"] = std::to_string(c.encoder.stage_ch[1]);
  hdr["encoder.stage_ch2"] = std::to_string(c.encoder.stage_ch[2]);
  hdr["encoder.tf_blocks"] = std::to_string(c.encoder.tf_blocks);
  hdr["encoder.tf_heads"] = std::to_string(c.encoder.tf_heads);
  hdr["encoder.tf_ff"] = std::to_string(c.encoder.tf_ff);
  hdr["ptrans.layers"] = std::to_string(c.ptrans.layers);
  hdr["ptrans.k"] = std::to_string(c.ptrans.k);
  hdr["ptrans.heads"] = std::to_string(c.ptrans.heads);
  hdr["ptrans.model_dim"] = std::to_string(c.ptrans.model_dim);
  hdr["ptrans.feature_dim"] = std::to_string(c.ptrans.feature_dim);
  hdr["ptrans.pe_hidden"] = std::to_string(c.ptrans.pe_hidden);
  hdr["ptrans.ff_hidden"] = std::to_string(c.ptrans.ff_hidden);
  hdr["ptrans.sigma"] = fmt_double(c.ptrans.sigma);
  hdr["ptrans.prenorm"] = c.ptrans.prenorm ? "1" : "0";
  hdr["head.in_dim"] = std::to_string(c.head.in_dim);
  hdr["head.hidden"] = std::to_string(c.head.hidden);
  hdr["fuse_levels"] = std::to_string(c.fuse_levels);
  hdr["norm_halfwidth_mm"] = fmt_double(c.norm_halfwidth_mm);
  hdr["view_scale"] = fmt_double(c.view_scale);
  hdr["step"] = std::to_string(meta.step);
  hdr["rng_state"] = meta.rng_state;

  os.write(kMagic, 5);
  put_u32(os, kFormatVersion);
  put_u32(os, uint32_t(hdr.size()));
  for (const auto& [k, v] : hdr) put_str(os, k + "=" + v);

  const nn::ParamStore& ps = model.params();
  put_u32(os, uint32_t(ps.params.size() + ps.buffers.size()));
  // std::map iteration is already alphabetical; merge the two key ranges
  auto pit = ps.params.begin();
  auto bit = ps.buffers.begin();
  while (pit != ps.params.end() || bit != ps.buffers.end()) {
    const bool take_param =
        bit == ps.buffers.end() ||
        (pit != ps.params.end() && pit->first < bit->first);
    if (take_param) {
      put_f32_blob(os, pit->first, pit->second.val());
      ++pit;
    } else {
      put_f32_blob(os, bit->first, bit->second);
      ++bit;
    }
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::unique_ptr<ReconModel> load_checkpoint(const std::string& path,
                                            CheckpointMeta* meta) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);

  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, kMagic, 5) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint32_t version = get_u32(is);
  if (version != kFormatVersion)
    throw std::runtime_error("checkpoint: unsupported format version " +
                             std::to_string(version));

  std::map<std::string, std::string> hdr;
  const uint32_t n_hdr = get_u32(is);
  for (uint32_t i = 0; i < n_hdr; ++i) {
    const std::string kv = get_str(is);
    const size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("checkpoint: malformed header entry '" + kv +
                               "'");
    hdr[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  const auto want = [&](const std::string& k) -> const std::string& {
    auto it = hdr.find(k);
    if (it == hdr.end())
      throw std::runtime_error("checkpoint: missing header key " + k);
    return it->second;
  };

  ModelConfig cfg;
  cfg.variant = variant_from_name(want("variant"));
  cfg.encoder.input_size = std::stoll(want("encoder.input_size"));
  cfg.encoder.stem_ch = std::stoll(want("encoder.stem_ch"));
  cfg.encoder.stage_ch[0] = std::stoll(want("encoder.stage_ch0"));
  cfg.encoder.stage_ch[1] = std::stoll(want("encoder.stage_ch1"));
  cfg.encoder.stage_ch[2] = std::stoll(want("encoder.stage_ch2"));
  cfg.encoder.tf_blocks = std::stoll(want("encoder.tf_blocks"));
  cfg.encoder.tf_heads = std::stoll(want("encoder.tf_heads"));
  cfg.encoder.tf_ff = std::stoll(want("encoder.tf_ff"));
  cfg.ptrans.layers = std::stoll(want("ptrans.layers"));
  cfg.ptrans.k = std::stoll(want("ptrans.k"));
  cfg.ptrans.heads = std::stoll(want("ptrans.heads"));
  cfg.ptrans.model_dim = std::stoll(want("ptrans.model_dim"));
  cfg.ptrans.feature_dim = std::stoll(want("ptrans.feature_dim"));
  cfg.ptrans.pe_hidden = std::stoll(want("ptrans.pe_hidden"));
  cfg.ptrans.ff_hidden = std::stoll(want("ptrans.ff_hidden"));
  cfg.ptrans.sigma = std::stod(want("ptrans.sigma"));
  cfg.ptrans.prenorm = want("ptrans.prenorm") == "1";
  cfg.head.in_dim = std::stoll(want("head.in_dim"));
  cfg.head.hidden = std::stoll(want("head.hidden"));
  cfg.fuse_levels = int(std::stoll(want("fuse_levels")));
  cfg.norm_halfwidth_mm = std::stod(want("norm_halfwidth_mm"));
  cfg.view_scale = std::stod(want("view_scale"));

  auto model = std::make_unique<ReconModel>(cfg, 0);
  if (meta) {
    meta->step = std::stoll(want("step"));
    meta->rng_state = want("rng_state");
  }

  nn::ParamStore& ps = model->params();
  const uint32_t n_blobs = get_u32(is);
  if (n_blobs != ps.params.size() + ps.buffers.size())
    throw std::runtime_error("checkpoint: blob count mismatch");
  for (uint32_t i = 0; i < n_blobs; ++i) {
    const std::string name = get_str(is);
    const uint64_t count = get_u64(is);
    nn::Tensor* dst = nullptr;
    if (auto it = ps.params.find(name); it != ps.params.end())
      dst = &it->second.mutable_val();
    else if (auto it2 = ps.buffers.find(name); it2 != ps.buffers.end())
      dst = &it2->second;
    else
      throw std::runtime_error("checkpoint: unknown blob " + name);
    if (int64_t(count) != dst->numel())
      throw std::runtime_error("checkpoint: size mismatch for " + name);
    for (uint64_t j = 0; j < count; ++j) {
      const uint32_t bits = get_u32(is);
      float f;
      std::memcpy(&f, &bits, 4);
      dst->d[size_t(j)] = double(f);
    }
  }
  return model;
}

}  // namespace scbct
