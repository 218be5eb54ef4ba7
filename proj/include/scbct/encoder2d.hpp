#pragma once

#include <array>
#include <string>
#include <vector>

#include "scbct/nn.hpp"
#include "scbct/rng.hpp"

namespace scbct {

struct EncoderConfig {
  int input_size = 256;  // square input edge, divisible by 8
  int stem_ch = 16;
  std::array<int, 3> stage_ch{64, 128, 256};
  int tf_blocks = 4;
  int tf_heads = 4;
  int tf_ff = 512;
};

// maps[0] is the coarsest decoder stage (256 ch at 1/8 input size),
// maps[3] the finest (16 ch at full size); channels sum to 464.
struct FeaturePyramid {
  std::array<nn::Var, 4> maps;
};

inline constexpr std::array<int64_t, 4> kPyramidChannels{256, 128, 64, 16};
inline constexpr int64_t kFusedDim = 256 + 128 + 64 + 16;

// U-shaped per-view feature extractor: three stride-2 conv stages, a
// dense self-attention bottleneck over the 1/8-resolution tokens with a
// learned positional embedding, and a skip-connected upsampling decoder.
class Encoder2d {
 public:
  Encoder2d(nn::ParamStore& ps, const std::string& prefix,
            const EncoderConfig& cfg, Rng& rng);

  // image [1,S,S] with S = cfg.input_size
  FeaturePyramid operator()(const nn::Var& image) const;
  std::vector<FeaturePyramid> encode_views(
      const std::vector<nn::Var>& images) const;
  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  nn::Conv2d stem1_, stem2_;
  std::array<nn::Conv2d, 3> down_, mid_;
  nn::Var pos_emb_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNormM ln_final_;
  nn::Conv2d dec_top_;
  std::array<nn::Conv2d, 3> up_a_, up_b_;
};

}  // namespace scbct
