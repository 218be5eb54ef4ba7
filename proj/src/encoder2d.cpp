#include "scbct/encoder2d.hpp"

#include <stdexcept>

namespace scbct {

using nn::Var;

Encoder2d::Encoder2d(nn::ParamStore& ps, const std::string& prefix,
                     const EncoderConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  if (cfg.input_size <= 0 || cfg.input_size % 8 != 0)
    throw std::invalid_argument("encoder input_size must be a positive "
                                "multiple of 8, got " +
                                std::to_string(cfg.input_size));
  const int64_t dim = cfg.stage_ch[2];
  if (dim % cfg.tf_heads != 0)
    throw std::invalid_argument("bottleneck dim not divisible by heads");

  stem1_ = nn::Conv2d::make(ps, prefix + ".stem1", 1, cfg.stem_ch, 3, 1, rng);
  stem2_ = nn::Conv2d::make(ps, prefix + ".stem2", cfg.stem_ch, cfg.stem_ch,
                            3, 1, rng);
  int64_t ch = cfg.stem_ch;
  for (int s = 0; s < 3; ++s) {
    down_[size_t(s)] = nn::Conv2d::make(
        ps, prefix + ".down" + std::to_string(s), ch, cfg.stage_ch[size_t(s)],
        3, 2, rng);
    mid_[size_t(s)] = nn::Conv2d::make(ps, prefix + ".mid" + std::to_string(s),
                                       cfg.stage_ch[size_t(s)],
                                       cfg.stage_ch[size_t(s)], 3, 1, rng);
    ch = cfg.stage_ch[size_t(s)];
  }

  const int64_t grid = cfg.input_size / 8;
  pos_emb_ = ps.param(prefix + ".pos_emb",
                      nn::normal_init({grid * grid, dim}, 0.02, rng));
  for (int b = 0; b < cfg.tf_blocks; ++b)
    blocks_.push_back(nn::TransformerBlock::make(
        ps, prefix + ".blk" + std::to_string(b), dim, cfg.tf_heads, cfg.tf_ff,
        rng, nn::AttnInit::small_normal));
  ln_final_ = nn::LayerNormM::make(ps, prefix + ".ln_final", dim);

  dec_top_ = nn::Conv2d::make(ps, prefix + ".dec_top", dim, dim, 3, 1, rng);
  const int64_t skip_ch[3] = {cfg.stage_ch[1], cfg.stage_ch[0], cfg.stem_ch};
  const int64_t out_ch[3] = {cfg.stage_ch[1], cfg.stage_ch[0], cfg.stem_ch};
  int64_t up_in = dim;
  for (int s = 0; s < 3; ++s) {
    up_a_[size_t(s)] = nn::Conv2d::make(
        ps, prefix + ".up" + std::to_string(s) + "a", up_in + skip_ch[s],
        out_ch[s], 3, 1, rng);
    up_b_[size_t(s)] = nn::Conv2d::make(
        ps, prefix + ".up" + std::to_string(s) + "b", out_ch[s], out_ch[s], 3,
        1, rng);
    up_in = out_ch[s];
  }
}

FeaturePyramid Encoder2d::operator()(const Var& image) const {
  const int64_t S = cfg_.input_size;
  if (image.shape() != nn::Shape{1, S, S})
    throw std::invalid_argument("encoder expects input [1," +
                                std::to_string(S) + "," + std::to_string(S) +
                                "], got " + nn::shape_str(image.shape()));
  Var s0 = relu(stem2_(relu(stem1_(image))));
  Var e1 = relu(mid_[0](relu(down_[0](s0))));
  Var e2 = relu(mid_[1](relu(down_[1](e1))));
  Var e3 = relu(mid_[2](relu(down_[2](e2))));

  const int64_t grid = S / 8, dim = cfg_.stage_ch[2];
  Var tokens = transpose2d(reshape(e3, {dim, grid * grid}));
  tokens = add(tokens, pos_emb_);
  for (const auto& blk : blocks_) tokens = blk(tokens);
  tokens = ln_final_(tokens);
  Var bott = reshape(transpose2d(tokens), {dim, grid, grid});

  FeaturePyramid pyr;
  pyr.maps[0] = relu(dec_top_(bott));
  const Var* skips[3] = {&e2, &e1, &s0};
  Var cur = pyr.maps[0];
  for (int s = 0; s < 3; ++s) {
    Var u = concat_chan(upsample_nearest2x(cur), *skips[s]);
    cur = relu(up_b_[size_t(s)](relu(up_a_[size_t(s)](u))));
    pyr.maps[size_t(s + 1)] = cur;
  }
  return pyr;
}

std::vector<FeaturePyramid> Encoder2d::encode_views(
    const std::vector<Var>& images) const {
  std::vector<FeaturePyramid> out;
  out.reserve(images.size());
  for (const Var& img : images) out.push_back((*this)(img));
  return out;
}

}  // namespace scbct
