#pragma once

// The segmentation network: a 4-scale U-Net encoder/decoder where every
// decoder scale can be augmented with
//   - a boundary-detection head (BD) emitting a per-scale boundary
//     probability map that is deeply supervised during training,
//   - a boundary-guided fusion step that folds the predicted boundary map
//     back into the decoder feature (several variants, see FusionMode), and
//   - a scale-aware aggregation block (SAAM) that mixes four parallel
//     dilated depthwise branches with channel attention and a residual.
//
// The mask path is strictly independent of the BD taps: with fusion disabled,
// enabling BD changes nothing about the predicted mask.

#include <array>
#include <string>
#include <vector>

#include "bunet/layers.hpp"

namespace bunet {

enum class FusionMode { Bgfe, Add, Multiply, Concat };

inline const char* fusion_mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::Bgfe: return "bgfe";
    case FusionMode::Add: return "add";
    case FusionMode::Multiply: return "multiply";
    case FusionMode::Concat: return "concat";
  }
  return "?";
}

inline FusionMode fusion_mode_from_name(const std::string& s) {
  if (s == "bgfe") return FusionMode::Bgfe;
  if (s == "add") return FusionMode::Add;
  if (s == "multiply") return FusionMode::Multiply;
  if (s == "concat") return FusionMode::Concat;
  fail("fusion_mode must be one of bgfe|add|multiply|concat, got '" + s + "'");
}

struct NetConfig {
  int in_channels = 1;
  int base_channels = 16;
  bool enable_bd = true;
  bool enable_bgfe = true;
  bool enable_saam = true;
  FusionMode fusion_mode = FusionMode::Bgfe;
  std::array<int, 4> saam_dilations{1, 2, 3, 4};
  double saam_reduction = 0.5;

  static constexpr int kStages = 4;

  void validate() const {
    if (in_channels < 1) fail("config: in_channels must be >= 1");
    if (base_channels < 1) fail("config: base_channels must be >= 1");
    if (enable_bgfe && !enable_bd)
      fail("config: enable_bgfe requires enable_bd (fusion consumes the boundary maps)");
    if (saam_reduction <= 0.0 || saam_reduction > 1.0)
      fail("config: saam_reduction must be in (0, 1]");
  }
};

template <typename S>
struct NetOutput {
  Tensor<S> mask_logits;                 // (N,1,H,W)
  Tensor<S> mask_prob;                   // sigmoid(mask_logits)
  std::vector<Tensor<S>> boundary_probs;  // 4 maps, deepest first; empty if BD off
};

// Boundary detection head: CBR3x3 keeping the channel count, then a biased
// 1x1 projection to a single channel, squashed to a probability map.
template <typename S>
struct BoundaryHead {
  CbrLayer<S> cbr;
  Conv2dLayer<S> proj;

  void configure(int ch) {
    cbr.configure(ch, ch, 3);
    proj = Conv2dLayer<S>{ch, 1, 1};
  }

  void init(ModuleParams<S>& reg, const std::string& prefix, std::uint64_t seed) {
    cbr.init(reg, prefix + ".cbr", seed);
    proj.init(reg, prefix + ".proj", seed);
  }

  Tensor<S> forward(const Tensor<S>& f, bool training) {
    return sigmoid(proj.forward(cbr.forward(f, training)));
  }
};

// Boundary-guided fusion. The full variant (FusionMode::Bgfe) expands the
// single-channel boundary map into a C-channel attention field and applies it
// multiplicatively to a boundary-conditioned feature, plus a learned residual
// of the raw input:
//   fused = CBR3x3([F ; B])                       (C+1 -> C)
//   b_en  = CBR1x1( DW3x3( CBR3x3(B) ) )          (1 -> C -> C -> C)
//   att   = Conv1x1( DW5x5(b_en) )                (raw, no squashing)
//   out   = att * fused + CBR3x3(F)
// The simpler variants share the same call surface so ablations swap in
// place: add (learned 1x1 projection of B added to F), multiply (B broadcast
// across channels, elementwise), concat (the fused term alone).
template <typename S>
struct FusionBlock {
  FusionMode mode = FusionMode::Bgfe;
  int ch = 0;
  // Full variant
  CbrLayer<S> fuse;
  CbrLayer<S> expand;
  DepthwiseLayer<S> expand_dw;
  CbrLayer<S> mixdown;
  DepthwiseLayer<S> att_dw;
  Conv2dLayer<S> att_proj;
  CbrLayer<S> residual;
  // Add variant
  Conv2dLayer<S> add_proj;

  void configure(int channels, FusionMode m) {
    ch = channels;
    mode = m;
    switch (mode) {
      case FusionMode::Bgfe:
        fuse.configure(ch + 1, ch, 3);
        expand.configure(1, ch, 3);
        expand_dw = DepthwiseLayer<S>{ch, 3, 1};
        mixdown.configure(ch, ch, 1);
        att_dw = DepthwiseLayer<S>{ch, 5, 1};
        att_proj = Conv2dLayer<S>{ch, ch, 1};
        residual.configure(ch, ch, 3);
        break;
      case FusionMode::Add:
        add_proj = Conv2dLayer<S>{1, ch, 1};
        break;
      case FusionMode::Multiply:
        break;  // parameter-free
      case FusionMode::Concat:
        fuse.configure(ch + 1, ch, 3);
        break;
    }
  }

  void init(ModuleParams<S>& reg, const std::string& prefix, std::uint64_t seed) {
    switch (mode) {
      case FusionMode::Bgfe:
        fuse.init(reg, prefix + ".fuse", seed);
        expand.init(reg, prefix + ".expand", seed);
        expand_dw.init(reg, prefix + ".expand_dw", seed);
        mixdown.init(reg, prefix + ".mixdown", seed);
        att_dw.init(reg, prefix + ".att_dw", seed);
        att_proj.init(reg, prefix + ".att_proj", seed);
        residual.init(reg, prefix + ".residual", seed);
        break;
      case FusionMode::Add:
        add_proj.init(reg, prefix + ".add_proj", seed);
        break;
      case FusionMode::Multiply:
        break;
      case FusionMode::Concat:
        fuse.init(reg, prefix + ".fuse", seed);
        break;
    }
  }

  // The attention field computed from the boundary map alone (full variant).
  // Exposed so locality tests can probe its receptive field.
  Tensor<S> attention(const Tensor<S>& b, bool training) {
    Tensor<S> b_en = mixdown.forward(expand_dw.forward(expand.forward(b, training)), training);
    return att_proj.forward(att_dw.forward(b_en));
  }

  Tensor<S> forward(const Tensor<S>& f, const Tensor<S>& b, bool training) {
    if (b.shape().h() != f.shape().h() || b.shape().w() != f.shape().w() || b.shape().c() != 1)
      fail("fusion: boundary map must be (N,1,H,W) matching the feature, got " +
           b.shape().str() + " vs " + f.shape().str());
    switch (mode) {
      case FusionMode::Bgfe: {
        Tensor<S> fused = fuse.forward(concat_channels<S>({f, b}), training);
        Tensor<S> att = attention(b, training);
        return add(mul(att, fused), residual.forward(f, training));
      }
      case FusionMode::Add:
        return add(f, add_proj.forward(b));
      case FusionMode::Multiply:
        return mul(f, broadcast_channels(b, ch));
      case FusionMode::Concat:
        return fuse.forward(concat_channels<S>({f, b}), training);
    }
    fail("fusion: unreachable");
  }
};

// Scale-aware aggregation: reduce channels with a 1x1 CBR, split into four
// groups, filter each with a depthwise 3x3 at increasing dilation where every
// branch also ingests its predecessor's output (so receptive fields compound),
// re-aggregate with 1x1 + 3x3 convolutions, gate with channel attention, and
// add the block input back. All-zero weights make the block an exact identity.
template <typename S>
struct SaamBlock {
  int ch = 0, cprime = 0;
  std::array<int, 4> dilations{1, 2, 3, 4};
  CbrLayer<S> reduce;
  std::array<DepthwiseLayer<S>, 4> branch;
  Conv2dLayer<S> agg1, agg2;
  EcaLayer<S> eca;

  void configure(int channels, double reduction, const std::array<int, 4>& dil,
                 const std::string& where) {
    ch = channels;
    dilations = dil;
    const double cp = channels * reduction;
    cprime = static_cast<int>(cp + 0.5);
    if (static_cast<double>(cprime) != cp || cprime < 4 || cprime % 4 != 0)
      fail("config: saam_reduction * C must be a positive multiple of 4; C=" +
           std::to_string(channels) + " gives " + std::to_string(cp) + " at " + where);
    reduce.configure(ch, cprime, 1);
    for (int i = 0; i < 4; ++i) branch[i] = DepthwiseLayer<S>{cprime / 4, 3, dilations[i]};
    agg1 = Conv2dLayer<S>{cprime, ch, 1};
    agg2 = Conv2dLayer<S>{ch, ch, 3};
    agg2.pad = 1;
    eca.ch = ch;
  }

  void init(ModuleParams<S>& reg, const std::string& prefix, std::uint64_t seed) {
    reduce.init(reg, prefix + ".reduce", seed);
    for (int i = 0; i < 4; ++i)
      branch[i].init(reg, prefix + ".branch" + std::to_string(i + 1), seed);
    agg1.init(reg, prefix + ".agg1", seed);
    agg2.init(reg, prefix + ".agg2", seed);
    eca.init(reg, prefix + ".eca", seed);
  }

  // The chained dilated branches, from the already-reduced feature. Exposed
  // for receptive-field tests.
  std::vector<Tensor<S>> branches(const Tensor<S>& reduced) {
    std::vector<Tensor<S>> parts =
        split_channels(reduced, {cprime / 4, cprime / 4, cprime / 4, cprime / 4});
    std::vector<Tensor<S>> out;
    out.push_back(branch[0].forward(parts[0]));
    for (int i = 1; i < 4; ++i) out.push_back(branch[i].forward(add(out[i - 1], parts[i])));
    return out;
  }

  Tensor<S> forward(const Tensor<S>& x, bool training) {
    Tensor<S> reduced = reduce.forward(x, training);
    Tensor<S> mixed = concat_channels(branches(reduced));
    Tensor<S> agg = agg2.forward(agg1.forward(mixed));
    return add(eca.forward(agg), x);
  }
};

// One decoder scale: the U-Net decoder step, then the optional boundary head,
// fusion and aggregation stages.
template <typename S>
struct DecoderStage {
  DecoderBlock<S> block;
  BoundaryHead<S> bd;
  FusionBlock<S> fusion;
  SaamBlock<S> saam;
  bool has_bd = false, has_fusion = false, has_saam = false;
};

template <typename S>
class Network {
 public:
  Network(const NetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    const int b = cfg_.base_channels;
    const std::array<int, 4> enc_ch{b, 2 * b, 4 * b, 8 * b};

    int in_c = cfg_.in_channels;
    for (int i = 0; i < 4; ++i) {
      enc_[i].configure(in_c, enc_ch[i]);
      enc_[i].init(params_, "enc" + std::to_string(i + 1), seed);
      in_c = enc_ch[i];
    }
    bottleneck_.configure(8 * b, 16 * b);
    bottleneck_.init(params_, "bottleneck", seed);

    // Decoder stages run deepest-first; stage i halves the incoming channels.
    int deep_c = 16 * b;
    for (int i = 0; i < 4; ++i) {
      const int skip_c = enc_ch[3 - i];
      const std::string prefix = "dec" + std::to_string(i + 1);
      DecoderStage<S>& st = dec_[i];
      st.block.configure(deep_c, skip_c, skip_c);
      st.block.init(params_, prefix, seed);
      if (cfg_.enable_bd) {
        st.has_bd = true;
        st.bd.configure(skip_c);
        st.bd.init(params_, prefix + ".bd", seed);
      }
      if (cfg_.enable_bgfe) {
        st.has_fusion = true;
        st.fusion.configure(skip_c, cfg_.fusion_mode);
        st.fusion.init(params_, prefix + ".fusion", seed);
      }
      if (cfg_.enable_saam) {
        st.has_saam = true;
        st.saam.configure(skip_c, cfg_.saam_reduction, cfg_.saam_dilations, prefix + ".saam");
        st.saam.init(params_, prefix + ".saam", seed);
      }
      deep_c = skip_c;
    }
    head_ = Conv2dLayer<S>{b, 1, 1};
    head_.init(params_, "head", seed);
  }

  NetOutput<S> forward(const Tensor<S>& image, bool training) {
    if (image.rank() != 4 || image.shape().c() != cfg_.in_channels)
      fail("network: input must be (N," + std::to_string(cfg_.in_channels) + ",H,W), got " +
           image.shape().str());
    const int H = image.shape().h(), W = image.shape().w();
    if (H % 16 != 0 || W % 16 != 0 || H < 16 || W < 16)
      fail("network: spatial extents must be positive multiples of 16 (4 pooling levels), got " +
           image.shape().str());

    std::array<Tensor<S>, 4> skips;
    Tensor<S> h = image;
    for (int i = 0; i < 4; ++i) {
      skips[i] = enc_[i].forward(h, training);
      h = maxpool2x2(skips[i]);
    }
    h = bottleneck_.forward(h, training);

    NetOutput<S> out;
    for (int i = 0; i < 4; ++i) {
      DecoderStage<S>& st = dec_[i];
      Tensor<S> f = st.block.forward(h, skips[3 - i], training);
      if (st.has_bd) {
        Tensor<S> b = st.bd.forward(f, training);
        if (st.has_fusion) f = st.fusion.forward(f, b, training);
        out.boundary_probs.push_back(std::move(b));
      }
      if (st.has_saam) f = st.saam.forward(f, training);
      h = f;
    }
    out.mask_logits = head_.forward(h);
    out.mask_prob = sigmoid(out.mask_logits);
    return out;
  }

  ModuleParams<S>& params() { return params_; }
  const NetConfig& config() const { return cfg_; }
  DecoderStage<S>& decoder_stage(int i) { return dec_[i]; }

 private:
  NetConfig cfg_;
  ModuleParams<S> params_;
  std::array<EncoderBlock<S>, 4> enc_;
  EncoderBlock<S> bottleneck_;
  std::array<DecoderStage<S>, 4> dec_;
  Conv2dLayer<S> head_;
};

struct ModelCost {
  std::int64_t params = 0;       // learnable scalars
  std::uint64_t forward_flops = 0;  // one forward pass at the probed size
};

// Builds the model and runs one instrumented forward pass at (h, w).
inline ModelCost count_params_flops(const NetConfig& cfg, int h, int w) {
  Network<float> net(cfg, /*seed=*/0);
  ModelCost cost;
  cost.params = net.params().learnable_count();
  Tensor<float> probe(Shape::nchw(1, cfg.in_channels, h, w), 0.5f);
  NoGradGuard ng;
  FlopScope scope;
  net.forward(probe, /*training=*/true);  // training: running stats are untrained
  cost.forward_flops = scope.flops();
  return cost;
}

}  // namespace bunet
