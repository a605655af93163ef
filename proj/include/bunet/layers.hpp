#pragma once

// Reusable layer blocks. Each block owns its parameter tensors, registers
// them under a dotted prefix via init(), and exposes a forward() built from
// the differentiable ops. Bias policy: convolutions followed by batch norm
// carry no bias (the shift is redundant with beta); standalone convolutions
// (attention projections, prediction heads, depthwise kernels) do.

#include <cmath>
#include <string>

#include "bunet/batchnorm.hpp"
#include "bunet/conv.hpp"
#include "bunet/params.hpp"
#include "bunet/spatial.hpp"

namespace bunet {

// Plain 2-d convolution layer (optionally biased).
template <typename S>
struct Conv2dLayer {
  int in_ch = 0, out_ch = 0, k = 1;
  int stride = 1, pad = 0, dilation = 1, groups = 1;
  bool with_bias = true;
  Tensor<S> w, b;

  Conv2dLayer() = default;
  Conv2dLayer(int in_channels, int out_channels, int kernel)
      : in_ch(in_channels), out_ch(out_channels), k(kernel) {}

  void init(ModuleParams<S>& reg, const std::string& prefix, std::uint64_t seed) {
    const int cing = in_ch / groups;
    const std::int64_t fan_in = static_cast<std::int64_t>(cing) * k * k;
    w = reg.add(prefix + ".weight",
                kaiming_uniform<S>(Shape{out_ch, cing, k, k}, fan_in, seed, prefix + ".weight"),
                /*learnable=*/true, /*decay=*/true);
    if (with_bias)
      b = reg.add(prefix + ".bias", Tensor<S>::zeros(Shape{out_ch}), /*learnable=*/true,
                  /*decay=*/false);
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    return conv2d(x, w, b, stride, pad, dilation, groups);
  }
};

// Depthwise convolution (one kernel per channel), stride 1, biased,
// padding = dilation * (k-1) / 2 so the spatial extent is preserved.
template <typename S>
struct DepthwiseLayer {
  int ch = 0, k = 3, dilation = 1;
  Tensor<S> w, b;

  DepthwiseLayer() = default;
  DepthwiseLayer(int channels, int kernel, int dil) : ch(channels), k(kernel), dilation(dil) {}

  void init(ModuleParams<S>& reg, const std::string& prefix, std::uint64_t seed) {
    const std::int64_t fan_in = static_cast<std::int64_t>(k) * k;
    w = reg.add(prefix + ".weight",
                kaiming_uniform<S>(Shape{ch, 1, k, k}, fan_in, seed, prefix + ".weight"),
                /*learnable=*/true, /*decay=*/true);
    b = reg.add(prefix + ".bias", Tensor<S>::zeros(Shape{ch}), /*learnable=*/true,
                /*decay=*/false);
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    return conv2d(x, w, b, /*stride=*/1, /*pad=*/dilation * (k - 1) / 2, dilation,
                  /*groups=*/ch);
  }
};

// Batch normalization layer holding gamma/beta plus running statistics. The
// running stats and an update counter are registered as non-learnable state so
// checkpoints carry them; eval before any training update is an error.
template <typename S>
struct BatchNormLayer {
  int ch = 0;
  double momentum = 0.1, eps = 1e-5;
  Tensor<S> gamma, beta, running_mean, running_var, stats_count;

  void init(ModuleParams<S>& reg, const std::string& prefix, std::uint64_t /*seed*/) {
    gamma = reg.add(prefix + ".gamma", Tensor<S>::ones(Shape{ch}), /*learnable=*/true,
                    /*decay=*/true);
    beta = reg.add(prefix + ".beta", Tensor<S>::zeros(Shape{ch}), /*learnable=*/true,
                   /*decay=*/false);
    running_mean = reg.add(prefix + ".running_mean", Tensor<S>::zeros(Shape{ch}),
                           /*learnable=*/false, /*decay=*/false);
    running_var = reg.add(prefix + ".running_var", Tensor<S>::ones(Shape{ch}),
                          /*learnable=*/false, /*decay=*/false);
    stats_count = reg.add(prefix + ".stats_count", Tensor<S>::zeros(Shape{1}),
                          /*learnable=*/false, /*decay=*/false);
  }

  Tensor<S> forward(const Tensor<S>& x, bool training) {
    if (training)
      stats_count.data()[0] += S(1);
    else if (stats_count.item() == S(0))
      fail("batchnorm2d: eval mode with uninitialized running statistics; train first or load "
           "a checkpoint");
    return batchnorm2d(x, gamma, beta, running_mean, running_var, training, momentum, eps);
  }
};

// Conv -> BatchNorm -> ReLU, the workhorse block. k is 1 or 3; padding
// preserves the spatial extent.
template <typename S>
struct CbrLayer {
  Conv2dLayer<S> conv;
  BatchNormLayer<S> bn;

  void configure(int in_ch, int out_ch, int k) {
    conv.in_ch = in_ch;
    conv.out_ch = out_ch;
    conv.k = k;
    conv.pad = (k - 1) / 2;
    conv.with_bias = false;  // BN's beta absorbs any bias
    bn.ch = out_ch;
  }

  void init(ModuleParams<S>& reg, const std::string& prefix, std::uint64_t seed) {
    conv.init(reg, prefix + ".conv", seed);
    bn.init(reg, prefix + ".bn", seed);
  }

  Tensor<S> forward(const Tensor<S>& x, bool training) {
    return relu(bn.forward(conv.forward(x), training));
  }
};

// Efficient channel attention: squeeze to per-channel means, filter across
// neighboring channels with a shared odd 1-d kernel, gate with a sigmoid and
// rescale the input. The kernel length adapts to the channel count.
template <typename S>
struct EcaLayer {
  int ch = 0;
  Tensor<S> w;

  static int kernel_size(int channels) {
    int k = static_cast<int>(std::floor(std::log2(static_cast<double>(channels)) / 2.0 + 0.5));
    if (k % 2 == 0) k += 1;
    return k < 3 ? 3 : k;
  }

  void init(ModuleParams<S>& reg, const std::string& prefix, std::uint64_t seed) {
    const int k = kernel_size(ch);
    w = reg.add(prefix + ".weight", kaiming_uniform<S>(Shape{k}, k, seed, prefix + ".weight"),
                /*learnable=*/true, /*decay=*/true);
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    const int N = x.shape().n(), C = x.shape().c();
    Tensor<S> squeezed = reshape(global_avg_pool(x), Shape{N, C});
    Tensor<S> gate = sigmoid(conv1d_channels(squeezed, w));
    return scale_channels(x, gate);
  }
};

// Two stacked 3x3 CBR blocks at one encoder scale.
template <typename S>
struct EncoderBlock {
  CbrLayer<S> cbr1, cbr2;

  void configure(int in_ch, int out_ch) {
    cbr1.configure(in_ch, out_ch, 3);
    cbr2.configure(out_ch, out_ch, 3);
  }

  void init(ModuleParams<S>& reg, const std::string& prefix, std::uint64_t seed) {
    cbr1.init(reg, prefix + ".cbr1", seed);
    cbr2.init(reg, prefix + ".cbr2", seed);
  }

  Tensor<S> forward(const Tensor<S>& x, bool training) {
    return cbr2.forward(cbr1.forward(x, training), training);
  }
};

// Decoder scale step: bilinear 2x upsample of the deeper feature, concat with
// the encoder skip at the target scale, then two 3x3 CBR blocks.
template <typename S>
struct DecoderBlock {
  int in_ch = 0;    // channels of the deeper (pre-upsample) feature
  int skip_ch = 0;  // channels of the encoder skip
  int out_ch = 0;
  CbrLayer<S> cbr1, cbr2;

  void configure(int in_channels, int skip_channels, int out_channels) {
    in_ch = in_channels;
    skip_ch = skip_channels;
    out_ch = out_channels;
    cbr1.configure(in_ch + skip_ch, out_ch, 3);
    cbr2.configure(out_ch, out_ch, 3);
  }

  void init(ModuleParams<S>& reg, const std::string& prefix, std::uint64_t seed) {
    cbr1.init(reg, prefix + ".cbr1", seed);
    cbr2.init(reg, prefix + ".cbr2", seed);
  }

  Tensor<S> forward(const Tensor<S>& deep, const Tensor<S>& skip, bool training) {
    if (deep.shape().c() != in_ch)
      fail("decoder_block: deep feature has C=" + std::to_string(deep.shape().c()) +
           ", expected " + std::to_string(in_ch));
    Tensor<S> up = upsample_bilinear(deep, skip.shape().h(), skip.shape().w());
    Tensor<S> merged = concat_channels<S>({up, skip});
    return cbr2.forward(cbr1.forward(merged, training), training);
  }
};

}  // namespace bunet
